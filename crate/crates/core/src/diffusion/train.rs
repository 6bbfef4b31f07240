use std::ops::ControlFlow;

use rand::Rng;

use super::data::{Batch, SyntheticLatents};
use super::schedule::NoiseSchedule;
use crate::autograd::Tape;
use crate::dit::{forward, ModelWeights};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub ema_decay: f32,
    /// Probability of replacing a label with the null class.
    pub null_prob: f64,
    pub seed: u64,
    /// RNG stream name; distinct runs under one root seed use distinct names.
    pub stream: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 32,
            lr: 1e-3,
            ema_decay: 0.999,
            null_prob: 0.1,
            seed: 0,
            stream: "train".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub raw: ModelWeights,
    pub ema: ModelWeights,
    /// Training loss per completed step.
    pub losses: Vec<f64>,
}

/// Noise-prediction MSE on the first `C` output channels, taped for backprop.
fn taped_loss(
    tape: &mut Tape,
    w: &ModelWeights,
    vars: &crate::dit::ModelVars,
    zt: &Tensor,
    t: &[usize],
    y: &[usize],
    eps: &Tensor,
) -> Result<crate::autograd::Var> {
    let fo = forward(tape, vars, w, zt, t, y, false)?;
    let pred = tape.narrow(fo.out, 1, 0, w.spec.latent.channels)?;
    let target = tape.constant(eps.clone());
    tape.mse(pred, target)
}

struct Noised {
    zt: Tensor,
    t: Vec<usize>,
    y: Vec<usize>,
    eps: Tensor,
}

fn noise_batch(batch: &Batch, schedule: &NoiseSchedule, null_class: usize, null_prob: f64, r: &mut StreamRng) -> Result<Noised> {
    let n = batch.y.len();
    let t: Vec<usize> = (0..n).map(|_| r.random_range(0..schedule.len())).collect();
    let y: Vec<usize> = batch
        .y
        .iter()
        .map(|&k| if r.random::<f64>() < null_prob { null_class } else { k })
        .collect();
    let eps = Tensor::randn(batch.z0.shape(), 1.0, r);
    let zt = schedule.q_sample(&batch.z0, &t, &eps)?;
    Ok(Noised { zt, t, y, eps })
}

/// Monte Carlo estimate of the training objective on `batch` with uniform timesteps and label dropout.
pub fn diffusion_loss(
    w: &ModelWeights,
    batch: &Batch,
    schedule: &NoiseSchedule,
    null_prob: f64,
    r: &mut StreamRng,
) -> Result<f64> {
    let nb = noise_batch(batch, schedule, w.spec.num_classes, null_prob, r)?;
    let mut tape = Tape::new();
    let vars = w.bind(&mut tape, false);
    let l = taped_loss(&mut tape, w, &vars, &nb.zt, &nb.t, &nb.y, &nb.eps)?;
    Ok(tape.value(l)?.item() as f64)
}

/// Adam on the diffusion objective with an exponential moving average of the weights.
///
/// `on_step(step, loss)` runs after every update and may stop training early.
pub fn train(
    init: ModelWeights,
    data: &SyntheticLatents,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(usize, f64, &ModelWeights) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    let mut w = init;
    let mut ema = w.clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), w.params().into_iter().map(|(_, t)| t));
    let mut r = rng::stream(cfg.seed, &cfg.stream);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = data.draw(cfg.batch, &mut r);
        let nb = noise_batch(&batch, schedule, w.spec.num_classes, cfg.null_prob, &mut r)?;
        let mut tape = Tape::new();
        let vars = w.bind(&mut tape, true);
        let l = taped_loss(&mut tape, &w, &vars, &nb.zt, &nb.t, &nb.y, &nb.eps)?;
        let loss = tape.value(l)?.item() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let mut grads = tape.backward(l)?;
        let gs = vars.params().into_iter().map(|v| grads.take(v)).collect::<Result<Vec<_>>>()?;
        adam.step(&mut w.params_mut(), &gs).map_err(|e| match e {
            Error::NonFiniteGradient(_) => Error::Diverged { step, loss },
            other => other,
        })?;
        let d = cfg.ema_decay;
        for ((_, e), (_, p)) in ema.params_mut().into_iter().zip(w.params()) {
            for (ev, &pv) in e.data_mut().iter_mut().zip(p.data()) {
                *ev = d * *ev + (1.0 - d) * pv;
            }
        }
        losses.push(loss);
        if on_step(step, loss, &w).is_break() {
            break;
        }
    }
    Ok(TrainOutcome { raw: w, ema, losses })
}
