use super::schedule::NoiseSchedule;
use crate::dit::ModelWeights;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    /// Stochastic DDPM posterior steps.
    Ancestral,
    /// Noise-free DDIM steps.
    DeterministicSkip,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ancestral" | "ddpm" => Ok(SamplerKind::Ancestral),
            "deterministic-skip" | "ddim" => Ok(SamplerKind::DeterministicSkip),
            _ => Err(Error::Parse(format!("unknown sampler `{s}` (ancestral|deterministic-skip)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub steps: usize,
    pub cfg_scale: f32,
    pub seed: u64,
}

/// First `C` channels of `out[B, oc, H, W]`.
fn eps_channels(out: &Tensor, c: usize) -> Tensor {
    let s = out.shape();
    let (b, oc) = (s[0], s[1]);
    let plane = out.numel() / (b * oc);
    let mut data = Vec::with_capacity(b * c * plane);
    for i in 0..b {
        data.extend_from_slice(&out.data()[i * oc * plane..(i * oc + c) * plane]);
    }
    Tensor::new(&[b, c, s[2], s[3]], data).expect("channel slice shape")
}

/// Guided noise prediction `ε(∅) + w·(ε(y) − ε(∅))`; `w = 1` is the conditional prediction itself.
pub fn guided_eps(w: &ModelWeights, z: &Tensor, t: &[usize], y: &[usize], scale: f32) -> Result<Tensor> {
    let c = w.spec.latent.channels;
    let cond = eps_channels(&w.predict(z, t, y)?, c);
    if scale == 1.0 {
        return Ok(cond);
    }
    let null = vec![w.spec.num_classes; y.len()];
    let unc = eps_channels(&w.predict(z, t, &null)?, c);
    let data = unc
        .data()
        .iter()
        .zip(cond.data())
        .map(|(&u, &k)| u + scale * (k - u))
        .collect();
    Tensor::new(cond.shape(), data)
}

/// Evenly spaced timesteps, descending, always ending at 0.
fn timesteps(total: usize, steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..steps).map(|i| i * total / steps).collect();
    ts.dedup();
    ts.reverse();
    ts
}

/// Draws latents for labels `y` starting from seeded Gaussian noise.
pub fn sample(w: &ModelWeights, schedule: &NoiseSchedule, cfg: &SamplerConfig, y: &[usize]) -> Result<Tensor> {
    if cfg.steps == 0 || cfg.steps > schedule.len() || cfg.cfg_scale.is_nan() || cfg.cfg_scale < 1.0 || y.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "sampler needs 1 <= steps <= {} and guidance >= 1 (got {} steps, w = {})",
            schedule.len(),
            cfg.steps,
            cfg.cfg_scale
        )));
    }
    let l = w.spec.latent;
    let shape = [y.len(), l.channels, l.height, l.width];
    let mut r = rng::stream(cfg.seed, "sample");
    let mut z = Tensor::randn(&shape, 1.0, &mut r);
    let ts = timesteps(schedule.len(), cfg.steps);
    for (i, &t) in ts.iter().enumerate() {
        let prev = ts.get(i + 1).copied();
        let ab = schedule.alpha_bar(t);
        let ab_prev = prev.map_or(1.0, |p| schedule.alpha_bar(p));
        let eps = guided_eps(w, &z, &vec![t; y.len()], y, cfg.cfg_scale)?;
        let (sa, s1a) = (ab.sqrt(), (1.0 - ab).sqrt());
        let noise = match (cfg.kind, prev) {
            (SamplerKind::Ancestral, Some(_)) => Some(Tensor::randn(&shape, 1.0, &mut r)),
            _ => None,
        };
        let zd = z.data_mut();
        for (k, zv) in zd.iter_mut().enumerate() {
            let x = *zv as f64;
            let e = eps.data()[k] as f64;
            let x0 = (x - s1a * e) / sa;
            *zv = match cfg.kind {
                SamplerKind::DeterministicSkip => (ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * e) as f32,
                SamplerKind::Ancestral => {
                    let a_step = ab / ab_prev;
                    let b_step = 1.0 - a_step;
                    let mean = ab_prev.sqrt() * b_step / (1.0 - ab) * x0 + a_step.sqrt() * (1.0 - ab_prev) / (1.0 - ab) * x;
                    let var = b_step * (1.0 - ab_prev) / (1.0 - ab);
                    let n = noise.as_ref().map_or(0.0, |t| t.data()[k] as f64);
                    (mean + var.sqrt() * n) as f32
                }
            };
        }
        if !z.all_finite() {
            return Err(Error::NonFinite(format!("sampler state at t = {t}")));
        }
    }
    Ok(z)
}
