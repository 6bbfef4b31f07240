use super::data::{Batch, SyntheticLatents};
use super::schedule::NoiseSchedule;
use crate::dit::ModelWeights;
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

/// Fixed held-out latents, a stratified timestep grid and one noise draw per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct HeldOutSet {
    pub batch: Batch,
    pub timesteps: Vec<usize>,
    pub noise: Vec<Tensor>,
}

impl HeldOutSet {
    pub fn new(data: &SyntheticLatents, schedule: &NoiseSchedule, samples: usize, grid: usize) -> Self {
        let batch = data.balanced(samples, "data/heldout");
        let t_max = schedule.len();
        let timesteps: Vec<usize> = (0..grid)
            .map(|k| ((k as f64 + 0.5) * t_max as f64 / grid as f64) as usize)
            .collect();
        let noise = timesteps
            .iter()
            .map(|t| {
                let mut r = rng::stream(data.seed, &format!("data/heldout/noise/{t}"));
                Tensor::randn(batch.z0.shape(), 1.0, &mut r)
            })
            .collect();
        Self { batch, timesteps, noise }
    }
}

/// Mean noise-prediction MSE over the held-out grid, conditional labels. Lower is better.
pub fn proxy_quality(w: &ModelWeights, set: &HeldOutSet, schedule: &NoiseSchedule) -> Result<f64> {
    let c = w.spec.latent.channels;
    let n = set.batch.y.len();
    let mut total = 0.0;
    for (&t, eps) in set.timesteps.iter().zip(&set.noise) {
        let ts = vec![t; n];
        let zt = schedule.q_sample(&set.batch.z0, &ts, eps)?;
        let out = w.predict(&zt, &ts, &set.batch.y)?;
        let oc = out.shape()[1];
        let plane = out.numel() / (n * oc);
        let mut s = 0.0f64;
        for i in 0..n {
            let pred = &out.data()[i * oc * plane..(i * oc + c) * plane];
            let e = &eps.data()[i * c * plane..(i + 1) * c * plane];
            s += pred.iter().zip(e).map(|(&p, &q)| ((p - q) as f64).powi(2)).sum::<f64>();
        }
        total += s / (n * c * plane) as f64;
    }
    Ok(total / set.timesteps.len() as f64)
}
