use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Discrete variance-preserving schedule with linearly spaced betas.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 2e-2)
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        assert!(steps >= 2 && 0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0);
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alpha_bar = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Self { betas, alpha_bar }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check(&self, t: &[usize]) -> Result<()> {
        match t.iter().find(|&&v| v >= self.len()) {
            Some(&bad) => Err(Error::OutOfRange {
                what: "timestep",
                value: bad as u128,
                limit: self.len() as u128,
            }),
            None => Ok(()),
        }
    }

    /// `z_t = √ᾱ_t · z_0 + √(1−ᾱ_t) · ε`, one timestep per sample.
    pub fn q_sample(&self, z0: &Tensor, t: &[usize], eps: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        if z0.shape() != eps.shape() || z0.shape().first() != Some(&t.len()) {
            return Err(Error::ShapeMismatch {
                op: "q_sample",
                lhs: z0.shape().to_vec(),
                rhs: eps.shape().to_vec(),
            });
        }
        let per = z0.numel() / t.len();
        let mut out = Vec::with_capacity(z0.numel());
        for (i, &ti) in t.iter().enumerate() {
            let a = self.alpha_bar[ti].sqrt() as f32;
            let s = (1.0 - self.alpha_bar[ti]).sqrt() as f32;
            let zr = &z0.data()[i * per..(i + 1) * per];
            let er = &eps.data()[i * per..(i + 1) * per];
            out.extend(zr.iter().zip(er).map(|(z, e)| a * z + s * e));
        }
        Tensor::new(z0.shape(), out)
    }
}
