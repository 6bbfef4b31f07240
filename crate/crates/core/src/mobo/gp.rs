use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const LENGTHSCALES: usize = 12;
const NOISES: usize = 6;
const MAX_JITTER: f64 = 1e-6;

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Kernel hyperparameters in standardized target units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpParams {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_std: f64,
    pub jitter: f64,
}

/// Zero-mean GP with a squared-exponential kernel on standardized targets.
#[derive(Clone, Debug)]
pub struct GpModel {
    pub params: GpParams,
    pub log_marginal_likelihood: f64,
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn kernel(a: &[f64], b: &[f64], ell: f64, sf2: f64) -> f64 {
    sf2 * (-0.5 * sq_dist(a, b) / (ell * ell)).exp()
}

struct Fit {
    lml: f64,
    params: GpParams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn fit_one(x: &[Vec<f64>], y: &DVector<f64>, ell: f64, noise: f64) -> Option<Fit> {
    let n = x.len();
    let sf2 = 1.0;
    let base = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], ell, sf2));
    let mut jitter = 0.0;
    loop {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += noise * noise + jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            let alpha = chol.solve(y);
            let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
            let lml = -0.5 * y.dot(&alpha) - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            if !lml.is_finite() {
                return None;
            }
            return Some(Fit {
                lml,
                params: GpParams {
                    lengthscale: ell,
                    signal_var: sf2,
                    noise_std: noise,
                    jitter,
                },
                chol,
                alpha,
            });
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > MAX_JITTER {
            return None;
        }
    }
}

impl GpModel {
    /// Fits by maximizing the log marginal likelihood over a fixed hyperparameter grid.
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(Error::InvalidConfig(format!(
                "GP needs at least 2 matching observations, got {} inputs and {} targets",
                x.len(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("GP target {bad}")));
        }
        let dim = x[0].len();
        if x.iter().any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidConfig("GP inputs must be finite and of equal dimension".into()));
        }
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n;
        let y_std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));
        let mut best: Option<Fit> = None;
        for &ell in &log_grid(0.05, 2.0, LENGTHSCALES) {
            for &noise in &log_grid(1e-4, 1e-1, NOISES) {
                if let Some(f) = fit_one(x, &ys, ell, noise) {
                    if best.as_ref().is_none_or(|b| f.lml > b.lml) {
                        best = Some(f);
                    }
                }
            }
        }
        let best = best.ok_or_else(|| Error::SingularFit("no GP hyperparameters admit a Cholesky factor".into()))?;
        Ok(Self {
            params: best.params,
            log_marginal_likelihood: best.lml,
            x: x.to_vec(),
            y_mean,
            y_std,
            chol: best.chol,
            alpha: best.alpha,
        })
    }

    /// Posterior mean and latent-function variance in original target units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let p = &self.params;
        let ks = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| kernel(xi, q, p.lengthscale, p.signal_var)),
        );
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&ks)
            .expect("Cholesky factor has a nonzero diagonal");
        let var = (p.signal_var - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * self.y_std * var)
    }

    pub fn target_std(&self) -> f64 {
        self.y_std
    }
}
