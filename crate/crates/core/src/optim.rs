//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second moments for a fixed, ordered list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
            .unzip();
        Self { config, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. All gradients are checked before any parameter moves.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &[Tensor]) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter list changed since AdamState::new");
        assert_eq!(params.len(), grads.len());
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((_, p), g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                pd[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        st.step(&mut [("p".into(), &mut p)], &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), [&p]);
        st.step(&mut [("p".into(), &mut p)], &[Tensor::scalar(1.0)]).unwrap();
        // m̂ = v̂ = 1, so the step is lr / (1 + eps)
        assert!((p.item() + 0.1).abs() < 1e-6, "{}", p.item());
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        let err = st
            .step(&mut [("blocks.3.fc1.weight".into(), &mut p)], &[Tensor::scalar(f32::NAN)])
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "blocks.3.fc1.weight"));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut x = Tensor::new(&[2], vec![1.5, -0.7]).unwrap();
        let mut st = AdamState::new(AdamConfig::with_lr(0.05), [&x]);
        for _ in 0..500 {
            let mut tape = Tape::new();
            let v = tape.param(x.clone());
            let sq = tape.mul(v, v).unwrap();
            let loss = tape.sum(sq).unwrap();
            let g = tape.backward(loss).unwrap().wrt(v).unwrap();
            st.step(&mut [("x".into(), &mut x)], &[g]).unwrap();
        }
        assert!(x.data().iter().all(|v| v.abs() < 1e-3), "{:?}", x.data());
    }
}
