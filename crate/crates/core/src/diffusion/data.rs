use std::f64::consts::PI;

use rand::Rng;

use crate::dit::LatentShape;
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor;

/// Latents `[B,C,H,W]` with their class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub z0: Tensor,
    pub y: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Pattern {
    /// Wave direction.
    theta: f64,
    /// Cycles across the latent.
    freq: f64,
    /// Phase offset added per channel.
    channel_phase: f64,
}

/// Class-conditional oriented sinusoid fields with small per-sample jitter,
/// normalized per sample to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLatents {
    pub shape: LatentShape,
    pub num_classes: usize,
    pub seed: u64,
    pub phase_jitter: f64,
    pub amp_jitter: f64,
    pub noise: f64,
    patterns: Vec<Pattern>,
}

impl SyntheticLatents {
    pub fn new(shape: LatentShape, num_classes: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "data/classes");
        let patterns = (0..num_classes)
            .map(|k| Pattern {
                theta: PI * k as f64 / num_classes as f64 + r.random_range(-0.1..0.1),
                freq: 1.0 + (k % 3) as f64 * 0.75 + r.random_range(0.0..0.25),
                channel_phase: r.random_range(0.3..1.2),
            })
            .collect();
        Self {
            shape,
            num_classes,
            seed,
            phase_jitter: 0.3,
            amp_jitter: 0.1,
            noise: 0.1,
            patterns,
        }
    }

    fn render(&self, class: usize, rng: &mut StreamRng, out: &mut Vec<f32>) {
        let p = self.patterns[class];
        let LatentShape { channels, height, width } = self.shape;
        let phase = rng.random_range(-self.phase_jitter..=self.phase_jitter);
        let start = out.len();
        for c in 0..channels {
            let amp = 1.0 + rng.random_range(-self.amp_jitter..=self.amp_jitter);
            for i in 0..height {
                for j in 0..width {
                    let u = (i as f64 * p.theta.cos() + j as f64 * p.theta.sin()) / height.max(width) as f64;
                    let v = amp * (2.0 * PI * p.freq * u + c as f64 * p.channel_phase + phase).sin()
                        + self.noise * rng::normal(rng) as f64;
                    out.push(v as f32);
                }
            }
        }
        let s = &mut out[start..];
        let n = s.len() as f64;
        let mean = s.iter().map(|&v| v as f64).sum::<f64>() / n;
        let std = (s.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n)
            .sqrt()
            .max(1e-6);
        for v in s.iter_mut() {
            *v = ((*v as f64 - mean) / std) as f32;
        }
    }

    /// `n` samples with uniformly drawn classes.
    pub fn draw(&self, n: usize, rng: &mut StreamRng) -> Batch {
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.num_classes)).collect();
        self.render_batch(y, rng)
    }

    /// `n` samples cycling through the classes, from the named stream.
    pub fn balanced(&self, n: usize, stream: &str) -> Batch {
        let mut r = rng::stream(self.seed, stream);
        let y: Vec<usize> = (0..n).map(|i| i % self.num_classes).collect();
        self.render_batch(y, &mut r)
    }

    fn render_batch(&self, y: Vec<usize>, rng: &mut StreamRng) -> Batch {
        let mut data = Vec::with_capacity(y.len() * self.shape.numel());
        for &k in &y {
            self.render(k, rng, &mut data);
        }
        let s = self.shape;
        Batch {
            z0: Tensor::new(&[y.len(), s.channels, s.height, s.width], data).expect("batch shape"),
            y,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let d = SyntheticLatents::new(LatentShape::new(4, 8, 8), 10, 3);
        let a = d.balanced(20, "x");
        assert_eq!(a, d.balanced(20, "x"));
        for s in a.z0.data().chunks_exact(256) {
            let m: f64 = s.iter().map(|&v| v as f64).sum::<f64>() / 256.0;
            let v: f64 = s.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / 256.0;
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn nearest_centroid_separates_classes() {
        let d = SyntheticLatents::new(LatentShape::new(4, 8, 8), 10, 11);
        let train = d.balanced(500, "fit");
        let test = d.balanced(500, "check");
        let dim = 256;
        let mut cent = vec![vec![0.0f64; dim]; 10];
        for (s, &k) in train.z0.data().chunks_exact(dim).zip(&train.y) {
            for (c, &v) in cent[k].iter_mut().zip(s) {
                *c += v as f64 / 50.0;
            }
        }
        let mut hits = 0;
        for (s, &k) in test.z0.data().chunks_exact(dim).zip(&test.y) {
            let best = (0..10)
                .min_by(|&a, &b| {
                    let da: f64 = cent[a].iter().zip(s).map(|(c, &v)| (c - v as f64).powi(2)).sum();
                    let db: f64 = cent[b].iter().zip(s).map(|(c, &v)| (c - v as f64).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            hits += (best == k) as usize;
        }
        assert!(hits as f64 / 500.0 >= 0.9, "accuracy {}", hits as f64 / 500.0);
    }
}
