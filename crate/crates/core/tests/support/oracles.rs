//! Brute-force and Monte Carlo references for the multi-objective machinery.

#![allow(dead_code)]

use edgenas_core::rng::StreamRng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// O(n²) nondominated filter; returns sorted, deduplicated points.
pub fn brute_front(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let dominates = |a: [f64; 2], b: [f64; 2]| a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1]);
    let mut out: Vec<[f64; 2]> = points
        .iter()
        .copied()
        .filter(|&p| !points.iter().any(|&q| dominates(q, p)))
        .collect();
    out.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    out.dedup();
    out
}

/// Fraction of the box `[lo, ref]` dominated by `points`, times the box area.
pub fn mc_hypervolume(points: &[[f64; 2]], lo: [f64; 2], reference: [f64; 2], samples: usize, rng: &mut StreamRng) -> f64 {
    let mut hit = 0usize;
    for _ in 0..samples {
        let u = [
            lo[0] + rng.random::<f64>() * (reference[0] - lo[0]),
            lo[1] + rng.random::<f64>() * (reference[1] - lo[1]),
        ];
        if points.iter().any(|p| p[0] <= u[0] && p[1] <= u[1]) {
            hit += 1;
        }
    }
    hit as f64 / samples as f64 * (reference[0] - lo[0]) * (reference[1] - lo[1])
}

/// Exact improvement of adding `y` to a sorted front, by sweeping its staircase.
pub fn improvement(y: [f64; 2], front: &[[f64; 2]], reference: [f64; 2]) -> f64 {
    if y[0] >= reference[0] || y[1] >= reference[1] {
        return 0.0;
    }
    // at abscissa x the existing front covers heights above min{g : f ≤ x}
    let mut xs: Vec<f64> = front.iter().map(|p| p[0]).filter(|&x| x > y[0] && x < reference[0]).collect();
    xs.push(y[0]);
    xs.push(reference[0]);
    xs.sort_by(f64::total_cmp);
    let cover = |x: f64| front.iter().filter(|p| p[0] <= x).map(|p| p[1]).fold(reference[1], f64::min);
    let mut total = 0.0;
    for w in xs.windows(2) {
        let h = (cover(w[0]) - y[1]).max(0.0);
        total += (w[1] - w[0]) * h;
    }
    total
}

/// Sample mean of the improvement under independent Gaussian objectives.
pub fn mc_ehvi(
    mu: [f64; 2],
    sigma: [f64; 2],
    front: &[[f64; 2]],
    reference: [f64; 2],
    samples: usize,
    rng: &mut StreamRng,
) -> f64 {
    let mut acc = 0.0;
    for _ in 0..samples {
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        acc += improvement([mu[0] + sigma[0] * z0, mu[1] + sigma[1] * z1], front, reference);
    }
    acc / samples as f64
}

/// `n` points with anticorrelated objectives so fronts are non-trivial.
pub fn random_points(n: usize, rng: &mut StreamRng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            [a, (1.0 - a) * 0.7 + b * 0.6]
        })
        .collect()
}
