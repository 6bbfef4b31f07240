use super::pareto::ParetoSet;

const MIN_SIGMA: f64 = 1e-12;

fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[(b - Y)⁺]` for `Y ~ N(mu, sigma²)`.
pub fn psi(b: f64, mu: f64, sigma: f64) -> f64 {
    if sigma < MIN_SIGMA {
        return (b - mu).max(0.0);
    }
    let z = (b - mu) / sigma;
    ((b - mu) * norm_cdf(z) + sigma * norm_pdf(z)).max(0.0)
}

/// Exact expected hypervolume improvement of a candidate with independent Gaussian
/// objectives `N(mu[k], sigma[k]²)` over `front`, bounded by `reference`.
///
/// Front members that do not dominate the reference are ignored.
pub fn ehvi2d(mu: [f64; 2], sigma: [f64; 2], front: &ParetoSet, reference: [f64; 2]) -> f64 {
    let pts: Vec<[f64; 2]> = front
        .points
        .iter()
        .copied()
        .filter(|p| p[0] < reference[0] && p[1] < reference[1])
        .collect();
    // strip i spans x in [a_i, a_{i+1}) and is open below height b_i
    let mut total = 0.0;
    let mut lower = 0.0; // psi1(a_0) with a_0 = -inf
    let mut height = reference[1];
    for i in 0..=pts.len() {
        let right = pts.get(i).map_or(reference[0], |p| p[0]);
        let upper = psi(right, mu[0], sigma[0]);
        total += (upper - lower) * psi(height, mu[1], sigma[1]);
        lower = upper;
        if let Some(p) = pts.get(i) {
            height = p[1];
        }
    }
    total.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobo::pareto::pareto_front;

    #[test]
    fn deterministic_limits() {
        let empty = ParetoSet::default();
        assert_eq!(ehvi2d([1.0, 1.0], [0.0, 0.0], &empty, [3.0, 2.0]), 2.0);
        let f = pareto_front(&[[0.5, 0.5]]);
        assert_eq!(ehvi2d([1.0, 1.0], [0.0, 0.0], &f, [3.0, 2.0]), 0.0);
        let g = pareto_front(&[[1.0, 2.0], [2.0, 1.0]]);
        // candidate (0,0) adds 9 - 3
        assert!((ehvi2d([0.0, 0.0], [0.0, 0.0], &g, [3.0, 3.0]) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn psi_matches_limits() {
        assert!((psi(10.0, 0.0, 1.0) - 10.0).abs() < 1e-9);
        assert!(psi(-10.0, 0.0, 1.0) < 1e-20);
        assert!((psi(0.0, 0.0, 1.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dominating_point_never_raises_ehvi() {
        let f1 = pareto_front(&[[1.0, 2.0], [2.0, 1.0]]);
        let f2 = pareto_front(&[[1.0, 2.0], [2.0, 1.0], [0.5, 0.5]]);
        for (m, s) in [([1.5, 1.5], [0.3, 0.3]), ([0.2, 2.5], [1.0, 0.1]), ([2.5, 0.1], [0.01, 2.0])] {
            assert!(ehvi2d(m, s, &f2, [3.0, 3.0]) <= ehvi2d(m, s, &f1, [3.0, 3.0]) + 1e-15);
        }
    }
}
