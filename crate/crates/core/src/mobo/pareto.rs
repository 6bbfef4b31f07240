use crate::error::{Error, Result};

/// Nondominated points sorted by the first objective ascending (second strictly descending).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParetoSet {
    pub points: Vec<[f64; 2]>,
    /// Position of each member in the input slice.
    pub indices: Vec<usize>,
}

impl ParetoSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Nondominated subset under minimization. Exact duplicates keep their first occurrence.
pub fn pareto_front(points: &[[f64; 2]]) -> ParetoSet {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa[0].total_cmp(&pb[0]).then(pa[1].total_cmp(&pb[1])).then(a.cmp(&b))
    });
    let mut out = ParetoSet::default();
    let mut best_y = f64::INFINITY;
    for i in order {
        let p = points[i];
        if p[1] < best_y {
            best_y = p[1];
            out.points.push(p);
            out.indices.push(i);
        }
    }
    out
}

/// Area dominated by `front` and bounded by `reference`.
pub fn hypervolume2d(front: &ParetoSet, reference: [f64; 2]) -> Result<f64> {
    for &p in &front.points {
        if !(p[0] < reference[0] && p[1] < reference[1]) {
            return Err(Error::NotDominatingRef { point: p, reference });
        }
    }
    let mut area = 0.0;
    for (i, p) in front.points.iter().enumerate() {
        let next_x = front.points.get(i + 1).map_or(reference[0], |q| q[0]);
        area += (next_x - p[0]) * (reference[1] - p[1]);
    }
    Ok(area)
}

/// Hypervolume of the front of `points`, ignoring points that do not dominate `reference`.
pub fn hypervolume_clipped(points: &[[f64; 2]], reference: [f64; 2]) -> f64 {
    let inside: Vec<[f64; 2]> = points
        .iter()
        .copied()
        .filter(|p| p[0] < reference[0] && p[1] < reference[1])
        .collect();
    hypervolume2d(&pareto_front(&inside), reference).expect("clipped points dominate the reference")
}
