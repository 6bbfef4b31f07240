use edgenas_core::cost::{
    anchors_for, cost_of_config, cost_of_spec, count_params, family_anchors, ordering_anomalies, reference_spec, shipped_anchors,
    shipped_complexity, DeviceProfile, ProfileMode,
};
use edgenas_core::dit::{build, BlockSpec, DiTSpec, LatentShape};
use edgenas_core::rng;
use edgenas_core::space::{random_config, ArchConfig, SearchMode};
use proptest::prelude::*;

/// Published complexity rows: (model, params M @256, GMACs @256, params M @512, GMACs @512).
const PUBLISHED: [(&str, f64, f64, f64, f64); 4] = [
    ("DiT S/2", 32.96, 6.06, 33.26, 31.44),
    ("DiT B/2", 130.51, 23.01, 131.10, 106.38),
    ("DiT L/2", 458.10, 80.70, 458.89, 360.98),
    ("DiT XL/2", 675.13, 118.62, 676.01, 524.54),
];

/// Samsung latency at 256 (ms), same row order as the complexity table.
const SAMSUNG_256: [(&str, f64, f64); 10] = [
    ("DiT S/2", 6.06, 8.35),
    ("DiT B/2", 23.01, 24.45),
    ("DiT L/2", 80.70, 85.00),
    ("DiT XL/2", 118.62, 129.00),
    ("EdgeDiT 1", 71.94, 86.13),
    ("EdgeDiT 2", 74.02, 86.55),
    ("EdgeDiT 3", 76.62, 88.19),
    ("EdgeDiT 4", 78.70, 87.81),
    ("EdgeDiT 5", 80.78, 88.74),
    ("EdgeDiT 6", 84.94, 89.22),
];

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn baseline_counts_match_published_table() {
    for (model, p256, g256, p512, g512) in PUBLISHED {
        for (res, p, g) in [(256, p256, g256), (512, p512, g512)] {
            let r = cost_of_spec(&reference_spec(model, res).unwrap());
            let params_m = r.params() as f64 / 1e6;
            assert!(rel(params_m, p) < 0.02, "{model}@{res}: params {params_m:.2}M vs {p}");
            assert!(rel(r.gmacs(), g) < 0.02, "{model}@{res}: {:.2} GMACs vs {g}", r.gmacs());
            assert_eq!(r.flops(), 2 * r.macs());
        }
    }
}

#[test]
fn shipped_tables_agree_with_published_values() {
    let rows = shipped_complexity();
    for (model, p256, g256, p512, g512) in PUBLISHED {
        let get = |res| rows.iter().find(|r| r.model == model && r.resolution == res).unwrap();
        assert_eq!((get(256).params_m, get(256).gmacs), (p256, g256));
        assert_eq!((get(512).params_m, get(512).gmacs), (p512, g512));
    }
    let anchors = anchors_for(&shipped_anchors(), "samsung", 256);
    assert_eq!(anchors.len(), SAMSUNG_256.len());
    for ((m, g, ms), a) in SAMSUNG_256.iter().zip(&anchors) {
        assert_eq!((a.model.as_str(), a.gmacs, a.latency_ms), (*m, *g, *ms));
    }
}

#[test]
fn affine_profile_fits_family_and_predicts_edge_models() {
    let all = anchors_for(&shipped_anchors(), "samsung", 256);
    let p = DeviceProfile::calibrate("samsung", 256, family_anchors(&all), ProfileMode::Affine).unwrap();
    assert_eq!(p.residuals.len(), 4);
    assert!(p.max_abs_residual() < 0.10, "{:?}", p.residuals);
    for (m, g, ms) in &SAMSUNG_256[4..] {
        let pred = p.estimate_gmacs(m, *g).unwrap();
        assert!(rel(pred, *ms) < 0.15, "{m}: {pred:.2} vs {ms}");
    }
}

#[test]
fn table_exact_reproduces_every_cell() {
    for a in shipped_anchors() {
        let rows = anchors_for(&shipped_anchors(), &a.device, a.resolution);
        let p = DeviceProfile::calibrate(&a.device, a.resolution, rows, ProfileMode::TableExact).unwrap();
        assert_eq!(p.estimate_gmacs(&a.model, a.gmacs).unwrap(), a.latency_ms);
        assert_eq!(p.lookup(&a.model).unwrap().latency_text.parse::<f64>().unwrap(), a.latency_ms);
    }
}

#[test]
fn per_op_profile_is_nonnegative_and_close_on_family() {
    let all = anchors_for(&shipped_anchors(), "samsung", 256);
    let p = DeviceProfile::calibrate("samsung", 256, family_anchors(&all), ProfileMode::PerOp).unwrap();
    if let edgenas_core::cost::LatencyModel::PerOp {
        gemm_ms_per_gmac,
        score_ms_per_gmac,
        overhead_ms,
    } = p.model
    {
        assert!(gemm_ms_per_gmac >= 0.0 && score_ms_per_gmac >= 0.0 && overhead_ms >= 0.0);
    } else {
        panic!("expected a per-op model");
    }
    assert!(p.max_abs_residual() < 0.10, "{:?}", p.residuals);
}

#[test]
fn edge_model_slower_than_larger_baseline_is_flagged() {
    let rows = anchors_for(&shipped_anchors(), "samsung", 256);
    let found = ordering_anomalies(&rows)
        .into_iter()
        .any(|a| a.slower.model == "EdgeDiT 1" && a.faster.model == "DiT L/2");
    assert!(found);
    let e1 = rows.iter().find(|a| a.model == "EdgeDiT 1").unwrap();
    let l2 = rows.iter().find(|a| a.model == "DiT L/2").unwrap();
    assert!(e1.gmacs < l2.gmacs && e1.latency_ms > l2.latency_ms);
}

fn toy_spec() -> impl Strategy<Value = DiTSpec> {
    (
        prop::sample::select(vec![1usize, 2, 4]),
        1usize..5,
        prop::sample::select(vec![1usize, 2]),
        prop::sample::select(vec![4usize, 8]),
        1usize..5,
        any::<bool>(),
        prop::collection::vec((1usize..5, 1usize..5), 1..4),
    )
        .prop_map(|(heads, wmul, patch, side, classes, sigma, blocks)| {
            let width = 4 * heads * wmul;
            // teachers pair layers, so emit each drawn block twice
            let blocks = blocks
                .into_iter()
                .flat_map(|(r, frac)| [BlockSpec::new(r, heads * frac * wmul); 2])
                .collect();
            DiTSpec {
                width,
                heads,
                patch,
                latent: LatentShape::new(3, side, side),
                num_classes: classes,
                freq_dim: 16,
                num_timesteps: 100,
                learn_sigma: sigma,
                reduced_inner_dim: heads,
                blocks,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn analytic_params_equal_built_model(spec in toy_spec()) {
        let w = build(&spec, 7).unwrap();
        prop_assert_eq!(count_params(&spec).total(), w.num_scalars() as u64);
    }

    #[test]
    fn removing_a_pair_never_costs_more(seed in any::<u64>(), pair in 0usize..4) {
        let teacher = DiTSpec::toy();
        let mut r = rng::stream(seed, "cost/monotone");
        let c = random_config(8, SearchMode::Joint, &mut r).unwrap();
        prop_assume!(!c.removed()[pair]);
        let mut removed = c.removed().to_vec();
        removed[pair] = true;
        let smaller = ArchConfig::new(removed, c.choice().to_vec()).unwrap();
        let (a, b) = (cost_of_config(&c, &teacher).unwrap(), cost_of_config(&smaller, &teacher).unwrap());
        prop_assert!(b.params() <= a.params());
        prop_assert!(b.macs() <= a.macs());
        let rows = anchors_for(&shipped_anchors(), "samsung", 256);
        for mode in [ProfileMode::Affine, ProfileMode::PerOp] {
            let p = DeviceProfile::calibrate("samsung", 256, family_anchors(&rows), mode).unwrap();
            prop_assert!(p.estimate(&b).unwrap() <= p.estimate(&a).unwrap());
        }
    }
}
