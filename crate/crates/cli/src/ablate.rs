//! Sensitivity harness: out-of-space students at one site of the teacher.
//!
//! Each variant is distilled on the teacher taps, spliced into the teacher and
//! scored by the proxy. Expected orderings are flagged, not enforced.

use std::fmt::Write as _;

use edgenas_core::diffusion::{proxy_quality, HeldOutSet, NoiseSchedule};
use edgenas_core::distill::{collect_taps, fit_block, student_from_teacher, TapDataset};
use edgenas_core::dit::{BlockSpec, ModelWeights};
use edgenas_core::rng;

use crate::config::Config;
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    BlockRemoval2v3,
    MlpRatioSweep,
    HiddenDimSweep,
}

impl AblationKind {
    pub const ALL: [AblationKind; 3] = [
        AblationKind::BlockRemoval2v3,
        AblationKind::MlpRatioSweep,
        AblationKind::HiddenDimSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::BlockRemoval2v3 => "block-removal-2v3",
            AblationKind::MlpRatioSweep => "mlp-ratio-sweep",
            AblationKind::HiddenDimSweep => "hidden-dim-sweep",
        }
    }
}

impl std::str::FromStr for AblationKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown ablation `{s}`")))
    }
}

/// One student: replaces teacher layers `from..to` with a block of shape `spec`.
#[derive(Clone, Debug)]
struct Arm {
    label: String,
    from: usize,
    to: usize,
    spec: BlockSpec,
}

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub label: String,
    pub kd: Vec<f64>,
    pub proxy: Vec<f64>,
}

impl ArmResult {
    pub fn median_kd(&self) -> f64 {
        median(&self.kd)
    }

    pub fn median_proxy(&self) -> f64 {
        median(&self.proxy)
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub site: usize,
    pub arms: Vec<ArmResult>,
    /// Description of the expected ordering and whether it held.
    pub check: (String, bool),
}

impl AblationReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "ablation {}  site {}  seeds {}",
            self.kind.name(),
            self.site,
            self.arms[0].kd.len()
        );
        let _ = writeln!(s, "{:<14} {:>14} {:>14}", "variant", "median_kd", "median_proxy");
        for a in &self.arms {
            let _ = writeln!(s, "{:<14} {:>14.6e} {:>14.6}", a.label, a.median_kd(), a.median_proxy());
        }
        let (desc, ok) = &self.check;
        let _ = writeln!(s, "check {desc}: {}", if *ok { "PASS" } else { "FAIL" });
        s
    }
}

fn arms(kind: AblationKind, teacher: &ModelWeights) -> CliResult<(usize, Vec<Arm>)> {
    let depth = teacher.spec.depth();
    let d = teacher.spec.width;
    let heads = teacher.spec.heads;
    let site = (depth / 2).saturating_sub(1);
    let full = teacher.spec.full_block();
    let out = match kind {
        AblationKind::BlockRemoval2v3 => {
            if site + 3 > depth {
                return Err(CliError::Config(format!(
                    "teacher depth {depth} too shallow for 3-block removal"
                )));
            }
            vec![
                Arm {
                    label: "2-block".into(),
                    from: site,
                    to: site + 2,
                    spec: full,
                },
                Arm {
                    label: "3-block".into(),
                    from: site,
                    to: site + 3,
                    spec: full,
                },
            ]
        }
        AblationKind::MlpRatioSweep => (1..=4)
            .map(|r| Arm {
                label: format!("r={r}"),
                from: site,
                to: site + 1,
                spec: BlockSpec::new(r, d),
            })
            .collect(),
        AblationKind::HiddenDimSweep => {
            let dims = [d / 2, 3 * d / 4, d];
            if dims.iter().any(|&x| x == 0 || x % heads != 0) {
                return Err(CliError::Config(format!(
                    "width {d} with {heads} heads cannot be split into d/2, 3d/4"
                )));
            }
            ["half", "three-quarter", "full"]
                .iter()
                .zip(dims)
                .map(|(n, di)| Arm {
                    label: format!("d'={n}"),
                    from: site,
                    to: site + 1,
                    spec: BlockSpec::new(4, di),
                })
                .collect()
        }
    };
    Ok((site, out))
}

/// Teacher with layers `from..to` replaced by `block`.
fn splice(teacher: &ModelWeights, from: usize, to: usize, block: edgenas_core::dit::BlockWeights) -> ModelWeights {
    let mut blocks = teacher.blocks[..from].to_vec();
    blocks.push(block);
    blocks.extend_from_slice(&teacher.blocks[to..]);
    let specs = blocks.iter().map(|b| b.spec).collect();
    ModelWeights {
        spec: teacher.spec.with_blocks(specs),
        blocks,
        ..teacher.clone()
    }
}

/// Shared inputs so several ablations reuse one set of taps.
pub struct AblationInputs<'a> {
    pub teacher: &'a ModelWeights,
    pub taps: &'a TapDataset,
    pub heldout: &'a HeldOutSet,
    pub schedule: &'a NoiseSchedule,
}

/// Calibration taps for the ablation students.
pub fn taps(cfg: &Config, teacher: &ModelWeights) -> CliResult<TapDataset> {
    Ok(collect_taps(
        teacher,
        &cfg.dataset()?,
        &cfg.schedule(),
        cfg.dataset.calibration_samples,
        cfg.seed,
    )?)
}

pub fn run(cfg: &Config, inputs: &AblationInputs, kind: AblationKind, seeds: usize) -> CliResult<AblationReport> {
    if seeds == 0 {
        return Err(CliError::Config("ablation needs at least one seed".into()));
    }
    let t = inputs.teacher;
    let (site, arms) = arms(kind, t)?;
    let mut results = Vec::new();
    for arm in &arms {
        let mut kd = Vec::new();
        let mut proxy = Vec::new();
        for s in 0..seeds {
            let stream = format!("ablate/{}/{}/{s}", kind.name(), arm.label);
            // student starts from the first replaced layer, as stage-1 surrogates do
            let student = student_from_teacher(&t.blocks[arm.from], arm.spec, t.spec.heads);
            let fit = fit_block(
                student,
                t.spec.heads,
                inputs.taps,
                arm.from,
                arm.to,
                cfg.distill_hyper(),
                rng::derive_seed(cfg.seed, &stream),
                &stream,
            )?;
            let model = splice(t, arm.from, arm.to, fit.weights);
            kd.push(fit.final_loss);
            proxy.push(proxy_quality(&model, inputs.heldout, inputs.schedule)?);
            log::info!("{} {} seed {s}: kd {:.4e}", kind.name(), arm.label, fit.final_loss);
        }
        results.push(ArmResult {
            label: arm.label.clone(),
            kd,
            proxy,
        });
    }
    let p = |i: usize| results[i].median_proxy();
    let check = match kind {
        AblationKind::BlockRemoval2v3 => ("err(3-block) > err(2-block)".to_string(), p(1) > p(0)),
        AblationKind::MlpRatioSweep => ("err(r=1) > err(r=2)".to_string(), p(0) > p(1)),
        AblationKind::HiddenDimSweep => ("err(d'=half) > err(d'=three-quarter)".to_string(), p(0) > p(1)),
    };
    Ok(AblationReport {
        kind,
        site,
        arms: results,
        check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use edgenas_core::dit::{build, DiTSpec};

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn arm_shapes() {
        let t = build(&DiTSpec::toy(), 0).unwrap();
        let (site, a) = arms(AblationKind::BlockRemoval2v3, &t).unwrap();
        assert_eq!(site, 3);
        assert_eq!((a[0].from, a[0].to, a[1].to), (3, 5, 6));
        let (_, h) = arms(AblationKind::HiddenDimSweep, &t).unwrap();
        let dims: Vec<usize> = h.iter().map(|a| a.spec.inner_dim).collect();
        assert_eq!(dims, vec![32, 48, 64]);
        let (_, m) = arms(AblationKind::MlpRatioSweep, &t).unwrap();
        assert_eq!(m.len(), 4);
    }

    #[test]
    fn splice_depths() {
        let t = build(&DiTSpec::toy(), 0).unwrap();
        let m = splice(&t, 3, 6, t.blocks[3].clone());
        assert_eq!(m.spec.depth(), 6);
        assert_eq!(splice(&t, 2, 3, t.blocks[2].clone()), t);
    }
}
