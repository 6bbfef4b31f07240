//! Pareto analysis of a search trace.

use std::fmt::Write as _;
use std::path::Path;

use edgenas_core::cost::{self, DeviceProfile};
use edgenas_core::distill::SurrogateBank;
use edgenas_core::dit::DiTSpec;
use edgenas_core::mobo::{hypervolume_clipped, pareto_front, reference_point};
use edgenas_core::space::{ArchConfig, Slot, Variant};
use edgenas_core::Error as CoreError;

use crate::artifacts::write_text;
use crate::error::{CliError, CliResult};
use crate::trace::{Trace, TraceRecord};

/// Extreme and knee members of a trace's front.
#[derive(Clone, Debug)]
pub struct Picks {
    pub front: Vec<TraceRecord>,
    pub smallest: TraceRecord,
    pub largest: TraceRecord,
    pub balanced: TraceRecord,
}

impl Picks {
    pub fn from_trace(trace: &Trace) -> CliResult<Self> {
        if trace.records.is_empty() {
            return Err(CoreError::Empty("trace").into());
        }
        let set = pareto_front(&trace.points());
        // front is sorted by ascending f, hence descending g
        let front: Vec<TraceRecord> = set.indices.iter().map(|&i| trace.records[i].clone()).collect();
        let smallest = front.last().cloned().expect("nonempty front");
        let largest = front[0].clone();
        let (f0, f1) = (front[0].f, smallest.f);
        let (g0, g1) = (smallest.g, front[0].g);
        let norm = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        let balanced = front
            .iter()
            .min_by(|a, b| {
                let da = norm(a.f, f0, f1).powi(2) + norm(a.g, g0, g1).powi(2);
                let db = norm(b.f, f0, f1).powi(2) + norm(b.g, g0, g1).powi(2);
                da.total_cmp(&db)
            })
            .cloned()
            .expect("nonempty front");
        Ok(Self {
            front,
            smallest,
            largest,
            balanced,
        })
    }

    pub fn get(&self, which: &str) -> CliResult<&TraceRecord> {
        match which {
            "smallest" => Ok(&self.smallest),
            "largest" => Ok(&self.largest),
            "balanced" => Ok(&self.balanced),
            _ => Err(CliError::Config(format!(
                "unknown selection `{which}` (balanced|smallest|largest)"
            ))),
        }
    }
}

/// Hypervolume of every trace prefix against a reference fixed by the initial design.
pub fn progression(trace: &Trace) -> CliResult<(Vec<f64>, [f64; 2])> {
    let pts = trace.points();
    if pts.is_empty() {
        return Err(CoreError::Empty("trace").into());
    }
    let init = trace.header.init_random.clamp(1, pts.len());
    let reference = reference_point(&pts[..init])?;
    let hv = (1..=pts.len()).map(|k| hypervolume_clipped(&pts[..k], reference)).collect();
    Ok((hv, reference))
}

pub fn front_csv(front: &[TraceRecord]) -> String {
    let mut s = String::from("iter,config,f,g\n");
    for r in front {
        let _ = writeln!(s, "{},{},{:?},{:?}", r.iter, r.config, r.f, r.g);
    }
    s
}

/// Inverse of [`front_csv`].
pub fn parse_front_csv(text: &str) -> Result<Vec<(usize, ArchConfig, f64, f64)>, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "iter,config,f,g")) => {}
        _ => return Err("line 1: expected header `iter,config,f,g`".into()),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let err = |m: &str| format!("line {}: {m}", i + 1);
            if f.len() != 4 {
                return Err(err("expected 4 fields"));
            }
            Ok((
                f[0].parse().map_err(|_| err("bad iter"))?,
                f[1].parse().map_err(|_| err("bad config"))?,
                f[2].parse().map_err(|_| err("bad f"))?,
                f[3].parse().map_err(|_| err("bad g"))?,
            ))
        })
        .collect()
}

/// Summed final KD loss of the surrogates a config uses.
fn kd_sum(arch: &ArchConfig, bank: &SurrogateBank) -> Option<f64> {
    let mut s = 0.0;
    for slot in arch.slots() {
        s += match slot {
            Slot::Merged { pair } => bank.get(1, pair, Variant::Orig).ok()?.final_loss,
            Slot::Layer {
                variant: Variant::Orig, ..
            } => 0.0,
            Slot::Layer { layer, variant } => bank.get(2, layer, variant).ok()?.final_loss,
        };
    }
    Some(s)
}

pub struct Report {
    pub picks: Picks,
    /// Trace iterations, aligned with `hypervolume`.
    pub iters: Vec<usize>,
    pub hypervolume: Vec<f64>,
    pub reference: [f64; 2],
    pub costs_csv: String,
    pub summary: String,
}

/// Builds the report. `teacher` fixes the shapes for cost accounting; its depth
/// is taken from the trace.
pub fn build(
    trace: &Trace,
    teacher: &DiTSpec,
    profile: Option<&DeviceProfile>,
    bank: Option<&SurrogateBank>,
) -> CliResult<Report> {
    let picks = Picks::from_trace(trace)?;
    let (hypervolume, reference) = progression(trace)?;
    let spec = teacher.with_blocks(vec![teacher.full_block(); trace.header.depth]);

    let mut costs = String::from("iter,config,params,gmacs,latency_ms,kd_sum,on_front\n");
    for r in &trace.records {
        let c = cost::cost_of_config(&r.config, &spec)?;
        let lat = profile
            .and_then(|p| p.estimate(&c).ok())
            .map_or("-".to_string(), |v| format!("{v:.4}"));
        let kd = bank
            .and_then(|b| kd_sum(&r.config, b))
            .map_or("-".to_string(), |v| format!("{v:.6e}"));
        let on = picks.front.iter().any(|f| f.iter == r.iter);
        let _ = writeln!(
            costs,
            "{},{},{},{:.6},{lat},{kd},{}",
            r.iter,
            r.config,
            c.params(),
            c.gmacs(),
            on as u8
        );
    }

    let mut s = String::new();
    let _ = writeln!(s, "evaluations   {}", trace.records.len());
    let _ = writeln!(s, "front size    {}", picks.front.len());
    let _ = writeln!(s, "reference     ({:.6}, {:.6})", reference[0], reference[1]);
    let _ = writeln!(s, "hypervolume   {:.6e}", hypervolume.last().copied().unwrap_or(0.0));
    for (name, r) in [
        ("smallest", &picks.smallest),
        ("largest", &picks.largest),
        ("balanced", &picks.balanced),
    ] {
        let c = cost::cost_of_config(&r.config, &spec)?;
        let _ = writeln!(
            s,
            "{name:<13} {}  f={:.5} g={:.5}  params {:.3}M  GMACs {:.4}  [{}]",
            r.config,
            r.f,
            r.g,
            c.params() as f64 / 1e6,
            c.gmacs(),
            r.config.describe()
        );
    }
    Ok(Report {
        picks,
        iters: trace.records.iter().map(|r| r.iter).collect(),
        hypervolume,
        reference,
        costs_csv: costs,
        summary: s,
    })
}

pub fn write(dir: &Path, r: &Report) -> CliResult<()> {
    let mut progress = String::from("iter,hypervolume\n");
    for (rec, hv) in r.iters.iter().zip(&r.hypervolume) {
        let _ = writeln!(progress, "{rec},{hv:?}");
    }
    write_text(&dir.join("front.csv"), &front_csv(&r.picks.front))?;
    write_text(&dir.join("progress.csv"), &progress)?;
    write_text(&dir.join("costs.csv"), &r.costs_csv)?;
    write_text(&dir.join("summary.txt"), &r.summary)
}
