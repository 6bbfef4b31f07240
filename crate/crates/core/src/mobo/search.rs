use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::ehvi::ehvi2d;
use super::gp::GpModel;
use super::pareto::{hypervolume_clipped, pareto_front, ParetoSet};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::space::{self, encode, snap, ArchConfig, SearchMode};

/// One feasible evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub iter: usize,
    pub config: ArchConfig,
    pub x: Vec<f64>,
    /// Quality objective (lower is better).
    pub f: f64,
    /// Cost objective (lower is better).
    pub g: f64,
    /// Acquisition value at selection; `None` for random picks.
    pub ehvi: Option<f64>,
    pub seed: u64,
    pub wallclock_ms: u64,
}

impl Observation {
    pub fn objectives(&self) -> [f64; 2] {
        [self.f, self.g]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSettings {
    pub depth: usize,
    pub mode: SearchMode,
    pub budget: usize,
    pub init_random: usize,
    pub n_restarts: usize,
    pub seed: u64,
}

impl SearchSettings {
    pub fn new(depth: usize, budget: usize, init_random: usize, seed: u64) -> Self {
        Self {
            depth,
            mode: SearchMode::Stage2,
            budget,
            init_random,
            n_restarts: 2048,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub trace: Vec<Observation>,
    pub infeasible: Vec<(usize, ArchConfig, String)>,
    pub reference: [f64; 2],
    pub front: ParetoSet,
    pub hypervolume: f64,
}

impl SearchOutcome {
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.trace.iter().map(Observation::objectives).collect()
    }

    pub fn hypervolume_at(&self, reference: [f64; 2]) -> f64 {
        hypervolume_clipped(&self.points(), reference)
    }

    pub fn front_observations(&self) -> Vec<&Observation> {
        self.front.indices.iter().map(|&i| &self.trace[i]).collect()
    }
}

/// Componentwise `max + 0.1·|max|`, which is `1.1 × max` for positive objectives.
pub fn reference_point(points: &[[f64; 2]]) -> Result<[f64; 2]> {
    if points.is_empty() {
        return Err(Error::Empty("feasible evaluations for the reference point"));
    }
    let mut r = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            r[k] = r[k].max(p[k]);
        }
    }
    Ok(r.map(|m| if m == 0.0 { 1e-9 } else { m + 0.1 * m.abs() }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub config: ArchConfig,
    pub x: Vec<f64>,
    pub ehvi: Option<f64>,
}

fn random_unevaluated(
    depth: usize,
    mode: SearchMode,
    evaluated: &HashSet<u128>,
    rng: &mut StreamRng,
) -> Result<Option<ArchConfig>> {
    let size = space::mode_size(depth, mode)?;
    if evaluated.len() as u128 >= size {
        return Ok(None);
    }
    // rejection sampling while the space is mostly unexplored, otherwise a uniform pick of the remainder
    if (evaluated.len() as u128) * 2 < size {
        loop {
            let c = space::random_config(depth, mode, rng)?;
            if !evaluated.contains(&encode(&c, mode)?) {
                return Ok(Some(c));
            }
        }
    }
    let remaining: Vec<u128> = (0..size).filter(|c| !evaluated.contains(c)).collect();
    let pick = remaining[rng.random_range(0..remaining.len())];
    Ok(Some(space::decode(pick, depth, mode)?))
}

/// Draws `n_restarts` relaxed points, snaps and dedupes them, and returns the one whose
/// cell center maximizes EHVI. Falls back to a random unevaluated config.
#[allow(clippy::too_many_arguments)]
pub fn propose(
    models: (&GpModel, &GpModel),
    front: &ParetoSet,
    reference: [f64; 2],
    evaluated: &HashSet<u128>,
    depth: usize,
    mode: SearchMode,
    n_restarts: usize,
    rng: &mut StreamRng,
) -> Result<Option<Proposal>> {
    let dim = mode.dim(depth);
    let mut seen = HashSet::new();
    let mut cands = Vec::new();
    for _ in 0..n_restarts {
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let c = snap(&x, depth, mode)?;
        let code = encode(&c, mode)?;
        if !evaluated.contains(&code) && seen.insert(code) {
            cands.push(c);
        }
    }
    if cands.is_empty() {
        log::info!("all acquisition draws hit evaluated configs; exploring at random");
        return Ok(random_unevaluated(depth, mode, evaluated, rng)?.map(|c| {
            let x = c.cell_center(mode).expect("snapped config fits its mode");
            Proposal {
                config: c,
                x,
                ehvi: None,
            }
        }));
    }
    let scored: Vec<(Vec<f64>, f64)> = cands
        .par_iter()
        .map(|c| {
            let x = c.cell_center(mode).expect("snapped config fits its mode");
            let (mf, vf) = models.0.predict(&x);
            let (mg, vg) = models.1.predict(&x);
            let e = ehvi2d([mf, mg], [vf.sqrt(), vg.sqrt()], front, reference);
            (x, e)
        })
        .collect();
    let mut best = 0;
    for (i, (_, e)) in scored.iter().enumerate() {
        if *e > scored[best].1 {
            best = i;
        }
    }
    let (x, e) = scored[best].clone();
    Ok(Some(Proposal {
        config: cands.swap_remove(best),
        x,
        ehvi: Some(e),
    }))
}

/// Random initialization followed by EHVI-driven proposals until `budget` evaluations.
///
/// Evaluator errors mark a config infeasible; it is logged, kept out of the trace,
/// and never proposed again. `observer` sees each feasible observation as it lands.
pub fn run_search(
    settings: &SearchSettings,
    evaluator: &mut dyn FnMut(&ArchConfig) -> Result<[f64; 2]>,
    observer: &mut dyn FnMut(&Observation) -> Result<()>,
) -> Result<SearchOutcome> {
    let s = settings;
    if s.init_random < 2 || s.budget < s.init_random {
        return Err(Error::InvalidConfig(format!(
            "need budget ({}) >= init_random ({}) >= 2",
            s.budget, s.init_random
        )));
    }
    let start = Instant::now();
    let mut trace: Vec<Observation> = Vec::new();
    let mut infeasible = Vec::new();
    let mut evaluated: HashSet<u128> = HashSet::new();
    let mut reference: Option<[f64; 2]> = None;

    for iter in 0..s.budget {
        let name = format!("search/{iter}");
        let seed = rng::derive_seed(s.seed, &name);
        let mut r = rng::stream(s.seed, &name);
        if iter >= s.init_random && reference.is_none() {
            reference = Some(reference_point(
                &trace.iter().map(Observation::objectives).collect::<Vec<_>>(),
            )?);
        }
        let proposal = if iter < s.init_random || trace.len() < 2 {
            random_unevaluated(s.depth, s.mode, &evaluated, &mut r)?.map(|c| {
                let x = c.cell_center(s.mode).expect("config fits its mode");
                Proposal {
                    config: c,
                    x,
                    ehvi: None,
                }
            })
        } else {
            let xs: Vec<Vec<f64>> = trace.iter().map(|o| o.x.clone()).collect();
            let fs: Vec<f64> = trace.iter().map(|o| o.f).collect();
            let gs: Vec<f64> = trace.iter().map(|o| o.g).collect();
            let gp_f = GpModel::fit(&xs, &fs)?;
            let gp_g = GpModel::fit(&xs, &gs)?;
            let pts: Vec<[f64; 2]> = trace.iter().map(Observation::objectives).collect();
            let front = pareto_front(&pts);
            let rp = reference.expect("reference set after initialization");
            propose((&gp_f, &gp_g), &front, rp, &evaluated, s.depth, s.mode, s.n_restarts, &mut r)?
        };
        let Some(p) = proposal else {
            log::info!("search space exhausted after {iter} evaluations");
            break;
        };
        evaluated.insert(encode(&p.config, s.mode)?);
        match evaluator(&p.config) {
            Ok([f, g]) if f.is_finite() && g.is_finite() => {
                let obs = Observation {
                    iter,
                    config: p.config,
                    x: p.x,
                    f,
                    g,
                    ehvi: p.ehvi,
                    seed,
                    wallclock_ms: start.elapsed().as_millis() as u64,
                };
                observer(&obs)?;
                trace.push(obs);
            }
            Ok(v) => {
                log::warn!("iteration {iter}: {} gave non-finite objectives {v:?}", p.config);
                infeasible.push((iter, p.config, format!("non-finite objectives {v:?}")));
            }
            Err(e) => {
                log::warn!("iteration {iter}: {} is infeasible: {e}", p.config);
                infeasible.push((iter, p.config, e.to_string()));
            }
        }
    }
    let pts: Vec<[f64; 2]> = trace.iter().map(Observation::objectives).collect();
    let reference = match reference {
        Some(r) => r,
        None => reference_point(&pts)?,
    };
    let front = pareto_front(&pts);
    let hypervolume = hypervolume_clipped(&pts, reference);
    Ok(SearchOutcome {
        trace,
        infeasible,
        reference,
        front,
        hypervolume,
    })
}
