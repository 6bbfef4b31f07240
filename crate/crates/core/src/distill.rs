//! Feature-wise distillation of surrogate blocks against a frozen teacher.
//!
//! Stage 1 trains one block to replace each consecutive teacher pair; stage 2
//! trains slimmer variants of every single layer. Each job sees only the
//! teacher's recorded input and output streams for its site, so jobs are
//! independent and run in parallel.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::autograd::Tape;
use crate::diffusion::{NoiseSchedule, SyntheticLatents};
use crate::dit::{block_forward, BlockSpec, BlockWeights, Linear, ModelWeights};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{self, StreamRng};
use crate::space::{ArchConfig, Slot, Variant};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 64;

/// Teacher token streams `h_0 … h_L` and conditioning for a calibration set.
#[derive(Clone, Debug, PartialEq)]
pub struct TapDataset {
    /// `states[l]` is `[n, N, d]`; layer `l` maps `states[l]` to `states[l+1]`.
    pub states: Vec<Tensor>,
    /// `[n, d]`, before the SiLU.
    pub cond: Tensor,
}

impl TapDataset {
    pub fn len(&self) -> usize {
        self.cond.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layers(&self) -> usize {
        self.states.len() - 1
    }

    fn rows(t: &Tensor, idx: &[usize]) -> Tensor {
        let per = t.numel() / t.shape()[0];
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = idx.len();
        Tensor::new(&shape, data).expect("row gather shape")
    }
}

/// Runs the teacher on `samples` noised training latents (uniform timesteps and classes)
/// and records every block's input and output.
pub fn collect_taps(
    teacher: &ModelWeights,
    data: &SyntheticLatents,
    schedule: &NoiseSchedule,
    samples: usize,
    seed: u64,
) -> Result<TapDataset> {
    if samples == 0 {
        return Err(Error::Empty("calibration set"));
    }
    let mut r = rng::stream(seed, "distill/taps");
    let batch = data.draw(samples, &mut r);
    let t: Vec<usize> = (0..samples).map(|_| r.random_range(0..schedule.len())).collect();
    let eps = Tensor::randn(batch.z0.shape(), 1.0, &mut r);
    let zt = schedule.q_sample(&batch.z0, &t, &eps)?;
    let mut states: Vec<Vec<f32>> = vec![Vec::new(); teacher.spec.depth() + 1];
    let mut cond = Vec::new();
    let idx: Vec<usize> = (0..samples).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let z = TapDataset::rows(&zt, chunk);
        let tc: Vec<usize> = chunk.iter().map(|&i| t[i]).collect();
        let yc: Vec<usize> = chunk.iter().map(|&i| batch.y[i]).collect();
        let taps = teacher.forward_with_taps(&z, &tc, &yc)?;
        for (dst, s) in states.iter_mut().zip(&taps.states) {
            dst.extend_from_slice(s.data());
        }
        cond.extend_from_slice(taps.cond.data());
    }
    let (n, d) = (teacher.spec.tokens(), teacher.spec.width);
    Ok(TapDataset {
        states: states
            .into_iter()
            .map(|s| Tensor::new(&[samples, n, d], s))
            .collect::<Result<_>>()?,
        cond: Tensor::new(&[samples, d], cond)?,
    })
}

/// Mean squared feature error.
pub fn kd_loss(teacher: &Tensor, student: &Tensor) -> Result<f64> {
    if teacher.shape() != student.shape() {
        return Err(Error::ShapeMismatch {
            op: "kd_loss",
            lhs: teacher.shape().to_vec(),
            rhs: student.shape().to_vec(),
        });
    }
    let s: f64 = teacher
        .data()
        .iter()
        .zip(student.data())
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum();
    Ok(s / teacher.numel() as f64)
}

/// Runs `block` over all taps entering layer `from` and scores it against the stream leaving layer `to - 1`.
pub fn evaluate_block(block: &BlockWeights, heads: usize, taps: &TapDataset, from: usize, to: usize) -> Result<f64> {
    if from >= to || to >= taps.states.len() {
        return Err(Error::OutOfRange {
            what: "tap layer",
            value: to as u128,
            limit: taps.states.len() as u128,
        });
    }
    let n = taps.len();
    let mut sum = 0.0;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let bv = block.bind(&mut tape, false);
        let h = tape.constant(TapDataset::rows(&taps.states[from], chunk));
        let c = tape.constant(TapDataset::rows(&taps.cond, chunk));
        let out = block_forward(&mut tape, &bv, heads, h, c)?;
        let target = TapDataset::rows(&taps.states[to], chunk);
        sum += kd_loss(&target, tape.value(out)?)? * chunk.len() as f64;
    }
    Ok(sum / n as f64)
}

/// Copies the leading `rows × cols` corner of `src` into a fresh `[rows, cols]` tensor,
/// taking columns group by group so that per-head layouts stay aligned.
fn copy_grouped(src: &Tensor, rows: usize, cols: usize, groups: usize) -> Tensor {
    let src_cols = src.shape()[1];
    let (gs, gd) = (src_cols / groups, cols / groups);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &src.data()[r * src_cols..(r + 1) * src_cols];
        for g in 0..groups {
            out.extend_from_slice(&row[g * gs..g * gs + gd]);
        }
    }
    Tensor::new(&[rows, cols], out).expect("grouped copy shape")
}

fn copy_bias(src: &Tensor, len: usize, groups: usize) -> Tensor {
    let (gs, gd) = (src.numel() / groups, len / groups);
    let mut out = Vec::with_capacity(len);
    for g in 0..groups {
        out.extend_from_slice(&src.data()[g * gs..g * gs + gd]);
    }
    Tensor::new(&[len], out).expect("bias copy shape")
}

/// Student initialized from a teacher block: every weight the two shapes share is copied,
/// keeping each attention head's leading dims.
pub fn student_from_teacher(teacher: &BlockWeights, spec: BlockSpec, heads: usize) -> BlockWeights {
    let d = teacher.width();
    let di = spec.inner_dim;
    let hidden = spec.mlp_ratio * d;
    // qkv columns are laid out [3][heads][dh]; proj rows are [heads][dh]
    let qkv = Linear {
        weight: copy_grouped(&teacher.qkv.weight, d, 3 * di, 3 * heads),
        bias: copy_bias(&teacher.qkv.bias, 3 * di, 3 * heads),
    };
    let proj_rows: Vec<usize> = {
        let (ts, ss) = (teacher.spec.inner_dim / heads, di / heads);
        (0..heads).flat_map(|h| (0..ss).map(move |e| h * ts + e)).collect()
    };
    let proj = Linear {
        weight: TapDataset::rows(&teacher.proj.weight, &proj_rows),
        bias: teacher.proj.bias.clone(),
    };
    let fc1 = Linear {
        weight: copy_grouped(&teacher.fc1.weight, d, hidden, 1),
        bias: copy_bias(&teacher.fc1.bias, hidden, 1),
    };
    let fc2 = Linear {
        weight: TapDataset::rows(&teacher.fc2.weight, &(0..hidden).collect::<Vec<_>>()),
        bias: teacher.fc2.bias.clone(),
    };
    BlockWeights {
        spec,
        ada: teacher.ada.clone(),
        qkv,
        proj,
        fc1,
        fc2,
    }
}

/// Which stage-2 variants get trained per layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VariantSet {
    /// All three non-original variants.
    #[default]
    Product,
    /// Two per layer: reduced MLP ratio and reduced inner width.
    Paper,
}

impl VariantSet {
    pub fn variants(self) -> &'static [Variant] {
        match self {
            VariantSet::Product => &[Variant::MlpR2, Variant::Hid, Variant::MlpR2Hid],
            VariantSet::Paper => &[Variant::MlpR2, Variant::Hid],
        }
    }
}

impl std::str::FromStr for VariantSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(VariantSet::Product),
            "paper" => Ok(VariantSet::Paper),
            _ => Err(Error::Parse(format!("unknown variant set `{s}` (product|paper)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillHyper {
    pub steps: usize,
    pub lr: f32,
    pub batch: usize,
}

impl Default for DistillHyper {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            batch: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JobKey {
    pub stage: u8,
    /// Pair index for stage 1, layer index for stage 2.
    pub site: usize,
    pub variant: Variant,
}

impl JobKey {
    pub fn stream(&self) -> String {
        format!("distill/{}/{}/{}", self.stage, self.site, self.variant)
    }
}

impl fmt::Display for JobKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} site {} {}", self.stage, self.site, self.variant)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillJob {
    pub key: JobKey,
    pub hyper: DistillHyper,
    pub seed: u64,
}

/// Every job for a teacher of `depth` layers, stage 1 first.
pub fn plan_jobs(depth: usize, set: VariantSet, hyper: DistillHyper, seed: u64) -> Vec<DistillJob> {
    let mut jobs = Vec::new();
    for pair in 0..depth / 2 {
        jobs.push(JobKey {
            stage: 1,
            site: pair,
            variant: Variant::Orig,
        });
    }
    for layer in 0..depth {
        for &variant in set.variants() {
            jobs.push(JobKey {
                stage: 2,
                site: layer,
                variant,
            });
        }
    }
    jobs.into_iter().map(|key| DistillJob { key, hyper, seed }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateEntry {
    pub key: JobKey,
    pub weights: BlockWeights,
    /// KD loss over all taps before training.
    pub initial_loss: f64,
    /// KD loss over all taps after training.
    pub final_loss: f64,
    /// Minibatch loss per step.
    pub curve: Vec<f64>,
    pub steps: usize,
}

/// Trains one surrogate on the taps for its site.
pub fn train_surrogate(job: &DistillJob, teacher: &ModelWeights, taps: &TapDataset) -> Result<SurrogateEntry> {
    let key = job.key;
    let depth = teacher.spec.depth();
    let heads = teacher.spec.heads;
    let (from, to, student) = match key.stage {
        1 => {
            if key.site >= depth / 2 {
                return Err(Error::OutOfRange {
                    what: "stage-1 pair",
                    value: key.site as u128,
                    limit: (depth / 2) as u128,
                });
            }
            // one full block standing in for the pair, started from the pair's first layer
            let src = &teacher.blocks[2 * key.site];
            (
                2 * key.site,
                2 * key.site + 2,
                student_from_teacher(src, teacher.spec.full_block(), heads),
            )
        }
        2 => {
            if key.site >= depth {
                return Err(Error::OutOfRange {
                    what: "stage-2 layer",
                    value: key.site as u128,
                    limit: depth as u128,
                });
            }
            let src = &teacher.blocks[key.site];
            (
                key.site,
                key.site + 1,
                student_from_teacher(src, key.variant.block_spec(&teacher.spec), heads),
            )
        }
        s => return Err(Error::InvalidConfig(format!("unknown distillation stage {s}"))),
    };
    if taps.layers() != depth || taps.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "taps cover {} layers, teacher has {depth}",
            taps.layers()
        )));
    }
    let fit = fit_block(student, heads, taps, from, to, job.hyper, job.seed, &key.stream())?;
    Ok(SurrogateEntry {
        key,
        weights: fit.weights,
        initial_loss: fit.initial_loss,
        final_loss: fit.final_loss,
        curve: fit.curve,
        steps: job.hyper.steps,
    })
}

/// Result of [`fit_block`].
#[derive(Clone, Debug, PartialEq)]
pub struct BlockFit {
    pub weights: BlockWeights,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub curve: Vec<f64>,
}

/// Trains `student` to map the taps entering layer `from` onto those leaving layer `to - 1`.
#[allow(clippy::too_many_arguments)]
pub fn fit_block(
    student: BlockWeights,
    heads: usize,
    taps: &TapDataset,
    from: usize,
    to: usize,
    hyper: DistillHyper,
    seed: u64,
    stream: &str,
) -> Result<BlockFit> {
    let initial_loss = evaluate_block(&student, heads, taps, from, to)?;
    let mut w = student;
    let mut adam = AdamState::new(AdamConfig::with_lr(hyper.lr), w.params("s").into_iter().map(|(_, t)| t));
    let mut r: StreamRng = rng::stream(seed, stream);
    let mut curve = Vec::with_capacity(hyper.steps);
    let n = taps.len();
    for step in 0..hyper.steps {
        let idx: Vec<usize> = (0..hyper.batch.min(n)).map(|_| r.random_range(0..n)).collect();
        let mut tape = Tape::new();
        let bv = w.bind(&mut tape, true);
        let h = tape.constant(TapDataset::rows(&taps.states[from], &idx));
        let c = tape.constant(TapDataset::rows(&taps.cond, &idx));
        let target = tape.constant(TapDataset::rows(&taps.states[to], &idx));
        let out = block_forward(&mut tape, &bv, heads, h, c)?;
        let loss = tape.mse(out, target)?;
        let lv = tape.value(loss)?.item() as f64;
        if !lv.is_finite() {
            return Err(Error::Diverged { step, loss: lv });
        }
        let mut grads = tape.backward(loss)?;
        let gs = bv.params().into_iter().map(|v| grads.take(v)).collect::<Result<Vec<_>>>()?;
        adam.step(&mut w.params_mut("s"), &gs).map_err(|e| match e {
            Error::NonFiniteGradient(_) => Error::Diverged { step, loss: lv },
            other => other,
        })?;
        curve.push(lv);
    }
    let final_loss = evaluate_block(&w, heads, taps, from, to)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step: hyper.steps,
            loss: final_loss,
        });
    }
    Ok(BlockFit {
        weights: w,
        initial_loss,
        final_loss,
        curve,
    })
}

/// Trained surrogates keyed by stage, site and variant.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurrogateBank {
    pub entries: BTreeMap<JobKey, SurrogateEntry>,
}

impl SurrogateBank {
    pub fn get(&self, stage: u8, site: usize, variant: Variant) -> Result<&SurrogateEntry> {
        self.entries
            .get(&JobKey { stage, site, variant })
            .ok_or_else(|| Error::MissingSurrogate {
                stage,
                site,
                variant: variant.to_string(),
            })
    }

    pub fn insert(&mut self, e: SurrogateEntry) {
        self.entries.insert(e.key, e);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_stage(&self, stage: u8) -> usize {
        self.entries.keys().filter(|k| k.stage == stage).count()
    }
}

/// Runs all jobs on a pool of `threads` workers. Results do not depend on scheduling.
pub fn distill_all(teacher: &ModelWeights, taps: &TapDataset, jobs: &[DistillJob], threads: usize) -> Result<SurrogateBank> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    let results: Vec<Result<SurrogateEntry>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let r = train_surrogate(job, teacher, taps);
                match &r {
                    Ok(e) => log::info!("{}: kd {:.3e} -> {:.3e}", job.key, e.initial_loss, e.final_loss),
                    Err(err) => log::warn!("{} failed: {err}", job.key),
                }
                r
            })
            .collect()
    });
    let mut bank = SurrogateBank::default();
    let mut failed = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(e) => bank.insert(e),
            Err(e) => failed.push(format!("{}: {e}", job.key)),
        }
    }
    if !failed.is_empty() {
        return Err(Error::DistillFailed(failed));
    }
    Ok(bank)
}

/// Builds the network for `cfg`: teacher embeddings and head, teacher blocks for
/// original layers, bank surrogates elsewhere.
pub fn assemble(cfg: &ArchConfig, teacher: &ModelWeights, bank: &SurrogateBank) -> Result<ModelWeights> {
    let specs = cfg.block_specs(&teacher.spec)?;
    let mut blocks = Vec::with_capacity(specs.len());
    for slot in cfg.slots() {
        let b = match slot {
            Slot::Merged { pair } => bank.get(1, pair, Variant::Orig)?.weights.clone(),
            Slot::Layer {
                layer,
                variant: Variant::Orig,
            } => teacher.blocks[layer].clone(),
            Slot::Layer { layer, variant } => bank.get(2, layer, variant)?.weights.clone(),
        };
        blocks.push(b);
    }
    Ok(ModelWeights {
        spec: teacher.spec.with_blocks(specs),
        blocks,
        ..teacher.clone()
    })
}
