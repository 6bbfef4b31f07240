//! The pipeline stages behind each subcommand.
//!
//! Each stage reads its inputs from the output directory, writes its
//! artifacts back, and is a pure function of the config and those inputs.

use std::ops::ControlFlow;
use std::path::PathBuf;

use edgenas_core::cost::{self, DeviceProfile, ProfileMode};
use edgenas_core::diffusion::{proxy_quality, sample as draw_samples, train, HeldOutSet};
use edgenas_core::distill::{assemble, collect_taps, distill_all, plan_jobs, SurrogateBank};
use edgenas_core::dit::{build, DiTSpec, ModelWeights};
use edgenas_core::mobo::{run_search, Observation, SearchOutcome, SearchSettings};
use edgenas_core::space::{ArchConfig, SearchMode, Variant};
use edgenas_core::{Error as CoreError, Tensor};

use crate::artifacts::{self as art, Layout};
use crate::bankfile::{self, Entry};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::report;
use crate::trace::{Trace, TraceHeader, TraceRecord, TraceWriter, TOOL_VERSION};

/// Which weights a command operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Teacher,
    Assembled,
    Finetuned,
}

impl ModelChoice {
    pub fn file(self) -> &'static str {
        match self {
            ModelChoice::Teacher => art::TEACHER,
            ModelChoice::Assembled => art::ASSEMBLED,
            ModelChoice::Finetuned => art::FINETUNED,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Teacher => "teacher",
            ModelChoice::Assembled => "assembled",
            ModelChoice::Finetuned => "finetuned",
        }
    }
}

impl std::str::FromStr for ModelChoice {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "teacher" => Ok(ModelChoice::Teacher),
            "assembled" => Ok(ModelChoice::Assembled),
            "finetuned" => Ok(ModelChoice::Finetuned),
            _ => Err(CliError::Config(format!("unknown model `{s}` (teacher|assembled|finetuned)"))),
        }
    }
}

/// Raw weights are the default; `ema/` is stored alongside.
pub fn load(layout: &Layout, which: ModelChoice) -> CliResult<ModelWeights> {
    art::load_model(&layout.require(which.file())?, "raw/")
}

pub fn heldout(cfg: &Config) -> CliResult<HeldOutSet> {
    Ok(HeldOutSet::new(
        &cfg.dataset()?,
        &cfg.schedule(),
        cfg.dataset.heldout_samples,
        cfg.dataset.heldout_grid,
    ))
}

#[derive(Clone, Debug)]
pub struct PretrainSummary {
    pub initial_proxy: f64,
    pub final_proxy: f64,
    pub steps: usize,
}

pub fn pretrain_teacher(cfg: &Config, layout: &Layout) -> CliResult<PretrainSummary> {
    let spec = cfg.teacher_spec()?;
    let data = cfg.dataset()?;
    let schedule = cfg.schedule();
    let set = heldout(cfg)?;
    let init = build(&spec, cfg.seed)?;
    let initial_proxy = proxy_quality(&init, &set, &schedule)?;
    let tc = cfg.teacher_train();
    let every = (tc.steps / 20).max(1);
    let out = train(init, &data, &schedule, &tc, &mut |step, loss, _| {
        if step % every == 0 {
            log::info!("teacher step {step}: loss {loss:.4}");
        }
        ControlFlow::Continue(())
    })?;
    let final_proxy = proxy_quality(&out.raw, &set, &schedule)?;
    art::save_models(&layout.path(art::TEACHER), &[("raw/", &out.raw), ("ema/", &out.ema)])?;
    art::write_text(&layout.path(art::TEACHER_LOSSES), &art::losses_csv(&out.losses))?;
    Ok(PretrainSummary {
        initial_proxy,
        final_proxy,
        steps: out.losses.len(),
    })
}

pub fn distill(cfg: &Config, layout: &Layout) -> CliResult<SurrogateBank> {
    let teacher = load(layout, ModelChoice::Teacher)?;
    let taps = collect_taps(
        &teacher,
        &cfg.dataset()?,
        &cfg.schedule(),
        cfg.dataset.calibration_samples,
        cfg.seed,
    )?;
    let jobs = plan_jobs(teacher.spec.depth(), cfg.variant_set()?, cfg.distill_hyper(), cfg.seed);
    log::info!("distilling {} surrogates on {} threads", jobs.len(), cfg.threads);
    let bank = distill_all(&teacher, &taps, &jobs, cfg.threads)?;
    art::save_bank(&layout.path(art::BANK), &bank)?;
    art::write_text(&layout.path(art::BANK_MANIFEST), &art::bank_manifest(&bank))?;
    Ok(bank)
}

/// Bank from disk; an all-original config needs none.
fn bank_for(layout: &Layout, arch: &ArchConfig) -> CliResult<SurrogateBank> {
    let needs_bank = arch.num_removed() > 0 || arch.choice().iter().any(|&v| v != Variant::Orig);
    if needs_bank {
        art::load_bank(&layout.require(art::BANK)?)
    } else {
        Ok(SurrogateBank::default())
    }
}

pub fn assemble_arch(layout: &Layout, arch: &ArchConfig) -> CliResult<ModelWeights> {
    let teacher = load(layout, ModelChoice::Teacher)?;
    if arch.depth() != teacher.spec.depth() {
        return Err(CliError::Config(format!(
            "config `{arch}` has depth {} but the teacher has {}",
            arch.depth(),
            teacher.spec.depth()
        )));
    }
    let model = assemble(arch, &teacher, &bank_for(layout, arch)?)?;
    art::save_models(&layout.path(art::ASSEMBLED), &[("raw/", &model)])?;
    Ok(model)
}

/// Device profile from the shipped or configured anchor table.
pub fn profile(cfg: &Config, mode: Option<ProfileMode>) -> CliResult<DeviceProfile> {
    let p = &cfg.profile;
    let anchors = match &p.anchors {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cost::parse_anchors(&text).map_err(|e| CliError::format(path, e.to_string()))?
        }
        None => cost::shipped_anchors(),
    };
    let mode = match mode {
        Some(m) => m,
        None => cfg.profile_mode()?,
    };
    let mut rows = cost::anchors_for(&anchors, &p.device, p.resolution);
    if mode != ProfileMode::TableExact {
        rows = cost::family_anchors(&rows);
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!(
            "no anchors for device `{}` at resolution {}",
            p.device, p.resolution
        )));
    }
    Ok(DeviceProfile::calibrate(&p.device, p.resolution, rows, mode)?)
}

/// Second objective for a candidate.
pub struct CostObjective {
    teacher: DiTSpec,
    profile: Option<DeviceProfile>,
}

impl CostObjective {
    pub fn new(cfg: &Config, teacher: DiTSpec) -> CliResult<Self> {
        let profile = match cfg.search.cost_objective.as_str() {
            "latency" => Some(profile(cfg, None)?),
            _ => None,
        };
        Ok(Self { teacher, profile })
    }

    pub fn eval(&self, arch: &ArchConfig) -> Result<f64, CoreError> {
        let report = cost::cost_of_config(arch, &self.teacher)?;
        match &self.profile {
            Some(p) => p.estimate(&report),
            None => Ok(report.gmacs()),
        }
    }
}

/// Synthetic quality for `--toy` runs on a depth-4 space: later layers are more
/// sensitive, reduced inner width hurts less than a halved MLP, and stacking
/// reductions costs extra.
pub fn toy_quality(arch: &ArchConfig) -> f64 {
    const PENALTY: [f64; 4] = [0.0, 0.08, 0.05, 0.16];
    let mut f = 0.30;
    let mut reduced = 0usize;
    for (l, v) in arch.choice().iter().enumerate() {
        f += (1.0 + 0.3 * l as f64) * PENALTY[v.index()];
        reduced += (*v != Variant::Orig) as usize;
    }
    f + 0.02 * (reduced * reduced) as f64 + 0.12 * arch.num_removed() as f64
}

type Evaluator = dyn FnMut(&ArchConfig) -> Result<[f64; 2], CoreError>;

#[derive(Clone, Debug, Default)]
pub struct SearchOverrides {
    pub budget: Option<usize>,
    pub mode: Option<SearchMode>,
    pub toy: bool,
}

pub fn search(cfg: &Config, layout: &Layout, ov: &SearchOverrides) -> CliResult<SearchOutcome> {
    let mut cfg = cfg.clone();
    if let Some(b) = ov.budget {
        cfg.search.budget = b;
        cfg.search.init_random = cfg.search.init_random.min(b);
    }
    if let Some(m) = ov.mode {
        cfg.search.mode = match m {
            SearchMode::Stage2 => "stage2".into(),
            SearchMode::Joint => "joint".into(),
        };
    }
    cfg.validate()?;
    let (teacher_spec, mut evaluator): (DiTSpec, Box<Evaluator>) = if ov.toy {
        let spec = DiTSpec::toy_with_depth(4);
        let s = spec.clone();
        (
            spec,
            Box::new(move |a| Ok([toy_quality(a), cost::cost_of_config(a, &s)?.gmacs()])),
        )
    } else {
        let teacher = load(layout, ModelChoice::Teacher)?;
        let bank = art::load_bank(&layout.require(art::BANK)?)?;
        let set = heldout(&cfg)?;
        let schedule = cfg.schedule();
        let objective = CostObjective::new(&cfg, teacher.spec.clone())?;
        let spec = teacher.spec.clone();
        (
            spec,
            Box::new(move |a| {
                let m = assemble(a, &teacher, &bank)?;
                Ok([proxy_quality(&m, &set, &schedule)?, objective.eval(a)?])
            }),
        )
    };
    let settings: SearchSettings = cfg.search_settings(teacher_spec.depth())?;
    let header = TraceHeader {
        tool: TOOL_VERSION.into(),
        config_hash: cfg.hash(),
        init_random: settings.init_random,
        mode: settings.mode,
        depth: settings.depth,
    };
    let mut writer = TraceWriter::create(&layout.path(art::TRACE), &header)?;
    let mut io_err: Option<CliError> = None;
    let outcome = run_search(&settings, &mut *evaluator, &mut |o: &Observation| {
        log::info!("iter {}: {} f={:.5} g={:.5}", o.iter, o.config, o.f, o.g);
        writer.push(&TraceRecord::from(o)).map_err(|e| {
            let msg = e.to_string();
            io_err = Some(e);
            CoreError::Parse(msg)
        })
    });
    if let Some(e) = io_err {
        return Err(e);
    }
    Ok(outcome?)
}

#[derive(Clone, Debug)]
pub struct FinetuneSummary {
    pub config: ArchConfig,
    pub proxy_before: f64,
    pub proxy_after: f64,
    pub losses: Vec<f64>,
}

pub fn finetune(cfg: &Config, layout: &Layout, select: Option<&str>) -> CliResult<FinetuneSummary> {
    let trace = Trace::read(&layout.require(art::TRACE)?)?;
    let select = select.unwrap_or(&cfg.finetune.select);
    let picks = report::Picks::from_trace(&trace)?;
    let arch = picks.get(select)?.config.clone();
    let teacher = load(layout, ModelChoice::Teacher)?;
    if arch.depth() != teacher.spec.depth() {
        return Err(CliError::Config(format!(
            "trace depth {} does not match teacher depth {}",
            arch.depth(),
            teacher.spec.depth()
        )));
    }
    let model = assemble(&arch, &teacher, &bank_for(layout, &arch)?)?;
    let set = heldout(cfg)?;
    let schedule = cfg.schedule();
    let proxy_before = proxy_quality(&model, &set, &schedule)?;
    let out = train(model, &cfg.dataset()?, &schedule, &cfg.finetune_train(), &mut |_, _, _| {
        ControlFlow::Continue(())
    })?;
    let proxy_after = proxy_quality(&out.raw, &set, &schedule)?;
    art::save_models(&layout.path(art::FINETUNED), &[("raw/", &out.raw), ("ema/", &out.ema)])?;
    art::write_text(&layout.path(art::FINETUNE_LOSSES), &art::losses_csv(&out.losses))?;
    art::write_text(
        &layout.path("finetune_summary.txt"),
        &format!("config {arch}\nselect {select}\nproxy_before {proxy_before:?}\nproxy_after {proxy_after:?}\n"),
    )?;
    Ok(FinetuneSummary {
        config: arch,
        proxy_before,
        proxy_after,
        losses: out.losses,
    })
}

pub fn samples_path(layout: &Layout, which: ModelChoice) -> PathBuf {
    layout.path(&format!("samples_{}.edtw", which.name()))
}

/// Samples `eval.num` latents with cycling class labels and stores them with their labels.
pub fn sample(cfg: &Config, layout: &Layout, which: ModelChoice) -> CliResult<Tensor> {
    let model = load(layout, which)?;
    let sc = cfg.sampler()?;
    let y: Vec<usize> = (0..cfg.eval.num).map(|i| i % model.spec.num_classes).collect();
    let z = draw_samples(&model, &cfg.schedule(), &sc, &y)?;
    bankfile::write(
        &samples_path(layout, which),
        &[
            Entry::f32("samples", z.shape(), z.data().to_vec()),
            Entry::i64("labels", y.iter().map(|&v| v as i64).collect()),
        ],
    )?;
    Ok(z)
}
