//! Command-line surface.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use edgenas_core::cost::{self, ProfileMode};
use edgenas_core::dit::{DiTSpec, LatentShape};
use edgenas_core::space::{ArchConfig, SearchMode};

use crate::ablate::{self, AblationInputs, AblationKind};
use crate::artifacts::{self as art, Layout};
use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, ModelChoice, SearchOverrides};
use crate::report;
use crate::trace::Trace;

#[derive(Debug, Parser)]
#[command(
    name = "edgenas",
    version,
    about = "Surrogate-block architecture search for diffusion transformers"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for distillation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the teacher on synthetic latents.
    PretrainTeacher,
    /// Distill every surrogate block into the bank.
    Distill,
    /// Build the network for one architecture config.
    Assemble {
        /// Config text, `R:<bits>|S:<digits>`.
        #[arg(long)]
        arch: String,
    },
    /// Analytic parameter and MAC counts.
    Cost {
        /// Preset (`dit-xl2`, `DiT XL/2`, `toy`, ...).
        #[arg(long, conflicts_with = "arch")]
        model: Option<String>,
        #[arg(long, default_value = "4x32x32")]
        latent: String,
        /// Candidate config, costed against the configured teacher.
        #[arg(long)]
        arch: Option<String>,
    },
    /// Device latency profiles.
    Latency {
        #[arg(long)]
        device: Option<String>,
        #[arg(long)]
        resolution: Option<u32>,
        /// `table-exact`, `affine` or `per-op`.
        #[arg(long)]
        mode: Option<String>,
        /// Named model to estimate.
        #[arg(long)]
        model: Option<String>,
        /// Published GMACs of `--model`.
        #[arg(long, requires = "model")]
        gmacs: Option<f64>,
        /// List latency orderings that contradict MAC orderings.
        #[arg(long)]
        anomalies: bool,
    },
    /// Multi-objective search over the surrogate space.
    Search {
        #[arg(long)]
        budget: Option<usize>,
        /// `stage2` or `joint`.
        #[arg(long)]
        space: Option<String>,
        /// Depth-4 synthetic benchmark; needs no teacher or bank.
        #[arg(long)]
        toy: bool,
    },
    /// Finetune a front member end to end.
    Finetune {
        /// `balanced`, `smallest` or `largest`.
        #[arg(long)]
        select: Option<String>,
    },
    /// Draw latents with classifier-free guidance.
    Sample {
        /// `teacher`, `assembled` or `finetuned`.
        #[arg(long, default_value = "teacher")]
        model: String,
    },
    /// Sensitivity studies at the middle layer.
    Ablate {
        /// `block-removal-2v3`, `mlp-ratio-sweep`, `hidden-dim-sweep` or `all`.
        #[arg(long, default_value = "all")]
        kind: String,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Front, hypervolume progression and costs from the trace.
    Report,
}

pub fn load_config(g: &Global) -> CliResult<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p)?,
        None => {
            let mut c = Config::new(0, "edgenas-out");
            if let Ok(s) = std::env::var(crate::config::SEED_ENV) {
                c.seed = s
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("EDGENAS_SEED=`{s}` is not an unsigned integer")))?;
            }
            c
        }
    };
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    if let Some(t) = g.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        cfg.threads = t;
    }
    Ok(cfg)
}

fn spec_for_model(name: &str, latent: LatentShape) -> CliResult<DiTSpec> {
    Ok(DiTSpec::preset(name, latent).or_else(|_| {
        let mut s = cost::reference_spec(name, 256)?;
        s.latent = latent;
        Ok::<_, edgenas_core::Error>(s)
    })?)
}

fn w(out: &mut dyn Write, s: impl AsRef<str>) -> CliResult<()> {
    out.write_all(s.as_ref().as_bytes()).map_err(|e| CliError::io("<stdout>", e))
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let cfg = load_config(&cli.global)?;
    match &cli.command {
        Command::Cost { model, latent, arch } => {
            let (label, report) = match (model, arch) {
                (Some(m), _) => {
                    let l = LatentShape::parse(latent).map_err(|e| CliError::Config(e.to_string()))?;
                    (format!("{m} @ {l}"), cost::cost_of_spec(&spec_for_model(m, l)?))
                }
                (None, Some(a)) => {
                    let a: ArchConfig = a.parse()?;
                    (a.to_string(), cost::cost_of_config(&a, &cfg.teacher_spec()?)?)
                }
                (None, None) => {
                    let s = cfg.teacher_spec()?;
                    ("teacher".to_string(), cost::cost_of_spec(&s))
                }
            };
            w(out, format!("{label}\n{report}"))
        }
        Command::Latency {
            device,
            resolution,
            mode,
            model,
            gmacs,
            anomalies,
        } => {
            let mut cfg = cfg;
            if let Some(d) = device {
                cfg.profile.device = d.clone();
            }
            if let Some(r) = resolution {
                cfg.profile.resolution = *r;
            }
            let mode: Option<ProfileMode> = mode.as_deref().map(str::parse).transpose()?;
            let p = pipeline::profile(&cfg, mode)?;
            w(out, format!("profile {} @ {}: {:?}\n", p.name, p.resolution, p.model))?;
            for (m, r) in &p.residuals {
                w(out, format!("  residual {m:<12} {:+.2}%\n", 100.0 * r))?;
            }
            if let Some(m) = model {
                let ms = match gmacs {
                    Some(g) => p.estimate_gmacs(m, *g)?,
                    None => match p.lookup(m) {
                        Ok(a) if matches!(p.model, edgenas_core::cost::LatencyModel::TableExact) => a.latency_ms,
                        _ => p.estimate(&cost::cost_of_spec(&cost::reference_spec(m, p.resolution)?))?,
                    },
                };
                w(out, format!("{m}: {ms:.2} ms\n"))?;
            }
            if *anomalies {
                let rows = cost::anchors_for(&cost::shipped_anchors(), &cfg.profile.device, cfg.profile.resolution);
                for a in cost::ordering_anomalies(&rows) {
                    w(out, format!("anomaly: {a}\n"))?;
                }
            }
            Ok(())
        }
        _ => {
            let layout = Layout::new(&cfg.output_dir)?;
            execute_stage(&cli.command, &cfg, &layout, out)
        }
    }
}

fn execute_stage(cmd: &Command, cfg: &Config, layout: &Layout, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::PretrainTeacher => {
            let s = pipeline::pretrain_teacher(cfg, layout)?;
            w(
                out,
                format!(
                    "teacher trained {} steps; held-out proxy {:.4} -> {:.4}\n",
                    s.steps, s.initial_proxy, s.final_proxy
                ),
            )
        }
        Command::Distill => {
            let bank = pipeline::distill(cfg, layout)?;
            w(
                out,
                format!(
                    "bank: {} surrogates ({} stage 1, {} stage 2)\n",
                    bank.len(),
                    bank.count_stage(1),
                    bank.count_stage(2)
                ),
            )
        }
        Command::Assemble { arch } => {
            let a: ArchConfig = arch.parse()?;
            let m = pipeline::assemble_arch(layout, &a)?;
            w(out, format!("assembled {a}: {} blocks, {}\n", m.spec.depth(), a.describe()))
        }
        Command::Search { budget, space, toy } => {
            let mode: Option<SearchMode> = space.as_deref().map(str::parse).transpose()?;
            let ov = SearchOverrides {
                budget: *budget,
                mode,
                toy: *toy,
            };
            let o = pipeline::search(cfg, layout, &ov)?;
            w(
                out,
                format!(
                    "{} evaluations, {} infeasible, front {} points, hypervolume {:.6e}\n",
                    o.trace.len(),
                    o.infeasible.len(),
                    o.front.len(),
                    o.hypervolume
                ),
            )
        }
        Command::Finetune { select } => {
            let s = pipeline::finetune(cfg, layout, select.as_deref())?;
            w(
                out,
                format!(
                    "finetuned {}: proxy {:.4} -> {:.4}\n",
                    s.config, s.proxy_before, s.proxy_after
                ),
            )
        }
        Command::Sample { model } => {
            let which: ModelChoice = model.parse()?;
            let z = pipeline::sample(cfg, layout, which)?;
            w(
                out,
                format!(
                    "{} samples {:?} -> {}\n",
                    which.name(),
                    z.shape(),
                    pipeline::samples_path(layout, which).display()
                ),
            )
        }
        Command::Ablate { kind, seeds } => {
            let kinds: Vec<AblationKind> = if kind == "all" {
                AblationKind::ALL.to_vec()
            } else {
                vec![kind.parse()?]
            };
            let teacher = pipeline::load(layout, ModelChoice::Teacher)?;
            let taps = ablate::taps(cfg, &teacher)?;
            let heldout = pipeline::heldout(cfg)?;
            let schedule = cfg.schedule();
            let inputs = AblationInputs {
                teacher: &teacher,
                taps: &taps,
                heldout: &heldout,
                schedule: &schedule,
            };
            for k in kinds {
                let r = ablate::run(cfg, &inputs, k, *seeds)?;
                let text = r.render();
                art::write_text(&layout.path(&format!("ablation_{}.txt", k.name())), &text)?;
                w(out, text)?;
            }
            Ok(())
        }
        Command::Report => {
            let trace = Trace::read(&layout.require(art::TRACE)?)?;
            let bank = match layout.require(art::BANK) {
                Ok(p) => Some(art::load_bank(&p)?),
                Err(_) => None,
            };
            let prof = pipeline::profile(cfg, None).ok();
            let r = report::build(&trace, &cfg.teacher_spec()?, prof.as_ref(), bank.as_ref())?;
            report::write(&layout.path(art::REPORT_DIR), &r)?;
            w(out, &r.summary)
        }
        Command::Cost { .. } | Command::Latency { .. } => unreachable!("handled without an output directory"),
    }
}
