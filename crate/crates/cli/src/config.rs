//! Pipeline configuration.
//!
//! TOML with a versioned schema. Unknown keys are rejected so a typo never
//! silently falls back to a default. Every section is optional.

use std::path::{Path, PathBuf};

use edgenas_core::cost::ProfileMode;
use edgenas_core::diffusion::{NoiseSchedule, SamplerConfig, SamplerKind, SyntheticLatents, TrainConfig};
use edgenas_core::distill::{DistillHyper, VariantSet};
use edgenas_core::dit::{DiTSpec, LatentShape};
use edgenas_core::mobo::SearchSettings;
use edgenas_core::rng;
use edgenas_core::space::SearchMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "EDGENAS_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    /// Root of every random stream.
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default)]
    pub teacher: TeacherSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub profile: ProfileSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSection {
    pub preset: String,
    pub depth: Option<usize>,
    pub width: Option<usize>,
    pub heads: Option<usize>,
    pub reduced_inner_dim: Option<usize>,
    pub latent: String,
    pub num_classes: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub ema_decay: f32,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self {
            preset: "toy".into(),
            depth: None,
            width: None,
            heads: None,
            reduced_inner_dim: None,
            latent: "4x8x8".into(),
            num_classes: 10,
            steps: 5000,
            batch: 32,
            lr: 1e-3,
            ema_decay: 0.999,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub heldout_samples: usize,
    pub heldout_grid: usize,
    pub calibration_samples: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            heldout_samples: 64,
            heldout_grid: 8,
            calibration_samples: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    pub steps: usize,
    pub lr: f32,
    pub batch: usize,
    /// `product` (three variants per layer) or `paper` (two).
    pub variants: String,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            batch: 32,
            variants: "product".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub mode: String,
    pub budget: usize,
    pub init_random: usize,
    pub n_restarts: usize,
    /// Second objective: `latency` (device profile) or `macs`.
    pub cost_objective: String,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            mode: "stage2".into(),
            budget: 50,
            init_random: 10,
            n_restarts: 2048,
            cost_objective: "latency".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSection {
    pub device: String,
    pub resolution: u32,
    pub mode: String,
    /// Anchor CSV replacing the shipped table.
    pub anchors: Option<PathBuf>,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            device: "samsung".into(),
            resolution: 256,
            mode: "affine".into(),
            anchors: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    /// Front member to finetune: `balanced`, `smallest` or `largest`.
    pub select: String,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            steps: 1250,
            batch: 32,
            lr: 1e-3,
            select: "balanced".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub sampler: String,
    pub steps: usize,
    pub cfg_scale: f32,
    pub num: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            sampler: "deterministic-skip".into(),
            steps: 50,
            cfg_scale: 4.0,
            num: 8,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Config {
    /// Defaults for a run writing into `output_dir`.
    pub fn new(seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            output_dir: output_dir.into(),
            threads: 1,
            teacher: Default::default(),
            dataset: Default::default(),
            distill: Default::default(),
            search: Default::default(),
            profile: Default::default(),
            finetune: Default::default(),
            eval: Default::default(),
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file and applies the seed override from the environment.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| bad(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the normalized config.
    ///
    /// Output location and thread count do not change results, so they are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.threads = 1;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.threads == 0 {
            return Err(bad("threads must be at least 1"));
        }
        self.teacher_spec()?;
        self.variant_set()?;
        self.search_mode()?;
        self.profile_mode()?;
        self.sampler()?;
        if !matches!(self.search.cost_objective.as_str(), "latency" | "macs") {
            return Err(bad(format!(
                "search.cost_objective `{}` (latency|macs)",
                self.search.cost_objective
            )));
        }
        if !matches!(self.finetune.select.as_str(), "balanced" | "smallest" | "largest") {
            return Err(bad(format!(
                "finetune.select `{}` (balanced|smallest|largest)",
                self.finetune.select
            )));
        }
        let s = &self.search;
        if s.init_random < 2 || s.budget < s.init_random {
            return Err(bad(format!(
                "search needs budget ({}) >= init_random ({}) >= 2",
                s.budget, s.init_random
            )));
        }
        let d = &self.dataset;
        if d.heldout_samples == 0 || d.heldout_grid == 0 || d.calibration_samples == 0 {
            return Err(bad("dataset sizes must be positive"));
        }
        if self.teacher.batch == 0 || self.distill.batch == 0 || self.finetune.batch == 0 {
            return Err(bad("batch sizes must be positive"));
        }
        Ok(())
    }

    pub fn teacher_spec(&self) -> CliResult<DiTSpec> {
        let t = &self.teacher;
        let latent = LatentShape::parse(&t.latent).map_err(|e| bad(format!("teacher.latent: {e}")))?;
        let mut spec = DiTSpec::preset(&t.preset, latent).map_err(|e| bad(format!("teacher.preset: {e}")))?;
        spec.num_classes = t.num_classes;
        if let Some(w) = t.width {
            spec.width = w;
            spec.reduced_inner_dim = w / 2;
            spec.blocks = vec![spec.full_block(); spec.depth()];
        }
        if let Some(h) = t.heads {
            spec.heads = h;
        }
        if let Some(r) = t.reduced_inner_dim {
            spec.reduced_inner_dim = r;
        }
        if let Some(depth) = t.depth {
            spec.blocks = vec![spec.full_block(); depth];
        }
        spec.validate_teacher().map_err(|e| bad(format!("teacher: {e}")))?;
        Ok(spec)
    }

    pub fn variant_set(&self) -> CliResult<VariantSet> {
        self.distill
            .variants
            .parse()
            .map_err(|e| bad(format!("distill.variants: {e}")))
    }

    pub fn search_mode(&self) -> CliResult<SearchMode> {
        self.search.mode.parse().map_err(|e| bad(format!("search.mode: {e}")))
    }

    pub fn profile_mode(&self) -> CliResult<ProfileMode> {
        self.profile.mode.parse().map_err(|e| bad(format!("profile.mode: {e}")))
    }

    pub fn sampler(&self) -> CliResult<SamplerConfig> {
        let kind: SamplerKind = self.eval.sampler.parse().map_err(|e| bad(format!("eval.sampler: {e}")))?;
        if self.eval.cfg_scale < 1.0 {
            return Err(bad("eval.cfg_scale must be >= 1"));
        }
        if self.eval.steps == 0 || self.eval.steps > NoiseSchedule::default().len() {
            return Err(bad("eval.steps must be in 1..=T"));
        }
        Ok(SamplerConfig {
            kind,
            steps: self.eval.steps,
            cfg_scale: self.eval.cfg_scale,
            seed: rng::derive_seed(self.seed, "sample"),
        })
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule::default()
    }

    pub fn dataset(&self) -> CliResult<SyntheticLatents> {
        let spec = self.teacher_spec()?;
        Ok(SyntheticLatents::new(
            spec.latent,
            spec.num_classes,
            rng::derive_seed(self.seed, "data"),
        ))
    }

    pub fn teacher_train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.teacher.steps,
            batch: self.teacher.batch,
            lr: self.teacher.lr,
            ema_decay: self.teacher.ema_decay,
            seed: self.seed,
            stream: "teacher".into(),
            ..Default::default()
        }
    }

    pub fn finetune_train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.finetune.steps,
            batch: self.finetune.batch,
            lr: self.finetune.lr,
            ema_decay: self.teacher.ema_decay,
            seed: self.seed,
            stream: "finetune".into(),
            ..Default::default()
        }
    }

    pub fn distill_hyper(&self) -> DistillHyper {
        DistillHyper {
            steps: self.distill.steps,
            lr: self.distill.lr,
            batch: self.distill.batch,
        }
    }

    pub fn search_settings(&self, depth: usize) -> CliResult<SearchSettings> {
        Ok(SearchSettings {
            mode: self.search_mode()?,
            n_restarts: self.search.n_restarts,
            ..SearchSettings::new(depth, self.search.budget, self.search.init_random, self.seed)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\nseed = 7\noutput_dir = \"out\"\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c, Config::new(7, "out"));
        assert_eq!(c.teacher_spec().unwrap(), DiTSpec::toy());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = Config::parse(&format!("{MINIMAL}[search]\nbudjet = 3\n")).unwrap_err();
        assert!(e.to_string().contains("budjet"), "{e}");
        assert!(Config::parse(&format!("{MINIMAL}extra = 1\n")).is_err());
    }

    #[test]
    fn schema_version_and_ranges_checked() {
        assert!(Config::parse("schema_version = 2\nseed = 1\noutput_dir = \"o\"\n").is_err());
        assert!(Config::parse(&format!("{MINIMAL}[search]\nbudget = 3\ninit_random = 5\n")).is_err());
        assert!(Config::parse(&format!("{MINIMAL}[teacher]\ndepth = 3\n")).is_err());
        assert!(Config::parse(&format!("{MINIMAL}[eval]\ncfg_scale = 0.5\n")).is_err());
    }

    #[test]
    fn seed_is_required() {
        assert!(Config::parse("schema_version = 1\noutput_dir = \"o\"\n").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Config::parse(MINIMAL).unwrap();
        let b = Config::parse(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        assert_ne!(a.hash(), Config::new(8, "out").hash());
        let mut moved = a.clone();
        moved.output_dir = "elsewhere".into();
        moved.threads = 8;
        assert_eq!(a.hash(), moved.hash());
    }

    #[test]
    fn depth_override() {
        let c = Config::parse(&format!("{MINIMAL}[teacher]\ndepth = 4\n")).unwrap();
        assert_eq!(c.teacher_spec().unwrap().depth(), 4);
    }
}
