//! Artifact layout of an output directory and (de)serialization of models and banks.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use edgenas_core::distill::{JobKey, SurrogateBank, SurrogateEntry};
use edgenas_core::dit::{BlockSpec, BlockWeights, DiTSpec, LatentShape, ModelWeights};
use edgenas_core::space::Variant;
use edgenas_core::Tensor;

use crate::bankfile::{self, Entry, Payload};
use crate::error::{CliError, CliResult};

pub const TEACHER: &str = "teacher.edtw";
pub const TEACHER_LOSSES: &str = "teacher_losses.csv";
pub const BANK: &str = "bank.edtw";
pub const BANK_MANIFEST: &str = "bank_manifest.csv";
pub const TRACE: &str = "trace.csv";
pub const ASSEMBLED: &str = "assembled.edtw";
pub const FINETUNED: &str = "finetuned.edtw";
pub const FINETUNE_LOSSES: &str = "finetune_losses.csv";
pub const REPORT_DIR: &str = "report";

/// Resolves artifact paths under an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> CliResult<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Path of an input artifact, or an error naming the subcommand that writes it.
    pub fn require(&self, name: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            return Ok(p);
        }
        let producer = match name {
            TEACHER => "pretrain-teacher",
            BANK => "distill",
            TRACE => "search",
            ASSEMBLED => "assemble",
            FINETUNED => "finetune",
            _ => "pretrain-teacher",
        };
        Err(CliError::Prerequisite { path: p, producer })
    }
}

fn spec_to_ints(s: &DiTSpec) -> Vec<i64> {
    let mut v = vec![
        s.width,
        s.heads,
        s.patch,
        s.latent.channels,
        s.latent.height,
        s.latent.width,
        s.num_classes,
        s.freq_dim,
        s.num_timesteps,
        s.learn_sigma as usize,
        s.reduced_inner_dim,
        s.blocks.len(),
    ];
    for b in &s.blocks {
        v.push(b.mlp_ratio);
        v.push(b.inner_dim);
    }
    v.into_iter().map(|x| x as i64).collect()
}

fn spec_from_ints(v: &[i64]) -> Result<DiTSpec, String> {
    if v.len() < 12 || v.iter().any(|&x| x < 0) {
        return Err("malformed spec record".into());
    }
    let u: Vec<usize> = v.iter().map(|&x| x as usize).collect();
    let depth = u[11];
    if u.len() != 12 + 2 * depth {
        return Err(format!("spec record declares {depth} blocks but has {} fields", u.len()));
    }
    let spec = DiTSpec {
        width: u[0],
        heads: u[1],
        patch: u[2],
        latent: LatentShape::new(u[3], u[4], u[5]),
        num_classes: u[6],
        freq_dim: u[7],
        num_timesteps: u[8],
        learn_sigma: u[9] != 0,
        reduced_inner_dim: u[10],
        blocks: (0..depth).map(|i| BlockSpec::new(u[12 + 2 * i], u[13 + 2 * i])).collect(),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn tensor_entry(name: String, t: &Tensor) -> Entry {
    Entry::f32(name, t.shape(), t.data().to_vec())
}

/// Named lookup over decoded entries.
pub struct EntryMap {
    path: PathBuf,
    map: HashMap<String, Entry>,
}

impl EntryMap {
    pub fn read(path: &Path) -> CliResult<Self> {
        let entries = bankfile::read(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            map: entries.into_iter().map(|e| (e.name.clone(), e)).collect(),
        })
    }

    fn err(&self, m: impl Into<String>) -> CliError {
        CliError::format(&self.path, m)
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        match self.map.get(name) {
            Some(Entry {
                dims,
                payload: Payload::F32(v),
                ..
            }) => {
                let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
                Tensor::new(&shape, v.clone()).ok()
            }
            _ => None,
        }
    }

    pub fn ints(&self, name: &str) -> CliResult<&[i64]> {
        match self.map.get(name) {
            Some(Entry {
                payload: Payload::I64(v),
                ..
            }) => Ok(v),
            _ => Err(self.err(format!("missing integer record `{name}`"))),
        }
    }

    pub fn floats(&self, name: &str) -> CliResult<&[f64]> {
        match self.map.get(name) {
            Some(Entry {
                payload: Payload::F64(v),
                ..
            }) => Ok(v),
            _ => Err(self.err(format!("missing float record `{name}`"))),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn model(&self, prefix: &str) -> CliResult<ModelWeights> {
        let spec = spec_from_ints(self.ints(&format!("{prefix}spec"))?).map_err(|m| self.err(m))?;
        ModelWeights::from_named(&spec, &|n| self.tensor(&format!("{prefix}{n}"))).map_err(|e| self.err(e.to_string()))
    }
}

pub fn model_entries(prefix: &str, w: &ModelWeights) -> Vec<Entry> {
    let mut out = vec![Entry::i64(format!("{prefix}spec"), spec_to_ints(&w.spec))];
    out.extend(
        w.named_tensors()
            .into_iter()
            .map(|(n, t)| tensor_entry(format!("{prefix}{n}"), t)),
    );
    out
}

/// Writes one or more models under distinct prefixes, e.g. `raw/` and `ema/`.
pub fn save_models(path: &Path, models: &[(&str, &ModelWeights)]) -> CliResult<()> {
    let entries: Vec<Entry> = models.iter().flat_map(|(p, w)| model_entries(p, w)).collect();
    bankfile::write(path, &entries)
}

pub fn load_model(path: &Path, prefix: &str) -> CliResult<ModelWeights> {
    EntryMap::read(path)?.model(prefix)
}

fn key_prefix(k: &JobKey) -> String {
    format!("s{}/{}/{}", k.stage, k.site, k.variant)
}

fn parse_variant(s: &str) -> Option<Variant> {
    Variant::ALL.into_iter().find(|v| v.name() == s)
}

pub fn save_bank(path: &Path, bank: &SurrogateBank) -> CliResult<()> {
    let mut entries = Vec::new();
    for (k, e) in &bank.entries {
        let p = key_prefix(k);
        entries.push(Entry::i64(
            format!("{p}/shape"),
            vec![
                e.weights.spec.mlp_ratio as i64,
                e.weights.spec.inner_dim as i64,
                e.weights.width() as i64,
            ],
        ));
        entries.push(Entry::f64(
            format!("{p}/losses"),
            vec![e.initial_loss, e.final_loss, e.steps as f64],
        ));
        entries.push(Entry::f64(format!("{p}/curve"), e.curve.clone()));
        entries.extend(e.weights.params(&p).into_iter().map(|(n, t)| tensor_entry(n, t)));
    }
    bankfile::write(path, &entries)
}

pub fn load_bank(path: &Path) -> CliResult<SurrogateBank> {
    let m = EntryMap::read(path)?;
    let mut keys: Vec<(JobKey, String)> = Vec::new();
    for name in m.names() {
        let Some(p) = name.strip_suffix("/shape") else { continue };
        let parts: Vec<&str> = p.splitn(3, '/').collect();
        let key = match parts[..] {
            [s, site, v] => s
                .strip_prefix('s')
                .and_then(|s| s.parse().ok())
                .zip(site.parse().ok())
                .zip(parse_variant(v))
                .map(|((stage, site), variant)| JobKey { stage, site, variant }),
            _ => None,
        };
        let key = key.ok_or_else(|| m.err(format!("bad surrogate key `{p}`")))?;
        keys.push((key, p.to_string()));
    }
    let mut bank = SurrogateBank::default();
    for (key, p) in keys {
        let shape = m.ints(&format!("{p}/shape"))?;
        let losses = m.floats(&format!("{p}/losses"))?;
        if shape.len() != 3 || losses.len() != 3 || shape.iter().any(|&v| v <= 0) {
            return Err(m.err(format!("malformed metadata for `{p}`")));
        }
        let spec = BlockSpec::new(shape[0] as usize, shape[1] as usize);
        let weights =
            BlockWeights::from_named(spec, shape[2] as usize, &p, &|n| m.tensor(n)).map_err(|e| m.err(e.to_string()))?;
        bank.insert(SurrogateEntry {
            key,
            weights,
            initial_loss: losses[0],
            final_loss: losses[1],
            steps: losses[2] as usize,
            curve: m.floats(&format!("{p}/curve"))?.to_vec(),
        });
    }
    Ok(bank)
}

/// Plain-text audit listing of every surrogate.
pub fn bank_manifest(bank: &SurrogateBank) -> String {
    let mut s = String::from("stage,site,variant,mlp_ratio,inner_dim,steps,initial_kd,final_kd\n");
    for (k, e) in &bank.entries {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:?},{:?}\n",
            k.stage, k.site, k.variant, e.weights.spec.mlp_ratio, e.weights.spec.inner_dim, e.steps, e.initial_loss, e.final_loss
        ));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn losses_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l:?}\n"));
    }
    s
}
