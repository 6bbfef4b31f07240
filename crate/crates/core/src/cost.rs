//! Analytic parameter and MAC counts, plus device latency profiles fitted to measured anchors.

use std::fmt;
use std::ops::Add;

use crate::dit::{DiTSpec, LatentShape};
use crate::error::{Error, Result};
use crate::space::ArchConfig;

const COMPLEXITY_CSV: &str = include_str!("../data/complexity.csv");
const ANCHORS_CSV: &str = include_str!("../data/device_anchors.csv");

/// Counts split by model component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Components {
    pub patch_embed: u64,
    pub pos_embed: u64,
    /// Timestep MLP and class table.
    pub cond_embed: u64,
    /// Per-block modulation projections.
    pub adaln: u64,
    /// qkv and output projections.
    pub attention: u64,
    /// `QKᵀ` and `PV` products (MACs only).
    pub attention_scores: u64,
    pub mlp: u64,
    /// Final modulation and output projection.
    pub final_layer: u64,
}

impl Components {
    pub fn total(&self) -> u64 {
        self.patch_embed
            + self.pos_embed
            + self.cond_embed
            + self.adaln
            + self.attention
            + self.attention_scores
            + self.mlp
            + self.final_layer
    }

    fn fields(&self) -> [(&'static str, u64); 8] {
        [
            ("patch_embed", self.patch_embed),
            ("pos_embed", self.pos_embed),
            ("cond_embed", self.cond_embed),
            ("adaln", self.adaln),
            ("attention", self.attention),
            ("attention_scores", self.attention_scores),
            ("mlp", self.mlp),
            ("final_layer", self.final_layer),
        ]
    }
}

impl Add for Components {
    type Output = Components;
    fn add(self, o: Components) -> Components {
        Components {
            patch_embed: self.patch_embed + o.patch_embed,
            pos_embed: self.pos_embed + o.pos_embed,
            cond_embed: self.cond_embed + o.cond_embed,
            adaln: self.adaln + o.adaln,
            attention: self.attention + o.attention,
            attention_scores: self.attention_scores + o.attention_scores,
            mlp: self.mlp + o.mlp,
            final_layer: self.final_layer + o.final_layer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub params: Components,
    pub macs: Components,
}

impl CostReport {
    pub fn params(&self) -> u64 {
        self.params.total()
    }

    pub fn macs(&self) -> u64 {
        self.macs.total()
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs()
    }

    pub fn gmacs(&self) -> f64 {
        self.macs() as f64 / 1e9
    }

    /// MACs in dense projections, i.e. everything but the attention score products.
    pub fn gemm_gmacs(&self) -> f64 {
        (self.macs() - self.macs.attention_scores) as f64 / 1e9
    }

    pub fn score_gmacs(&self) -> f64 {
        self.macs.attention_scores as f64 / 1e9
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "params {:.2}M  GMACs {:.3}  GFLOPs {:.3}",
            self.params() as f64 / 1e6,
            self.gmacs(),
            self.flops() as f64 / 1e9
        )?;
        for ((name, p), (_, m)) in self.params.fields().iter().zip(self.macs.fields()) {
            writeln!(f, "  {name:<17} params {p:>12}  MACs {m:>14}")?;
        }
        Ok(())
    }
}

/// Scalars stored by a model built from `spec`, frozen positional table included.
pub fn count_params(spec: &DiTSpec) -> Components {
    let u = |v: usize| v as u64;
    let d = u(spec.width);
    let n = u(spec.tokens());
    let pd = u(spec.patch_dim());
    let head_out = u(spec.patch * spec.patch * spec.out_channels());
    let mut c = Components {
        patch_embed: pd * d + d,
        pos_embed: n * d,
        cond_embed: u(spec.freq_dim) * d + d + d * d + d + u(spec.num_classes + 1) * d,
        final_layer: d * 2 * d + 2 * d + d * head_out + head_out,
        ..Components::default()
    };
    for b in &spec.blocks {
        let di = u(b.inner_dim);
        let h = u(b.mlp_ratio) * d;
        c.adaln += d * 6 * d + 6 * d;
        c.attention += d * 3 * di + 3 * di + di * d + d;
        c.mlp += d * h + h + h * d + d;
    }
    c
}

/// Multiply-accumulates of one forward pass on a single latent of `spec.latent`.
pub fn count_macs(spec: &DiTSpec) -> Components {
    let u = |v: usize| v as u64;
    let d = u(spec.width);
    let n = u(spec.tokens());
    let head_out = u(spec.patch * spec.patch * spec.out_channels());
    let mut c = Components {
        patch_embed: n * u(spec.patch_dim()) * d,
        cond_embed: u(spec.freq_dim) * d + d * d,
        final_layer: 2 * d * d + n * d * head_out,
        ..Components::default()
    };
    for b in &spec.blocks {
        let di = u(b.inner_dim);
        c.adaln += 6 * d * d;
        c.attention += n * (3 * d * di + di * d);
        c.attention_scores += 2 * n * n * di;
        c.mlp += 2 * n * u(b.mlp_ratio) * d * d;
    }
    c
}

pub fn cost_of_spec(spec: &DiTSpec) -> CostReport {
    CostReport {
        params: count_params(spec),
        macs: count_macs(spec),
    }
}

/// Cost of the network assembled from `cfg` on top of `teacher`.
pub fn cost_of_config(cfg: &ArchConfig, teacher: &DiTSpec) -> Result<CostReport> {
    Ok(cost_of_spec(&teacher.with_blocks(cfg.block_specs(teacher)?)))
}

/// Latent shape for an image side length under an 8× downsampling autoencoder.
pub fn latent_for_resolution(resolution: u32) -> LatentShape {
    let s = resolution as usize / 8;
    LatentShape::new(4, s, s)
}

/// Spec for a published reference model name such as `DiT XL/2`.
pub fn reference_spec(model: &str, resolution: u32) -> Result<DiTSpec> {
    let latent = latent_for_resolution(resolution);
    let norm: String = model
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_ascii_lowercase();
    match norm.as_str() {
        "dits/2" => Ok(DiTSpec::dit_s2(latent)),
        "ditb/2" => Ok(DiTSpec::dit_b2(latent)),
        "ditl/2" => Ok(DiTSpec::dit_l2(latent)),
        "ditxl/2" => Ok(DiTSpec::dit_xl2(latent)),
        _ => Err(Error::Parse(format!("no reference architecture named `{model}`"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityRow {
    pub model: String,
    pub resolution: u32,
    pub params_m: f64,
    pub gmacs: f64,
    pub gflops: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub device: String,
    pub resolution: u32,
    pub model: String,
    pub gmacs: f64,
    pub latency_ms: f64,
    /// Latency exactly as written in the source file.
    pub latency_text: String,
}

fn records(text: &str, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(Error::Parse(format!("expected header `{header}`"))),
    }
    let cols = header.split(',').count();
    lines
        .map(|(no, l)| {
            let f: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
            if f.len() != cols {
                return Err(Error::Parse(format!("line {no}: expected {cols} fields, got {}", f.len())));
            }
            Ok((no, f))
        })
        .collect()
}

fn num<T: std::str::FromStr>(no: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("line {no}: bad number `{s}`")))
}

pub fn parse_complexity(text: &str) -> Result<Vec<ComplexityRow>> {
    records(text, "model,resolution,params_m,gmacs,gflops")?
        .into_iter()
        .map(|(no, f)| {
            Ok(ComplexityRow {
                model: f[0].clone(),
                resolution: num(no, &f[1])?,
                params_m: num(no, &f[2])?,
                gmacs: num(no, &f[3])?,
                gflops: num(no, &f[4])?,
            })
        })
        .collect()
}

pub fn parse_anchors(text: &str) -> Result<Vec<Anchor>> {
    records(text, "device,resolution,model,gmacs,latency_ms")?
        .into_iter()
        .map(|(no, f)| {
            let latency_ms: f64 = num(no, &f[4])?;
            let gmacs: f64 = num(no, &f[3])?;
            if !(latency_ms.is_finite() && latency_ms > 0.0 && gmacs.is_finite() && gmacs >= 0.0) {
                return Err(Error::Parse(format!("line {no}: latency and GMACs must be positive")));
            }
            Ok(Anchor {
                device: f[0].clone(),
                resolution: num(no, &f[1])?,
                model: f[2].clone(),
                gmacs,
                latency_ms,
                latency_text: f[4].clone(),
            })
        })
        .collect()
}

/// Published complexity table shipped with the crate.
pub fn shipped_complexity() -> Vec<ComplexityRow> {
    parse_complexity(COMPLEXITY_CSV).expect("shipped complexity table parses")
}

/// Published device latency table shipped with the crate.
pub fn shipped_anchors() -> Vec<Anchor> {
    parse_anchors(ANCHORS_CSV).expect("shipped anchor table parses")
}

pub fn anchors_for(anchors: &[Anchor], device: &str, resolution: u32) -> Vec<Anchor> {
    anchors
        .iter()
        .filter(|a| a.device.eq_ignore_ascii_case(device) && a.resolution == resolution)
        .cloned()
        .collect()
}

/// Rows for the baseline family (models with a known reference architecture).
pub fn family_anchors(anchors: &[Anchor]) -> Vec<Anchor> {
    anchors
        .iter()
        .filter(|a| reference_spec(&a.model, a.resolution).is_ok())
        .cloned()
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileMode {
    TableExact,
    Affine,
    PerOp,
}

impl std::str::FromStr for ProfileMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table-exact" | "table" => Ok(ProfileMode::TableExact),
            "affine" => Ok(ProfileMode::Affine),
            "per-op" => Ok(ProfileMode::PerOp),
            _ => Err(Error::Parse(format!(
                "unknown latency mode `{s}` (table-exact|affine|per-op)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LatencyModel {
    Uncalibrated,
    TableExact,
    /// `alpha · GMACs + beta`.
    Affine {
        alpha: f64,
        beta: f64,
    },
    PerOp {
        gemm_ms_per_gmac: f64,
        score_ms_per_gmac: f64,
        overhead_ms: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceProfile {
    pub name: String,
    pub resolution: u32,
    pub anchors: Vec<Anchor>,
    pub model: LatencyModel,
    /// Relative fit residuals `(pred - measured) / measured`, one per anchor used.
    pub residuals: Vec<(String, f64)>,
}

/// Weighted least squares on the columns of `x` selected by `cols`; weights `1/y`.
fn relative_lstsq(x: &[[f64; 3]], y: &[f64], cols: &[usize]) -> Option<Vec<f64>> {
    let k = cols.len();
    let mut a = nalgebra::DMatrix::<f64>::zeros(x.len(), k);
    let mut b = nalgebra::DVector::<f64>::zeros(x.len());
    for (i, row) in x.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            a[(i, j)] = row[c] / y[i];
        }
        b[i] = 1.0;
    }
    let ata = a.transpose() * &a;
    let scale = ata.diagonal().iter().cloned().fold(0.0, f64::max);
    let chol = nalgebra::Cholesky::new(ata.clone())?;
    // reject near rank-deficient systems
    let min_pivot = chol.l().diagonal().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    if min_pivot.is_nan() || min_pivot <= 1e-10 * scale {
        return None;
    }
    Some(chol.solve(&(a.transpose() * b)).iter().copied().collect())
}

impl DeviceProfile {
    pub fn calibrate(name: &str, resolution: u32, anchors: Vec<Anchor>, mode: ProfileMode) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Empty("latency anchors"));
        }
        let mut p = Self {
            name: name.to_string(),
            resolution,
            anchors,
            model: LatencyModel::Uncalibrated,
            residuals: Vec::new(),
        };
        p.model = match mode {
            ProfileMode::TableExact => LatencyModel::TableExact,
            ProfileMode::Affine => {
                if p.anchors.len() < 2 {
                    return Err(Error::SingularFit("affine fit needs at least 2 anchors".into()));
                }
                let x: Vec<[f64; 3]> = p.anchors.iter().map(|a| [a.gmacs, 1.0, 0.0]).collect();
                let y: Vec<f64> = p.anchors.iter().map(|a| a.latency_ms).collect();
                let c = relative_lstsq(&x, &y, &[0, 1])
                    .ok_or_else(|| Error::SingularFit(format!("anchors for {name} do not span GMACs")))?;
                LatencyModel::Affine { alpha: c[0], beta: c[1] }
            }
            ProfileMode::PerOp => {
                let mut x = Vec::new();
                let mut y = Vec::new();
                for a in &p.anchors {
                    if let Ok(spec) = reference_spec(&a.model, a.resolution) {
                        let r = cost_of_spec(&spec);
                        x.push([r.gemm_gmacs(), r.score_gmacs(), 1.0]);
                        y.push(a.latency_ms);
                    }
                }
                if x.len() < 3 {
                    return Err(Error::SingularFit(format!(
                        "per-op fit needs 3 anchors with known architecture, have {}",
                        x.len()
                    )));
                }
                // nonnegative least squares by exhaustive active-set search over 3 columns
                let mut best: Option<(f64, [f64; 3])> = None;
                for mask in 1u8..8 {
                    let cols: Vec<usize> = (0..3).filter(|b| mask & (1 << b) != 0).collect();
                    let Some(sol) = relative_lstsq(&x, &y, &cols) else { continue };
                    if sol.iter().any(|&v| v < 0.0) {
                        continue;
                    }
                    let mut coef = [0.0; 3];
                    for (c, v) in cols.iter().zip(sol) {
                        coef[*c] = v;
                    }
                    let err: f64 = x
                        .iter()
                        .zip(&y)
                        .map(|(r, yi)| {
                            let e = (r[0] * coef[0] + r[1] * coef[1] + r[2] * coef[2] - yi) / yi;
                            e * e
                        })
                        .sum();
                    if best.is_none_or(|(b, _)| err < b) {
                        best = Some((err, coef));
                    }
                }
                let (_, c) = best.ok_or_else(|| Error::SingularFit(format!("per-op fit for {name} is singular")))?;
                LatencyModel::PerOp {
                    gemm_ms_per_gmac: c[0],
                    score_ms_per_gmac: c[1],
                    overhead_ms: c[2],
                }
            }
        };
        let mut residuals = Vec::new();
        for a in &p.anchors {
            let pred = match &p.model {
                LatencyModel::PerOp { .. } => match reference_spec(&a.model, a.resolution) {
                    Ok(s) => p.estimate(&cost_of_spec(&s))?,
                    Err(_) => continue,
                },
                _ => p.estimate_gmacs(&a.model, a.gmacs)?,
            };
            residuals.push((a.model.clone(), (pred - a.latency_ms) / a.latency_ms));
        }
        p.residuals = residuals;
        Ok(p)
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().map(|(_, r)| r.abs()).fold(0.0, f64::max)
    }

    /// Latency estimate for an analytic cost report.
    pub fn estimate(&self, report: &CostReport) -> Result<f64> {
        match &self.model {
            LatencyModel::Uncalibrated => Err(Error::Uncalibrated(self.name.clone())),
            LatencyModel::TableExact => Err(Error::Uncalibrated(format!(
                "{}: table-exact profiles only answer for listed models",
                self.name
            ))),
            LatencyModel::Affine { alpha, beta } => Ok(alpha * report.gmacs() + beta),
            LatencyModel::PerOp {
                gemm_ms_per_gmac,
                score_ms_per_gmac,
                overhead_ms,
            } => Ok(gemm_ms_per_gmac * report.gemm_gmacs() + score_ms_per_gmac * report.score_gmacs() + overhead_ms),
        }
    }

    /// Latency for a named model with known total GMACs; table-exact looks the name up.
    pub fn estimate_gmacs(&self, model: &str, gmacs: f64) -> Result<f64> {
        match &self.model {
            LatencyModel::TableExact => self.lookup(model).map(|a| a.latency_ms),
            LatencyModel::Affine { alpha, beta } => Ok(alpha * gmacs + beta),
            LatencyModel::PerOp { .. } => {
                let spec = reference_spec(model, self.resolution).map_err(|_| {
                    Error::Uncalibrated(format!("{}: per-op mode needs a known architecture for `{model}`", self.name))
                })?;
                self.estimate(&cost_of_spec(&spec))
            }
            LatencyModel::Uncalibrated => Err(Error::Uncalibrated(self.name.clone())),
        }
    }

    pub fn lookup(&self, model: &str) -> Result<&Anchor> {
        let key: String = model.chars().filter(|c| !c.is_whitespace()).collect();
        self.anchors
            .iter()
            .find(|a| a.model.chars().filter(|c| !c.is_whitespace()).collect::<String>() == key)
            .ok_or_else(|| Error::Uncalibrated(format!("{}: no measured latency for `{model}`", self.name)))
    }
}

/// A pair where fewer MACs came with a higher measured latency.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderingAnomaly {
    pub slower: Anchor,
    pub faster: Anchor,
}

impl fmt::Display for OrderingAnomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} GMACs) measures {} ms, slower than {} ({} GMACs) at {} ms",
            self.slower.model,
            self.slower.gmacs,
            self.slower.latency_text,
            self.faster.model,
            self.faster.gmacs,
            self.faster.latency_text
        )
    }
}

/// All anchor pairs whose latency order contradicts their MAC order.
pub fn ordering_anomalies(anchors: &[Anchor]) -> Vec<OrderingAnomaly> {
    let mut out = Vec::new();
    for a in anchors {
        for b in anchors {
            if a.gmacs < b.gmacs && a.latency_ms > b.latency_ms {
                out.push(OrderingAnomaly {
                    slower: a.clone(),
                    faster: b.clone(),
                });
            }
        }
    }
    out
}
