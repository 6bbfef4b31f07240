//! The two-stage architecture space: pair removal bits plus a per-layer block variant.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dit::{BlockSpec, DiTSpec};
use crate::error::{Error, Result};

/// Per-layer block variant, in the fixed encoding order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Orig,
    MlpR2,
    Hid,
    MlpR2Hid,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Orig, Variant::MlpR2, Variant::Hid, Variant::MlpR2Hid];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::OutOfRange {
            what: "variant index",
            value: i as u128,
            limit: 4,
        })
    }

    pub fn mlp_ratio(self) -> usize {
        match self {
            Variant::Orig | Variant::Hid => 4,
            Variant::MlpR2 | Variant::MlpR2Hid => 2,
        }
    }

    pub fn reduced(self) -> bool {
        matches!(self, Variant::Hid | Variant::MlpR2Hid)
    }

    pub fn block_spec(self, spec: &DiTSpec) -> BlockSpec {
        let inner = if self.reduced() { spec.reduced_inner_dim } else { spec.width };
        BlockSpec::new(self.mlp_ratio(), inner)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Orig => "orig",
            Variant::MlpR2 => "mlp-r2",
            Variant::Hid => "hid",
            Variant::MlpR2Hid => "mlp-r2-hid",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which coordinates a relaxed point carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// One coordinate per layer; no pair removal.
    #[default]
    Stage2,
    /// `L/2` removal coordinates followed by `L` variant coordinates.
    Joint,
}

impl SearchMode {
    pub fn dim(self, depth: usize) -> usize {
        match self {
            SearchMode::Stage2 => depth,
            SearchMode::Joint => depth / 2 + depth,
        }
    }
}

impl FromStr for SearchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stage2" => Ok(SearchMode::Stage2),
            "joint" => Ok(SearchMode::Joint),
            _ => Err(Error::Parse(format!("unknown search mode `{s}` (stage2|joint)"))),
        }
    }
}

/// What [`space_size`] counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceKind {
    Stage1,
    Stage2,
    /// Stage 1 and Stage 2 counted side by side.
    Combined,
    /// Distinct canonical configs with both decisions made jointly.
    Joint,
}

fn check_depth(depth: usize) -> Result<()> {
    if depth == 0 || !depth.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("depth {depth} must be even and positive")));
    }
    Ok(())
}

fn pow(base: u128, exp: usize) -> Result<u128> {
    base.checked_pow(exp as u32).ok_or(Error::OutOfRange {
        what: "space size exponent",
        value: exp as u128,
        limit: u128::MAX,
    })
}

pub fn space_size(depth: usize, kind: SpaceKind) -> Result<u128> {
    check_depth(depth)?;
    let pairs = depth / 2;
    match kind {
        SpaceKind::Stage1 => pow(2, pairs),
        SpaceKind::Stage2 => pow(4, depth),
        SpaceKind::Combined => pow(2, pairs)?.checked_add(pow(4, depth)?).ok_or(Error::OutOfRange {
            what: "space size",
            value: u128::MAX,
            limit: u128::MAX,
        }),
        SpaceKind::Joint => pow(17, pairs),
    }
}

/// Size of the space a given search mode walks.
pub fn mode_size(depth: usize, mode: SearchMode) -> Result<u128> {
    match mode {
        SearchMode::Stage2 => space_size(depth, SpaceKind::Stage2),
        SearchMode::Joint => space_size(depth, SpaceKind::Joint),
    }
}

/// Discrete architecture. Always kept canonical.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArchConfig {
    removed: Vec<bool>,
    choice: Vec<Variant>,
}

impl ArchConfig {
    pub fn all_orig(depth: usize) -> Result<Self> {
        check_depth(depth)?;
        Ok(Self {
            removed: vec![false; depth / 2],
            choice: vec![Variant::Orig; depth],
        })
    }

    pub fn new(removed: Vec<bool>, choice: Vec<Variant>) -> Result<Self> {
        check_depth(choice.len())?;
        if removed.len() * 2 != choice.len() {
            return Err(Error::InvalidConfig(format!(
                "{} removal bits for {} layers",
                removed.len(),
                choice.len()
            )));
        }
        let mut c = Self { removed, choice };
        c.canonicalize();
        Ok(c)
    }

    fn canonicalize(&mut self) {
        for (i, &r) in self.removed.iter().enumerate() {
            if r {
                self.choice[2 * i] = Variant::Orig;
                self.choice[2 * i + 1] = Variant::Orig;
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.choice.len()
    }

    pub fn removed(&self) -> &[bool] {
        &self.removed
    }

    pub fn choice(&self) -> &[Variant] {
        &self.choice
    }

    pub fn num_removed(&self) -> usize {
        self.removed.iter().filter(|&&r| r).count()
    }

    pub fn effective_depth(&self) -> usize {
        self.depth() - self.num_removed()
    }

    /// One entry per block of the assembled network.
    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::with_capacity(self.effective_depth());
        for (i, &r) in self.removed.iter().enumerate() {
            if r {
                out.push(Slot::Merged { pair: i });
            } else {
                out.push(Slot::Layer {
                    layer: 2 * i,
                    variant: self.choice[2 * i],
                });
                out.push(Slot::Layer {
                    layer: 2 * i + 1,
                    variant: self.choice[2 * i + 1],
                });
            }
        }
        out
    }

    /// Block shapes of the assembled network.
    pub fn block_specs(&self, teacher: &DiTSpec) -> Result<Vec<BlockSpec>> {
        if teacher.depth() != self.depth() {
            return Err(Error::InvalidConfig(format!(
                "config for {} layers applied to a {}-layer teacher",
                self.depth(),
                teacher.depth()
            )));
        }
        Ok(self
            .slots()
            .into_iter()
            .map(|s| match s {
                Slot::Merged { .. } => teacher.full_block(),
                Slot::Layer { variant, .. } => variant.block_spec(teacher),
            })
            .collect())
    }

    pub fn describe(&self) -> String {
        let mut counts = [0usize; 4];
        for s in self.slots() {
            if let Slot::Layer { variant, .. } = s {
                counts[variant.index()] += 1;
            }
        }
        format!(
            "depth {} -> {} ({} merged pairs); orig {}, mlp-r2 {}, hid {}, mlp-r2-hid {}",
            self.depth(),
            self.effective_depth(),
            self.num_removed(),
            counts[0],
            counts[1],
            counts[2],
            counts[3]
        )
    }

    /// Representative relaxed point: the center of this config's cell.
    pub fn cell_center(&self, mode: SearchMode) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(mode.dim(self.depth()));
        match mode {
            SearchMode::Stage2 => {
                if self.num_removed() > 0 {
                    return Err(Error::InvalidConfig("pair removal needs joint search mode".into()));
                }
            }
            SearchMode::Joint => x.extend(self.removed.iter().map(|&r| if r { 0.75 } else { 0.25 })),
        }
        x.extend(self.choice.iter().map(|v| (v.index() as f64 + 0.5) / 4.0));
        Ok(x)
    }
}

/// A block position in an assembled network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    /// Layers `2·pair` and `2·pair+1` replaced by one block.
    Merged {
        pair: usize,
    },
    Layer {
        layer: usize,
        variant: Variant,
    },
}

impl fmt::Display for ArchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("R:")?;
        for &r in &self.removed {
            f.write_str(if r { "1" } else { "0" })?;
        }
        f.write_str("|S:")?;
        for v in &self.choice {
            write!(f, "{}", v.index())?;
        }
        Ok(())
    }
}

impl FromStr for ArchConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("config `{s}` is not of the form R:<bits>|S:<digits>"));
        let (r, st) = s.trim().split_once('|').ok_or_else(bad)?;
        let r = r.strip_prefix("R:").ok_or_else(bad)?;
        let st = st.strip_prefix("S:").ok_or_else(bad)?;
        let removed = r
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(bad()),
            })
            .collect::<Result<Vec<_>>>()?;
        let choice = st
            .chars()
            .map(|c| c.to_digit(10).ok_or_else(bad).and_then(|d| Variant::from_index(d as usize)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(removed, choice)
    }
}

fn quantize(x: f64, buckets: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidConfig(format!("relaxed coordinate {x} outside [0, 1]")));
    }
    Ok(((x * buckets as f64).floor() as usize).min(buckets - 1))
}

/// Nearest feasible architecture for a relaxed point. Ties round down.
pub fn snap(x: &[f64], depth: usize, mode: SearchMode) -> Result<ArchConfig> {
    check_depth(depth)?;
    if x.len() != mode.dim(depth) {
        return Err(Error::InvalidConfig(format!(
            "relaxed point has {} coordinates, expected {}",
            x.len(),
            mode.dim(depth)
        )));
    }
    let (removed, rest) = match mode {
        SearchMode::Stage2 => (vec![false; depth / 2], x),
        SearchMode::Joint => {
            let (r, rest) = x.split_at(depth / 2);
            (
                r.iter().map(|&v| quantize(v, 2).map(|b| b == 1)).collect::<Result<_>>()?,
                rest,
            )
        }
    };
    let choice = rest
        .iter()
        .map(|&v| quantize(v, 4).and_then(Variant::from_index))
        .collect::<Result<_>>()?;
    ArchConfig::new(removed, choice)
}

/// Canonical integer index of `cfg` within `mode`'s space.
pub fn encode(cfg: &ArchConfig, mode: SearchMode) -> Result<u128> {
    let mut code = 0u128;
    match mode {
        SearchMode::Stage2 => {
            if cfg.num_removed() > 0 {
                return Err(Error::InvalidConfig("pair removal needs joint search mode".into()));
            }
            for v in cfg.choice.iter().rev() {
                code = code * 4 + v.index() as u128;
            }
        }
        SearchMode::Joint => {
            for i in (0..cfg.removed.len()).rev() {
                let digit = if cfg.removed[i] {
                    16
                } else {
                    cfg.choice[2 * i].index() * 4 + cfg.choice[2 * i + 1].index()
                };
                code = code * 17 + digit as u128;
            }
        }
    }
    Ok(code)
}

pub fn decode(code: u128, depth: usize, mode: SearchMode) -> Result<ArchConfig> {
    let size = mode_size(depth, mode)?;
    if code >= size {
        return Err(Error::OutOfRange {
            what: "config index",
            value: code,
            limit: size,
        });
    }
    let mut rest = code;
    let mut removed = vec![false; depth / 2];
    let mut choice = vec![Variant::Orig; depth];
    match mode {
        SearchMode::Stage2 => {
            for c in choice.iter_mut() {
                *c = Variant::from_index((rest % 4) as usize)?;
                rest /= 4;
            }
        }
        SearchMode::Joint => {
            for (i, r) in removed.iter_mut().enumerate() {
                let digit = (rest % 17) as usize;
                rest /= 17;
                if digit == 16 {
                    *r = true;
                } else {
                    choice[2 * i] = Variant::from_index(digit / 4)?;
                    choice[2 * i + 1] = Variant::from_index(digit % 4)?;
                }
            }
        }
    }
    ArchConfig::new(removed, choice)
}

/// Uniform draw over `mode`'s space.
pub fn random_config<R: Rng + ?Sized>(depth: usize, mode: SearchMode, rng: &mut R) -> Result<ArchConfig> {
    let size = mode_size(depth, mode)?;
    decode(rng.random_range(0..size), depth, mode)
}

pub const MAX_ENUMERATE_DEPTH: usize = 8;

/// Every config of `mode`'s space in index order.
pub fn enumerate(depth: usize, mode: SearchMode) -> Result<Vec<ArchConfig>> {
    if depth > MAX_ENUMERATE_DEPTH {
        return Err(Error::OutOfRange {
            what: "enumeration depth",
            value: depth as u128,
            limit: MAX_ENUMERATE_DEPTH as u128 + 1,
        });
    }
    let size = mode_size(depth, mode)?;
    (0..size).map(|c| decode(c, depth, mode)).collect()
}
