use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Parses `CxHxW`, e.g. `4x32x32`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(['x', 'X'])
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("latent `{s}`: {e}")))?;
        match parts[..] {
            [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Self::new(c, h, w)),
            _ => Err(Error::Parse(format!("latent `{s}` must be CxHxW"))),
        }
    }
}

impl fmt::Display for LatentShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Shape of one transformer block: MLP expansion ratio and attention inner width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub mlp_ratio: usize,
    pub inner_dim: usize,
}

impl BlockSpec {
    pub const fn new(mlp_ratio: usize, inner_dim: usize) -> Self {
        Self { mlp_ratio, inner_dim }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiTSpec {
    /// Token embedding width `d`.
    pub width: usize,
    pub heads: usize,
    pub patch: usize,
    pub latent: LatentShape,
    pub num_classes: usize,
    /// Width of the sinusoidal timestep features fed to the timestep MLP.
    pub freq_dim: usize,
    pub num_timesteps: usize,
    /// Emit `2C` output channels (noise + sigma) instead of `C`.
    pub learn_sigma: bool,
    /// Attention inner width used by reduced-width surrogates.
    pub reduced_inner_dim: usize,
    pub blocks: Vec<BlockSpec>,
}

impl DiTSpec {
    /// Uniform stack of `depth` standard blocks (`r = 4`, inner width = `width`).
    pub fn uniform(depth: usize, width: usize, heads: usize, latent: LatentShape, num_classes: usize) -> Self {
        Self {
            width,
            heads,
            patch: 2,
            latent,
            num_classes,
            freq_dim: 256,
            num_timesteps: 1000,
            learn_sigma: true,
            reduced_inner_dim: width / 2,
            blocks: vec![BlockSpec::new(4, width); depth],
        }
    }

    /// Desk-scale teacher: 8 blocks of width 64 on 4×8×8 latents, 10 classes.
    pub fn toy() -> Self {
        Self::uniform(8, 64, 4, LatentShape::new(4, 8, 8), 10)
    }

    pub fn toy_with_depth(depth: usize) -> Self {
        Self::uniform(depth, 64, 4, LatentShape::new(4, 8, 8), 10)
    }

    pub fn dit_s2(latent: LatentShape) -> Self {
        Self {
            reduced_inner_dim: 192,
            ..Self::uniform(12, 384, 6, latent, 1000)
        }
    }

    pub fn dit_b2(latent: LatentShape) -> Self {
        Self {
            reduced_inner_dim: 384,
            ..Self::uniform(12, 768, 12, latent, 1000)
        }
    }

    pub fn dit_l2(latent: LatentShape) -> Self {
        Self {
            reduced_inner_dim: 512,
            ..Self::uniform(24, 1024, 16, latent, 1000)
        }
    }

    pub fn dit_xl2(latent: LatentShape) -> Self {
        Self {
            reduced_inner_dim: 512,
            ..Self::uniform(28, 1152, 16, latent, 1000)
        }
    }

    /// Looks up a named preset: `toy`, `dit-s2`, `dit-b2`, `dit-l2`, `dit-xl2`.
    pub fn preset(name: &str, latent: LatentShape) -> Result<Self> {
        let norm = name.to_ascii_lowercase().replace(['_', ' ', '/'], "-");
        match norm.as_str() {
            "toy" => Ok(Self { latent, ..Self::toy() }),
            "dit-s2" | "dit-s-2" => Ok(Self::dit_s2(latent)),
            "dit-b2" | "dit-b-2" => Ok(Self::dit_b2(latent)),
            "dit-l2" | "dit-l-2" => Ok(Self::dit_l2(latent)),
            "dit-xl2" | "dit-xl-2" => Ok(Self::dit_xl2(latent)),
            _ => Err(Error::Parse(format!("unknown model preset `{name}`"))),
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.latent.height / self.patch, self.latent.width / self.patch)
    }

    /// Token count `N = (H/p)·(W/p)`.
    pub fn tokens(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.latent.channels
    }

    pub fn out_channels(&self) -> usize {
        if self.learn_sigma {
            2 * self.latent.channels
        } else {
            self.latent.channels
        }
    }

    pub fn full_block(&self) -> BlockSpec {
        BlockSpec::new(4, self.width)
    }

    /// Structural checks shared by teachers and assembled candidates.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.blocks.is_empty() {
            return bad("model has no blocks".into());
        }
        if self.width == 0 || !self.width.is_multiple_of(4) {
            return bad(format!("width {} must be a positive multiple of 4", self.width));
        }
        if self.patch == 0 || !self.latent.height.is_multiple_of(self.patch) || !self.latent.width.is_multiple_of(self.patch) {
            return bad(format!("latent {} not divisible by patch {}", self.latent, self.patch));
        }
        if self.freq_dim == 0 || !self.freq_dim.is_multiple_of(2) {
            return bad(format!("timestep feature dim {} must be even", self.freq_dim));
        }
        if self.num_classes == 0 || self.num_timesteps == 0 || self.heads == 0 {
            return bad("classes, timesteps and heads must be positive".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.mlp_ratio == 0 || b.inner_dim == 0 || b.inner_dim > self.width || b.inner_dim % self.heads != 0 {
                return bad(format!(
                    "block {i}: ratio {} / inner {} invalid for width {} with {} heads",
                    b.mlp_ratio, b.inner_dim, self.width, self.heads
                ));
            }
        }
        Ok(())
    }

    /// Teachers additionally need an even depth so layers pair up.
    pub fn validate_teacher(&self) -> Result<()> {
        self.validate()?;
        if !self.depth().is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!("teacher depth {} must be even", self.depth())));
        }
        if self.reduced_inner_dim == 0
            || self.reduced_inner_dim > self.width
            || !self.reduced_inner_dim.is_multiple_of(self.heads)
        {
            return Err(Error::InvalidSpec(format!(
                "reduced inner width {} invalid for width {} with {} heads",
                self.reduced_inner_dim, self.width, self.heads
            )));
        }
        Ok(())
    }

    /// Same model with a different block list (effective depth may be odd).
    pub fn with_blocks(&self, blocks: Vec<BlockSpec>) -> Self {
        Self { blocks, ..self.clone() }
    }
}
