//! Diffusion transformer with adaLN-Zero conditioning and per-block widths.

mod model;
mod spec;
mod weights;

pub use model::{
    block_forward, condition, embed_tokens, forward, head, mhsa, patchify, pos_embed_2d, timestep_frequencies, unpatchify,
    ForwardOutput, Taps,
};
pub use spec::{BlockSpec, DiTSpec, LatentShape};
pub use weights::{build, BlockVars, BlockWeights, Linear, LinearVars, ModelVars, ModelWeights};
