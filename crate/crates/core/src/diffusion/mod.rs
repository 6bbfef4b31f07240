//! Noise-prediction diffusion: schedule, synthetic latents, training, sampling and a quality proxy.

mod data;
mod proxy;
mod sample;
mod schedule;
mod train;

pub use data::{Batch, SyntheticLatents};
pub use proxy::{proxy_quality, HeldOutSet};
pub use sample::{guided_eps, sample, SamplerConfig, SamplerKind};
pub use schedule::NoiseSchedule;
pub use train::{diffusion_loss, train, TrainConfig, TrainOutcome};
