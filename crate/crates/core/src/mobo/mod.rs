//! Multi-objective Bayesian optimization over the relaxed architecture space.
//!
//! Both objectives are minimized. Each gets its own Gaussian process; the
//! acquisition is exact two-objective expected hypervolume improvement.

mod ehvi;
mod gp;
mod pareto;
mod search;

pub use ehvi::{ehvi2d, psi};
pub use gp::{GpModel, GpParams};
pub use pareto::{hypervolume2d, hypervolume_clipped, pareto_front, ParetoSet};
pub use search::{propose, reference_point, run_search, Observation, Proposal, SearchOutcome, SearchSettings};
