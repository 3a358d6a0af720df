//! Multivariate Hawkes processes with an exponential kernel.

mod likelihood;
mod log;
mod mle;
mod model;
mod process;

pub use likelihood::log_likelihood;
pub use log::{Event, EventLog};
pub use mle::{fit_base_rates, fit_mle, MleFit, MleOptions};
pub use model::{spectral_radius, NetworkModel, Process};
pub(crate) use model::short_hash;
pub use process::{conditional_intensity, simulate_stage, HistoryCarry};
