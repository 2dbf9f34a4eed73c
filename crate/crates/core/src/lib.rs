//! Direct policy search over dynamic filters for continuous-time output
//! estimation, with informativity regularization and reconditioning.

pub mod error;
pub mod examples;
pub mod experiments;
pub mod ext;
pub mod gradients;
pub mod io;
pub mod lyapcare;
pub mod model;
pub mod numerics;
pub mod optimize;
pub mod rng;
mod small;
pub mod verify;

pub use error::{Assumption, Error, Result};
pub use ext::ExtReal;
pub use gradients::Gradient;
pub use lyapcare::RiccatiSolution;
pub use model::{Filter, OEInstance, RegionClass, StationaryState, Thresholds};
pub use numerics::Mat;
pub use optimize::{Algorithm, OptimizerConfig, RunResult, Termination};
