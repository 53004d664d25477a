//! Meta-learning at desk scale: MAML/FOMAML baselines and meta
//! self-distillation on a self-contained second-order autodiff core, with an
//! episodic data layer, a synthetic target/noise benchmark, consistency
//! metrics, and a reproducible experiment harness.

pub mod autodiff;
pub mod episodes;
pub mod error;
pub mod harness;
pub mod meta;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
