//! Training, evaluation, analysis export and self-verification for
//! hyper-connection transformers on byte-level text.

pub mod analyze;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod optim;
pub mod train;
pub mod verify;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport};
pub use train::{train, MetricsRecord, TrainOutcome};
pub use verify::{verify, Suite, VerifyReport};
