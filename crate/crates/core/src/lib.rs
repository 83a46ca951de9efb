//! Knowledge graph embedding toolkit.
//!
//! Pipeline: parse a triple dataset ([`kg`]), stream corrupted mini-batches
//! ([`sampler`]), train one of eight embedding models ([`models`],
//! [`trainer`]), evaluate link prediction raw and filtered ([`evaluator`]),
//! search hyperparameters with TPE ([`tuner`]), and export 2-D projections
//! and plots ([`projector`]). [`config`] ties it together for the CLI.

mod binio;

pub mod config;
pub mod evaluator;
pub mod kg;
pub mod models;
pub mod projector;
pub mod sampler;
pub mod tensor;
pub mod testkit;
pub mod trainer;
pub mod tuner;

pub use evaluator::MetricsReport;
pub use kg::{KgDataset, Triple, Vocab};
pub use models::{ModelKind, ModelParams};
pub use sampler::{Batch, SamplerConfig};
pub use trainer::{HyperParams, TrainRecord};
