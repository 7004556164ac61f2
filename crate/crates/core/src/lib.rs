pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod esl;
pub mod eval;
pub mod graph;
pub mod isl;
pub mod manifest;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use config::{Ablation, TrainConfig};
pub use error::{Error, Result};
pub use model::Model;
