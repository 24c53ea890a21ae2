pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decode;
pub mod dtn;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod forward;
pub mod nmt;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod supervision;
pub mod tensor;

pub use error::{Error, Result};
pub use forward::{Forward, Trainable};
pub use nmt::{ModelConfig, Padded};
pub use params::ModelParams;
pub use tensor::{Tape, Tensor, Var};

/// The single RNG type used throughout; seeded explicitly everywhere so every
/// run is reproducible.
pub type Rng = rand_chacha::ChaCha8Rng;
