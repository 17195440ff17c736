pub mod analysis;
pub mod baseline;
pub mod catalog;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod label;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod par;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use catalog::{Arch, ArchParams};
pub use error::{Error, Result};
pub use label::Label;
pub use model::{Model, TrainPolicy};
pub use rng::Rng;
pub use tensor::{Real, Tensor};
