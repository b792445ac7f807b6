pub mod error;
pub mod eval;
pub mod field;
pub mod flow;
pub mod io;
pub mod nn;
pub mod rng;
pub mod score;
pub mod systems;
pub mod training_free;
pub mod velocity_net;

pub use error::{Error, Result};
