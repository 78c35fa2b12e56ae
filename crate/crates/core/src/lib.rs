pub mod counterfactual;
pub mod engine;
pub mod error;
pub mod factors;
pub mod io;
pub mod linalg;
pub mod marglik;
pub mod rng;
pub mod structure;
pub mod udlm;

pub use error::{Error, Result};
