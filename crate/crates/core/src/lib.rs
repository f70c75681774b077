pub mod cli;
pub mod continuation;
pub mod eigen;
pub mod error;
pub mod greens;
pub mod grid;
pub mod lsred;
pub mod newton;
pub mod scenario;
pub mod stepper;
pub mod symmetry;

pub use error::{KsError, Result};
