pub mod baselines;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod problems;
pub mod reference;
pub mod sav_cpd;
pub mod sav_osde;

pub use error::{Error, Result};
