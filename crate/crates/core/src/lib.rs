pub mod covmodel;
pub mod error;
pub mod explab;
pub mod geometry;
pub mod invariant;
pub mod linalg;
pub mod linearization;
pub mod quad;
pub mod rng;
pub mod simcore;
pub mod stats;

pub use covmodel::IsotropicModel;
pub use error::{Error, Result};
