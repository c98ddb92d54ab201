//! Simulation and validation toolkit for (α, d, β)-superprocesses: stable
//! kernels, branching mechanisms, semigroup oracles, a branching particle
//! system and self-intersection local time estimators.

pub mod error;
pub mod mechanism;
pub mod offspring;
pub mod oracle;
pub mod pairsum;
pub mod particles;
pub mod quad;
pub mod silt;
pub mod special;
pub mod stable;

pub use error::{Error, Result};
