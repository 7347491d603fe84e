//! Randomization-based causal inference for 2^K factorial designs over a
//! fixed finite population.
//!
//! The crate constructs factorial model matrices, randomizes treatment
//! under complete randomization or matched pairs, computes factorial-effect
//! estimates with their exact covariance matrices and data-only covariance
//! estimators, and verifies every closed form by exhaustive enumeration of
//! the randomization distribution at desk scale.

pub mod error;
pub mod estimators;
pub mod io;
pub mod model_matrix;
pub mod oracle;
pub mod population;
pub mod randomization;

pub use error::{Error, Result};
pub use estimators::{DesignTag, EstimateReport};
pub use model_matrix::{build_model_matrix, ModelMatrix};
pub use population::{EffectVector, Pairing, ScienceTable};
pub use randomization::{Assignment, ObservedData, DEFAULT_ENUMERATION_CAP};
