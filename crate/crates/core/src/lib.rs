//! Two-level (individual and group) selection: an exact individual-based
//! simulator, the limiting killed Wright-Fisher flow solved by Monte Carlo and
//! by a finite-volume scheme, quasi-stationary analysis, regime
//! classification and invasion probabilities.

pub mod diffusion;
pub mod error;
pub mod exec;
pub mod ibm;
pub mod invasion;
mod linalg;
pub mod measure;
pub mod model;
pub mod pde;
pub mod qsd;
pub mod regime;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Exec;
pub use measure::{tv_distance, DecomposedMeasure};
pub use model::{ibm_rates_from_limit, rho_from_r, IbmRates, ModelParams, RateFunction};
pub use qsd::{solve_qsd, QsdSolution};
