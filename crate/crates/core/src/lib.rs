//! Spatial panel econometrics for conditional convergence studies.
//!
//! The pipeline runs from a country-year panel and bilateral value-added
//! trade flows to:
//!
//! * a row-standardized spatial weight matrix ([`weights`]),
//! * global Moran's I and Geary's C ([`autocorr`]),
//! * fixed-effects SAR, SEM and SDM panels by maximum likelihood, with FE/RE
//!   baselines and Wald, Hausman and LR tests ([`spatialpanel`]),
//! * direct, indirect and total effects and convergence rates ([`effects`]),
//! * Levin–Lin–Chu unit-root tests ([`unitroot`]),
//! * simulation campaigns for estimator validation ([`montecarlo`]).
//!
//! ```
//! use spatconv::effects::convergence_rate;
//!
//! let r = convergence_rate(-0.35).unwrap();
//! assert!((r.rate - 0.431).abs() < 1e-3);
//! ```

pub mod autocorr;
pub mod data;
pub mod effects;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod report;
pub mod spatialpanel;
pub mod unitroot;
pub mod weights;

pub use error::{Error, Result};
pub use spatialpanel::{fit, FitOptions, FitResult, ModelKind, ModelSpec};
pub use weights::WeightMatrix;

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/weights.md")]
    pub mod weights {}
    #[doc = include_str!("../../../book/src/autocorr.md")]
    pub mod autocorr {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    pub mod estimation {}
    #[doc = include_str!("../../../book/src/effects.md")]
    pub mod effects {}
    #[doc = include_str!("../../../book/src/unitroot.md")]
    pub mod unitroot {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
