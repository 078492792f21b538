//! Functional kriging with external drift (FKED) and semi-parametric spatial
//! bootstrap prediction bands for spatially correlated curves.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! computation over immutable inputs; file formats, the command line and
//! parallel drivers live in the `fked` companion crate.
//!
//! Pipeline overview:
//!
//! 1. [`fcurves`] turns raw `(site, t, y)` observations into B-spline curves.
//! 2. [`drift`] fits the functional concurrent linear drift, re-weighting by
//!    the spatial correlation of the residual curves until the AIC settles.
//! 3. [`tracevario`] estimates and fits the trace-semivariogram of residuals.
//! 4. [`okfd`] krigs the residual curve at an unmonitored site and adds the
//!    drift back.
//! 5. [`bootstrap`] decorrelates, resamples and recorrelates the residuals to
//!    build contrast curves, which [`ordering`] turns into simultaneous bands.
//! 6. [`simlab`] regenerates synthetic spatial functional fields and runs
//!    whole evaluation scenarios.
#![no_std]

extern crate alloc;

pub mod bootstrap;
pub mod drift;
mod error;
pub mod fcurves;
pub mod linalg;
pub mod okfd;
pub mod ordering;
pub mod simlab;
pub mod tracevario;

pub use bootstrap::{BootstrapConfig, BootstrapContext, BootstrapResult, RefitMode};
pub use drift::{CovariateSet, DriftConfig, DriftFit, TargetCovariates};
pub use error::{Error, Result};
pub use fcurves::{BasisSpec, CurveSet, RawObservation, Site};
pub use linalg::Matrix;
pub use okfd::{FkedModel, FkedPrediction, KrigingSystem};
pub use ordering::{Band, CurveEnsemble, Ordering};
pub use simlab::Scenario;
pub use tracevario::{EmpiricalVariogram, Family, VariogramConfig, VariogramModel};

