//! Numerical laboratory for the nonlinear boundary diffusion equation
//! `∂_t u^p = −Bu − au` on planar domains, where `B` is the
//! Dirichlet-to-Neumann map of the enclosed domain.

pub mod config;
pub mod diagnostics;
pub mod dtn;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod numerics;
pub mod spectrum;
pub mod stationary;

pub use config::RunConfig;
pub use diagnostics::{verify_suite, SuiteReport, Verdict};
pub use dtn::{build_dtn_circle, build_dtn_general, build_dtn_spectral, BuildReport, DtnOperator, InteriorSamples};
pub use error::{Error, Result};
pub use geometry::{make_curve, BoundaryCurve, BoundaryField, CurveShape, FourierSeries};
pub use numerics::DenseMatrix;
pub use stationary::{classify_regime, first_eigen, separable_b, solve_steady, ProblemSpec, Regime, SteadyState};
pub use spectrum::{LinearizedSpectrum, ModeCounts};
pub use evolution::{evolve, EvolveControls, FlowMode, FlowState, Trajectory};
