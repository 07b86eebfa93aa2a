//! Joint MGFs and joint PDFs of partial sums of ordered independent,
//! non-identically distributed random variables, with exact forms for
//! exponential branches and Monte Carlo / nested-quadrature oracles.

pub mod applications;
pub mod combinatorics;
pub mod distributions;
pub mod error;
pub mod joint_densities;
pub mod kernels;
pub mod laplace;
pub mod oracle;
pub mod quadrature;

pub use applications::{CaptureSpec, OutageSpec};
pub use combinatorics::{ComplexityBudget, IndexSet, KahanSum};
pub use distributions::{Distribution, Exponential, FadingProfile, MipSpec};
pub use error::{Error, Result};
pub use joint_densities::{joint_density, DensityConfig, JointDensity, JointDensityResult, PartialSumSpec};
pub use kernels::{BranchModel, PartialFractionCoeffs};
pub use laplace::LaplaceTermSum;
pub use oracle::{McConfig, OracleEstimate};
pub use quadrature::QuadratureConfig;
