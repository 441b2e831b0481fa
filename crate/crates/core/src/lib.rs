//! Linear and nonlinear stability toolkit for perturbations of the
//! Lamb-Oseen-like Couette vortex in self-similar variables.

pub mod banded;
pub mod error;
pub mod fit;
pub mod grid;
pub mod operator;
pub mod nonlinear;
pub mod oracle;
pub mod resolvent;
pub mod semigroup;
pub mod stream;
pub mod testfn;

pub use banded::{BandLu, BandMatrix, C64};
pub use error::{Error, Result};
pub use grid::{DerivativeOrder, GridFunction, GridScheme, GridSpec, NormKind, RadialGrid};
pub use operator::{assemble_lk, assemble_zero_mode, BandedComplexOperator, FlowParams};
pub use testfn::{Bump, SmoothProfile, TestFunctionSampler};
pub use resolvent::{NormPair, ScanConfig, ScanResult};
pub use stream::{solve_stream, StreamPair, StreamSolver};
pub use nonlinear::{simulate, EnergyReport, ModeState, RingInit, SimConfig, SimulationRun, Verdict};

/// Version string embedded in output files.
pub const VERSION: &str = concat!("couette-core ", env!("CARGO_PKG_VERSION"));
