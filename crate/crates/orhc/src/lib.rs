//! Output-based receding-horizon stabilization of 2-D linear parabolic
//! equations with finitely many localized actuators and sensors.
//!
//! The library couples a receding-horizon optimal controller with an
//! exponential Luenberger observer: per-window finite-horizon optimal
//! control problems are solved by adjoint-gradient iteration with
//! alternating Barzilai-Borwein stepsizes, the control is applied up to
//! an online-selected concatenation time, and the plant is advanced
//! together with the observer that sees it only through average-like
//! sensor measurements.
//!
//! Module map:
//! - [`fem`]: structured P1 triangulations of the unit square and the
//!   mass / diffusion / reaction-convection assemblies.
//! - [`layout`]: chessboard actuator/sensor geometry, output operator,
//!   sensor-span projection and observer injection.
//! - [`spectral`]: Neumann-Laplacian eigenbasis and the state
//!   penalization operator of the cost functional.
//! - [`timestep`]: Crank-Nicolson integrators for forward, adjoint and
//!   coupled plant-observer systems.
//! - [`ocp`]: the finite-horizon optimal control solver.
//! - [`rhc`]: the receding-horizon closed loop.
//! - [`scenario`], [`report`]: configuration files and CSV/JSON/SVG
//!   emission.
//! - [`diagnostics`]: self-check oracles shared by the CLI `check`
//!   subcommand and the test suite.

pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod layout;
pub mod linalg;
pub mod ocp;
pub mod report;
pub mod rhc;
pub mod scenario;
pub mod spectral;
pub mod timestep;

pub use error::OrhcError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, OrhcError>;
