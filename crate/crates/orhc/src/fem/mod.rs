//! Structured P1 finite elements on the unit square: mesh construction,
//! mass / diffusion assemblies, time-dependent reaction-convection
//! assembly and exact indicator-function load vectors.

mod assembly;
mod coeffs;
mod mesh;

pub use assembly::{
    assemble_reaction_convection, assemble_static, indicator_load, OperatorSet, RcAssembler,
    ReactionConvectionAssembly,
};
pub use coeffs::{CoefficientField, ConstantCoefficients, FnCoefficients, OscillatingCoefficients};
pub use mesh::{BoundaryCondition, Mesh, Rect};
