//! Meshes, P1 assembly, fields and linear solvers.

pub mod assembly;
pub mod field;
pub mod mesh;
pub mod snapshot;
pub mod solve;
pub mod sparse;

pub use assembly::{
    assemble_gradient_load, assemble_load, assemble_mass, assemble_stiffness, integrate, Quadrature, Tensor,
};
pub use field::NodalVectorField;
pub use mesh::{BoundaryKind, StructuredMesh};
pub use solve::{solve_linear, SolveReport, SolverOptions};
pub use sparse::{CsrMatrix, SparseOperator};
