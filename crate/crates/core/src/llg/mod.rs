//! Multiscale and homogenized LLG models and their time stepping.

pub mod init;
pub mod model;
pub mod step;

pub use init::{
    boundary_flux_residual, bubble, bubble_field, initial_expansion, initial_projection, ProjectionOptions,
};
pub use model::{Model, ModelSpec, Scale, Terms};
pub use step::{run, run_with, step, IterationStats, RunOptions, Scheme, StepOptions, Trajectory};
