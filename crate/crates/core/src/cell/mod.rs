//! Unit-cell problems and homogenized coefficients.

pub mod coeffs;
pub mod problems;

pub use coeffs::{FourierMode, PeriodicCoefficientSet, Profile};
pub use problems::{
    default_cell_n, homogenize, solve_all, solve_chi, solve_second_order, solve_ustar, CellSolutions, CellSolver,
    HomogenizedCoefficients, SecondOrderCell,
};
