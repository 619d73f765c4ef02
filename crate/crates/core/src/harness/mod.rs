//! Experiment configuration and drivers.

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_str, Experiment, ExperimentConfig, InitMethod, RunScale};
pub use run::{
    cell_stage, run_algorithm1, run_convergence_study, run_scheme_benchmark, run_solve, write_algorithm1,
    write_bench_csv, write_study, Algorithm1Output, BenchRow, CellStage, StudyResult,
};
