use crate::llg::IterationStats;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("coefficient is not symmetric positive definite at {point:?}")]
    Coefficient { point: [f64; 3] },

    #[error("point {point:?} lies outside the mesh domain")]
    Location { point: [f64; 3] },

    #[error("right-hand side is not orthogonal to constants (defect {defect:.3e})")]
    Compatibility { defect: f64 },

    #[error("cell problem `{problem}` is not solvable: source mean defect {defect:.3e}")]
    Solvability { problem: String, defect: f64 },

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    LinearSolver {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("inner iteration did not converge: {} iterations, increment {:.3e}", .0.iterations, .0.residual)]
    NonConvergence(IterationStats),

    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("field/mesh mismatch: {0}")]
    Consistency(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("degenerate fit: {0}")]
    Fit(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps `self` with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Walks through stage/step wrappers to the underlying cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Step { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of an iterative solve (linear or nonlinear).
    pub fn is_non_convergence(&self) -> bool {
        matches!(self.root(), Error::NonConvergence(_) | Error::LinearSolver { .. })
    }

    /// True for bad user input (configuration, parse or validation).
    pub fn is_validation(&self) -> bool {
        matches!(self.root(), Error::Config(_) | Error::Parse { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
