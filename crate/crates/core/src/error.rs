use alloc::boxed::Box;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate grid: need at least 3 cells per axis and positive lengths (nx = {nx}, ny = {ny})")]
    DegenerateGrid { nx: usize, ny: usize },

    #[error("anisotropic cells: hx = {hx}, hy = {hy}")]
    AnisotropicCells { hx: f64, hy: f64 },

    #[error("shape mismatch: expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("bad parameter {name} = {value}")]
    BadParameter { name: &'static str, value: f64 },

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("argument {value} outside the admissible interval ({lo}, {hi})")]
    DomainViolation { value: f64, lo: f64, hi: f64 },

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("time step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ball projection stalled: V-norm {norm} exceeds radius {radius}")]
    BallProjectionStall { norm: f64, radius: f64 },

    #[error("Armijo line search failed at iteration {iteration} after {backtracks} backtracks")]
    LineSearchFailure { iteration: usize, backtracks: usize },

    #[error("infeasible admissible set: {0}")]
    InfeasibleSet(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping step annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}
