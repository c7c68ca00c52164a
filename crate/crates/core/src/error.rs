use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field does not match grid: {0}")]
    FieldMismatch(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("u is not mean-zero (mean = {mean:e}) for a Neumann problem")]
    NotMeanZero { mean: f64 },

    #[error("power iteration did not converge in {sweeps} sweeps")]
    PowerIteration { sweeps: usize },

    #[error("conjugate gradient did not converge: residual {residual:e} after {iters} iterations")]
    ConjugateGradient { iters: usize, residual: f64 },

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("step sizes violate tau*sigma*L^2 < 1 (tau={tau:e}, sigma={sigma:e}, L={norm:e})")]
    StepSize { tau: f64, sigma: f64, norm: f64 },

    #[error("non-finite value encountered at iteration {iter}: {what}")]
    NotFinite { iter: usize, what: String },

    #[error("dual feasible set is numerically empty: {0}")]
    InfeasibleDual(String),

    #[error("descent stagnated at eps={eps:e}: gradient norm {grad_norm:e} after {iters} iterations")]
    DescentStagnation { eps: f64, iters: usize, grad_norm: f64 },

    #[error("run did not converge: {0}")]
    NotConverged(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("config error at line {line}, column {column}: {message}")]
    Config { line: usize, column: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
