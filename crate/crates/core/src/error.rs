use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("superluminal: speed {speed} at t = {t}")]
    Superluminal { t: f64, speed: f64 },

    #[error("insufficient history: light cone of event at t = {t} leaves trajectory domain [{lo}, {hi}]")]
    InsufficientHistory { t: f64, lo: f64, hi: f64 },

    #[error("convergence failure in {what} after {iterations} iterations (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("collision singularity: separation {r:e} at t = {t}")]
    Collision { t: f64, r: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infeasible jump: best continuity residual {residual:e} exceeds threshold")]
    InfeasibleJump { residual: f64 },

    #[error("insufficient sampling: {0}")]
    InsufficientSampling(String),

    #[error("coverage error: {undefined} of {total} sphere samples undefined")]
    Coverage { undefined: usize, total: usize },

    #[error("inconsistent family parameters: max spread {spread:e} exceeds tolerance {tol:e}")]
    InconsistentParams {
        spread: f64,
        tol: f64,
        report: Box<crate::shortrange::ConsistencyReport>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
