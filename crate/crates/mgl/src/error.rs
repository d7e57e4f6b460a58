use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("integer overflow: {0}")]
    Overflow(String),
    #[error("invalid input: {0}")]
    InvalidSpec(String),
    #[error("kernel is not positive semi-definite: minimum eigenvalue {min_eig:.3e} below {tol:.3e}")]
    NotPsd { min_eig: f64, tol: f64 },
    #[error("infinite RKHS norm: coefficient {degree} is {value:.3e} but the kernel has no mass there")]
    InfiniteNorm { degree: usize, value: f64 },
    #[error("rank deficiency: points miss {deficiency} of {dim} dimensions")]
    RankDeficient { deficiency: usize, dim: usize },
    #[error("target outside the convex hull: residual {residual:.3e} exceeds {tol:.3e}")]
    Infeasible { residual: f64, tol: f64 },
    #[error("feature images do not span the space: rank {rank} of {dim}")]
    SpanFailure { rank: usize, dim: usize },
    #[error("no convergence: certified gap {gap:.3e} exceeds {eps:.3e} after {iters} iterations")]
    NonConvergence { gap: f64, eps: f64, iters: usize },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
