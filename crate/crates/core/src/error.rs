use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph specification: {0}")]
    InvalidSpec(String),
    #[error("malformed graph file (line {line}): {msg}")]
    MalformedFile { line: usize, msg: String },
    #[error("graph needs {needed} vertices, budget is {budget}")]
    VertexBudget { needed: usize, budget: usize },
    #[error("vertex {0} is not in the graph")]
    InvalidVertex(usize),
    #[error("operation requires an undirected graph")]
    DirectedGraph,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("series did not reach tolerance {tol:e} within {max_terms} terms")]
    ToleranceUnreachable { tol: f64, max_terms: usize },
    #[error("boundary leakage {leakage:e} exceeds budget {budget:e}")]
    LeakageExceeded { leakage: f64, budget: f64 },
    #[error("growth profile radius {rmax} is distorted by the truncation radius {radius}")]
    ProfileTooLarge { rmax: usize, radius: usize },
    #[error("no accepted samples: exit probability {exit_probability:e} too small for {replicas} replicas")]
    NoAcceptedSamples { exit_probability: f64, replicas: usize },
    #[error("no crossing of threshold {threshold} on [{lo}, {hi}]")]
    NoCrossing { threshold: f64, lo: f64, hi: f64 },
    #[error("graph looks amenable (spectral radius estimate {0})")]
    Amenable(f64),
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
