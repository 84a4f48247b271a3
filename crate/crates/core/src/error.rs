use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("ill-conditioned correlation matrix: Cholesky failed after jitter ladder {tried:?}")]
    IllConditioned { tried: Vec<f64> },

    #[error("rank-deficient trend basis")]
    RankDeficientTrend,

    #[error("hyperparameter estimation failed: {0}")]
    Estimation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("zero response range")]
    ZeroRange,

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("simulator failure at node {node}: {message}")]
    Simulator { node: usize, message: String },

    #[error("node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("all variance contributions are zero; the design has converged")]
    Converged,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input
    /// or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::IllConditioned { .. }
            | Error::RankDeficientTrend
            | Error::Estimation(_)
            | Error::Converged => true,
            Error::Node { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_node(self, node: usize) -> Error {
        match self {
            e @ Error::Node { .. } => e,
            e => Error::Node {
                node,
                source: Box::new(e),
            },
        }
    }
}
