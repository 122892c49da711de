use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ingestion error at row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("unbalanced panel: {}", format_gaps(.gaps))]
    Balance { gaps: Vec<BalanceGap> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid weight matrix: {0}")]
    Validation(String),

    #[error("cannot build weights: {0}")]
    Construction(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("rank deficiency: column `{column}` is linearly dependent on [{}]", .depends_on.join(", "))]
    Rank {
        column: String,
        depends_on: Vec<String>,
    },

    #[error("optimizer hit the boundary of the admissible interval ({lower:.6}, {upper:.6}) at {value:.6}")]
    Boundary { value: f64, lower: f64, upper: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("campaign error: {0}")]
    Campaign(String),
}

/// One country missing one or more years of the requested range.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct BalanceGap {
    pub country: String,
    pub missing_years: Vec<i32>,
}

fn format_gaps(gaps: &[BalanceGap]) -> String {
    gaps.iter()
        .map(|g| {
            let years: Vec<String> = g.missing_years.iter().map(|y| y.to_string()).collect();
            format!("{} missing {}", g.country, years.join(","))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
