use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by `{op}` (tape node {index})")]
    NonFinite { op: &'static str, index: usize },

    #[error("optimizer step requested before any gradient evaluation")]
    NoGradient,

    #[error("node id {id} out of range for {num_nodes} nodes (edge {line})")]
    NodeOutOfRange {
        id: usize,
        num_nodes: usize,
        line: usize,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty source set for hop distance")]
    EmptySources,

    #[error("class {class} has no labeled nodes")]
    EmptyClass { class: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("row {row} is not a probability distribution")]
    NotDistribution { row: usize },

    #[error("empty node set")]
    EmptySet,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("joint estimator undefined for a = 0")]
    ZeroCorrelation,

    #[error("beta ratio undefined for a zero estimate")]
    ZeroEstimate,
}

pub type Result<T> = std::result::Result<T, Error>;
