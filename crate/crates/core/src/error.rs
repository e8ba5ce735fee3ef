use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected} components, found {found}{}", context_suffix(.context))]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: Option<String>,
    },

    #[error("zero vector{}", context_suffix(.0))]
    ZeroVector(Option<String>),

    #[error("non-finite component in vector `{0}`")]
    NonFinite(String),

    #[error("duplicate class name `{0}`")]
    DuplicateName(String),

    #[error("empty list of vectors")]
    EmptyList,

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("too few classes: need more than {required}, have {available}")]
    TooFewClasses { required: usize, available: usize },

    #[error("class `{0}` is both seen and unseen")]
    NameCollision(String),

    #[error("unseen class `{0}` has no positive-similarity seen neighbor")]
    IsolatedUnseen(String),

    #[error("invalid edge `{a}`-`{b}`: {reason}")]
    InvalidEdge {
        a: String,
        b: String,
        reason: String,
    },

    #[error("seen class `{0}` has no incident edges")]
    DanglingTransient(String),

    #[error("no absorbing state is reachable from seen class `{0}`")]
    UnreachableAbsorber(String),

    #[error(
        "transition system needs at least one seen and one unseen class (p={seen}, q={unseen})"
    )]
    EmptySide { seen: usize, unseen: usize },

    #[error("invalid transition matrix: {0}")]
    InvalidTransition(String),

    #[error("linear system (I - Q) is numerically singular")]
    SingularSystem,

    #[error("row {0} has no positive entry")]
    AllZeroRow(usize),

    #[error("class ordering mismatch: {0}")]
    OrderingMismatch(String),

    #[error("start vector is not a probability distribution (sum = {0})")]
    NonDistribution(f64),

    #[error("score matrix is empty")]
    EmptyScores,

    #[error("labels are all positive or all negative")]
    DegenerateLabels,

    #[error("label `{0}` is not among the evaluated classes")]
    UnknownLabel(String),

    #[error("class `{0}` has no ground-truth examples")]
    EmptyClass(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn context_suffix(context: &Option<String>) -> String {
    context
        .as_ref()
        .map(|c| format!(" ({c})"))
        .unwrap_or_default()
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
