use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("zero-norm direction for Hessian-vector product")]
    ZeroDirection,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("edge {0} is already fixed")]
    EdgeFixed(usize),
    #[error("edge {0} is not a mixed edge")]
    EdgeNotMixed(usize),
    #[error("operation {op} is not active on edge {edge}")]
    OpNotActive { edge: usize, op: String },
    #[error("cannot remove the last operation of edge {0}")]
    LastOp(usize),
    #[error("edge index {0} out of range")]
    EdgeOutOfRange(usize),
    #[error("malformed genotype {0:?}: {1}")]
    Genotype(String, String),
    #[error("unknown operation token {0:?}")]
    UnknownOp(String),
    #[error("state is not fully discretized")]
    NotDiscretized,
    #[error("space has no node topology choice")]
    NoTopology,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("proxy {proxy} requires {what}")]
    MissingInput { proxy: String, what: String },
    #[error("degenerate score batch after {0} attempts")]
    Degenerate(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rank correlation undefined: all values tied")]
    ZeroVariance,
    #[error("need at least {0} values")]
    TooShort(usize),
    #[error("benchmark parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate benchmark record: {genotype} seed {seed}")]
    Duplicate { genotype: String, seed: u64 },
    #[error("accuracy {0} outside [0, 1]")]
    AccuracyRange(f64),
    #[error("benchmark incomplete: {0}")]
    Incomplete(String),
    #[error("unknown genotype {0}")]
    UnknownGenotype(String),
    #[error("no benchmark rows match the partial assignment")]
    NoMatch,
    #[error("empty candidate list")]
    NoCandidates,
    #[error("search aborted: {0}")]
    Aborted(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
