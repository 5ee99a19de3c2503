use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("one cylinder contains the other; the Gromov product is not constant there")]
    NestedCylinders,
    #[error("the group element cancels the whole cylinder prefix; refine first")]
    FullCancellation,
    #[error("cylinder depth {depth} is below the required {required}")]
    DepthTooShallow { depth: usize, required: usize },
    #[error("a cylinder contains the basepoint")]
    ContainsBasepoint,
    #[error("invalid parameters: {0}")]
    ParamError(String),
    #[error("tail series does not converge: {0}")]
    TailDivergence(String),
    #[error("function is not zero on the tail cylinder at the basepoint")]
    NonzeroNearBasepoint,
    #[error("chart at the moved basepoint is not representable: {0}")]
    ChartOverflow(String),
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("domain Gram vanishes on a vector with non-zero image")]
    DegenerateGram,
    #[error("support reaches the tail cylinder or the repelling fixed point")]
    SupportTouchesTail,
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
