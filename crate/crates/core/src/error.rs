use thiserror::Error;

/// Errors produced by data ingestion, model construction, and estimation.
#[derive(Error, Debug)]
pub enum Error {
    #[error("column '{0}' in the data file has no entry in the item metadata")]
    UnknownItem(String),

    #[error("value {value} at row {row}, item '{item}' is outside the declared support")]
    ValueOutOfSupport {
        row: usize,
        item: String,
        value: f64,
    },

    #[error("item '{0}' has no observed responses")]
    EmptyItem(String),

    #[error("person {0} has no observed responses")]
    EmptyPerson(usize),

    #[error("degenerate range: lower bound {0} equals upper bound")]
    DegenerateRange(f64),

    #[error("argument is NaN")]
    NotANumber,

    #[error("probability {0} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("value {value} is outside the support of item '{item}'")]
    OutOfSupport { item: String, value: f64 },

    #[error("difficulty function of a discrete free-threshold family has no derivative")]
    NotDifferentiable,

    #[error("target {0} is outside the range of the difficulty function")]
    OutOfRange(f64),

    #[error("parameters are not monotone: {0}")]
    NonMonotoneInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("difficulty derivative is not positive at item '{item}', y = {value}")]
    ZeroDerivative { item: String, value: f64 },

    #[error("marginal likelihood is not finite for person {0}")]
    NonFiniteLikelihood(usize),

    #[error("operation requires slope mode {0}")]
    WrongMode(&'static str),

    #[error("optimizer did not converge within {0} iterations")]
    NotConverged(usize),

    #[error("observed information matrix is singular; standard errors unavailable")]
    SingularInformation,

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("response vector has no observed items")]
    NoObservedItems,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("metadata parse error: {0}")]
    Metadata(String),
}

pub type Result<T> = std::result::Result<T, Error>;
