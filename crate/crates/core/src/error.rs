use thiserror::Error;

use crate::decomposer::DecomposeError;
use crate::model::ParamId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("symptom set is empty")]
    EmptySymptomSet,

    #[error("symptom set {0:?} is invalid (duplicate or out of range ids)")]
    InvalidSymptomSet(Vec<usize>),

    #[error("disease index {0} out of range")]
    InvalidDisease(usize),

    #[error("joint tensors are limited to 3 symptoms (got {0})")]
    TensorOrder(usize),

    #[error("joint tensor cell {cell} is negative ({value:e})")]
    NegativeTensorEntry { cell: usize, value: f64 },

    #[error("infeasible degree request: {0}")]
    InfeasibleDegree(String),

    #[error("row width {got} does not match symptom count {expected}")]
    RowWidth { expected: usize, got: usize },

    #[error("statistics requests differ")]
    RequestMismatch,

    #[error("no statistics collected for symptom set {0:?}")]
    UnknownSet(Vec<usize>),

    #[error("statistics store holds no samples")]
    NoSamples,

    #[error("negative moment for {0:?} is zero")]
    ZeroMoment(Vec<usize>),

    #[error("influence {0:e} below underflow threshold")]
    InfluenceUnderflow(f64),

    #[error("parameter {0} is required but has not been learned")]
    MissingParameter(ParamId),

    #[error("degenerate pair: denominator {0:e} too small")]
    DegeneratePair(f64),

    #[error(transparent)]
    Decompose(#[from] DecomposeError),

    #[error("structures differ")]
    StructureMismatch,

    #[error("exact enumeration supports at most {cap} diseases (got {got})")]
    EnumerationCap { cap: usize, got: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("clean-up: {0}")]
    Cleanup(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidStructure(_) => "invalid_structure",
            Error::InvalidParameters(_) => "invalid_parameters",
            Error::EmptySymptomSet => "empty_symptom_set",
            Error::InvalidSymptomSet(_) => "invalid_symptom_set",
            Error::InvalidDisease(_) => "invalid_disease",
            Error::TensorOrder(_) => "tensor_order",
            Error::NegativeTensorEntry { .. } => "negative_tensor_entry",
            Error::InfeasibleDegree(_) => "infeasible_degree",
            Error::RowWidth { .. } => "row_width",
            Error::RequestMismatch => "request_mismatch",
            Error::UnknownSet(_) => "unknown_set",
            Error::NoSamples => "no_samples",
            Error::ZeroMoment(_) => "zero_moment",
            Error::InfluenceUnderflow(_) => "influence_underflow",
            Error::MissingParameter(_) => "missing_parameter",
            Error::DegeneratePair(_) => "degenerate_pair",
            Error::Decompose(e) => e.kind(),
            Error::StructureMismatch => "structure_mismatch",
            Error::EnumerationCap { .. } => "enumeration_cap",
            Error::InvalidSchedule(_) => "invalid_schedule",
            Error::Cleanup(_) => "cleanup",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
