use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary size {requested} is below the minimum {minimum} (special tokens + 256 bytes)")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("corpus too small to reach vocabulary size {requested}; achievable size is {achievable}")]
    CorpusTooSmall { requested: usize, achievable: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("special token {0:?} missing from the vocabulary")]
    MissingSpecial(String),
    #[error("token {0:?} does not follow the byte-level space-marker convention")]
    Convention(String),
    #[error("domain vocabulary has {domain} tokens but the pretrained capacity is {capacity}")]
    DomainTooLarge { domain: usize, capacity: usize },
    #[error("{distinct} distinct tokens exceed the {free} free ids")]
    CapacityExceeded { distinct: usize, free: usize },
    #[error("token {0:?} has no id assignment")]
    MissingAssignment(String),
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: (usize, usize), actual: (usize, usize) },
    #[error("row {row} out of range for a matrix with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("row {0} is not initialized")]
    UninitializedRow(usize),
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("token id {id} out of range for vocabulary capacity {capacity}")]
    TokenOutOfRange { id: u32, capacity: usize },
    #[error("loss is undefined: no labelled positions")]
    EmptyLoss,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("head expects {expected} classes, got {actual}")]
    ClassCountMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),
    #[error("variant {0} requires a merge plan")]
    MissingMergePlan(&'static str),
    #[error("invalid evaluation record: {0}")]
    InvalidRecord(String),
    #[error("evaluation set is empty")]
    EmptyRecords,
}
