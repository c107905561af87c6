use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` listed in metadata is missing from the file")]
    MissingColumn(String),
    #[error("non-numeric cell at row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },
    #[error("label column `discharge_expired` is missing")]
    MissingLabelColumn,
    #[error("invalid label `{value}` at row {row}; expected 0 or 1")]
    InvalidLabel { row: usize, value: String },
    #[error("feature `{0}` has no observed values")]
    AllMissingFeature(String),
    #[error("scaler has not been fitted")]
    ScalerNotFitted,
    #[error("class {class} has only {count} members; need at least {required}")]
    ClassTooSmall { class: u8, count: usize, required: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid feature partition: {0}")]
    InvalidPartition(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("AUC is undefined on a single-class dataset")]
    SingleClassDataset,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("feature partition has no indirect features")]
    EmptyIndirectBlock,
    #[error("feature set is empty")]
    EmptyFeatureSet,
    #[error("budget must be non-negative, got {0}")]
    NegativeBudget(f64),
    #[error("`{field}` contains a non-finite value at index {index}")]
    NonFiniteInput { field: String, index: usize },
    #[error("`{field}`[{index}] = {value} lies outside [0, 1]")]
    OutOfUnitRange { field: String, index: usize, value: f64 },
    #[error("budget list is empty")]
    EmptyBudgets,
    #[error("grid is empty")]
    EmptyGrid,
    #[error("inconsistent bundle: {0}")]
    InconsistentBundle(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
