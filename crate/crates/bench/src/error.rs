use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error("bits-per-key budget {budget} too small for {memento_bits}-bit mementos (need at least {needed:.3})")]
    BudgetInfeasible { budget: f64, memento_bits: u32, needed: f64 },
    #[error("could not generate {wanted} empty queries ({found} found after {attempts} attempts)")]
    GenerationExhausted { wanted: usize, found: usize, attempts: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("filter: {0}")]
    Filter(#[from] memento_filter::Error),
    #[error("check failed: {0}")]
    Check(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;
