use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NonHermitianInput(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("invalid projectors: {0}")]
    InvalidProjectors(String),
    #[error("|g0| = {0} exceeds 1")]
    InvalidG0(f64),
    #[error("pointer basis is not orthonormal (defect {0:.3e})")]
    NonOrthonormalBasis(f64),
    #[error("integration would need {0} steps")]
    StepUnderflow(u64),
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: count n = {n} outside 0..={shots}")]
    Range { line: usize, n: u64, shots: u64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
