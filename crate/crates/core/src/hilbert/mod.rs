//! Dense complex linear algebra for small labeled quantum registers.

mod channel;
mod eigen;
mod matrix;
mod scalar;
mod state;

pub use channel::Channel;
pub use eigen::{eigh, eigvalsh, hermitian_fn};
pub use matrix::{gates, Matrix};
pub use scalar::{Real, C};
pub use state::{asymmetric_readout, Ket, State};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("label `{0}` appears twice")]
    DuplicateLabel(String),
    #[error("unknown subsystem label `{0}`")]
    UnknownLabel(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("wrong dimension: expected {expected}, found {found}")]
    WrongDimension { expected: usize, found: usize },
    #[error("effects do not form a POVM")]
    NotPovm,
    #[error("Kraus operators are not trace preserving")]
    NotCptp,
    #[error("invalid probability {0}")]
    InvalidProbability(f64),
    #[error("matrix is not Hermitian")]
    NotHermitian,
    #[error("trace {0} differs from one")]
    NotNormalized(f64),
    #[error("negative eigenvalue {0}")]
    NotPositive(f64),
}
