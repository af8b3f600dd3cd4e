//! Exact discrete information measures and variational bound checks.

pub mod factored;
pub mod joint;
pub mod verify;

pub use factored::FactoredModel;
pub use joint::{nats_to_bits, DiscreteJoint};
pub use verify::{run_suite, verify_bounds, BoundCheck, BoundReport, SuiteReport};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum InfoError {
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("variable {0} appears in more than one set")]
    OverlappingSets(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("joint has {0} outcomes, too many to enumerate")]
    TooLargeToEnumerate(usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

pub type Result<T> = std::result::Result<T, InfoError>;
