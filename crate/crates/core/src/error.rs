use alloc::boxed::Box;
use alloc::string::String;

/// Errors raised by model evaluation, covariance propagation and the solver.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown mode {0}")]
    UnknownMode(usize),
    #[error("unknown transition {0}")]
    UnknownTransition(usize),
    #[error("model error: {0}")]
    Model(String),
    #[error("non-finite output from {0}")]
    Evaluation(&'static str),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("guard component {0} is not transversal")]
    NotTransversal(usize),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("no transversal guard component, covariance cannot be propagated through the event")]
    NoTransversalComponent,
    #[error("covariance is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("singular innovation matrix (condition number {0:e})")]
    SingularInnovation(f64),
    #[error("indefinite input Hessian after regularization at node {0}")]
    IndefiniteHessian(usize),
    #[error("problem error: {0}")]
    Problem(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("at node {node}: {source}")]
    AtNode { node: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn at_node(self, node: usize) -> Self {
        match self {
            e @ Error::AtNode { .. } => e,
            e => Error::AtNode {
                node,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
