use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain has no active cells")]
    EmptyDomain,
    #[error("domain graph has {components} connected components")]
    DisconnectedDomain { components: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mollification radius {eps} is below the grid spacing {h}")]
    EpsilonTooSmall { eps: f64, h: f64 },
    #[error("at least two labelled nodes are required, got {0}")]
    TooFewLabels(usize),
    #[error("labels are not balanced: {0}")]
    UnbalancedLabels(String),
    #[error("node {node} has {neighbors} stencil neighbors, need at least 2")]
    InsufficientStencil { node: usize, neighbors: usize },
    #[error("|grad u|^p overflows at p = {p}")]
    Overflow { p: f64 },
    #[error("measure is not balanced: total mass {mass:e}, total variation {variation:e}")]
    NotBalanced { mass: f64, variation: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxItersExceeded { iterations: usize, residual: f64 },
    #[error("gradient vanishes at a point where p < 2")]
    DegenerateGradient,
    #[error("argument out of range: {0}")]
    DomainError(String),
}

pub type Result<T> = std::result::Result<T, Error>;
