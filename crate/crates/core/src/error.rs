use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("graph is disconnected: node {unreachable} is unreachable from node 0")]
    DisconnectedGraph { unreachable: usize },
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("node index {index} out of range for {node_count} nodes")]
    IndexOutOfRange { index: usize, node_count: usize },
    #[error("edge list line {line}: {msg}")]
    ParseGraph { line: usize, msg: String },
    #[error("invalid weight matrix: {0}")]
    InvalidWeights(String),

    #[error("graph is not a tree ({nodes} nodes, {edges} edges)")]
    NotATree { nodes: usize, edges: usize },
    #[error("discretized grid dynamics are not Schur stable (spectral radius {spectral_radius})")]
    UnstableDiscretization { spectral_radius: f64 },
    #[error("system matrix is singular")]
    SingularSystemMatrix,
    #[error("plant did not settle within {steps} inner steps (last increment {last_increment:e})")]
    NotSettled { steps: usize, last_increment: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("region used for constant estimation is unbounded")]
    UnboundedRegion,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step-size condition violated: alpha = {alpha} >= 1")]
    StepSizeConditionViolated { alpha: f64 },
    #[error("strong convexity modulus m = {m} <= 1; rescale the objective (see RegularityConstants::auto_scaled)")]
    RequiresStrongConvexityAboveOne { m: f64 },
    #[error("constraint set is unbounded")]
    UnboundedConstraintSet,
    #[error("target accuracy epsilon = {0} is too large for the given constants")]
    EpsilonTooLarge(f64),
    #[error("fixed-point iteration for (tau, eta, delta) did not converge in {0} rounds")]
    FixedPointDiverged(usize),

    #[error("optimum solver stalled: {0}")]
    SolverStalled(String),
    #[error("empty input")]
    EmptyInput,
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// The input configuration or fixture is invalid.
    Config,
    /// A theorem's hypotheses do not hold for the requested parameters.
    Hypothesis,
    /// Anything that went wrong while computing.
    Runtime,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            TooFewNodes(_) | DisconnectedGraph { .. } | SelfLoop(_) | IndexOutOfRange { .. } | ParseGraph { .. }
            | InvalidWeights(_) | NotATree { .. } | UnstableDiscretization { .. } | DimensionMismatch { .. }
            | InvalidParameter(_) | UnboundedRegion | Config(_) | Json(_) => ErrorClass::Config,
            StepSizeConditionViolated { .. } | RequiresStrongConvexityAboveOne { .. } | UnboundedConstraintSet
            | EpsilonTooLarge(_) => ErrorClass::Hypothesis,
            SingularSystemMatrix | NotSettled { .. } | FixedPointDiverged(_) | SolverStalled(_) | EmptyInput
            | Io(_) | Csv(_) => ErrorClass::Runtime,
        }
    }
}
