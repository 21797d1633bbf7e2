use alloc::string::String;

use crate::packing::PackingFactor;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("slot count {0} must be a power of two and at least 4")]
    InvalidSlotCount(usize),

    #[error("bootstrap refresh level {refresh} is outside (0, {max_level}]")]
    InvalidRefreshLevel { refresh: u32, max_level: u32 },

    #[error("operands belong to different contexts")]
    ContextMismatch,

    #[error("vector has {got} slots, context expects {expected}")]
    SlotLength { expected: usize, got: usize },

    #[error("level exhausted: operation needs {needed} level(s), ciphertext is at level {level}")]
    LevelExhausted { needed: u32, level: u32 },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("pixel (c={c}, y={y}, x={x}) is outside the layout")]
    IndexOutOfRange { c: usize, y: usize, x: usize },

    #[error("packed tensor holds {got} ciphertexts, layout expects {expected}")]
    CiphertextCount { expected: usize, got: usize },

    #[error("packed ciphertexts must share one level")]
    MixedLevels,

    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("size barrier: cannot move from packing factor {from} to {to} in one step; route through factor 1")]
    SizeBarrier { from: PackingFactor, to: PackingFactor },

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("overlapping pooling window {window} with stride {stride}")]
    OverlappingWindow { window: usize, stride: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("hermite basis index {0} is outside 0..=4")]
    HermiteIndex(usize),

    #[error("range scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("channel {0} has no elements")]
    EmptyChannel(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown node '{0}'")]
    UnknownNode(String),

    #[error("duplicate node id '{0}'")]
    DuplicateNode(String),

    #[error("graph contains a cycle through '{0}'")]
    Cycle(String),

    #[error("graph must have exactly one output, found {0}")]
    OutputCount(usize),

    #[error("node '{node}' expects {expected} input(s), got {got}")]
    InputArity { node: String, expected: usize, got: usize },

    #[error("node '{0}' must be converted before encrypted execution")]
    Unconvertible(String),

    #[error("residual add '{node}' joins mismatched operands: {detail}")]
    ResidualMismatch { node: String, detail: String },

    #[error("infeasible plan at '{node}': {detail}")]
    Infeasible { node: String, detail: String },

    #[error("execution diverged from plan at '{node}': {detail}")]
    PlanDivergence { node: String, detail: String },
}

/// Coarse classification used by front ends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// The model or tensor description is malformed.
    Schema,
    /// The description is well formed but cannot be evaluated (levels,
    /// geometry, planning).
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::UnknownNode(_)
            | Error::DuplicateNode(_)
            | Error::Cycle(_)
            | Error::OutputCount(_)
            | Error::InputArity { .. }
            | Error::ShapeMismatch(_)
            | Error::ChannelMismatch { .. }
            | Error::ResidualMismatch { .. }
            | Error::Unconvertible(_)
            | Error::InvalidParameter(_) => ErrorKind::Schema,
            _ => ErrorKind::Numeric,
        }
    }
}
