use thiserror::Error;

/// Errors produced by the geometry kernels and file codecs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        what: &'static str,
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("{what}: grid {w}x{h} too small for {levels} pyramid levels")]
    DimensionTooSmall {
        what: &'static str,
        w: usize,
        h: usize,
        levels: usize,
    },

    #[error("non-positive depth {value} at pixel ({x}, {y})")]
    NonPositiveDepth { value: f64, x: usize, y: usize },

    #[error("degenerate mask in {what}: effective weight sum is zero")]
    DegenerateMask { what: &'static str },

    #[error("empty valid set in {what}")]
    EmptyValidSet { what: &'static str },

    #[error("degenerate trajectory: zero-norm prediction with nonzero ground truth")]
    DegenerateTrajectory,

    #[error("non-finite gradient in {what} (first offender at index {index})")]
    NonFiniteGradient { what: &'static str, index: usize },

    #[error("optimization diverged: loss {loss} grew more than 10x over best {best}")]
    Divergence { loss: f64, best: f64 },

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
