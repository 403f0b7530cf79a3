use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    #[error("spatial dims {h}x{w} must be even for 2x2 pooling")]
    OddSpatial { h: usize, w: usize },
    #[error("spatial dims {h}x{w} must be divisible by {by}")]
    NotDivisible { h: usize, w: usize, by: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("bitwidth {0} outside supported range [2, 32]")]
    InvalidBits(u32),
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("label {label} outside 0..{classes} and not the ignore label")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("layer {layer}: running variance + eps must be positive")]
    NonPositiveVariance { layer: usize },
    #[error("invalid model graph at layer {layer}: {reason}")]
    InvalidGraph { layer: usize, reason: String },
    #[error("invalid dataflow config: {0}")]
    InvalidConfig(String),
    #[error("line buffer window read before priming completed")]
    WindowNotPrimed,
    #[error("accumulator overflow: {value} does not fit in {bits} bits")]
    AccumulatorOverflow { value: i64, bits: u32 },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("empty {0}")]
    Empty(&'static str),
}
