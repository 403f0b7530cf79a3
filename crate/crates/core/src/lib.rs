//! TinyIceNet: a compact encoder-decoder for per-pixel sea-ice stage-of-development
//! segmentation from dual-polarized SAR, with its quantization pipeline and a
//! bit-exact simulator of a streaming line-buffer convolution accelerator.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. All file formats, CSV reporting and the command line live in the
//! companion `tinyicenet` crate.
#![cfg_attr(not(feature = "std"), no_std)]
// Index loops mirror the math in the kernels; `!(x > 0.0)` is the NaN-rejecting form.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dataflow;
mod error;
pub mod eval;
pub mod model;
pub mod ops;
pub mod quant;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{build_tinyicenet, LayerKind, LayerSpec, ModelGraph};
pub use scene::Scene;
pub use tensor::{FixedFormat, FixedTensor, Real, Shape, Tensor};

/// Label code marking pixels excluded from loss and metrics.
pub const IGNORE_LABEL: u8 = 255;
