//! Sub-1-bit weight compression: row-wise binarization with alternating
//! refinement, popcount binary codebooks, invertible Kronecker transforms,
//! LUT-GEMM inference and a bit-exact container format.

pub mod binarize;
pub mod codebook;
pub mod error;
pub mod format;
pub mod linalg;
pub mod lut;
pub mod matrix;
pub mod pipeline;
pub mod transform;

pub use error::{Error, Result};
pub use matrix::{BoolMatrix, DenseMatrix, PackedBinaryMatrix};
pub use pipeline::{btc_quantize, dequantize, QuantizeConfig, QuantizedLayer};
