//! Exact low bit-width integer matrix multiplication by unpacking.
//!
//! Large entries are split into base-`2^(b-1)` digits spread over extra rows
//! or columns, so that `A·Bᵀ` is recovered exactly from `b`-bit GEMMs plus
//! shifts and adds.
//!
//! ```
//! use imunpack::{exact_gemm, unpack_gemm, BitBound, IntMatrix, Strategy};
//!
//! let a = IntMatrix::from_rows(&[[1, 300], [-2, 5]]).unwrap();
//! let b = IntMatrix::from_rows(&[[7, -1], [1000, 3]]).unwrap();
//! let bound = BitBound::new(4).unwrap();
//! let c = unpack_gemm(&a, &b, bound, Strategy::Both, Strategy::Row).unwrap();
//! assert_eq!(c, exact_gemm(&a, &b).unwrap());
//! ```

pub mod error;
pub mod intmat;
pub mod matfile;
pub mod quant;
pub mod report;
pub mod unpack;
pub mod workload;

pub use error::{Error, Result};
pub use intmat::{digit_decompose, exact_gemm, ob_count, Axis, BitBound, DigitVector, IntMatrix};
pub use matfile::{load_matrix, save_matrix, Dtype, FormatError, MatrixData};
pub use quant::{
    dequant_gemm, heavy_hitter_ratio, huffman_stats, percentile_abs, rtn_quantize,
    rtn_quantize_with, std_dev, FloatMatrix, HuffmanStats, QuantParams, QuantizedMatrix,
    RtnOptions,
};
pub use report::{analyze_pair, AnalysisRecord, AnalysisReport};
pub use unpack::{
    choose_mix, scaled_matmul, unpack, unpack_gemm, unpack_pair, unpack_ratio, GatherEntry,
    GemmDims, MixChoice, RowGather, ScaleDiag, Strategy, Unpacked, UnpackedGemm,
};
pub use workload::{gen_matrix, stats_report, OutlierSpec, Pattern, StatsReport};
