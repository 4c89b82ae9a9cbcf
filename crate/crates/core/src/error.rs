use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("bit-width {0} is outside the supported range 2..=63")]
    InvalidBitWidth(u32),

    #[error("{op}: dimension mismatch ({left} vs {right})")]
    DimensionMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("matrix data length {len} does not match {rows}x{cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("{0}: result may exceed the signed 64-bit accumulator")]
    Overflow(&'static str),

    #[error("{matrix}[{row}, {col}] = {value} is out of bound for {bits}-bit operands")]
    OutOfBound {
        matrix: &'static str,
        row: usize,
        col: usize,
        value: i64,
        bits: u32,
    },

    #[error("matrix is empty")]
    EmptyMatrix,

    #[error("percentile {0} is outside (0, 100]")]
    InvalidPercentile(f64),

    #[error("beta must be an odd integer >= 3, got {0}")]
    InvalidBeta(u32),

    #[error("beta mismatch: {0} vs {1}")]
    BetaMismatch(u32, u32),

    #[error("95th percentile of magnitudes is zero")]
    ZeroPercentile,

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("symbol {0} has no code")]
    UnknownSymbol(i64),

    #[error("encoded stream is corrupt at bit {0}")]
    CorruptStream(u64),

    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Format(#[from] crate::matfile::FormatError),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidBitWidth(_) => "invalid_bit_width",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Overflow(_) => "overflow",
            Error::OutOfBound { .. } => "out_of_bound",
            Error::EmptyMatrix => "empty_matrix",
            Error::InvalidPercentile(_) => "invalid_percentile",
            Error::InvalidBeta(_) => "invalid_beta",
            Error::BetaMismatch(..) => "beta_mismatch",
            Error::ZeroPercentile => "zero_percentile",
            Error::NonFinite(_) => "non_finite",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::UnknownSymbol(_) => "unknown_symbol",
            Error::CorruptStream(_) => "corrupt_stream",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::Format(e) => e.kind(),
        }
    }
}
