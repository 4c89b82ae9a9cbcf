//! IMX1 binary matrix files and CSV text input.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `IMX1`                           |
//! | 4      | 1    | version, always 1                      |
//! | 5      | 1    | dtype: 0 = i32, 1 = i64, 2 = f64       |
//! | 6      | 4    | rows (u32)                             |
//! | 10     | 4    | cols (u32)                             |
//! | 14     | ...  | `rows·cols` entries, row-major         |

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Result;
use crate::intmat::IntMatrix;
use crate::quant::FloatMatrix;

pub const MAGIC: [u8; 4] = *b"IMX1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic {found:?} at byte offset 0, expected \"IMX1\"")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported version {found} at byte offset 4")]
    BadVersion { found: u8 },

    #[error("unknown dtype {found} at byte offset 5")]
    BadDtype { found: u8 },

    #[error("truncated file: needed {needed} bytes, found {found} (payload ends early at byte offset {found})")]
    Truncated { needed: u64, found: u64 },

    #[error("{extra} unexpected trailing bytes at byte offset {offset}")]
    TrailingBytes { offset: u64, extra: u64 },

    #[error("CSV line {line}, column {column}: {message}")]
    Csv {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("entry {index} ({value}) does not fit dtype {dtype}")]
    DtypeRange {
        index: usize,
        value: String,
        dtype: Dtype,
    },

    #[error("{rows}x{cols} does not fit the 32-bit shape fields")]
    TooLarge { rows: usize, cols: usize },

    #[error("expected an integer matrix, found {0}")]
    WrongKind(Dtype),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl FormatError {
    pub fn kind(&self) -> &'static str {
        match self {
            FormatError::BadMagic { .. } => "bad_magic",
            FormatError::BadVersion { .. } => "bad_version",
            FormatError::BadDtype { .. } => "bad_dtype",
            FormatError::Truncated { .. } => "truncated",
            FormatError::TrailingBytes { .. } => "trailing_bytes",
            FormatError::Csv { .. } => "csv_parse",
            FormatError::DtypeRange { .. } => "dtype_range",
            FormatError::TooLarge { .. } => "too_large",
            FormatError::WrongKind(_) => "wrong_kind",
            FormatError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    I32 = 0,
    I64 = 1,
    F64 = 2,
}

impl Dtype {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Dtype::I32),
            1 => Some(Dtype::I64),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::I32 => 4,
            Dtype::I64 | Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::I32 => "i32",
            Dtype::I64 => "i64",
            Dtype::F64 => "f64",
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "i32" => Ok(Dtype::I32),
            "i64" => Ok(Dtype::I64),
            "f64" => Ok(Dtype::F64),
            other => Err(format!(
                "unknown dtype '{other}' (expected i32, i64 or f64)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixData {
    Int(IntMatrix),
    Float(FloatMatrix),
}

impl MatrixData {
    pub fn rows(&self) -> usize {
        match self {
            MatrixData::Int(m) => m.rows(),
            MatrixData::Float(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            MatrixData::Int(m) => m.cols(),
            MatrixData::Float(m) => m.cols(),
        }
    }

    /// The narrowest dtype that holds every entry.
    pub fn natural_dtype(&self) -> Dtype {
        match self {
            MatrixData::Int(m) if m.data().iter().all(|&v| i32::try_from(v).is_ok()) => Dtype::I32,
            MatrixData::Int(_) => Dtype::I64,
            MatrixData::Float(_) => Dtype::F64,
        }
    }

    pub fn into_int(self) -> Result<IntMatrix> {
        match self {
            MatrixData::Int(m) => Ok(m),
            MatrixData::Float(_) => Err(FormatError::WrongKind(Dtype::F64).into()),
        }
    }

    /// Integer matrices convert entrywise.
    pub fn into_float(self) -> FloatMatrix {
        match self {
            MatrixData::Int(m) => {
                let data = m.data().iter().map(|&v| v as f64).collect();
                FloatMatrix::new(m.rows(), m.cols(), data).expect("finite")
            }
            MatrixData::Float(m) => m,
        }
    }
}

impl From<IntMatrix> for MatrixData {
    fn from(m: IntMatrix) -> Self {
        MatrixData::Int(m)
    }
}

impl From<FloatMatrix> for MatrixData {
    fn from(m: FloatMatrix) -> Self {
        MatrixData::Float(m)
    }
}

fn range_error(index: usize, value: impl fmt::Display, dtype: Dtype) -> FormatError {
    FormatError::DtypeRange {
        index,
        value: value.to_string(),
        dtype,
    }
}

/// Largest magnitude below which every integer is an exact `f64`.
const F64_EXACT: i64 = 1 << 53;

/// Serializes `m` as an IMX1 byte buffer.
pub fn encode_matrix(m: &MatrixData, dtype: Dtype) -> Result<Vec<u8>> {
    let (rows, cols) = (m.rows(), m.cols());
    let (r32, c32) = match (u32::try_from(rows), u32::try_from(cols)) {
        (Ok(r), Ok(c)) => (r, c),
        _ => return Err(FormatError::TooLarge { rows, cols }.into()),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * dtype.size());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.extend_from_slice(&r32.to_le_bytes());
    out.extend_from_slice(&c32.to_le_bytes());

    match (m, dtype) {
        (MatrixData::Int(m), Dtype::I32) => {
            for (i, &v) in m.data().iter().enumerate() {
                let v = i32::try_from(v).map_err(|_| range_error(i, v, dtype))?;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        (MatrixData::Int(m), Dtype::I64) => {
            for &v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        (MatrixData::Int(m), Dtype::F64) => {
            for (i, &v) in m.data().iter().enumerate() {
                if v.unsigned_abs() > F64_EXACT as u64 {
                    return Err(range_error(i, v, dtype).into());
                }
                out.extend_from_slice(&(v as f64).to_le_bytes());
            }
        }
        (MatrixData::Float(m), Dtype::F64) => {
            for &v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        (MatrixData::Float(m), int_dtype) => {
            // Half-open range [lo, hi).
            let (lo, hi) = match int_dtype {
                Dtype::I32 => (i32::MIN as f64, i32::MAX as f64 + 1.0),
                _ => (i64::MIN as f64, -(i64::MIN as f64)),
            };
            for (i, &v) in m.data().iter().enumerate() {
                if v.fract() != 0.0 || v < lo || v >= hi {
                    return Err(range_error(i, v, int_dtype).into());
                }
                if int_dtype == Dtype::I32 {
                    out.extend_from_slice(&(v as i32).to_le_bytes());
                } else {
                    out.extend_from_slice(&(v as i64).to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

/// Parses an IMX1 byte buffer.
pub fn decode_matrix(bytes: &[u8]) -> Result<MatrixData> {
    let truncated = |needed: usize| FormatError::Truncated {
        needed: needed as u64,
        found: bytes.len() as u64,
    };
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        if bytes.len() < 4 && MAGIC.starts_with(bytes) {
            return Err(truncated(HEADER_LEN).into());
        }
        return Err(FormatError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        }
        .into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN).into());
    }
    if bytes[4] != VERSION {
        return Err(FormatError::BadVersion { found: bytes[4] }.into());
    }
    let dtype = Dtype::from_byte(bytes[5]).ok_or(FormatError::BadDtype { found: bytes[5] })?;
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;

    let needed = (rows as u128 * cols as u128 * dtype.size() as u128) + HEADER_LEN as u128;
    if (bytes.len() as u128) < needed {
        return Err(FormatError::Truncated {
            needed: needed.min(u64::MAX as u128) as u64,
            found: bytes.len() as u64,
        }
        .into());
    }
    let needed = needed as usize;
    if bytes.len() > needed {
        return Err(FormatError::TrailingBytes {
            offset: needed as u64,
            extra: (bytes.len() - needed) as u64,
        }
        .into());
    }

    let payload = &bytes[HEADER_LEN..];
    Ok(match dtype {
        Dtype::I32 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
                .collect();
            MatrixData::Int(IntMatrix::new(rows, cols, data)?)
        }
        Dtype::I64 => {
            let data = payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            MatrixData::Int(IntMatrix::new(rows, cols, data)?)
        }
        Dtype::F64 => {
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            MatrixData::Float(FloatMatrix::new(rows, cols, data)?)
        }
    })
}

/// Parses comma-separated text, one matrix row per line. The result is an
/// integer matrix when every cell is an integer, a float matrix otherwise.
pub fn parse_csv(text: &str) -> Result<MatrixData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut cells: Vec<(u64, usize, String)> = Vec::new();
    let mut rows = 0usize;
    let mut cols = None;
    for record in reader.records() {
        let record = record.map_err(|e| FormatError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            column: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(rows as u64 + 1, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(FormatError::Csv {
                    line,
                    column: record.len().min(c) + 1,
                    message: format!("expected {c} cells, found {}", record.len()),
                }
                .into());
            }
            _ => {}
        }
        for (j, cell) in record.iter().enumerate() {
            cells.push((line, j + 1, cell.to_string()));
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);

    if let Ok(data) = cells.iter().map(|(_, _, c)| c.parse::<i64>()).collect() {
        return Ok(MatrixData::Int(IntMatrix::new(rows, cols, data)?));
    }
    let mut data = Vec::with_capacity(cells.len());
    for (line, column, cell) in &cells {
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => data.push(v),
            _ => {
                return Err(FormatError::Csv {
                    line: *line,
                    column: *column,
                    message: format!("'{cell}' is not a finite number"),
                }
                .into());
            }
        }
    }
    Ok(MatrixData::Float(FloatMatrix::new(rows, cols, data)?))
}

fn io_error(path: &Path, e: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn looks_like_csv(path: &Path, bytes: &[u8]) -> bool {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    if matches!(ext.as_deref(), Some("csv" | "txt")) {
        return true;
    }
    !bytes.starts_with(&MAGIC)
        && !bytes.is_empty()
        && bytes
            .iter()
            .all(|b| b.is_ascii_digit() || b" \t\r\n,.+-eE".contains(b))
}

/// Reads an IMX1 file, or CSV text when the extension is `.csv`/`.txt` or the
/// content is plain numeric text.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<MatrixData> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    if looks_like_csv(path, &bytes) {
        let text = String::from_utf8(bytes).map_err(|e| FormatError::Csv {
            line: 0,
            column: 0,
            message: format!(
                "invalid UTF-8 at byte offset {}",
                e.utf8_error().valid_up_to()
            ),
        })?;
        parse_csv(&text)
    } else {
        decode_matrix(&bytes)
    }
}

pub fn save_matrix(m: &MatrixData, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(m, dtype)?;
    fs::write(path, bytes).map_err(|e| io_error(path, e).into())
}
