//! Dense integer matrices, bit-width bounds and the reference GEMM.
//!
//! Every GEMM in the crate is `C = A·Bᵀ` with `A` of shape `n×d` and `B` of
//! shape `h×d`, so both operands are traversed along contiguous rows.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this many multiply-adds the reference GEMM stays on one thread.
const PAR_THRESHOLD: usize = 1 << 16;

/// Dense row-major matrix of signed 64-bit integers.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl IntMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    /// Builds a matrix from a slice of equally sized rows.
    pub fn from_rows<R: AsRef<[i64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    op: "from_rows",
                    left: format!("{cols} columns"),
                    right: format!("{} columns", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds a matrix from a list of equally sized columns.
    pub fn from_columns<C: AsRef<[i64]>>(columns: &[C], rows: usize) -> Result<Self> {
        let cols = columns.len();
        let mut data = vec![0; rows * cols];
        for (j, c) in columns.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(Error::DimensionMismatch {
                    op: "from_columns",
                    left: format!("{rows} rows"),
                    right: format!("{} rows", c.len()),
                });
            }
            for (i, &v) in c.iter().enumerate() {
                data[i * cols + j] = v;
            }
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<i64> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: i64) {
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[i64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<i64> {
        (0..self.rows).map(|i| self.get(i, col)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Copies the listed columns, in order, into a new matrix.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * columns.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(columns.iter().map(|&j| row[j]));
        }
        Self {
            rows: self.rows,
            cols: columns.len(),
            data,
        }
    }

    /// Largest entry magnitude, zero for an empty matrix.
    pub fn max_abs(&self) -> u64 {
        self.data
            .iter()
            .map(|v| v.unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    /// Position and value of the first out-of-bound entry in row-major order.
    pub fn first_out_of_bound(&self, bound: BitBound) -> Option<(usize, usize, i64)> {
        self.data
            .iter()
            .position(|&v| !bound.contains(v))
            .map(|k| (k / self.cols, k % self.cols, self.data[k]))
    }

    pub fn is_in_bound(&self, bound: BitBound) -> bool {
        self.data.iter().all(|&v| bound.contains(v))
    }
}

impl fmt::Debug for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IntMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Target bit-width `b` of the low bit-width GEMMs and its bound `s = 2^(b-1)`.
///
/// A `b`-bit signed operand holds the symmetric In-Bound set `{-s+1, ..., s-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitBound {
    bits: u32,
}

impl BitBound {
    pub const MIN_BITS: u32 = 2;
    pub const MAX_BITS: u32 = 63;

    pub fn new(bits: u32) -> Result<Self> {
        if !(Self::MIN_BITS..=Self::MAX_BITS).contains(&bits) {
            return Err(Error::InvalidBitWidth(bits));
        }
        Ok(Self { bits })
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.bits
    }

    /// `log2(s)`, the shift that multiplies by `s`.
    #[inline]
    pub fn shift(self) -> u32 {
        self.bits - 1
    }

    #[inline]
    pub fn s(self) -> i64 {
        1i64 << self.shift()
    }

    /// True when `v` is In-Bound, i.e. `|v| < s`.
    #[inline]
    pub fn contains(self, v: i64) -> bool {
        v.unsigned_abs() < (1u64 << self.shift())
    }

    /// One step of the digit recurrence: `v = s·q + r` with truncated division.
    ///
    /// `r` is always In-Bound and carries the sign of `v`.
    #[inline]
    pub fn split(self, v: i64) -> (i64, i64) {
        let s = self.s();
        (v / s, v % s)
    }

    /// `s^exponent` if it fits in an `i64`.
    pub fn power(self, exponent: u32) -> Option<i64> {
        let shift = exponent.checked_mul(self.shift())?;
        if shift >= 63 {
            None
        } else {
            Some(1i64 << shift)
        }
    }

    /// `v · s^exponent` as a checked left shift.
    pub fn scale(self, v: i64, exponent: u32) -> Option<i64> {
        if v == 0 {
            return Some(0);
        }
        v.checked_mul(self.power(exponent)?)
    }
}

/// Base-`s` digits of one integer, least significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitVector {
    pub digits: Vec<i64>,
    pub base: i64,
}

impl DigitVector {
    /// `Σ base^i · digits[i]`, evaluated in 128 bits.
    pub fn reconstruct(&self) -> i128 {
        self.digits
            .iter()
            .rev()
            .fold(0i128, |acc, &d| acc * self.base as i128 + d as i128)
    }
}

/// Decomposes `v` into the minimal list of In-Bound base-`s` digits.
///
/// Zero yields the single digit `0`. All digits of a nonzero value share its
/// sign or are zero.
pub fn digit_decompose(v: i64, bound: BitBound) -> DigitVector {
    let mut digits = Vec::new();
    let mut rest = v;
    loop {
        let (q, r) = bound.split(rest);
        digits.push(r);
        if q == 0 {
            break;
        }
        rest = q;
    }
    DigitVector {
        digits,
        base: bound.s(),
    }
}

/// Fails if `d · max|a| · max|b|` may leave the `i64` range.
pub(crate) fn check_gemm_overflow(
    op: &'static str,
    inner: usize,
    max_a: u64,
    max_b: u64,
) -> Result<()> {
    let bound = (inner as u128)
        .checked_mul(max_a as u128)
        .and_then(|x| x.checked_mul(max_b as u128));
    match bound {
        Some(x) if x <= i64::MAX as u128 => Ok(()),
        _ => Err(Error::Overflow(op)),
    }
}

/// Exact `C = A·Bᵀ` with a 64-bit accumulator.
///
/// Refuses inputs whose worst-case dot product could overflow rather than
/// wrapping.
pub fn exact_gemm(a: &IntMatrix, b: &IntMatrix) -> Result<IntMatrix> {
    if a.cols != b.cols {
        return Err(Error::DimensionMismatch {
            op: "exact_gemm",
            left: format!("A is {}x{}", a.rows, a.cols),
            right: format!("B is {}x{}", b.rows, b.cols),
        });
    }
    check_gemm_overflow("exact_gemm", a.cols, a.max_abs(), b.max_abs())?;

    let (n, h) = (a.rows, b.rows);
    let mut out = IntMatrix::zeros(n, h);
    if n == 0 || h == 0 {
        return Ok(out);
    }
    let fill_row = |i: usize, out_row: &mut [i64]| {
        let ar = a.row(i);
        for (j, c) in out_row.iter_mut().enumerate() {
            *c = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    };
    if n * h * a.cols >= PAR_THRESHOLD {
        out.data
            .par_chunks_mut(h)
            .enumerate()
            .for_each(|(i, r)| fill_row(i, r));
    } else {
        out.data
            .chunks_mut(h)
            .enumerate()
            .for_each(|(i, r)| fill_row(i, r));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Rows,
    Cols,
}

/// Number of out-of-bound entries in each row or column.
pub fn ob_count(a: &IntMatrix, bound: BitBound, axis: Axis) -> Vec<usize> {
    match axis {
        Axis::Rows => (0..a.rows)
            .map(|i| a.row(i).iter().filter(|&&v| !bound.contains(v)).count())
            .collect(),
        Axis::Cols => {
            let mut counts = vec![0; a.cols];
            for i in 0..a.rows {
                for (c, &v) in counts.iter_mut().zip(a.row(i)) {
                    if !bound.contains(v) {
                        *c += 1;
                    }
                }
            }
            counts
        }
    }
}
