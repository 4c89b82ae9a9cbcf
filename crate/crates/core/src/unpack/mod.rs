//! Integer matrix unpacking.
//!
//! A matrix with Out-of-Bound (OB) entries is rewritten as a larger matrix
//! whose entries all fit the target bit-width, together with bookkeeping
//! factors that recover the original GEMM exactly:
//!
//! * [`RowGather`] (`Π`) re-accumulates rows that were split by row
//!   unpacking; each of its columns holds a single power of `s`.
//! * [`ScaleDiag`] (`S`) records the power of `s` attached to every column
//!   produced by column unpacking.
//!
//! For every strategy, `Π_A · A_u · S_u · B_eᵀ == A · S · Bᵀ`.

mod gemm;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intmat::{BitBound, IntMatrix};

pub use gemm::{
    apply_row_gather, apply_row_gather_right, choose_mix, choose_mix_among, scaled_matmul,
    unpack_gemm, unpack_pair, unpack_ratio, GemmDims, MixChoice, UnpackedGemm,
};

/// One column of `Π`: the value `s^exponent` placed at row `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatherEntry {
    pub target: usize,
    pub exponent: u32,
}

/// Sparse left factor `Π` with exactly one power-of-`s` nonzero per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowGather {
    source_rows: usize,
    entries: Vec<GatherEntry>,
    bound: BitBound,
}

impl RowGather {
    pub fn identity(n: usize, bound: BitBound) -> Self {
        Self {
            source_rows: n,
            entries: (0..n)
                .map(|target| GatherEntry {
                    target,
                    exponent: 0,
                })
                .collect(),
            bound,
        }
    }

    /// Builds `Π` from explicit entries, checking every target row.
    pub fn from_entries(
        source_rows: usize,
        entries: Vec<GatherEntry>,
        bound: BitBound,
    ) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.target >= source_rows) {
            return Err(Error::IndexOutOfRange {
                index: e.target,
                len: source_rows,
            });
        }
        Ok(Self {
            source_rows,
            entries,
            bound,
        })
    }

    /// Rows of the reconstructed matrix.
    pub fn source_rows(&self) -> usize {
        self.source_rows
    }

    /// Columns of `Π`, i.e. rows of the unpacked matrix.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GatherEntry] {
        &self.entries
    }

    pub fn bound(&self) -> BitBound {
        self.bound
    }

    pub fn is_identity(&self) -> bool {
        self.entries.len() == self.source_rows
            && self
                .entries
                .iter()
                .enumerate()
                .all(|(i, e)| e.target == i && e.exponent == 0)
    }

    /// Dense `source_rows × len` matrix, if every power of `s` fits in `i64`.
    pub fn to_dense(&self) -> Option<IntMatrix> {
        let mut m = IntMatrix::zeros(self.source_rows, self.entries.len());
        for (c, e) in self.entries.iter().enumerate() {
            m.set(e.target, c, self.bound.power(e.exponent)?);
        }
        Some(m)
    }

    fn push_scaled_copy(&mut self, of: usize) {
        let e = self.entries[of];
        self.entries.push(GatherEntry {
            target: e.target,
            exponent: e.exponent + 1,
        });
    }
}

/// Diagonal scaling `S = diag(s^exponents[j])` between the unpacked operands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleDiag {
    exponents: Vec<u32>,
    bound: BitBound,
}

impl ScaleDiag {
    pub fn identity(d: usize, bound: BitBound) -> Self {
        Self {
            exponents: vec![0; d],
            bound,
        }
    }

    pub fn from_exponents(exponents: Vec<u32>, bound: BitBound) -> Self {
        Self { exponents, bound }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn bound(&self) -> BitBound {
        self.bound
    }

    /// Column indices grouped by exponent, in increasing exponent order.
    pub fn groups(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (j, &e) in self.exponents.iter().enumerate() {
            groups.entry(e).or_default().push(j);
        }
        groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Row,
    #[serde(rename = "col")]
    Column,
    Both,
}

impl Strategy {
    /// Enumeration order, also used to break ratio ties.
    pub const ALL: [Strategy; 3] = [Strategy::Row, Strategy::Column, Strategy::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Row => "row",
            Strategy::Column => "col",
            Strategy::Both => "both",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "row" | "rows" => Ok(Strategy::Row),
            "col" | "cols" | "column" | "columns" => Ok(Strategy::Column),
            "both" => Ok(Strategy::Both),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

/// Result of unpacking one operand: `(A_u, B_e, S_u, Π_A)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unpacked {
    pub a: IntMatrix,
    pub b: IntMatrix,
    pub scale: ScaleDiag,
    pub gather: RowGather,
}

fn check_pair(op: &'static str, a: &IntMatrix, b: &IntMatrix, s: &ScaleDiag) -> Result<()> {
    if a.cols() != b.cols() || a.cols() != s.len() {
        return Err(Error::DimensionMismatch {
            op,
            left: format!("A has {} columns", a.cols()),
            right: format!("B has {} columns, S has {} entries", b.cols(), s.len()),
        });
    }
    Ok(())
}

fn split_vec(bound: BitBound, v: &mut [i64]) -> Vec<i64> {
    v.iter_mut()
        .map(|x| {
            let (q, r) = bound.split(*x);
            *x = r;
            q
        })
        .collect()
}

/// Splits every row holding an OB entry into its remainder (kept in place)
/// and its quotient (appended), rescanning appended rows until all are IB.
///
/// Returns `(A_u, Π)` with `Π · A_u == A`.
pub fn unpack_row(a: &IntMatrix, bound: BitBound) -> (IntMatrix, RowGather) {
    let cols = a.cols();
    let mut data = a.data().to_vec();
    let mut gather = RowGather::identity(a.rows(), bound);
    let mut i = 0;
    while i < gather.len() {
        let row = &mut data[i * cols..(i + 1) * cols];
        if row.iter().any(|&v| !bound.contains(v)) {
            let quotient = split_vec(bound, row);
            data.extend_from_slice(&quotient);
            gather.push_scaled_copy(i);
        }
        i += 1;
    }
    let rows = gather.len();
    (
        IntMatrix::new(rows, cols, data).expect("row unpack keeps the row length"),
        gather,
    )
}

/// Splits every column of `A` holding an OB entry, duplicating the matching
/// column of `B` and recording a scale one power of `s` higher.
///
/// Returns `(A_u, B_e, S_u)` with `A_u · S_u · B_eᵀ == A · S · Bᵀ`.
pub fn unpack_column(
    a: &IntMatrix,
    b: &IntMatrix,
    scale: &ScaleDiag,
    bound: BitBound,
) -> Result<(IntMatrix, IntMatrix, ScaleDiag)> {
    check_pair("unpack_column", a, b, scale)?;
    let mut a_cols: Vec<Vec<i64>> = (0..a.cols()).map(|j| a.column(j)).collect();
    let mut b_cols: Vec<Vec<i64>> = (0..b.cols()).map(|j| b.column(j)).collect();
    let mut exponents = scale.exponents().to_vec();
    let mut i = 0;
    while i < a_cols.len() {
        if a_cols[i].iter().any(|&v| !bound.contains(v)) {
            let quotient = split_vec(bound, &mut a_cols[i]);
            a_cols.push(quotient);
            b_cols.push(b_cols[i].clone());
            exponents.push(exponents[i] + 1);
        }
        i += 1;
    }
    Ok((
        IntMatrix::from_columns(&a_cols, a.rows())?,
        IntMatrix::from_columns(&b_cols, b.rows())?,
        ScaleDiag::from_exponents(exponents, bound),
    ))
}

/// `(count, index)` of the first maximum; `(0, 0)` when all counts are zero.
fn top_count(counts: &[usize]) -> (usize, usize) {
    let mut best = (0, 0);
    for (i, &c) in counts.iter().enumerate() {
        if c > best.0 {
            best = (c, i);
        }
    }
    best
}

/// Greedy two-sided unpacking: each step splits the single row or column
/// with the most OB entries, preferring the row on ties and the lowest index
/// among equal rows (or columns).
///
/// Returns `(A_u, B_e, S_u, Π)` with `Π · A_u · S_u · B_eᵀ == A · S · Bᵀ`.
pub fn unpack_both(
    a: &IntMatrix,
    b: &IntMatrix,
    scale: &ScaleDiag,
    bound: BitBound,
) -> Result<Unpacked> {
    check_pair("unpack_both", a, b, scale)?;
    let ob = |v: i64| !bound.contains(v);

    let mut rows: Vec<Vec<i64>> = (0..a.rows()).map(|i| a.row(i).to_vec()).collect();
    let mut b_cols: Vec<Vec<i64>> = (0..b.cols()).map(|j| b.column(j)).collect();
    let mut exponents = scale.exponents().to_vec();
    let mut gather = RowGather::identity(a.rows(), bound);

    let mut row_ob: Vec<usize> = rows
        .iter()
        .map(|r| r.iter().filter(|&&v| ob(v)).count())
        .collect();
    let mut col_ob = vec![0usize; a.cols()];
    for r in &rows {
        for (c, &v) in col_ob.iter_mut().zip(r) {
            *c += ob(v) as usize;
        }
    }

    loop {
        let (c_row, i) = top_count(&row_ob);
        let (c_col, j) = top_count(&col_ob);
        if c_row == 0 && c_col == 0 {
            break;
        }
        if c_row >= c_col {
            let mut quotient = Vec::with_capacity(rows[i].len());
            let mut new_count = 0;
            for (k, x) in rows[i].iter_mut().enumerate() {
                if ob(*x) {
                    col_ob[k] -= 1;
                }
                let (q, r) = bound.split(*x);
                *x = r;
                if ob(q) {
                    col_ob[k] += 1;
                    new_count += 1;
                }
                quotient.push(q);
            }
            row_ob[i] = 0;
            rows.push(quotient);
            row_ob.push(new_count);
            gather.push_scaled_copy(i);
        } else {
            let mut new_count = 0;
            for (r, count) in rows.iter_mut().zip(row_ob.iter_mut()) {
                let x = r[j];
                if ob(x) {
                    *count -= 1;
                }
                let (q, rem) = bound.split(x);
                r[j] = rem;
                if ob(q) {
                    *count += 1;
                    new_count += 1;
                }
                r.push(q);
            }
            col_ob[j] = 0;
            col_ob.push(new_count);
            b_cols.push(b_cols[j].clone());
            exponents.push(exponents[j] + 1);
        }
    }

    let cols = exponents.len();
    Ok(Unpacked {
        a: IntMatrix::new(rows.len(), cols, rows.concat())?,
        b: IntMatrix::from_columns(&b_cols, b.rows())?,
        scale: ScaleDiag::from_exponents(exponents, bound),
        gather,
    })
}

/// Dispatches to the requested strategy under one interface.
pub fn unpack(
    a: &IntMatrix,
    b: &IntMatrix,
    scale: &ScaleDiag,
    bound: BitBound,
    strategy: Strategy,
) -> Result<Unpacked> {
    match strategy {
        Strategy::Row => {
            check_pair("unpack", a, b, scale)?;
            let (a_u, gather) = unpack_row(a, bound);
            Ok(Unpacked {
                a: a_u,
                b: b.clone(),
                scale: scale.clone(),
                gather,
            })
        }
        Strategy::Column => {
            let (a_u, b_e, s_u) = unpack_column(a, b, scale, bound)?;
            Ok(Unpacked {
                a: a_u,
                b: b_e,
                scale: s_u,
                gather: RowGather::identity(a.rows(), bound),
            })
        }
        Strategy::Both => unpack_both(a, b, scale, bound),
    }
}
