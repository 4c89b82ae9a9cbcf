//! Recombination of unpacked operands into the exact original product.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{unpack, RowGather, ScaleDiag, Strategy};
use crate::error::{Error, Result};
use crate::intmat::{check_gemm_overflow, exact_gemm, BitBound, IntMatrix};

const PAR_THRESHOLD: usize = 1 << 16;

/// `n·d·h` shape of a GEMM `A (n×d) · Bᵀ (d×h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmDims {
    pub n: usize,
    pub d: usize,
    pub h: usize,
}

impl GemmDims {
    pub fn of(a: &IntMatrix, b: &IntMatrix) -> Self {
        Self {
            n: a.rows(),
            d: a.cols(),
            h: b.rows(),
        }
    }

    /// Multiply-add count of the GEMM.
    pub fn work(self) -> u128 {
        self.n as u128 * self.d as u128 * self.h as u128
    }
}

/// `r = (n'·d'·h') / (n·d·h)`; an empty original GEMM counts as `1.0`.
pub fn unpack_ratio(unpacked: GemmDims, original: GemmDims) -> f64 {
    let base = original.work();
    if base == 0 {
        return 1.0;
    }
    unpacked.work() as f64 / base as f64
}

fn check_in_bound(name: &'static str, m: &IntMatrix, bound: BitBound) -> Result<()> {
    match m.first_out_of_bound(bound) {
        None => Ok(()),
        Some((row, col, value)) => Err(Error::OutOfBound {
            matrix: name,
            row,
            col,
            value,
            bits: bound.bits(),
        }),
    }
}

fn accumulate_scaled(
    acc: &mut IntMatrix,
    part: &IntMatrix,
    bound: BitBound,
    exponent: u32,
) -> Result<()> {
    let overflow = Error::Overflow("scaled_matmul");
    for i in 0..acc.rows() {
        for j in 0..acc.cols() {
            let v = bound
                .scale(part.get(i, j), exponent)
                .and_then(|x| x.checked_add(acc.get(i, j)))
                .ok_or_else(|| overflow.clone())?;
            acc.set(i, j, v);
        }
    }
    Ok(())
}

/// `A · S · Bᵀ` as one low bit-width GEMM per distinct scale exponent,
/// each shifted left by `exponent · (b-1)` bits and summed.
///
/// Both operands must be entirely In-Bound.
pub fn scaled_matmul(a: &IntMatrix, b: &IntMatrix, scale: &ScaleDiag) -> Result<IntMatrix> {
    if a.cols() != b.cols() || a.cols() != scale.len() {
        return Err(Error::DimensionMismatch {
            op: "scaled_matmul",
            left: format!("A is {}x{}", a.rows(), a.cols()),
            right: format!(
                "B is {}x{}, S has {} entries",
                b.rows(),
                b.cols(),
                scale.len()
            ),
        });
    }
    let bound = scale.bound();
    check_in_bound("A", a, bound)?;
    check_in_bound("B", b, bound)?;

    let groups: Vec<(u32, Vec<usize>)> = scale.groups().into_iter().collect();
    let partial = |(exponent, cols): &(u32, Vec<usize>)| -> Result<(u32, IntMatrix)> {
        let c = if cols.len() == a.cols() {
            exact_gemm(a, b)?
        } else {
            exact_gemm(&a.select_columns(cols), &b.select_columns(cols))?
        };
        Ok((*exponent, c))
    };
    let parts: Vec<(u32, IntMatrix)> =
        if groups.len() > 1 && a.rows() * a.cols() * b.rows() >= PAR_THRESHOLD {
            groups.par_iter().map(partial).collect::<Result<_>>()?
        } else {
            groups.iter().map(partial).collect::<Result<_>>()?
        };

    let mut out = IntMatrix::zeros(a.rows(), b.rows());
    for (exponent, part) in &parts {
        accumulate_scaled(&mut out, part, bound, *exponent)?;
    }
    Ok(out)
}

/// `Π · M`: row `c` of `M`, scaled by `s^e`, is added into row `target`.
pub fn apply_row_gather(gather: &RowGather, m: &IntMatrix) -> Result<IntMatrix> {
    if gather.len() != m.rows() {
        return Err(Error::DimensionMismatch {
            op: "apply_row_gather",
            left: format!("Π has {} columns", gather.len()),
            right: format!("M has {} rows", m.rows()),
        });
    }
    let bound = gather.bound();
    let mut out = IntMatrix::zeros(gather.source_rows(), m.cols());
    for (c, e) in gather.entries().iter().enumerate() {
        if e.target >= out.rows() {
            return Err(Error::IndexOutOfRange {
                index: e.target,
                len: out.rows(),
            });
        }
        for (j, &v) in m.row(c).iter().enumerate() {
            let acc = bound
                .scale(v, e.exponent)
                .and_then(|x| x.checked_add(out.get(e.target, j)))
                .ok_or(Error::Overflow("apply_row_gather"))?;
            out.set(e.target, j, acc);
        }
    }
    Ok(out)
}

/// `M · Πᵀ`: column `c` of `M`, scaled by `s^e`, is added into column `target`.
pub fn apply_row_gather_right(m: &IntMatrix, gather: &RowGather) -> Result<IntMatrix> {
    if gather.len() != m.cols() {
        return Err(Error::DimensionMismatch {
            op: "apply_row_gather_right",
            left: format!("M has {} columns", m.cols()),
            right: format!("Π has {} columns", gather.len()),
        });
    }
    let bound = gather.bound();
    let mut out = IntMatrix::zeros(m.rows(), gather.source_rows());
    for (c, e) in gather.entries().iter().enumerate() {
        if e.target >= out.cols() {
            return Err(Error::IndexOutOfRange {
                index: e.target,
                len: out.cols(),
            });
        }
        for i in 0..m.rows() {
            let acc = bound
                .scale(m.get(i, c), e.exponent)
                .and_then(|x| x.checked_add(out.get(i, e.target)))
                .ok_or(Error::Overflow("apply_row_gather_right"))?;
            out.set(i, e.target, acc);
        }
    }
    Ok(out)
}

/// Fully unpacked GEMM `Π_A · A_ue · S_uu · B_euᵀ · Π_Bᵀ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnpackedGemm {
    pub pi_a: RowGather,
    pub a: IntMatrix,
    pub s: ScaleDiag,
    pub b: IntMatrix,
    pub pi_b: RowGather,
    pub bound: BitBound,
    pub strategy_a: Strategy,
    pub strategy_b: Strategy,
    pub original: GemmDims,
}

impl UnpackedGemm {
    pub fn dims(&self) -> GemmDims {
        GemmDims::of(&self.a, &self.b)
    }

    pub fn ratio(&self) -> f64 {
        unpack_ratio(self.dims(), self.original)
    }

    /// Evaluates the product using only In-Bound GEMMs, shifts and adds.
    pub fn recombine(&self) -> Result<IntMatrix> {
        let core = scaled_matmul(&self.a, &self.b, &self.s)?;
        let left = apply_row_gather(&self.pi_a, &core)?;
        apply_row_gather_right(&left, &self.pi_b)
    }
}

/// Unpacks `A` with `strategy_a`, then `B_e` with `strategy_b` against the
/// already unpacked `A_u` (which carries `S_u` forward).
pub fn unpack_pair(
    a: &IntMatrix,
    b: &IntMatrix,
    bound: BitBound,
    strategy_a: Strategy,
    strategy_b: Strategy,
) -> Result<UnpackedGemm> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            op: "unpack_gemm",
            left: format!("A is {}x{}", a.rows(), a.cols()),
            right: format!("B is {}x{}", b.rows(), b.cols()),
        });
    }
    check_gemm_overflow("unpack_gemm", a.cols(), a.max_abs(), b.max_abs())?;

    let first = unpack(
        a,
        b,
        &ScaleDiag::identity(a.cols(), bound),
        bound,
        strategy_a,
    )?;
    // Roles swap: B_e is unpacked and A_u is the partner whose columns follow.
    let second = unpack(&first.b, &first.a, &first.scale, bound, strategy_b)?;
    Ok(UnpackedGemm {
        pi_a: first.gather,
        a: second.b,
        s: second.scale,
        b: second.a,
        pi_b: second.gather,
        bound,
        strategy_a,
        strategy_b,
        original: GemmDims::of(a, b),
    })
}

/// Exact `A·Bᵀ` computed from purely In-Bound GEMMs.
pub fn unpack_gemm(
    a: &IntMatrix,
    b: &IntMatrix,
    bound: BitBound,
    strategy_a: Strategy,
    strategy_b: Strategy,
) -> Result<IntMatrix> {
    unpack_pair(a, b, bound, strategy_a, strategy_b)?.recombine()
}

#[derive(Debug, Clone)]
pub struct MixChoice {
    pub strategy_a: Strategy,
    pub strategy_b: Strategy,
    pub ratio: f64,
    pub unpacked: UnpackedGemm,
}

/// Picks the strategy pair with the smallest unpack ratio over the full
/// `{Row, Column, Both}²` cross-product.
pub fn choose_mix(a: &IntMatrix, b: &IntMatrix, bound: BitBound) -> Result<MixChoice> {
    choose_mix_among(a, b, bound, &Strategy::ALL, &Strategy::ALL)
}

/// Like [`choose_mix`] but restricted to the given candidates per side.
///
/// Ties go to the earliest pair in `A`-major enumeration order.
pub fn choose_mix_among(
    a: &IntMatrix,
    b: &IntMatrix,
    bound: BitBound,
    options_a: &[Strategy],
    options_b: &[Strategy],
) -> Result<MixChoice> {
    let pairs: Vec<(Strategy, Strategy)> = options_a
        .iter()
        .flat_map(|&sa| options_b.iter().map(move |&sb| (sa, sb)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::InvalidSpec("no candidate strategies".into()));
    }
    let candidates: Vec<UnpackedGemm> = pairs
        .par_iter()
        .map(|&(sa, sb)| unpack_pair(a, b, bound, sa, sb))
        .collect::<Result<_>>()?;
    // Same denominator for every candidate, so compare the work exactly.
    let best = candidates
        .into_iter()
        .reduce(|best, c| {
            if c.dims().work() < best.dims().work() {
                c
            } else {
                best
            }
        })
        .expect("at least one candidate");
    Ok(MixChoice {
        strategy_a: best.strategy_a,
        strategy_b: best.strategy_b,
        ratio: best.ratio(),
        unpacked: best,
    })
}
