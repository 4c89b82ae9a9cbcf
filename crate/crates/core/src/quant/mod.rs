//! Percentile-scaled round-to-nearest quantization.
//!
//! A floating-point matrix `A` is mapped to integers with
//! `A_q = round(0.5·β / α_p(A) · A)`, where `α_p(A)` is the `p`-th percentile
//! of `|A|`. Roughly `p%` of the entries then land in `[-β/2, β/2]`, while the
//! remaining heavy hitters keep their full magnitude (no clipping by default).
//! The product of two quantized matrices is mapped back with
//! `α_p(A)·α_p(B) / (0.5β)² · A_q·B_qᵀ`.

mod huffman;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intmat::{exact_gemm, IntMatrix};

pub use huffman::{huffman_stats, Code, CodeTable, EncodedStream, HuffmanStats};

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FloatMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if let Some(r) = rows.iter().find(|r| r.as_ref().len() != cols) {
            return Err(Error::DimensionMismatch {
                op: "from_rows",
                left: format!("{cols} columns"),
                right: format!("{} columns", r.as_ref().len()),
            });
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Anything whose entries can be summarized by magnitude.
pub trait Magnitudes {
    fn values(&self) -> Vec<f64>;

    fn magnitudes(&self) -> Vec<f64> {
        self.values().into_iter().map(f64::abs).collect()
    }
}

impl Magnitudes for FloatMatrix {
    fn values(&self) -> Vec<f64> {
        self.data.clone()
    }
}

impl Magnitudes for IntMatrix {
    fn values(&self) -> Vec<f64> {
        self.data().iter().map(|&v| v as f64).collect()
    }

    fn magnitudes(&self) -> Vec<f64> {
        self.data()
            .iter()
            .map(|&v| v.unsigned_abs() as f64)
            .collect()
    }
}

impl Magnitudes for [f64] {
    fn values(&self) -> Vec<f64> {
        self.to_vec()
    }
}

impl Magnitudes for Vec<f64> {
    fn values(&self) -> Vec<f64> {
        self.clone()
    }
}

fn check_percentile(p: f64) -> Result<()> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidPercentile(p))
    }
}

/// Nearest-rank percentile of `|entries|`: the `k`-th smallest magnitude with
/// `k = ceil(p/100 · N)`.
pub fn percentile_abs<M: Magnitudes + ?Sized>(m: &M, p: f64) -> Result<f64> {
    check_percentile(p)?;
    let mut mags = m.magnitudes();
    if mags.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let n = mags.len();
    let k = ((p * n as f64) / 100.0).ceil().clamp(1.0, n as f64) as usize;
    let (_, kth, _) = mags.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// `α_100 / α_95`, how far the largest entry sits above the bulk.
pub fn heavy_hitter_ratio<M: Magnitudes + ?Sized>(m: &M) -> Result<f64> {
    let p95 = percentile_abs(m, 95.0)?;
    if p95 == 0.0 {
        return Err(Error::ZeroPercentile);
    }
    Ok(percentile_abs(m, 100.0)? / p95)
}

/// Population standard deviation of the entries.
pub fn std_dev<M: Magnitudes + ?Sized>(m: &M) -> Result<f64> {
    let v = m.values();
    if v.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    /// Percentile in `(0, 100]`.
    pub p: f64,
    /// Number of distinct levels targeted for the in-percentile body.
    pub beta: u32,
    /// `α_p`, the `p`-th percentile of entry magnitudes.
    pub alpha: f64,
}

impl QuantParams {
    /// `0.5·β / α`, or `1` for the degenerate all-zero case.
    pub fn scale(&self) -> f64 {
        if self.alpha > 0.0 {
            0.5 * self.beta as f64 / self.alpha
        } else {
            1.0
        }
    }

    /// Width of one quantization level in the original units.
    pub fn step(&self) -> f64 {
        self.alpha / (0.5 * self.beta as f64)
    }

    /// `round(0.5·β)`, the largest level reached by in-percentile entries.
    pub fn level_limit(&self) -> i64 {
        (0.5 * self.beta as f64).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMatrix {
    pub q: IntMatrix,
    pub params: QuantParams,
    /// Set when `α = 0`; `q` is then all zeros.
    pub degenerate: bool,
}

impl QuantizedMatrix {
    pub fn dequantize(&self) -> FloatMatrix {
        let step = if self.degenerate {
            0.0
        } else {
            self.params.step()
        };
        let data = self.q.data().iter().map(|&v| v as f64 * step).collect();
        FloatMatrix::new(self.q.rows(), self.q.cols(), data).expect("finite by construction")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RtnOptions {
    /// Clamp entries to `[-α, α]` before scaling. Off by default.
    pub clip: bool,
}

fn check_beta(beta: u32) -> Result<()> {
    if beta >= 3 && beta % 2 == 1 {
        Ok(())
    } else {
        Err(Error::InvalidBeta(beta))
    }
}

/// Round-half-away-from-zero quantization scaled by the `p`-th percentile.
pub fn rtn_quantize(a: &FloatMatrix, p: f64, beta: u32) -> Result<QuantizedMatrix> {
    rtn_quantize_with(a, p, beta, RtnOptions::default())
}

pub fn rtn_quantize_with(
    a: &FloatMatrix,
    p: f64,
    beta: u32,
    options: RtnOptions,
) -> Result<QuantizedMatrix> {
    check_beta(beta)?;
    let alpha = percentile_abs(a, p)?;
    let params = QuantParams { p, beta, alpha };
    if alpha == 0.0 {
        return Ok(QuantizedMatrix {
            q: IntMatrix::zeros(a.rows, a.cols),
            params,
            degenerate: true,
        });
    }
    let scale = params.scale();
    // Largest f64 strictly below 2^63.
    const LIMIT: f64 = 9.223_372_036_854_775e18;
    let data = a
        .data
        .iter()
        .map(|&x| {
            let x = if options.clip {
                x.clamp(-alpha, alpha)
            } else {
                x
            };
            let q = (x * scale).round();
            if q.abs() < LIMIT {
                Ok(q as i64)
            } else {
                Err(Error::Overflow("rtn_quantize"))
            }
        })
        .collect::<Result<Vec<i64>>>()?;
    Ok(QuantizedMatrix {
        q: IntMatrix::new(a.rows, a.cols, data)?,
        params,
        degenerate: false,
    })
}

/// Approximate float product `α_A·α_B / (0.5β)² · A_q·B_qᵀ`.
pub fn dequant_gemm(a: &QuantizedMatrix, b: &QuantizedMatrix) -> Result<FloatMatrix> {
    if a.params.beta != b.params.beta {
        return Err(Error::BetaMismatch(a.params.beta, b.params.beta));
    }
    let c = exact_gemm(&a.q, &b.q)?;
    let half = 0.5 * a.params.beta as f64;
    let factor = a.params.alpha * b.params.alpha / (half * half);
    let data = c.data().iter().map(|&v| v as f64 * factor).collect();
    FloatMatrix::new(c.rows(), c.cols(), data)
}
