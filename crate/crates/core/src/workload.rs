//! Seeded synthetic matrices with controlled heavy-hitter placement, plus the
//! nine GEMM shapes of a transformer block (forward and backward).

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intmat::{BitBound, IntMatrix};
use crate::quant::{percentile_abs, std_dev, Magnitudes};

/// Where the outliers of a generated matrix go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// As few whole rows as can hold the outliers.
    RowBand,
    /// As few whole columns as can hold the outliers.
    ColumnBand,
    /// Main diagonal only.
    Diagonal,
    /// Uniformly random cells.
    Scattered,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::RowBand,
        Pattern::ColumnBand,
        Pattern::Diagonal,
        Pattern::Scattered,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::RowBand => "row_band",
            Pattern::ColumnBand => "column_band",
            Pattern::Diagonal => "diagonal",
            Pattern::Scattered => "scattered",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "row_band" | "rowband" | "row" => Ok(Pattern::RowBand),
            "column_band" | "columnband" | "col_band" | "column" | "col" => Ok(Pattern::ColumnBand),
            "diagonal" | "diag" => Ok(Pattern::Diagonal),
            "scattered" | "scatter" => Ok(Pattern::Scattered),
            other => Err(format!("unknown pattern '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub pattern: Pattern,
    /// Share of entries that are outliers, in `(0, 0.5]`.
    pub fraction: f64,
    /// Largest outlier magnitude as a multiple of `body_range`.
    pub magnitude_ratio: f64,
    /// Body entries are uniform in `[-body_range, body_range]`.
    pub body_range: i64,
    pub seed: u64,
}

impl OutlierSpec {
    pub fn new(
        pattern: Pattern,
        fraction: f64,
        magnitude_ratio: f64,
        body_range: i64,
        seed: u64,
    ) -> Self {
        Self {
            pattern,
            fraction,
            magnitude_ratio,
            body_range,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 0.5) {
            return Err(Error::InvalidSpec(format!(
                "fraction {} is outside (0, 0.5]",
                self.fraction
            )));
        }
        if !(self.magnitude_ratio >= 1.0 && self.magnitude_ratio.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "magnitude ratio {} is below 1",
                self.magnitude_ratio
            )));
        }
        if self.body_range < 1 {
            return Err(Error::InvalidSpec(format!(
                "body range {} must be at least 1",
                self.body_range
            )));
        }
        if self.body_range as f64 * self.magnitude_ratio.max(2.0) >= 9.0e18 {
            return Err(Error::InvalidSpec("outlier magnitude exceeds i64".into()));
        }
        Ok(())
    }

    /// `floor(fraction · rows · cols)`.
    pub fn outlier_count(&self, rows: usize, cols: usize) -> usize {
        (self.fraction * (rows * cols) as f64 + 1e-9).floor() as usize
    }

    /// Inclusive magnitude range of outliers.
    pub fn outlier_range(&self) -> (i64, i64) {
        let lo = 2 * self.body_range;
        let hi = ((self.body_range as f64 * self.magnitude_ratio).round() as i64).max(lo);
        (lo, hi)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn body(rng: &mut ChaCha8Rng, n: usize, range: i64) -> Vec<i64> {
    (0..n).map(|_| rng.random_range(-range..=range)).collect()
}

/// Matrix with entries uniform in `[-body_range, body_range]` and no outliers.
pub fn gen_body(rows: usize, cols: usize, body_range: i64, seed: u64) -> IntMatrix {
    let mut rng = rng(seed);
    IntMatrix::new(rows, cols, body(&mut rng, rows * cols, body_range.max(0)))
        .expect("length matches")
}

/// Picks `count` cells among the first `lines · span` cells of the chosen
/// lines, mapped through `to_cell(line, offset)`.
fn band_cells(
    rng: &mut ChaCha8Rng,
    lines: usize,
    span: usize,
    count: usize,
    to_cell: impl Fn(usize, usize) -> usize,
) -> Vec<usize> {
    let width = count.div_ceil(span);
    let mut chosen = index::sample(rng, lines, width).into_vec();
    chosen.sort_unstable();
    index::sample(rng, width * span, count)
        .into_iter()
        .map(|k| to_cell(chosen[k / span], k % span))
        .collect()
}

/// Generates a seeded `rows × cols` matrix whose outliers follow `spec`.
///
/// Exactly `floor(fraction · rows · cols)` entries are outliers, with
/// magnitudes log-uniform in `[2·body_range, body_range·magnitude_ratio]`;
/// the first placed outlier takes the upper end so the realized max/body
/// ratio hits the target.
pub fn gen_matrix(rows: usize, cols: usize, spec: &OutlierSpec) -> Result<IntMatrix> {
    spec.validate()?;
    let count = spec.outlier_count(rows, cols);
    let mut rng = rng(spec.seed);
    let mut data = body(&mut rng, rows * cols, spec.body_range);

    let cells: Vec<usize> = match spec.pattern {
        Pattern::Scattered => index::sample(&mut rng, rows * cols, count).into_vec(),
        Pattern::RowBand => band_cells(&mut rng, rows, cols, count, |r, c| r * cols + c),
        Pattern::ColumnBand => band_cells(&mut rng, cols, rows, count, |c, r| r * cols + c),
        Pattern::Diagonal => {
            let diag = rows.min(cols);
            if count > diag {
                return Err(Error::InvalidSpec(format!(
                    "{count} outliers requested but a {rows}x{cols} matrix has {diag} diagonal cells"
                )));
            }
            index::sample(&mut rng, diag, count)
                .into_iter()
                .map(|i| i * cols + i)
                .collect()
        }
    };

    let (lo, hi) = spec.outlier_range();
    let (ln_lo, ln_hi) = ((lo as f64).ln(), (hi as f64).ln());
    for (k, &cell) in cells.iter().enumerate() {
        let magnitude = if k == 0 {
            hi
        } else {
            let t: f64 = rng.random();
            ((ln_lo + t * (ln_hi - ln_lo)).exp().round() as i64).clamp(lo, hi)
        };
        data[cell] = if rng.random_bool(0.5) {
            magnitude
        } else {
            -magnitude
        };
    }
    IntMatrix::new(rows, cols, data)
}

/// `n` seeded Student-t samples (3 degrees of freedom), a heavy-tailed
/// stand-in for activation values.
pub fn heavy_tailed_samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    let dist = StudentT::new(3.0).expect("valid degrees of freedom");
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObCount {
    pub bits: u32,
    pub count: usize,
    pub fraction: f64,
}

/// Heavy-hitter summary of one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub entries: usize,
    pub alpha_95: f64,
    pub alpha_100: f64,
    /// `α_100 / α_95`, absent when `α_95 = 0`.
    pub ratio: Option<f64>,
    pub std_dev: f64,
    /// Out-of-bound entries for `b = 2..=8`.
    pub ob_counts: Vec<ObCount>,
}

pub fn stats_report<M: Magnitudes + ?Sized>(m: &M) -> Result<StatsReport> {
    let mags = m.magnitudes();
    if mags.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let alpha_95 = percentile_abs(&mags, 95.0)?;
    let alpha_100 = percentile_abs(&mags, 100.0)?;
    let n = mags.len();
    let ob_counts = (2..=8)
        .map(|bits| {
            let s = BitBound::new(bits).expect("valid width").s() as f64;
            let count = mags.iter().filter(|&&x| x >= s).count();
            ObCount {
                bits,
                count,
                fraction: count as f64 / n as f64,
            }
        })
        .collect();
    Ok(StatsReport {
        entries: n,
        alpha_95,
        alpha_100,
        ratio: (alpha_95 > 0.0).then(|| alpha_100 / alpha_95),
        std_dev: std_dev(m)?,
        ob_counts,
    })
}

/// The nine GEMMs of a transformer block, each written as `A·Bᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GemmKind {
    /// `Y = X Wᵀ`
    Y,
    /// `P = Q Kᵀ`
    P,
    /// `O = M V`
    O,
    /// `∇X = ∇Y W`
    GradX,
    /// `∇W = ∇Yᵀ X`
    GradW,
    /// `∇Q = ∇P K`
    GradQ,
    /// `∇K = ∇Pᵀ Q`
    GradK,
    /// `∇M = ∇O Vᵀ`
    GradM,
    /// `∇V = Mᵀ ∇O`
    GradV,
}

impl GemmKind {
    pub const ALL: [GemmKind; 9] = [
        GemmKind::Y,
        GemmKind::P,
        GemmKind::O,
        GemmKind::GradX,
        GemmKind::GradW,
        GemmKind::GradQ,
        GemmKind::GradK,
        GemmKind::GradM,
        GemmKind::GradV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GemmKind::Y => "Y",
            GemmKind::P => "P",
            GemmKind::O => "O",
            GemmKind::GradX => "dX",
            GemmKind::GradW => "dW",
            GemmKind::GradQ => "dQ",
            GemmKind::GradK => "dK",
            GemmKind::GradM => "dM",
            GemmKind::GradV => "dV",
        }
    }

    /// Outlier pattern of the `A` and `B` operands in `A·Bᵀ` form.
    ///
    /// Activations carry outlier channels (columns), transposed activations
    /// carry them in rows, the attention matrix is diagonal-heavy, and
    /// weights and gradients are scattered.
    pub fn operand_patterns(self) -> (Pattern, Pattern) {
        use Pattern::*;
        match self {
            GemmKind::Y => (ColumnBand, Scattered),
            GemmKind::P => (ColumnBand, ColumnBand),
            GemmKind::O => (Diagonal, RowBand),
            GemmKind::GradX => (Scattered, Scattered),
            GemmKind::GradW => (Scattered, RowBand),
            GemmKind::GradQ => (Scattered, RowBand),
            GemmKind::GradK => (Scattered, RowBand),
            GemmKind::GradM => (Scattered, ColumnBand),
            GemmKind::GradV => (Diagonal, Scattered),
        }
    }
}

impl fmt::Display for GemmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerDims {
    pub seq: usize,
    pub d_model: usize,
    /// Output width of the linear layer.
    pub d_out: usize,
    pub head_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmShape {
    pub kind: GemmKind,
    pub n: usize,
    pub d: usize,
    pub h: usize,
}

impl GemmShape {
    pub fn new(kind: GemmKind, dims: TransformerDims) -> Self {
        let TransformerDims {
            seq,
            d_model,
            d_out,
            head_dim,
        } = dims;
        let (n, d, h) = match kind {
            GemmKind::Y => (seq, d_model, d_out),
            GemmKind::P => (seq, head_dim, seq),
            GemmKind::O => (seq, seq, head_dim),
            GemmKind::GradX => (seq, d_out, d_model),
            GemmKind::GradW => (d_out, seq, d_model),
            GemmKind::GradQ => (seq, seq, head_dim),
            GemmKind::GradK => (seq, seq, head_dim),
            GemmKind::GradM => (seq, head_dim, seq),
            GemmKind::GradV => (seq, seq, head_dim),
        };
        Self { kind, n, d, h }
    }

    pub fn transformer_set(dims: TransformerDims) -> Vec<GemmShape> {
        GemmKind::ALL.iter().map(|&k| Self::new(k, dims)).collect()
    }

    /// Seeded `(A, B)` operands shaped `n×d` and `h×d` with the kind's
    /// outlier patterns. Diagonal operands are capped at one outlier per
    /// diagonal cell.
    pub fn fixture_pair(&self, base: &OutlierSpec) -> Result<(IntMatrix, IntMatrix)> {
        let (pa, pb) = self.kind.operand_patterns();
        let operand = |rows: usize, cols: usize, pattern: Pattern, seed: u64| {
            let mut spec = OutlierSpec {
                pattern,
                seed,
                ..*base
            };
            if pattern == Pattern::Diagonal {
                let cap = rows.min(cols) as f64 / (rows * cols).max(1) as f64;
                spec.fraction = spec.fraction.min(cap);
            }
            gen_matrix(rows, cols, &spec)
        };
        let seed_a = base
            .seed
            .wrapping_mul(2)
            .wrapping_add(self.kind as u64 * 7919);
        Ok((
            operand(self.n, self.d, pa, seed_a)?,
            operand(self.h, self.d, pb, seed_a.wrapping_add(1))?,
        ))
    }
}
