//! JSON analysis reports: unpack ratios of every strategy pair plus Mix, per
//! GEMM and bit-width.
//!
//! Schema (`imunpack.analysis/1`):
//!
//! ```text
//! {
//!   "schema": "imunpack.analysis/1",
//!   "seed": u64 | null,
//!   "records": [
//!     {
//!       "shape": string,            // GEMM name, e.g. "Y" or "dX"
//!       "beta": u32 | null,         // quantization levels, if quantized
//!       "bits": u32,
//!       "strategy_a": "row" | "col" | "both",
//!       "strategy_b": "row" | "col" | "both",
//!       "mix": bool,                // true for the Mix selection
//!       "ratio": f64,               // >= 1
//!       "dims": {"n", "d", "h"},
//!       "unpacked_dims": {"n", "d", "h"},
//!       "ob": {"a_entries", "b_entries", "a_rows", "a_cols", "b_rows", "b_cols"},
//!       "equivalent": bool,
//!       "wall_time_ms": f64
//!     }
//!   ]
//! }
//! ```
//!
//! Records are ordered by bit-width, then the nine pairs in `A`-major order
//! (row, col, both), then Mix.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::intmat::{exact_gemm, ob_count, Axis, BitBound, IntMatrix};
use crate::unpack::{choose_mix, unpack_pair, GemmDims, Strategy, UnpackedGemm};

pub const SCHEMA: &str = "imunpack.analysis/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObStats {
    pub a_entries: usize,
    pub b_entries: usize,
    pub a_rows: usize,
    pub a_cols: usize,
    pub b_rows: usize,
    pub b_cols: usize,
}

impl ObStats {
    pub fn of(a: &IntMatrix, b: &IntMatrix, bound: BitBound) -> Self {
        let nonzero = |v: Vec<usize>| v.into_iter().filter(|&c| c > 0).count();
        Self {
            a_entries: ob_count(a, bound, Axis::Rows).iter().sum(),
            b_entries: ob_count(b, bound, Axis::Rows).iter().sum(),
            a_rows: nonzero(ob_count(a, bound, Axis::Rows)),
            a_cols: nonzero(ob_count(a, bound, Axis::Cols)),
            b_rows: nonzero(ob_count(b, bound, Axis::Rows)),
            b_cols: nonzero(ob_count(b, bound, Axis::Cols)),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.a_entries == 0 && self.b_entries == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub shape: String,
    pub beta: Option<u32>,
    pub bits: u32,
    pub strategy_a: Strategy,
    pub strategy_b: Strategy,
    pub mix: bool,
    pub ratio: f64,
    pub dims: GemmDims,
    pub unpacked_dims: GemmDims,
    pub ob: ObStats,
    pub equivalent: bool,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema: String,
    pub seed: Option<u64>,
    pub records: Vec<AnalysisRecord>,
}

impl Default for AnalysisReport {
    fn default() -> Self {
        Self::new(None)
    }
}

impl AnalysisReport {
    pub fn new(seed: Option<u64>) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            seed,
            records: Vec::new(),
        }
    }

    /// Zeroes every wall time, for byte-stable comparisons.
    pub fn without_timings(mut self) -> Self {
        for r in &mut self.records {
            r.wall_time_ms = 0.0;
        }
        self
    }

    pub fn all_equivalent(&self) -> bool {
        self.records.iter().all(|r| r.equivalent)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn record(
    shape: &str,
    beta: Option<u32>,
    ob: ObStats,
    expected: &IntMatrix,
    unpacked: &UnpackedGemm,
    mix: bool,
    started: Instant,
) -> Result<AnalysisRecord> {
    let equivalent = unpacked.recombine()? == *expected;
    Ok(AnalysisRecord {
        shape: shape.to_string(),
        beta,
        bits: unpacked.bound.bits(),
        strategy_a: unpacked.strategy_a,
        strategy_b: unpacked.strategy_b,
        mix,
        ratio: unpacked.ratio(),
        dims: unpacked.original,
        unpacked_dims: unpacked.dims(),
        ob,
        equivalent,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Evaluates all nine strategy pairs and Mix at each bit-width, checking every
/// recombined product against [`exact_gemm`].
pub fn analyze_pair(
    shape: &str,
    beta: Option<u32>,
    a: &IntMatrix,
    b: &IntMatrix,
    bits: &[u32],
) -> Result<Vec<AnalysisRecord>> {
    let expected = exact_gemm(a, b)?;
    let bounds = bits
        .iter()
        .map(|&b| BitBound::new(b))
        .collect::<Result<Vec<_>>>()?;

    let mut jobs: Vec<(BitBound, Option<(Strategy, Strategy)>)> = Vec::new();
    for &bound in &bounds {
        for sa in Strategy::ALL {
            for sb in Strategy::ALL {
                jobs.push((bound, Some((sa, sb))));
            }
        }
        jobs.push((bound, None));
    }

    jobs.par_iter()
        .map(|&(bound, pair)| {
            let started = Instant::now();
            let ob = ObStats::of(a, b, bound);
            match pair {
                Some((sa, sb)) => {
                    let u = unpack_pair(a, b, bound, sa, sb)?;
                    record(shape, beta, ob, &expected, &u, false, started)
                }
                None => {
                    let choice = choose_mix(a, b, bound)?;
                    record(shape, beta, ob, &expected, &choice.unpacked, true, started)
                }
            }
        })
        .collect()
}
