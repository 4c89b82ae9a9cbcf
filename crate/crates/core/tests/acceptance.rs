//! Acceptance gate. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use imunpack::matfile::{decode_matrix, encode_matrix};
use imunpack::quant::huffman_stats;
use imunpack::workload::{gen_body, heavy_tailed_samples};
use imunpack::{
    choose_mix, dequant_gemm, digit_decompose, exact_gemm, gen_matrix, load_matrix, percentile_abs,
    rtn_quantize, save_matrix, unpack_pair, BitBound, Dtype, FloatMatrix, IntMatrix, MatrixData,
    OutlierSpec, Pattern, Strategy,
};
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Triple loop with an i128 accumulator.
fn naive_gemm(a: &IntMatrix, b: &IntMatrix) -> Vec<i128> {
    let mut out = Vec::with_capacity(a.rows() * b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.push(
                (0..a.cols())
                    .map(|k| a.get(i, k) as i128 * b.get(j, k) as i128)
                    .sum(),
            );
        }
    }
    out
}

fn naive_float_gemm(a: &FloatMatrix, b: &FloatMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.rows() * b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.push((0..a.cols()).map(|k| a.get(i, k) * b.get(j, k)).sum());
        }
    }
    out
}

/// Magnitude log-uniform in `[1, 2^12]`, random sign, zero one time in ten.
fn log_uniform(rng: &mut ChaCha8Rng) -> i64 {
    if rng.random_ratio(1, 10) {
        return 0;
    }
    let m = (rng.random::<f64>() * 12.0 * std::f64::consts::LN_2)
        .exp()
        .round() as i64;
    if rng.random_bool(0.5) {
        -m
    } else {
        m
    }
}

struct Case {
    a: IntMatrix,
    b: IntMatrix,
    bits: u32,
}

fn random_cases(count: u64) -> Vec<Case> {
    (0..count)
        .map(|seed| {
            let mut r = rng(0xACCE_0000 + seed);
            let (n, d, h) = (
                r.random_range(1..=16),
                r.random_range(1..=16),
                r.random_range(1..=16),
            );
            let bits = r.random_range(2..=8);
            let a =
                IntMatrix::new(n, d, (0..n * d).map(|_| log_uniform(&mut r)).collect()).unwrap();
            let b =
                IntMatrix::new(h, d, (0..h * d).map(|_| log_uniform(&mut r)).collect()).unwrap();
            Case { a, b, bits }
        })
        .collect()
}

fn pairs() -> Vec<(Strategy, Strategy)> {
    Strategy::ALL
        .iter()
        .flat_map(|&a| Strategy::ALL.iter().map(move |&b| (a, b)))
        .collect()
}

fn exact_equivalence(cases: &[Case]) -> Outcome {
    let failures: Vec<String> = cases
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, c)| {
            let bound = BitBound::new(c.bits).unwrap();
            let oracle = naive_gemm(&c.a, &c.b);
            let exact: Vec<i128> = exact_gemm(&c.a, &c.b)
                .unwrap()
                .data()
                .iter()
                .map(|&v| v as i128)
                .collect();
            let mut bad = Vec::new();
            if exact != oracle {
                bad.push(format!("case {i}: exact_gemm disagrees with the i128 loop"));
            }
            for (sa, sb) in pairs() {
                let got = unpack_pair(&c.a, &c.b, bound, sa, sb).and_then(|u| u.recombine());
                match got {
                    Ok(m)
                        if m.data()
                            .iter()
                            .map(|&v| v as i128)
                            .eq(oracle.iter().copied()) => {}
                    Ok(_) => bad.push(format!("case {i} ({sa},{sb}) b={}: mismatch", c.bits)),
                    Err(e) => bad.push(format!("case {i} ({sa},{sb}): {e}")),
                }
            }
            bad
        })
        .collect();
    if failures.is_empty() {
        Ok(format!(
            "{} pairs x 9 strategy pairs bit-exact",
            cases.len()
        ))
    } else {
        Err(format!(
            "{} failures, first: {}",
            failures.len(),
            failures[0]
        ))
    }
}

fn in_bound_guarantee(cases: &[Case]) -> Outcome {
    let checked: Vec<Result<u64, String>> = cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let bound = BitBound::new(c.bits).unwrap();
            let s = 1u64 << (c.bits - 1);
            let mut worst = 0;
            for (sa, sb) in pairs() {
                let u = unpack_pair(&c.a, &c.b, bound, sa, sb).map_err(|e| e.to_string())?;
                let m = u.a.max_abs().max(u.b.max_abs());
                if m >= s {
                    return Err(format!("case {i} ({sa},{sb}): max |entry| {m} >= {s}"));
                }
                worst = worst.max(m * 1000 / s);
            }
            Ok(worst)
        })
        .collect();
    let mut worst = 0;
    for c in checked {
        worst = worst.max(c?);
    }
    Ok(format!(
        "all unpacked operands in bound (largest max|entry|/s = {:.3})",
        worst as f64 / 1000.0
    ))
}

fn digit_reconstruction() -> Outcome {
    (2u32..=9)
        .into_par_iter()
        .map(|bits| {
            let bound = BitBound::new(bits).unwrap();
            let s = 1i128 << (bits - 1);
            let mut r = rng(0xD161_7000 + bits as u64);
            for k in 0..100_000 {
                let v: i64 = match k {
                    0 => i64::MIN,
                    1 => i64::MAX,
                    2 => 0,
                    _ if k % 2 == 0 => r.random(),
                    _ => r.random_range(-(1i64 << 20)..=1 << 20),
                };
                let dv = digit_decompose(v, bound);
                let mut acc = 0i128;
                for &d in dv.digits.iter().rev() {
                    if (d as i128).abs() >= s {
                        return Err(format!("b={bits}: digit {d} of {v} out of bound"));
                    }
                    acc = acc * s + d as i128;
                }
                if acc != v as i128 {
                    return Err(format!("b={bits}: {v} reconstructs to {acc}"));
                }
            }
            Ok(())
        })
        .collect::<Result<Vec<()>, String>>()?;
    Ok("10^5 values per b in 2..=9 reconstruct exactly".into())
}

fn has_out_of_bound(c: &Case) -> bool {
    let bound = BitBound::new(c.bits).unwrap();
    !c.a.is_in_bound(bound) || !c.b.is_in_bound(bound)
}

fn ratio_sanity(cases: &[Case]) -> Outcome {
    let mut fixtures: Vec<Case> = Vec::new();
    for seed in 0..20 {
        for pattern in Pattern::ALL {
            let spec = OutlierSpec::new(pattern, 0.05, 1000.0, 7, seed);
            fixtures.push(Case {
                a: gen_matrix(20, 20, &spec).unwrap(),
                b: gen_matrix(
                    20,
                    20,
                    &OutlierSpec {
                        seed: seed + 100,
                        ..spec
                    },
                )
                .unwrap(),
                bits: 4,
            });
        }
    }
    for seed in 0..100 {
        let mut r = rng(0xC1EA_0000 + seed);
        let bits = r.random_range(2..=8);
        let s = 1i64 << (bits - 1);
        let (n, d, h) = (
            r.random_range(1..=16),
            r.random_range(1..=16),
            r.random_range(1..=16),
        );
        let mut entries = |len: usize| (0..len).map(|_| r.random_range(1 - s..s)).collect();
        let a = IntMatrix::new(n, d, entries(n * d)).unwrap();
        let b = IntMatrix::new(h, d, entries(h * d)).unwrap();
        fixtures.push(Case { a, b, bits });
    }
    let all: Vec<&Case> = cases.iter().chain(fixtures.iter()).collect();
    let clean = all.iter().filter(|c| !has_out_of_bound(c)).count();
    all.par_iter()
        .enumerate()
        .map(|(i, c)| {
            let bound = BitBound::new(c.bits).unwrap();
            let ob = has_out_of_bound(c);
            let mut ratios = Vec::new();
            for (sa, sb) in pairs() {
                let r = unpack_pair(&c.a, &c.b, bound, sa, sb)
                    .map_err(|e| e.to_string())?
                    .ratio();
                if (r == 1.0) == ob || r < 1.0 {
                    return Err(format!("case {i} ({sa},{sb}): r = {r} with OB = {ob}"));
                }
                ratios.push(r);
            }
            let mix = choose_mix(&c.a, &c.b, bound)
                .map_err(|e| e.to_string())?
                .ratio;
            if let Some(r) = ratios.iter().find(|&&r| mix > r) {
                return Err(format!("case {i}: Mix r = {mix} above fixed pair r = {r}"));
            }
            Ok(())
        })
        .collect::<Result<Vec<()>, String>>()?;
    Ok(format!(
        "{} cases ({clean} without OB entries); r = 1 iff no OB, Mix minimal",
        all.len()
    ))
}

/// Single-strategy ratios `[row, col, both]` for a fixture `A` against an
/// all-in-bound `B`.
fn single_ratios(pattern: Pattern, seed: u64) -> [f64; 3] {
    let spec = OutlierSpec::new(pattern, 0.05, 1000.0, 7, seed);
    let a = gen_matrix(20, 20, &spec).unwrap();
    let b = gen_body(20, 20, 7, seed ^ 0x5EED);
    let bound = BitBound::new(4).unwrap();
    Strategy::ALL.map(|s| {
        unpack_pair(&a, &b, bound, s, Strategy::Row)
            .unwrap()
            .ratio()
    })
}

fn strategy_ordering() -> Outcome {
    let mut sums = [[0.0; 3]; 3];
    for seed in 0..20 {
        let col = single_ratios(Pattern::ColumnBand, seed);
        let row = single_ratios(Pattern::RowBand, seed);
        let diag = single_ratios(Pattern::Diagonal, seed);
        if col[1] >= col[0] {
            return Err(format!(
                "seed {seed}: ColumnBand col r {} >= row r {}",
                col[1], col[0]
            ));
        }
        if row[0] >= row[1] {
            return Err(format!(
                "seed {seed}: RowBand row r {} >= col r {}",
                row[0], row[1]
            ));
        }
        let min = |r: [f64; 3]| r.iter().copied().fold(f64::INFINITY, f64::min);
        if min(diag) <= min(row) {
            return Err(format!(
                "seed {seed}: Diagonal min r {} <= RowBand min r {}",
                min(diag),
                min(row)
            ));
        }
        for (acc, r) in sums.iter_mut().zip([col, row, diag]) {
            for k in 0..3 {
                acc[k] += r[k] / 20.0;
            }
        }
    }
    let fmt = |r: [f64; 3]| format!("{:.2}/{:.2}/{:.2}", r[0], r[1], r[2]);
    Ok(format!(
        "20 seeds; mean r row/col/both: column_band {}, row_band {}, diagonal {}",
        fmt(sums[0]),
        fmt(sums[1]),
        fmt(sums[2])
    ))
}

/// `x = m·2^e` with an integer mantissa.
fn decompose(x: f64) -> (BigInt, i32) {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (m, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    let m = BigInt::from(m);
    (if x.is_sign_negative() { -m } else { m }, e)
}

/// Exact check of `|x - v·α/(β/2)| <= α/β`, i.e. `|β·x - 2v·α| <= α`.
fn within_half_step(x: f64, v: i64, alpha: f64, beta: u32) -> bool {
    let (mx, ex) = decompose(x);
    let (ma, ea) = decompose(alpha);
    let e = ex.min(ea);
    let xs = mx << (ex - e) as usize;
    let a = ma << (ea - e) as usize;
    let diff = xs * BigInt::from(beta) - BigInt::from(2 * v) * &a;
    diff >= -&a && diff <= a
}

fn random_float(rows: usize, cols: usize, seed: u64) -> FloatMatrix {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    FloatMatrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| normal.sample(&mut r)).collect(),
    )
    .unwrap()
}

fn frobenius_error(approx: &[f64], exact: &[f64]) -> f64 {
    approx
        .iter()
        .zip(exact)
        .map(|(a, e)| (a - e) * (a - e))
        .sum::<f64>()
        .sqrt()
}

fn quantization_error() -> Outcome {
    let mut checked = 0usize;
    for seed in 0..100 {
        let a = random_float(24, 24, 0x0A00 + seed);
        for beta in [3, 5, 7, 15, 31, 255] {
            let q = rtn_quantize(&a, 95.0, beta).map_err(|e| e.to_string())?;
            for (&x, &v) in a.data().iter().zip(q.q.data()) {
                if x.abs() <= q.params.alpha {
                    checked += 1;
                    if !within_half_step(x, v, q.params.alpha, beta) {
                        return Err(format!("seed {seed} beta {beta}: x = {x} -> {v}"));
                    }
                }
            }
        }
    }
    let mut ratio_sum = 0.0;
    for seed in 0..100 {
        let a = random_float(16, 32, 0x0B00 + seed);
        let b = random_float(12, 32, 0x0C00 + seed);
        let exact = naive_float_gemm(&a, &b);
        let err = |beta| -> Result<f64, String> {
            let qa = rtn_quantize(&a, 95.0, beta).map_err(|e| e.to_string())?;
            let qb = rtn_quantize(&b, 95.0, beta).map_err(|e| e.to_string())?;
            let c = dequant_gemm(&qa, &qb).map_err(|e| e.to_string())?;
            Ok(frobenius_error(c.data(), &exact))
        };
        let (fine, coarse) = (err(255)?, err(15)?);
        if fine >= coarse {
            return Err(format!(
                "seed {seed}: error at 255 = {fine} >= error at 15 = {coarse}"
            ));
        }
        ratio_sum += coarse / fine;
    }
    Ok(format!(
        "{checked} in-percentile entries within half a step (exact); beta 255 beats 15 on 100/100 trials (mean error ratio {:.1})",
        ratio_sum / 100.0
    ))
}

fn percentile_robustness() -> Outcome {
    let samples = heavy_tailed_samples(1_000_000, 0xFA7);
    let mut by_magnitude = samples.clone();
    by_magnitude.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    let trimmed = &by_magnitude[10..];
    let p = |v: &[f64], q| percentile_abs(v, q).unwrap();
    let (before, after) = (p(&samples, 95.0), p(trimmed, 95.0));
    let change = (before - after).abs() / before;
    let max_change = (p(&samples, 100.0) - p(trimmed, 100.0)).abs() / p(&samples, 100.0);
    let detail = format!(
        "alpha_95 {before:.6} -> {after:.6} ({:.4}%), alpha_100 moves {:.1}%",
        change * 100.0,
        max_change * 100.0
    );
    if change < 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn huffman_roundtrip() -> Outcome {
    let betas = [3, 5, 7, 15, 31, 255];
    let mut multi = 0;
    for i in 0..100u64 {
        let beta = betas[i as usize % betas.len()];
        let values = heavy_tailed_samples(32 * 32, 0x4AFF + i);
        let a = FloatMatrix::new(32, 32, values).unwrap();
        let q = rtn_quantize(&a, 95.0, beta).map_err(|e| e.to_string())?;
        let stats = huffman_stats(&q.q).map_err(|e| e.to_string())?;
        let stream = stats.table.encode(q.q.data()).map_err(|e| e.to_string())?;
        let back = stats.table.decode(&stream).map_err(|e| e.to_string())?;
        if back != q.q.data() {
            return Err(format!("fixture {i}: decode differs"));
        }
        if stats.distinct >= 2 {
            multi += 1;
            if stats.average_bits > stats.fixed_width_bits as f64 {
                return Err(format!(
                    "fixture {i}: {} avg bits > {} fixed",
                    stats.average_bits, stats.fixed_width_bits
                ));
            }
        }
    }
    Ok(format!(
        "100 fixtures roundtrip; avg <= fixed width on all {multi} with >= 2 symbols"
    ))
}

fn format_roundtrip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(0x1A41);
    let i32s = IntMatrix::new(5, 7, (0..35).map(|_| r.random::<i32>() as i64).collect()).unwrap();
    let mut i64s: Vec<i64> = (0..33).map(|_| r.random()).collect();
    i64s.extend([i64::MIN, i64::MAX, 1 << 40]);
    let i64s = IntMatrix::new(6, 6, i64s).unwrap();
    let mut floats: Vec<f64> = (0..20)
        .map(|_| f64::from_bits(r.random::<u64>()))
        .filter(|x| x.is_finite())
        .take(16)
        .collect();
    floats.extend([-0.0, 0.1, f64::MIN_POSITIVE / 8.0, f64::MAX]);
    let n = floats.len();
    let floats = FloatMatrix::new(1, n, floats).unwrap();

    let cases = [
        (MatrixData::Int(i32s), Dtype::I32),
        (MatrixData::Int(i64s.clone()), Dtype::I64),
        (MatrixData::Float(floats.clone()), Dtype::F64),
        (MatrixData::Int(IntMatrix::zeros(0, 3)), Dtype::I32),
    ];
    for (k, (m, dtype)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("m{k}.imx"));
        save_matrix(m, &path, *dtype).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let back = load_matrix(&path).map_err(|e| e.to_string())?;
        let same = match (m, &back) {
            (MatrixData::Float(x), MatrixData::Float(y)) => x
                .data()
                .iter()
                .map(|v| v.to_bits())
                .eq(y.data().iter().map(|v| v.to_bits())),
            _ => *m == back,
        };
        if !same || encode_matrix(&back, *dtype).map_err(|e| e.to_string())? != bytes {
            return Err(format!("{dtype} roundtrip differs"));
        }
    }

    let golden = std::fs::read(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/golden_2x2_i32.imx"
    ))
    .map_err(|e| e.to_string())?;
    let m = MatrixData::Int(IntMatrix::from_rows(&[[1, -2], [3, 4]]).unwrap());
    let bytes = encode_matrix(&m, Dtype::I32).map_err(|e| e.to_string())?;
    if bytes != golden || decode_matrix(&golden).map_err(|e| e.to_string())? != m {
        return Err("2x2 i32 bytes differ from the golden file".into());
    }
    Ok(format!(
        "i32/i64/f64 roundtrip bit-exact; 2x2 golden file matches ({} bytes)",
        golden.len()
    ))
}

fn main() -> ExitCode {
    let cases = random_cases(1000);
    let criteria: Vec<(&str, Check)> = vec![
        ("exact equivalence", Box::new(|| exact_equivalence(&cases))),
        (
            "in-bound guarantee",
            Box::new(|| in_bound_guarantee(&cases)),
        ),
        ("digit decomposition", Box::new(digit_reconstruction)),
        ("unpack ratio sanity", Box::new(|| ratio_sanity(&cases))),
        ("strategy ordering", Box::new(strategy_ordering)),
        ("quantization error bound", Box::new(quantization_error)),
        ("percentile robustness", Box::new(percentile_robustness)),
        ("huffman", Box::new(huffman_roundtrip)),
        ("imx1 format", Box::new(format_roundtrip)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {detail} [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<26} {detail} [{secs:.2}s]");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
