use std::fmt;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use imunpack::quant::huffman_stats;
use imunpack::report::analyze_pair;
use imunpack::unpack::choose_mix_among;
use imunpack::workload::{GemmShape, TransformerDims};
use imunpack::{
    exact_gemm, gen_matrix, load_matrix, rtn_quantize_with, save_matrix, stats_report,
    AnalysisReport, BitBound, Dtype, IntMatrix, MatrixData, OutlierSpec, Pattern, RtnOptions,
    Strategy,
};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "imunpack",
    version,
    about = "Exact low bit-width integer GEMM by matrix unpacking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Percentile-scaled round-to-nearest quantization of a float matrix.
    Quantize(QuantizeArgs),
    /// Exact A·Bᵀ through In-Bound GEMMs only.
    Matmul(MatmulArgs),
    /// Unpack ratios of every strategy pair plus Mix.
    Analyze(AnalyzeArgs),
    /// Generate a seeded matrix with heavy hitters.
    Gen(GenArgs),
    /// Heavy-hitter statistics of a matrix.
    Stats(StatsArgs),
    /// Huffman cost of a quantized matrix.
    Compress(CompressArgs),
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 95.0)]
    p: f64,
    #[arg(long)]
    beta: u32,
    #[arg(long)]
    out: PathBuf,
    /// Clamp entries to the percentile before scaling.
    #[arg(long)]
    clip: bool,
    #[arg(long)]
    dtype: Option<Dtype>,
}

/// A fixed strategy or `mix`.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Choice {
    Fixed(Strategy),
    Mix,
}

impl FromStr for Choice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("mix") {
            Ok(Choice::Mix)
        } else {
            s.parse().map(Choice::Fixed)
        }
    }
}

impl Choice {
    fn options(self) -> Vec<Strategy> {
        match self {
            Choice::Fixed(s) => vec![s],
            Choice::Mix => Strategy::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct MatmulArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    bits: u32,
    /// row, col, both or mix.
    #[arg(long, default_value = "mix")]
    strategy_a: Choice,
    #[arg(long, default_value = "mix")]
    strategy_b: Choice,
    /// Compare against the plain 64-bit product and fail on any mismatch.
    #[arg(long)]
    check_oracle: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dtype: Option<Dtype>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, required_unless_present = "synthetic")]
    a: Option<PathBuf>,
    #[arg(long, required_unless_present = "synthetic")]
    b: Option<PathBuf>,
    /// Comma-separated bit-widths.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    bits: Vec<u32>,
    /// Written to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "gemm")]
    shape: String,
    /// Quantize float inputs with this many levels first.
    #[arg(long)]
    beta: Option<u32>,
    #[arg(long, default_value_t = 95.0)]
    p: f64,
    /// Analyze seeded fixtures for the nine transformer GEMMs instead of files.
    #[arg(long, conflicts_with_all = ["a", "b"])]
    synthetic: bool,
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    seq: usize,
    #[arg(long, default_value_t = 24)]
    d_model: usize,
    #[arg(long, default_value_t = 48)]
    d_out: usize,
    #[arg(long, default_value_t = 8)]
    head_dim: usize,
    #[arg(long, default_value_t = 0.02)]
    fraction: f64,
    #[arg(long, default_value_t = 100.0)]
    ratio: f64,
    #[arg(long, default_value_t = 7)]
    body: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    /// row_band, column_band, diagonal or scattered.
    #[arg(long)]
    pattern: Pattern,
    #[arg(long)]
    fraction: f64,
    /// Largest outlier magnitude as a multiple of the body range.
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 7)]
    body: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dtype: Option<Dtype>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Lib(imunpack::Error),
    OracleMismatch {
        row: usize,
        col: usize,
        expected: i64,
        got: i64,
    },
    Usage(String),
    Io(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Lib(e) => e.kind(),
            CliError::OracleMismatch { .. } => "oracle_mismatch",
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::OracleMismatch { row, col, expected, got } => write!(
                f,
                "unpacked product differs from the oracle at [{row}, {col}]: expected {expected}, got {got}"
            ),
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<imunpack::Error> for CliError {
    fn from(e: imunpack::Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn emit<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    match path {
        Some(p) => {
            fs::write(p, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
        }
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(CliError::Io(e.to_string())),
            _ => Ok(()),
        },
    }
}

fn load_int(path: &Path) -> CliResult<IntMatrix> {
    Ok(load_matrix(path)?.into_int()?)
}

fn save(m: MatrixData, path: &Path, dtype: Option<Dtype>) -> CliResult<()> {
    let dtype = dtype.unwrap_or_else(|| m.natural_dtype());
    Ok(save_matrix(&m, path, dtype)?)
}

fn quantize(args: QuantizeArgs) -> CliResult<()> {
    let a = load_matrix(&args.input)?.into_float();
    let q = rtn_quantize_with(&a, args.p, args.beta, RtnOptions { clip: args.clip })?;
    let summary = json!({
        "rows": q.q.rows(),
        "cols": q.q.cols(),
        "p": q.params.p,
        "beta": q.params.beta,
        "alpha": q.params.alpha,
        "scale": q.params.scale(),
        "degenerate": q.degenerate,
        "max_abs": q.q.max_abs(),
    });
    save(MatrixData::Int(q.q), &args.out, args.dtype)?;
    emit(&summary, None)
}

fn matmul(args: MatmulArgs) -> CliResult<()> {
    let a = load_int(&args.a)?;
    let b = load_int(&args.b)?;
    let bound = BitBound::new(args.bits)?;
    let choice = choose_mix_among(
        &a,
        &b,
        bound,
        &args.strategy_a.options(),
        &args.strategy_b.options(),
    )?;
    let c = choice.unpacked.recombine()?;
    if args.check_oracle {
        let expected = exact_gemm(&a, &b)?;
        if let Some(k) = (0..c.data().len()).find(|&k| c.data()[k] != expected.data()[k]) {
            return Err(CliError::OracleMismatch {
                row: k / c.cols(),
                col: k % c.cols(),
                expected: expected.data()[k],
                got: c.data()[k],
            });
        }
    }
    let summary = json!({
        "bits": args.bits,
        "strategy_a": choice.strategy_a,
        "strategy_b": choice.strategy_b,
        "ratio": choice.ratio,
        "dims": choice.unpacked.original,
        "unpacked_dims": choice.unpacked.dims(),
        "oracle_checked": args.check_oracle,
    });
    if let Some(out) = &args.out {
        save(MatrixData::Int(c), out, args.dtype)?;
    }
    emit(&summary, None)
}

fn as_int(m: MatrixData, beta: Option<u32>, p: f64) -> CliResult<IntMatrix> {
    match (m, beta) {
        (MatrixData::Int(m), None) => Ok(m),
        (m, Some(beta)) => {
            Ok(rtn_quantize_with(&m.into_float(), p, beta, RtnOptions::default())?.q)
        }
        (MatrixData::Float(_), None) => Err(CliError::Usage(
            "float input needs --beta to be quantized first".into(),
        )),
    }
}

fn analyze(args: AnalyzeArgs) -> CliResult<()> {
    let report = if args.synthetic {
        let s = &args.synth;
        let dims = TransformerDims {
            seq: s.seq,
            d_model: s.d_model,
            d_out: s.d_out,
            head_dim: s.head_dim,
        };
        let base = OutlierSpec::new(Pattern::Scattered, s.fraction, s.ratio, s.body, s.seed);
        let mut report = AnalysisReport::new(Some(s.seed));
        for shape in GemmShape::transformer_set(dims) {
            let (a, b) = shape.fixture_pair(&base)?;
            report.records.extend(analyze_pair(
                shape.kind.name(),
                args.beta,
                &a,
                &b,
                &args.bits,
            )?);
        }
        report
    } else {
        let load = |p: &Option<PathBuf>| -> CliResult<IntMatrix> {
            let path = p.as_ref().expect("required by clap");
            as_int(load_matrix(path)?, args.beta, args.p)
        };
        let (a, b) = (load(&args.a)?, load(&args.b)?);
        let mut report = AnalysisReport::new(None);
        report.records = analyze_pair(&args.shape, args.beta, &a, &b, &args.bits)?;
        report
    };
    if let Some(r) = report.records.iter().find(|r| !r.equivalent) {
        return Err(CliError::Lib(imunpack::Error::InvalidSpec(format!(
            "{} ({}, {}) at b = {} is not exact",
            r.shape, r.strategy_a, r.strategy_b, r.bits
        ))));
    }
    emit(&report, args.report.as_deref())
}

fn gen(args: GenArgs) -> CliResult<()> {
    let spec = OutlierSpec::new(
        args.pattern,
        args.fraction,
        args.ratio,
        args.body,
        args.seed,
    );
    let m = gen_matrix(args.rows, args.cols, &spec)?;
    let summary = json!({
        "rows": args.rows,
        "cols": args.cols,
        "spec": spec,
        "outliers": spec.outlier_count(args.rows, args.cols),
        "max_abs": m.max_abs(),
    });
    save(MatrixData::Int(m), &args.out, args.dtype)?;
    emit(&summary, None)
}

fn stats(args: StatsArgs) -> CliResult<()> {
    let report = match load_matrix(&args.input)? {
        MatrixData::Int(m) => stats_report(&m)?,
        MatrixData::Float(m) => stats_report(&m)?,
    };
    emit(&report, args.report.as_deref())
}

fn compress(args: CompressArgs) -> CliResult<()> {
    let q = load_int(&args.input)?;
    emit(&huffman_stats(&q)?, args.report.as_deref())
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("IMUNPACK_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "IMUNPACK_THREADS must be a positive integer, got '{value}'"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Quantize(a) => quantize(a),
        Command::Matmul(a) => matmul(a),
        Command::Analyze(a) => analyze(a),
        Command::Gen(a) => gen(a),
        Command::Stats(a) => stats(a),
        Command::Compress(a) => compress(a),
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!(
        "{}",
        json!({ "error": { "kind": kind, "message": message } })
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().trim_end());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
