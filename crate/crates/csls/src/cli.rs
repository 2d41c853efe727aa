//! The `csls` command-line interface: every library operation as a
//! subcommand with stable flags, a fixed exit-code contract, and
//! machine-readable outputs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
//! failure. Diagnostics go to standard error; data goes to `--out` files or
//! standard output. The only environment variable consulted is `CSLS_LOG`
//! (any value other than empty or `0` turns on progress notes on standard
//! error); it is documented in `--help`.
//!
//! Each subcommand is a thin wrapper: it parses files and flags, calls the
//! one library operation it names, and serializes that operation's output.

use std::ffi::OsString;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibration::{ece, reliability_bins, BinningConfig, Grouping};
use crate::error::Error;
use crate::harness::ablation::{run_ablation, ExperimentConfig, Variant};
use crate::harness::model::TrainConfig;
use crate::io::{
    matrix_to_csv_string, read_matrix, read_nonneg_ints, write_matrix, MatrixFormat, BINARY_MAGIC,
};
use crate::labels::{LabelSet, SoftLabels};
use crate::matrix::Matrix;
use crate::prototypes::{
    compute_prototypes, cosine_similarity, modulate_similarity, PrototypeSet,
};
use crate::pseudo::{
    correct_pseudo_labels, filter_by_confidence, retrieve_unlabeled, Correction, CorrectionConfig,
    Repair,
};
use crate::smoothing::{
    smooth_similarity_stochastic, smooth_uniform, Orientation, SmoothingConfig, SmoothingMode,
};

const CONTRACT: &str = "\
Exit codes:
  0  success
  1  usage error (unknown flags or invalid flag values)
  2  data or validation error (unreadable, malformed, or inconsistent inputs)
  3  numerical failure

Diagnostics go to standard error; data goes to --out files or standard
output. Matrix inputs may be CSV (one row per line, comma-separated decimal
floats, LF line endings) or the CSLS binary format; the input format is
detected from the file's leading bytes, and --format picks the output
encoding. Setting CSLS_LOG to anything but empty or 0 turns on progress notes
on standard error; no other environment variable is read.";

/// Class-similarity label smoothing with rare-class boosting,
/// calibration-corrected pseudo-labels, and a desk-scale teacher-student
/// distillation simulator.
#[derive(Debug, Parser)]
#[command(name = "csls", version, propagate_version = true, after_help = CONTRACT)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mean-embedding class prototypes from labeled embeddings
    Prototypes(PrototypesArgs),
    /// Frequency-modulated row-stochastic similarity S' between prototypes
    Similarity(SimilarityArgs),
    /// Smoothed training targets: uniform or similarity-weighted
    Smooth(SmoothArgs),
    /// Reliability bins, aggregate ECE, and the signed per-class gap Delta
    Calibrate(CalibrateArgs),
    /// Fold a correction vector into teacher scores: y + lambda * Delta
    Correct(CorrectArgs),
    /// Drop rows whose maximum score falls below a confidence threshold
    Filter(FilterArgs),
    /// Exact cosine k-NN retrieval of pool rows near query embeddings
    Retrieve(RetrieveArgs),
    /// Teacher-student ablation on synthetic long-tail data
    Simulate(SimulateArgs),
}

/// A subcommand failure carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag values: exit 1.
    Usage(String),
    /// Unreadable, malformed, or mutually inconsistent data: exit 2.
    Data(String),
    /// Non-finite values in computation: exit 3.
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParam(_) => CliError::Usage(e.to_string()),
            Error::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Parses `argv`, runs one subcommand, and returns the process exit code.
/// Help and version requests exit 0; parse failures print clap's usage text
/// to standard error and exit 1.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version to stdout and errors to stderr.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("csls: error: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Prototypes(a) => cmd_prototypes(a),
        Command::Similarity(a) => cmd_similarity(a),
        Command::Smooth(a) => cmd_smooth(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Correct(a) => cmd_correct(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn verbose() -> bool {
    match std::env::var_os("CSLS_LOG") {
        Some(v) => !v.is_empty() && v != "0",
        None => false,
    }
}

fn vlog(msg: impl AsRef<str>) {
    if verbose() {
        eprintln!("csls: {}", msg.as_ref());
    }
}

// ---------------------------------------------------------------------------
// Shared argument groups and flag-value checks

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Csv,
    Binary,
}

impl From<OutFormat> for MatrixFormat {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => MatrixFormat::Csv,
            OutFormat::Binary => MatrixFormat::Binary,
        }
    }
}

#[derive(Debug, Args)]
struct MatrixOut {
    /// Output file (standard output if omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Output encoding; binary requires --out
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
}

/// How many classes a label file spans: given explicitly or inferred.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct ClassSpec {
    /// Total number of classes C; labels must lie in [0, C)
    #[arg(long, value_name = "C")]
    num_classes: Option<usize>,
    /// Infer the class count as the maximum label + 1
    #[arg(long)]
    infer_classes: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct CountSource {
    /// Label indices, one per line; class counts are tallied from them
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Per-class instance counts, one nonnegative integer per line
    #[arg(long, value_name = "FILE")]
    counts: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct DeltaSource {
    /// Signed per-class correction vector, one decimal float per line
    #[arg(long, value_name = "FILE")]
    delta: Option<PathBuf>,
    /// JSON report from `csls calibrate`; its "delta" field is used
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

fn check_unit_interval(flag: &str, v: f64) -> Result<(), CliError> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(CliError::Usage(format!(
            "invalid value for {flag}: {} must lie in [0, 1], got {v}",
            flag.trim_start_matches('-')
        )));
    }
    Ok(())
}

fn check_nonneg(flag: &str, v: f64) -> Result<(), CliError> {
    if !v.is_finite() || v < 0.0 {
        return Err(CliError::Usage(format!(
            "invalid value for {flag}: {} must be >= 0, got {v}",
            flag.trim_start_matches('-')
        )));
    }
    Ok(())
}

fn check_at_least_one(flag: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(CliError::Usage(format!(
            "invalid value for {flag}: {} must be >= 1",
            flag.trim_start_matches('-')
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// File helpers

/// Input matrices self-identify: the binary format begins with its magic
/// bytes, which no CSV float row can start with.
fn read_matrix_auto(path: &Path) -> Result<Matrix, CliError> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    let format = match file.read_exact(&mut magic) {
        Ok(()) if magic == BINARY_MAGIC => MatrixFormat::Binary,
        _ => MatrixFormat::Csv,
    };
    drop(file);
    let m = read_matrix(path, format)?;
    vlog(format!(
        "read {}x{} matrix from {}",
        m.rows(),
        m.cols(),
        path.display()
    ));
    Ok(m)
}

fn load_labels(path: &Path, classes: &ClassSpec) -> Result<LabelSet, CliError> {
    let ints = read_nonneg_ints(path)?;
    let set = match classes.num_classes {
        Some(c) => {
            check_at_least_one("--num-classes", c)?;
            LabelSet::new(ints, c)?
        }
        None => LabelSet::infer(ints)?,
    };
    Ok(set)
}

/// Labels sized against a known class count (taken from a matrix input).
fn load_labels_for(path: &Path, num_classes: usize) -> Result<LabelSet, CliError> {
    Ok(LabelSet::new(read_nonneg_ints(path)?, num_classes)?)
}

fn load_scores(path: &Path) -> Result<SoftLabels, CliError> {
    Ok(SoftLabels::from_matrix(read_matrix_auto(path)?)?)
}

fn emit_matrix(m: &Matrix, out: &MatrixOut) -> Result<(), CliError> {
    match (&out.out, out.format) {
        (None, OutFormat::Binary) => Err(CliError::Usage(
            "--format binary requires --out; binary data is not written to standard output".into(),
        )),
        (None, OutFormat::Csv) => {
            print!("{}", matrix_to_csv_string(m));
            Ok(())
        }
        (Some(path), format) => {
            write_matrix(m, path, format.into())?;
            vlog(format!(
                "wrote {}x{} matrix to {}",
                m.rows(),
                m.cols(),
                path.display()
            ));
            Ok(())
        }
    }
}

fn emit_text(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| Error::io(path, e))?;
            vlog(format!("wrote {}", path.display()));
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// prototypes

#[derive(Debug, Args)]
struct PrototypesArgs {
    /// N x D embedding matrix
    #[arg(long, value_name = "FILE")]
    embeddings: PathBuf,
    /// Label indices, one nonnegative integer per line
    #[arg(long, value_name = "FILE")]
    labels: PathBuf,
    #[command(flatten)]
    classes: ClassSpec,
    #[command(flatten)]
    output: MatrixOut,
}

fn cmd_prototypes(a: PrototypesArgs) -> Result<(), CliError> {
    let embeddings = read_matrix_auto(&a.embeddings)?;
    let labels = load_labels(&a.labels, &a.classes)?;
    let protos = compute_prototypes(&embeddings, &labels)?;
    if !protos.is_all_valid() {
        let empty: Vec<String> = protos
            .valid()
            .iter()
            .enumerate()
            .filter(|(_, &ok)| !ok)
            .map(|(c, _)| c.to_string())
            .collect();
        eprintln!(
            "csls: warning: no samples for class(es) {}; their prototype rows are zero",
            empty.join(", ")
        );
    }
    emit_matrix(protos.matrix(), &a.output)
}

// ---------------------------------------------------------------------------
// similarity

#[derive(Debug, Args)]
struct SimilarityArgs {
    /// C x D prototype matrix
    #[arg(long, value_name = "FILE")]
    prototypes: PathBuf,
    #[command(flatten)]
    counts_from: CountSource,
    /// Rare-class modulation exponent; gamma >= 0, 0 disables modulation
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    gamma: f64,
    #[command(flatten)]
    output: MatrixOut,
}

fn cmd_similarity(a: SimilarityArgs) -> Result<(), CliError> {
    check_nonneg("--gamma", a.gamma)?;
    let matrix = read_matrix_auto(&a.prototypes)?;
    let counts = match (&a.counts_from.labels, &a.counts_from.counts) {
        (Some(path), None) => load_labels_for(path, matrix.rows())?.class_counts(),
        (None, Some(path)) => read_nonneg_ints(path)?,
        _ => unreachable!("clap enforces exactly one count source"),
    };
    let protos = PrototypeSet::from_parts(matrix, counts)?;
    let sim = cosine_similarity(&protos)?;
    let modulated = modulate_similarity(&sim, protos.counts(), a.gamma)?;
    let sprime = modulated
        .modulated()
        .expect("modulate_similarity always fills the modulated component");
    emit_matrix(sprime, &a.output)
}

// ---------------------------------------------------------------------------
// smooth

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Uniform,
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OrientArg {
    /// Row i of S' distributes the smoothing mass of class i
    Row,
    /// Column j of S', renormalized, distributes the mass
    ColumnRenormalized,
}

impl From<OrientArg> for Orientation {
    fn from(o: OrientArg) -> Self {
        match o {
            OrientArg::Row => Orientation::Row,
            OrientArg::ColumnRenormalized => Orientation::ColumnRenormalized,
        }
    }
}

#[derive(Debug, Args)]
struct SmoothArgs {
    /// Label indices, one nonnegative integer per line
    #[arg(long, value_name = "FILE")]
    labels: PathBuf,
    #[command(flatten)]
    classes: ClassSpec,
    /// Smoothing strength; epsilon in [0, 1]
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    epsilon: f64,
    /// Where the epsilon mass goes
    #[arg(long, value_enum, default_value_t = ModeArg::Similarity)]
    mode: ModeArg,
    /// C x C row-stochastic S' matrix; required for --mode similarity
    #[arg(long, value_name = "FILE")]
    similarity: Option<PathBuf>,
    /// Which axis of S' carries a class's smoothing weights
    #[arg(long, value_enum, default_value_t = OrientArg::Row)]
    orientation: OrientArg,
    #[command(flatten)]
    output: MatrixOut,
}

fn cmd_smooth(a: SmoothArgs) -> Result<(), CliError> {
    check_unit_interval("--epsilon", a.epsilon)?;
    let onehot = load_labels(&a.labels, &a.classes)?.one_hot();
    let smoothed = match a.mode {
        ModeArg::Uniform => {
            if a.similarity.is_some() {
                return Err(CliError::Usage(
                    "--similarity only applies to --mode similarity".into(),
                ));
            }
            smooth_uniform(&onehot, a.epsilon)?
        }
        ModeArg::Similarity => {
            let path = a.similarity.as_ref().ok_or_else(|| {
                CliError::Usage("--mode similarity requires --similarity <FILE>".into())
            })?;
            let sprime = read_matrix_auto(path)?;
            let cfg = SmoothingConfig::new(
                a.epsilon,
                SmoothingMode::Similarity,
                a.orientation.into(),
            )?;
            smooth_similarity_stochastic(&onehot, &sprime, &cfg)?
        }
    };
    emit_matrix(smoothed.matrix(), &a.output)
}

// ---------------------------------------------------------------------------
// calibrate

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupArg {
    /// Group samples by argmax prediction, binned by the winning score
    Predicted,
    /// Group samples by true label, binned by that label's score
    True,
}

impl From<GroupArg> for Grouping {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Predicted => Grouping::PredictedClass,
            GroupArg::True => Grouping::TrueClass,
        }
    }
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// N x C row-stochastic score matrix
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
    /// True label indices, one per line; C is taken from the score matrix
    #[arg(long, value_name = "FILE")]
    labels: PathBuf,
    /// Number of equal-width confidence bins
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// How samples map to per-class statistics
    #[arg(long, value_enum, default_value_t = GroupArg::Predicted)]
    grouping: GroupArg,
    /// Output file for the JSON report (standard output if omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    check_at_least_one("--bins", a.bins)?;
    let scores = load_scores(&a.scores)?;
    let labels = load_labels_for(&a.labels, scores.num_classes())?;
    let cfg = BinningConfig::new(a.bins)?;
    let report = reliability_bins(&scores, &labels, &cfg, a.grouping.into())?;
    let aggregate = ece(&scores, &labels, &cfg)?;
    emit_text(&report.to_json(aggregate), a.out.as_deref())
}

// ---------------------------------------------------------------------------
// correct

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RepairArg {
    /// Clamp corrected rows to [0, 1] and renormalize to sum 1
    ClampRenormalize,
    /// Emit the raw offset rows without clamping or renormalizing
    None,
}

impl From<RepairArg> for Repair {
    fn from(r: RepairArg) -> Self {
        match r {
            RepairArg::ClampRenormalize => Repair::ClampRenormalize,
            RepairArg::None => Repair::None,
        }
    }
}

#[derive(Debug, Args)]
struct CorrectArgs {
    /// N x C row-stochastic teacher score matrix
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
    #[command(flatten)]
    delta_from: DeltaSource,
    /// Correction strength; lambda >= 0
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    lambda: f64,
    /// How out-of-range corrected rows are repaired
    #[arg(long, value_enum, default_value_t = RepairArg::ClampRenormalize)]
    repair: RepairArg,
    #[command(flatten)]
    output: MatrixOut,
}

fn load_delta(src: &DeltaSource) -> Result<Vec<f64>, CliError> {
    match (&src.delta, &src.report) {
        (Some(path), None) => Ok(crate::io::read_float_column(path)?),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: not valid JSON: {e}", path.display())))?;
            let arr = value
                .get("delta")
                .and_then(|d| d.as_array())
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "{}: report has no \"delta\" array",
                        path.display()
                    ))
                })?;
            arr.iter()
                .map(|v| {
                    v.as_f64().ok_or_else(|| {
                        CliError::Data(format!(
                            "{}: \"delta\" holds a non-numeric entry",
                            path.display()
                        ))
                    })
                })
                .collect()
        }
        _ => unreachable!("clap enforces exactly one delta source"),
    }
}

fn cmd_correct(a: CorrectArgs) -> Result<(), CliError> {
    check_nonneg("--lambda", a.lambda)?;
    let scores = load_scores(&a.scores)?;
    let delta = load_delta(&a.delta_from)?;
    let cfg = CorrectionConfig::new(a.lambda, a.repair.into())?;
    match correct_pseudo_labels(&scores, &delta, &cfg)? {
        Correction::Repaired {
            scores: corrected,
            fallback_rows,
        } => {
            if !fallback_rows.is_empty() {
                let rows: Vec<String> = fallback_rows.iter().map(|r| r.to_string()).collect();
                eprintln!(
                    "csls: note: {} row(s) clamped to zero mass and kept as given: {}",
                    fallback_rows.len(),
                    rows.join(", ")
                );
            }
            emit_matrix(corrected.matrix(), &a.output)
        }
        Correction::Raw(m) => emit_matrix(&m, &a.output),
    }
}

// ---------------------------------------------------------------------------
// filter

#[derive(Debug, Args)]
struct FilterArgs {
    /// N x C row-stochastic target matrix (corrected scores, per the
    /// filter-after-correction policy)
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
    /// Confidence threshold; rows with max score < threshold are dropped
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    threshold: f64,
    /// Also write the keep mask, one 0/1 per input row
    #[arg(long, value_name = "FILE")]
    mask_out: Option<PathBuf>,
    #[command(flatten)]
    output: MatrixOut,
}

fn cmd_filter(a: FilterArgs) -> Result<(), CliError> {
    check_unit_interval("--threshold", a.threshold)?;
    let scores = load_scores(&a.scores)?;
    let batch = filter_by_confidence(&scores, a.threshold)?;
    if let Some(path) = &a.mask_out {
        let mask: String = batch
            .keep_mask()
            .iter()
            .map(|&keep| if keep { "1\n" } else { "0\n" })
            .collect();
        fs::write(path, mask).map_err(|e| Error::io(path, e))?;
    }
    let kept = batch.kept_indices();
    eprintln!(
        "csls: kept {} of {} rows at threshold {}",
        kept.len(),
        scores.rows(),
        a.threshold
    );
    if kept.is_empty() {
        return Err(CliError::Data(format!(
            "no rows reach --threshold {}; refusing to emit an empty matrix",
            a.threshold
        )));
    }
    let cols = scores.num_classes();
    let mut data = Vec::with_capacity(kept.len() * cols);
    for &i in &kept {
        data.extend_from_slice(batch.corrected().row(i));
    }
    let m = Matrix::new(kept.len(), cols, data)?;
    emit_matrix(&m, &a.output)
}

// ---------------------------------------------------------------------------
// retrieve

#[derive(Debug, Args)]
struct RetrieveArgs {
    /// P x D pool embedding matrix (e.g. unlabeled data)
    #[arg(long, value_name = "FILE")]
    pool: PathBuf,
    /// Q x D query embedding matrix (e.g. rare-class prototypes)
    #[arg(long, value_name = "FILE")]
    queries: PathBuf,
    /// Neighbors per query; the output deduplicates across queries
    #[arg(long)]
    k: usize,
    /// Output file (standard output if omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn cmd_retrieve(a: RetrieveArgs) -> Result<(), CliError> {
    check_at_least_one("--k", a.k)?;
    let pool = read_matrix_auto(&a.pool)?;
    let queries = read_matrix_auto(&a.queries)?;
    let indices = retrieve_unlabeled(&pool, &queries, a.k)?;
    let mut text = String::new();
    for i in indices {
        text.push_str(&i.to_string());
        text.push('\n');
    }
    emit_text(&text, a.out.as_deref())
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Args)]
#[command(after_help = "\
The key=value file accepts one setting per line (# starts a comment). Keys
match the names in the emitted \"spec\" and \"config\" JSON objects:
  num_classes, zipf_exponent, total_labeled, total_unlabeled, dim,
  cluster_spread, class_center_scale, rare_threshold, test_per_class,
  pair_cosine, seed, epsilon, gamma, lambda, tau, num_bins, label_fractions,
  seeds, variants, recompute_delta, learning_rate, epochs, l2_weight,
  unsup_loss_weight, ema_decay, weak_noise_sigma, strong_noise_sigma,
  cosine_lr_decay
List values are comma-separated. Flags override the file; the file overrides
the built-in defaults. Noise sigmas re-derive from cluster_spread unless set
explicitly.")]
struct SimulateArgs {
    /// Flat key=value config file applied over the defaults
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Smoothing strength; epsilon in [0, 1]
    #[arg(long, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    /// Rare-class modulation exponent; gamma >= 0
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Correction strength; lambda >= 0
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Pseudo-label confidence threshold tau in [0, 1]
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Number of calibration bins
    #[arg(long)]
    bins: Option<usize>,
    /// Run a single seed (shorthand for --seeds with one entry)
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed grid
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated labeled fractions in (0, 1]
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Comma-separated variant names (default: all seven)
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Re-estimate Delta from the evolving teacher every epoch
    #[arg(long)]
    recompute_delta: bool,
    /// Output file for the JSON results (standard output if omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also write the per-row CSV flattening
    #[arg(long, value_name = "FILE")]
    csv_out: Option<PathBuf>,
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &a.config {
        apply_config_file(&mut cfg, path)?;
    }
    if let Some(v) = a.epsilon {
        check_unit_interval("--epsilon", v)?;
        cfg.epsilon = v;
    }
    if let Some(v) = a.gamma {
        check_nonneg("--gamma", v)?;
        cfg.gamma = v;
    }
    if let Some(v) = a.lambda {
        check_nonneg("--lambda", v)?;
        cfg.lambda = v;
    }
    if let Some(v) = a.threshold {
        check_unit_interval("--threshold", v)?;
        cfg.tau = v;
    }
    if let Some(v) = a.bins {
        check_at_least_one("--bins", v)?;
        cfg.num_bins = v;
    }
    if let Some(seed) = a.seed {
        cfg.spec.seed = seed;
        cfg.train.seed = seed;
        cfg.seeds = vec![seed];
    }
    if let Some(seeds) = &a.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(fractions) = &a.fractions {
        cfg.label_fractions = fractions.clone();
    }
    if let Some(names) = &a.variants {
        cfg.variants = parse_variants(names.iter().map(String::as_str))
            .map_err(CliError::Usage)?;
    }
    if a.recompute_delta {
        cfg.recompute_delta = true;
    }
    vlog(format!(
        "running {} cell(s): {} fraction(s) x {} seed(s), {} variant(s)",
        cfg.label_fractions.len() * cfg.seeds.len(),
        cfg.label_fractions.len(),
        cfg.seeds.len(),
        cfg.variants.len()
    ));
    let result = run_ablation(&cfg)?;
    if let Some(path) = &a.csv_out {
        fs::write(path, result.to_csv()).map_err(|e| Error::io(path, e))?;
        vlog(format!("wrote {}", path.display()));
    }
    emit_text(&result.to_json(), a.out.as_deref())
}

fn parse_variants<'a>(names: impl Iterator<Item = &'a str>) -> Result<Vec<Variant>, String> {
    let mut out = Vec::new();
    for name in names {
        let v = Variant::from_name(name.trim()).ok_or_else(|| {
            let valid: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
            format!("unknown variant {name:?}; valid names: {}", valid.join(", "))
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Applies a flat key=value file. Dataset keys land first so that train
/// defaults re-derive from the final spec before any explicit train keys.
fn apply_config_file(cfg: &mut ExperimentConfig, path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected key=value, got {raw:?}",
                path.display(),
                idx + 1
            ))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string(), idx + 1));
    }

    let spec_keys = [
        "num_classes",
        "zipf_exponent",
        "total_labeled",
        "total_unlabeled",
        "dim",
        "cluster_spread",
        "class_center_scale",
        "rare_threshold",
        "test_per_class",
        "pair_cosine",
        "seed",
    ];
    let mut spec_touched = false;
    for (key, value, line) in &pairs {
        if !spec_keys.contains(&key.as_str()) {
            continue;
        }
        spec_touched = true;
        apply_spec_key(cfg, key, value)
            .map_err(|msg| config_err(path, *line, key, &msg))?;
    }
    if spec_touched {
        let seed = cfg.spec.seed;
        cfg.train = TrainConfig::defaults_for(&cfg.spec);
        cfg.train.seed = seed;
    }
    for (key, value, line) in &pairs {
        if spec_keys.contains(&key.as_str()) {
            continue;
        }
        apply_other_key(cfg, key, value)
            .map_err(|msg| config_err(path, *line, key, &msg))?;
    }
    Ok(())
}

fn config_err(path: &Path, line: usize, key: &str, msg: &str) -> CliError {
    CliError::Usage(format!("{}:{line}: {key}: {msg}", path.display()))
}

fn apply_spec_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    let spec = &mut cfg.spec;
    match key {
        "num_classes" => spec.num_classes = parse_num(value)?,
        "zipf_exponent" => spec.zipf_exponent = parse_num(value)?,
        "total_labeled" => spec.total_labeled = parse_num(value)?,
        "total_unlabeled" => spec.total_unlabeled = parse_num(value)?,
        "dim" => spec.dim = parse_num(value)?,
        "cluster_spread" => spec.cluster_spread = parse_num(value)?,
        "class_center_scale" => spec.class_center_scale = parse_num(value)?,
        "rare_threshold" => spec.rare_threshold = parse_num(value)?,
        "test_per_class" => spec.test_per_class = parse_num(value)?,
        "pair_cosine" => spec.pair_cosine = parse_num(value)?,
        "seed" => spec.seed = parse_num(value)?,
        _ => unreachable!("caller filtered to spec keys"),
    }
    Ok(())
}

fn apply_other_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "epsilon" => cfg.epsilon = parse_num(value)?,
        "gamma" => cfg.gamma = parse_num(value)?,
        "lambda" => cfg.lambda = parse_num(value)?,
        "tau" => cfg.tau = parse_num(value)?,
        "num_bins" => cfg.num_bins = parse_num(value)?,
        "label_fractions" => cfg.label_fractions = parse_list(value)?,
        "seeds" => cfg.seeds = parse_list(value)?,
        "variants" => cfg.variants = parse_variants(value.split(','))?,
        "recompute_delta" => cfg.recompute_delta = parse_bool(value)?,
        "learning_rate" => cfg.train.learning_rate = parse_num(value)?,
        "epochs" => cfg.train.epochs = parse_num(value)?,
        "l2_weight" => cfg.train.l2_weight = parse_num(value)?,
        "unsup_loss_weight" => cfg.train.unsup_loss_weight = parse_num(value)?,
        "ema_decay" => cfg.train.ema_decay = parse_num(value)?,
        "weak_noise_sigma" => cfg.train.weak_noise_sigma = parse_num(value)?,
        "strong_noise_sigma" => cfg.train.strong_noise_sigma = parse_num(value)?,
        "cosine_lr_decay" => cfg.train.cosine_lr_decay = parse_bool(value)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?}"))
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String> {
    value.split(',').map(|v| parse_num(v.trim())).collect()
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(format!("expected true/false, got {value:?}")),
    }
}
