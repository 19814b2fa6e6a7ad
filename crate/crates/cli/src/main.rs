use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fairlens_core::data::synthetic::{generate, write_bundle, SyntheticConfig};
use fairlens_core::data::{ingest, DatasetManifest, PerturbationPolicy};
use fairlens_core::experiments::{timing_bench, BenchConfig, TimingRecord};
use fairlens_core::learners::parse_learners;
use fairlens_core::pipeline::{
    parse_forms, run_audit, run_experiment, validate_manifest, write_experiment, AuditConfig, ExperimentConfig,
    MetricSelection,
};
use fairlens_core::predictions::{PredictionSet, DEFAULT_THRESHOLD};
use fairlens_core::procedural::JudgmentMatrix;
use fairlens_core::report::{to_json, write_json};
use fairlens_core::{FairError, Form, ProbeKind};

/// Fairness audits, timing benchmarks and experiment pipelines over tabular
/// data described by a JSON manifest.
#[derive(Parser)]
#[command(name = "fairlens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a dataset and check it against the manifest's expected counts.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write validation.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute fairness metrics for supplied or built-in predictions.
    Audit(AuditArgs),
    /// Time metric forms over a synthetic grid.
    Bench(BenchArgs),
    /// Cross-validate learners and write the plot-data tables.
    Experiment(ExperimentArgs),
    /// Write a synthetic dataset and its manifest.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Comma-separated forms, e.g. `binarised,ext,alt`.
    #[arg(long)]
    forms: Option<String>,
    /// HFM anchors per group; HFM is exact when unset and n is small.
    #[arg(long)]
    approx_budget: Option<usize>,
    /// Fraction of rows perturbed for DR; all rows when unset.
    #[arg(long)]
    perturb_rate: Option<f64>,
    /// Keep wall times in the outputs (they make outputs non-reproducible).
    #[arg(long)]
    record_timings: bool,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `row_id,hard[,score]` CSV. Built-in held-out predictions when absent.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Comma-separated metric ids or prefixes (`dp`, `hfm`, `gei`, `all`).
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long, default_value = "bagging(20)")]
    learners: String,
    /// Output directory for report.json (and metrics.csv with --format csv).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Differential fairness smoothing.
    #[arg(long, default_value_t = 0.5)]
    kappa: f64,
    /// GEI exponent.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// BER threshold for the attribute-predictability audit.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Disparate impact pass threshold.
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    /// Bounded group loss threshold.
    #[arg(long, default_value_t = 0.3)]
    xi: f64,
    /// Multiaccuracy tolerance.
    #[arg(long, default_value_t = 0.05)]
    multiacc_alpha: f64,
    /// Score threshold for hard predictions.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Judgment tables stem: reads <stem>.apr.csv, .acc.csv and .disp.csv.
    #[arg(long)]
    judgments: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "2000,4000", value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value = "2,6,12,36", value_delimiter = ',')]
    value_counts: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Comma-separated probes: dp, eopp, peq, ppar, npv.
    #[arg(long, default_value = "dp")]
    metrics: String,
    #[arg(long, default_value = "binarised,ext,alt,ext_avg,alt_avg")]
    forms: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    approx_budget: usize,
    /// Largest n for which HFM rows are timed.
    #[arg(long, default_value_t = 4000)]
    hfm_max_n: usize,
    #[arg(long)]
    no_hfm: bool,
    /// Directory for timing.csv; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "stump,bagging(20),adaboost(50),logreg(200,0.5)")]
    learners: String,
    /// Attribute whose forms are compared; `a*b` for a super attribute.
    #[arg(long)]
    attribute: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value = "1000,2000", value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value = "2,6,12,36", value_delimiter = ',')]
    value_counts: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "synthetic")]
    stem: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    features: usize,
    /// Value count per sensitive attribute.
    #[arg(long, default_value = "3,2", value_delimiter = ',')]
    attribute_sizes: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    label_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// 0 success, 1 metric or validation failure, 2 i/o or configuration error.
fn exit_code(e: &FairError) -> u8 {
    match e {
        FairError::Io { .. }
        | FairError::Csv(_)
        | FairError::Json(_)
        | FairError::Manifest(_)
        | FairError::MissingColumn(_)
        | FairError::InvalidArgument(_)
        | FairError::UnknownMetric(_)
        | FairError::UnknownFeature(_) => 2,
        _ => 1,
    }
}

fn policy(rate: Option<f64>) -> PerturbationPolicy {
    match rate {
        Some(p) => PerturbationPolicy::Rate { p },
        None => PerturbationPolicy::FlipAll,
    }
}

fn forms_or_all(list: Option<&str>) -> Result<Vec<Form>, FairError> {
    list.map(parse_forms).unwrap_or_else(|| Ok(Form::ALL.to_vec()))
}

fn ensure_dir(dir: &Path) -> Result<(), FairError> {
    std::fs::create_dir_all(dir).map_err(|e| FairError::io(dir, e))
}

fn load(manifest: &Path) -> Result<fairlens_core::Dataset, FairError> {
    ingest(&DatasetManifest::from_path(manifest)?)
}

fn cmd_validate(manifest: &Path, out: Option<&Path>) -> Result<u8, FairError> {
    let m = DatasetManifest::from_path(manifest)?;
    let (_, report) = validate_manifest(&m)?;
    print!("{}", to_json(&report)?);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&report, &dir.join("validation.json"))?;
    }
    if !report.matches {
        for d in &report.mismatches {
            eprintln!("mismatch: {d}");
        }
        return Ok(1);
    }
    Ok(0)
}

fn cmd_audit(a: &AuditArgs) -> Result<u8, FairError> {
    let metrics = match &a.metrics {
        Some(list) => MetricSelection::parse(list, a.alpha)?,
        None => MetricSelection::default(),
    };
    let cfg = AuditConfig {
        seed: a.common.seed,
        k: a.common.k,
        learners: parse_learners(&a.learners)?,
        metrics,
        forms: forms_or_all(a.common.forms.as_deref())?,
        approx_budget: a.common.approx_budget,
        kappa: a.kappa,
        alpha: a.alpha,
        epsilon: a.epsilon,
        tau: a.tau,
        xi: a.xi,
        multiacc_alpha: a.multiacc_alpha,
        perturbation: policy(a.common.perturb_rate),
        record_timings: a.common.record_timings,
        ..Default::default()
    };
    let ds = load(&a.manifest)?;
    let predictions = match &a.predictions {
        Some(p) => Some(PredictionSet::read_csv(p, ds.n_rows(), a.threshold)?),
        None => None,
    };
    let judgments = a.judgments.as_deref().map(JudgmentMatrix::load).transpose()?;
    let report = run_audit(&ds, predictions, judgments.as_ref(), &cfg)?;
    match &a.out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_json(&report, &dir.join("report.json"))?;
            if let Format::Csv = a.format {
                let path = dir.join("metrics.csv");
                let file = std::fs::File::create(&path).map_err(|e| FairError::io(&path, e))?;
                report.write_metrics_csv(std::io::BufWriter::new(file))?;
            }
            eprintln!(
                "{} metrics: {} ok, {} skipped, {} error",
                report.metrics.len(),
                report.summary.ok,
                report.summary.skipped,
                report.summary.error
            );
        }
        None => match a.format {
            Format::Json => print!("{}", to_json(&report)?),
            Format::Csv => report.write_metrics_csv(std::io::stdout().lock())?,
        },
    }
    for row in report.metrics.iter().filter(|m| m.message.is_some() && m.value.is_none()) {
        if row.status == fairlens_core::report::Status::Error {
            eprintln!(
                "error: {} [{}]: {}",
                row.id,
                row.attribute.as_deref().unwrap_or("dataset"),
                row.message.as_deref().unwrap_or_default()
            );
        }
    }
    Ok(u8::from(report.has_errors()))
}

fn cmd_bench(b: &BenchArgs) -> Result<u8, FairError> {
    let probes = b
        .metrics
        .split(',')
        .map(str::trim)
        .map(|p| ProbeKind::from_prefix(p).ok_or_else(|| FairError::UnknownMetric(p.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = BenchConfig {
        sizes: b.sizes.clone(),
        value_counts: b.value_counts.clone(),
        repetitions: b.repetitions,
        seed: b.seed,
        probes,
        forms: parse_forms(&b.forms)?,
        hfm: !b.no_hfm,
        hfm_max_n: b.hfm_max_n,
        approx_budget: b.approx_budget,
        record_times: true,
    };
    let records = timing_bench(&cfg)?;
    match &b.out {
        Some(dir) => {
            ensure_dir(dir)?;
            let path = dir.join("timing.csv");
            let file = std::fs::File::create(&path).map_err(|e| FairError::io(&path, e))?;
            TimingRecord::write_csv(&records, std::io::BufWriter::new(file))?;
            eprintln!("{} timing rows written to {}", records.len(), path.display());
        }
        None => TimingRecord::write_csv(&records, std::io::stdout().lock())?,
    }
    Ok(0)
}

fn cmd_experiment(e: &ExperimentArgs) -> Result<u8, FairError> {
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        seed: e.common.seed,
        k: e.common.k,
        learners: parse_learners(&e.learners)?,
        attribute: e.attribute.clone(),
        forms: forms_or_all(e.common.forms.as_deref())?,
        alpha: e.alpha,
        approx_budget: e.common.approx_budget.unwrap_or(defaults.approx_budget),
        perturbation: policy(e.common.perturb_rate),
        bench: BenchConfig {
            sizes: e.sizes.clone(),
            value_counts: e.value_counts.clone(),
            repetitions: e.repetitions,
            record_times: e.common.record_timings,
            ..defaults.bench.clone()
        },
        ..defaults
    };
    let ds = load(&e.manifest)?;
    let outputs = run_experiment(&ds, &cfg)?;
    let written = write_experiment(&outputs, &e.out)?;
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(0)
}

fn cmd_synth(s: &SynthArgs) -> Result<u8, FairError> {
    let ds = generate(&SyntheticConfig {
        n: s.n,
        n_features: s.features,
        attribute_sizes: s.attribute_sizes.clone(),
        label_rates: None,
        label_noise: s.label_noise,
        seed: s.seed,
    })?;
    let (csv, manifest) = write_bundle(&ds, &s.out, &s.stem)?;
    eprintln!("wrote {} and {}", csv.display(), manifest.display());
    Ok(0)
}

fn configure_threads() -> Result<(), FairError> {
    let Ok(raw) = std::env::var("FAIRLENS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| FairError::invalid(format!("FAIRLENS_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| FairError::invalid(format!("cannot configure thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Validate { manifest, out } => cmd_validate(manifest, out.as_deref()),
        Command::Audit(a) => cmd_audit(a),
        Command::Bench(b) => cmd_bench(b),
        Command::Experiment(e) => cmd_experiment(e),
        Command::Synth(s) => cmd_synth(s),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
