//! The `margin-probe` command line.
//!
//! Exit codes: 0 on success, 1 when data or computation fails, 2 on usage
//! errors (unknown flags, missing or malformed arguments).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::adaptation::{self, AdaptationReport, SurrogateLinkProfile};
use crate::analysis::{self, FillSweepConfig, FrequencySweepConfig, Rounding, Summary};
use crate::bayes_ridge::{BayesRidgeModel, FitOptions};
use crate::config::RunConfig;
use crate::dataset::{self, ProbeRecord};
use crate::error::Error;
use crate::features::{RawFeatures, N_RAW};
use crate::manifest::Manifest;
use crate::stats;

#[derive(Debug, Parser)]
#[command(name = "margin-probe", version, about = "Fully loaded system margin estimation for DWDM lightpaths")]
pub struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (overrides the config file; 0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled dataset with the GN engine.
    GenDataset(GenDatasetArgs),
    /// Fit a Bayesian ridge model on the training split of a dataset.
    Train(TrainArgs),
    /// RMSE of a model on a dataset.
    Evaluate(EvaluateArgs),
    /// Predicted margin and standard deviation for feature rows.
    Predict(PredictArgs),
    /// RMSE against fill-feature granularity, original and retrained.
    SweepGranularity(GranularityArgs),
    /// Run the probing campaign on a surrogate link.
    SurrogateMeasure(SurrogateArgs),
    /// Fit a few-shot recalibration on surrogate measurements.
    Adapt(AdaptArgs),
    /// Emit the data behind one evaluation figure.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenDatasetArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    out: PathBuf,
    /// 96 fixed 50 GHz slots with ASE interferers and a 35 GBd CUT.
    #[arg(long)]
    experimental_grid: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitPart {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Rows to score; splits use the seed stored in the model.
    #[arg(long, value_enum, default_value = "all")]
    split: SplitPart,
    /// Recalibration produced by `adapt`.
    #[arg(long)]
    recal: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    recal: Option<PathBuf>,
    /// One row: snr_current_db,p_ch_dbm,center_freq_thz,n_spans,fill_fraction
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    features: Option<String>,
    /// Dataset whose rows are predicted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GranularityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Granularities in percent.
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20,25,30,40,50")]
    granularities: Vec<f64>,
    /// Overrides the configured rounding.
    #[arg(long, value_enum)]
    rounding: Option<RoundingArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoundingArg {
    Nearest,
    Floor,
    Ceil,
}

impl From<RoundingArg> for Rounding {
    fn from(r: RoundingArg) -> Self {
        match r {
            RoundingArg::Nearest => Rounding::Nearest,
            RoundingArg::Floor => Rounding::Floor,
            RoundingArg::Ceil => Rounding::Ceil,
        }
    }
}

#[derive(Debug, Args)]
struct SurrogateArgs {
    /// Link profile (TOML); defaults to the 2-span profile.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportKind {
    Hist,
    Freq,
    Fill,
    Granularity,
    Power,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, value_enum)]
    kind: ReportKind,
    #[arg(long)]
    model: PathBuf,
    /// Dataset (hist, granularity).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Surrogate measurements (power; hist with --recal).
    #[arg(long)]
    measurements: Option<PathBuf>,
    #[arg(long)]
    recal: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitPart,
    /// Histogram bin width in dB (overrides the config file).
    #[arg(long)]
    bin_width: Option<f64>,
    /// Realizations per sweep (overrides the config file).
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20,25,30,40,50")]
    granularities: Vec<f64>,
    #[arg(long, value_enum)]
    rounding: Option<RoundingArg>,
    /// CUT frequency of the power sweep.
    #[arg(long, default_value_t = 193.625)]
    center: f64,
    /// Fill level of the power sweep.
    #[arg(long, default_value_t = 0.30)]
    fill: f64,
    /// Output prefix; writes PREFIX.csv and PREFIX.json.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Data(e)) => {
            eprintln!("error[{}]: {e}", e.kind());
            1
        }
    }
}

fn execute(cli: Cli) -> CliResult {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.effective_workers())
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start workers: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenDataset(a) => gen_dataset(&config, a),
        Command::Train(a) => train(&config, a),
        Command::Evaluate(a) => evaluate(&config, a),
        Command::Predict(a) => predict(&config, a),
        Command::SweepGranularity(a) => sweep_granularity(&config, a),
        Command::SurrogateMeasure(a) => surrogate_measure(&config, a),
        Command::Adapt(a) => adapt(&config, a),
        Command::Report(a) => report(&config, a),
    })
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    println!("{}", serde_json::to_string_pretty(value).map_err(Error::from)?);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn gen_dataset(config: &RunConfig, a: GenDatasetArgs) -> CliResult {
    let mut config = config.clone();
    config.experimental_grid |= a.experimental_grid;
    let out = config.resolve(&a.out);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    let summary = dataset::generate_to_file(
        a.rows,
        config.seed,
        &config.dataset(),
        config.effective_workers(),
        &out,
        |done, total| eprintln!("rows {done}/{total}"),
    )?;
    Manifest::new("gen-dataset", &config)
        .arg("rows", a.rows)
        .arg("experimental_grid", config.experimental_grid)
        .output(&out)
        .output(&dataset::ledger_path(&out))
        .write_beside(&out)?;
    print_json(&summary)
}

fn load_split(path: &Path, seed: u64, part: SplitPart) -> CliResult<Vec<ProbeRecord>> {
    let rows = dataset::read_csv(path)?;
    if part == SplitPart::All {
        return Ok(rows);
    }
    let s = dataset::split(&rows, seed)?;
    Ok(match part {
        SplitPart::Train => s.train,
        SplitPart::Validation => s.validation,
        _ => s.test,
    })
}

fn features_and_labels(rows: &[ProbeRecord]) -> (Vec<RawFeatures>, Vec<f64>) {
    (rows.iter().map(ProbeRecord::features).collect(), rows.iter().map(|r| r.margin_db).collect())
}

fn error_summary(errors: &[f64]) -> Summary {
    Summary::from([
        ("n".to_string(), errors.len() as f64),
        ("rmse_db".to_string(), stats::rmse(errors)),
        ("mean_error_db".to_string(), stats::mean(errors)),
        ("std_error_db".to_string(), stats::std_dev(errors)),
    ])
}

fn train(config: &RunConfig, a: TrainArgs) -> CliResult {
    let rows = dataset::read_csv(&a.data)?;
    let split = dataset::split(&rows, config.seed)?;
    let (x, y) = features_and_labels(&split.train);
    let (model, _trace) = BayesRidgeModel::fit(&x, &y, config.seed, &FitOptions::default())?;
    let out = config.resolve(&a.out);
    write_text(&out, &(model.to_json()? + "\n"))?;
    Manifest::new("train", config)
        .seed("split", config.seed)
        .input(&a.data)?
        .output(&out)
        .write_beside(&out)?;
    let mut summary = Summary::new();
    for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        summary.insert(format!("n_{name}"), part.len() as f64);
        if !part.is_empty() {
            summary.insert(
                format!("rmse_{name}_db"),
                stats::rmse(&analysis::prediction_errors(&model, None, part)),
            );
        }
    }
    summary.insert("iterations".into(), model.meta.iterations as f64);
    summary.insert("converged".into(), f64::from(u8::from(model.meta.converged)));
    summary.insert("log_evidence".into(), model.meta.log_evidence);
    print_json(&summary)
}

fn load_recal(path: Option<&PathBuf>) -> CliResult<Option<adaptation::Recalibration>> {
    path.map(|p| {
        let report: AdaptationReport = serde_json::from_str(&crate::error::read_to_string(p)?)
            .map_err(Error::from)?;
        Ok(report.recalibration)
    })
    .transpose()
}

fn evaluate(_config: &RunConfig, a: EvaluateArgs) -> CliResult {
    let model = BayesRidgeModel::load(&a.model)?;
    let recal = load_recal(a.recal.as_ref())?;
    let rows = load_split(&a.data, model.meta.seed, a.split)?;
    if rows.is_empty() {
        return Err(Error::InsufficientData("no rows to evaluate".into()).into());
    }
    print_json(&error_summary(&analysis::prediction_errors(&model, recal.as_ref(), &rows)))
}

fn parse_features(text: &str) -> CliResult<RawFeatures> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Failure::Usage(format!("--features: {e}")))?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| Failure::Usage(format!("--features needs {N_RAW} values, got {}", v.len())))
}

fn predict(_config: &RunConfig, a: PredictArgs) -> CliResult {
    let rows: Vec<RawFeatures> = match (&a.features, &a.data) {
        (Some(f), _) => vec![parse_features(f)?],
        (None, Some(path)) => dataset::read_csv(path)?.iter().map(ProbeRecord::features).collect(),
        (None, None) => return Err(Failure::Usage("one of --features or --data is required".into())),
    };
    let model = BayesRidgeModel::load(&a.model)?;
    let recal = load_recal(a.recal.as_ref())?;
    let mut text = String::from("margin_db,std_db\n");
    for x in &rows {
        let p = model.predict(x);
        let mean = recal.map_or(p.mean, |c| c.apply(p.mean));
        let std = recal.map_or(p.std, |c| c.slope.abs() * p.std);
        let _ = writeln!(text, "{mean:.6},{std:.6}");
    }
    match &a.out {
        Some(out) => write_text(out, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check_granularities(values: &[f64]) -> CliResult<Vec<f64>> {
    if values.iter().any(|g| !(0.0..=100.0).contains(g)) {
        return Err(Failure::Usage("granularities are percentages in [0, 100]".into()));
    }
    Ok(values.iter().map(|g| g / 100.0).collect())
}

fn granularity_table(
    config: &RunConfig,
    model_path: &Path,
    data: &Path,
    granularities: &[f64],
    rounding: Rounding,
) -> CliResult<(Vec<analysis::GranularityRow>, Summary)> {
    let model = BayesRidgeModel::load(model_path)?;
    let rows = dataset::read_csv(data)?;
    let split = dataset::split(&rows, model.meta.seed)?;
    let table = analysis::granularity_sweep(
        &model,
        &split.train,
        &split.validation,
        &split.test,
        &check_granularities(granularities)?,
        rounding,
        config.seed,
    )?;
    let mut summary = Summary::new();
    for r in &table {
        let g = (r.granularity * 100.0).round();
        summary.insert(format!("rmse_original_g{g:02}"), r.rmse_original);
        summary.insert(format!("rmse_retrained_g{g:02}"), r.rmse_retrained);
    }
    Ok((table, summary))
}

fn sweep_granularity(config: &RunConfig, a: GranularityArgs) -> CliResult {
    let rounding = a.rounding.map_or(config.analysis.rounding, Rounding::from);
    let (table, summary) = granularity_table(config, &a.model, &a.data, &a.granularities, rounding)?;
    let out = config.resolve(&a.out);
    write_text(&out, &analysis::granularity_csv(&table))?;
    Manifest::new("sweep-granularity", config)
        .arg("granularities", format!("{:?}", a.granularities))
        .arg("rounding", format!("{rounding:?}"))
        .input(&a.model)?
        .input(&a.data)?
        .output(&out)
        .write_beside(&out)?;
    print_json(&summary)
}

fn surrogate_measure(config: &RunConfig, a: SurrogateArgs) -> CliResult {
    let profile = match &a.profile {
        Some(path) => SurrogateLinkProfile::load(path)?,
        None => SurrogateLinkProfile::default(),
    };
    let records = adaptation::measure_campaign(&profile)?;
    let out = config.resolve(&a.out);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    dataset::write_csv(&out, &records)?;
    let mut manifest = Manifest::new("surrogate-measure", config).seed("profile", profile.seed);
    if let Some(path) = &a.profile {
        manifest = manifest.input(path)?;
    }
    manifest.output(&out).write_beside(&out)?;
    print_json(&Summary::from([("records".to_string(), records.len() as f64)]))
}

fn adapt(config: &RunConfig, a: AdaptArgs) -> CliResult {
    let model = BayesRidgeModel::load(&a.model)?;
    let records = dataset::read_csv(&a.measurements)?;
    let report = adaptation::adapt_and_evaluate(&model, &records, a.k, config.seed)?;
    if !report.recalibration.is_order_preserving() {
        eprintln!("warning: recalibration slope {} is not positive", report.recalibration.slope);
    }
    let out = config.resolve(&a.out);
    write_text(&out, &(serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n"))?;
    Manifest::new("adapt", config)
        .arg("k", a.k)
        .seed("calibration", config.seed)
        .input(&a.model)?
        .input(&a.measurements)?
        .output(&out)
        .write_beside(&out)?;
    print_json(&report)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, kind: &str) -> CliResult<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| Failure::Usage(format!("--kind {kind} requires {flag}")))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn flag(b: bool) -> f64 {
    f64::from(u8::from(b))
}

fn report(config: &RunConfig, a: ReportArgs) -> CliResult {
    let model = BayesRidgeModel::load(&a.model)?;
    let realizations = a.realizations.unwrap_or(config.analysis.sweep_realizations);
    if realizations == 0 {
        return Err(Failure::Usage("--realizations must be at least 1".into()));
    }
    let mut manifest = Manifest::new("report", config)
        .arg("kind", format!("{:?}", a.kind).to_lowercase())
        .input(&a.model)?;
    let (csv, summary) = match a.kind {
        ReportKind::Hist => {
            let recal = load_recal(a.recal.as_ref())?;
            let (rows, source) = match (&a.data, &a.measurements) {
                (Some(d), _) => (load_split(d, model.meta.seed, a.split)?, d),
                (None, Some(m)) => (dataset::read_csv(m)?, m),
                (None, None) => return Err(Failure::Usage("--kind hist requires --data or --measurements".into())),
            };
            manifest = manifest.input(source)?.arg("split", format!("{:?}", a.split).to_lowercase());
            if let Some(r) = &a.recal {
                manifest = manifest.input(r)?;
            }
            let bin = a.bin_width.unwrap_or(config.analysis.histogram_bin_db);
            let h = analysis::error_histogram(&analysis::prediction_errors(&model, recal.as_ref(), &rows), bin)?;
            (h.to_csv(), h.summary())
        }
        ReportKind::Freq => {
            let sweep = FrequencySweepConfig {
                n_realizations: realizations,
                anchor_freq_thz: config.analysis.anchor_freq_thz,
                normalization: config.analysis.frequency_normalization,
                ..FrequencySweepConfig::default()
            };
            let r = analysis::frequency_sweep(&model, &config.dataset(), &sweep, config.seed)?;
            let summary = Summary::from([
                ("ml_peak_freq_thz".to_string(), r.grid[r.argmax_ml()]),
                ("ml_unimodal".to_string(), flag(r.ml_is_unimodal())),
                ("max_mean_gap".to_string(), r.max_mean_gap()),
                ("realizations".to_string(), realizations as f64),
            ]);
            (r.to_csv(), summary)
        }
        ReportKind::Fill => {
            let sweep = FillSweepConfig {
                n_realizations: realizations,
                ..FillSweepConfig::default()
            };
            let f = analysis::fill_sweep(&model, &config.dataset(), &sweep, config.seed)?;
            let last = f.result.grid.len() - 1;
            let summary = Summary::from([
                ("mean_curve_correlation".to_string(), f.mean_curve_correlation),
                ("pooled_correlation".to_string(), f.pooled_correlation),
                ("max_mean_gap_db".to_string(), f.result.max_mean_gap()),
                ("gn_margin_at_full_db".to_string(), f.result.gn_mean[last]),
                ("ml_margin_at_full_db".to_string(), f.result.ml_mean[last]),
                ("realizations".to_string(), realizations as f64),
            ]);
            (f.result.to_csv(), summary)
        }
        ReportKind::Granularity => {
            let data = required(&a.data, "--data", "granularity")?;
            let rounding = a.rounding.map_or(config.analysis.rounding, Rounding::from);
            manifest = manifest.input(data)?.arg("rounding", format!("{rounding:?}"));
            let (table, summary) = granularity_table(config, &a.model, data, &a.granularities, rounding)?;
            (analysis::granularity_csv(&table), summary)
        }
        ReportKind::Power => {
            let measurements = required(&a.measurements, "--measurements", "power")?;
            let recal_path = required(&a.recal, "--recal", "power")?;
            let recal = load_recal(Some(recal_path))?.unwrap_or_else(adaptation::Recalibration::identity);
            manifest = manifest
                .input(measurements)?
                .input(recal_path)?
                .arg("center", a.center)
                .arg("fill", a.fill);
            let records = dataset::read_csv(measurements)?;
            let r = analysis::power_sweep(&model, &recal, &records, a.center, a.fill)?;
            let monotone = r.ml_mean.windows(2).all(|w| w[1] >= w[0]);
            let summary = Summary::from([
                ("ml_non_decreasing".to_string(), flag(monotone)),
                ("max_mean_gap_db".to_string(), r.max_mean_gap()),
                ("min_count".to_string(), r.counts.iter().copied().min().unwrap_or(0) as f64),
            ]);
            (r.to_csv(), summary)
        }
    };
    let csv_path = config.resolve(&with_suffix(&a.out, ".csv"));
    let json_path = config.resolve(&with_suffix(&a.out, ".json"));
    write_text(&csv_path, &csv)?;
    write_text(&json_path, &analysis::summary_json(&summary)?)?;
    manifest.output(&csv_path).output(&json_path).write_beside(&csv_path)?;
    print_json(&summary)
}
