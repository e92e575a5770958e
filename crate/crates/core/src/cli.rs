//! The `fewboost` command line.
//!
//! Exit codes: 0 on success, 1 on usage, validation or I/O errors, 2 when a
//! benchmark finished but some of its cells had failing seeds. Output files
//! are written only after the command's computation has succeeded.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::booster::{train, Model, Params};
use crate::dataset::{bin_features, infer_schema, load_csv, load_csv_unlabeled, Dataset, Schema};
use crate::error::{validation, Error, Result};
use crate::fsl::{run_benchmark, Preset};
use crate::stacking::{
    calibrate_thresholds, default_level0_configs, static_feature_indices, ActionDistribution,
    StackingOptions, StackingPipeline,
};

/// Environment variable capping worker threads (0 or unset: all cores).
pub const THREADS_ENV: &str = "FEWBOOST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fewboost", version, about = "Few-shot gradient boosted trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the k-shot AUC grid for one or more presets.
    Bench(BenchArgs),
    /// Train a model on a whole CSV.
    Train(TrainArgs),
    /// Score a CSV with a saved model or stacking pipeline.
    Predict(PredictArgs),
    /// Fit the few-shot stacking pipeline.
    Stack(StackArgs),
    /// Recompute action thresholds for a scores file.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON schema mapping column names to numeric, categorical, target or ignore.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Target column, used to infer a schema when --schema is absent.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated presets: `default`, `fsl` or a JSON preset file.
    #[arg(long, value_delimiter = ',', default_value = "default,fsl")]
    pub preset: Vec<String>,
    /// JSON object of parameter overrides applied to every preset.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
    pub shots: Vec<usize>,
    /// Number of seeds per cell.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// First seed; cells use `seed..seed+seeds`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path; the text table goes next to it with a `.txt` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "fsl")]
    pub preset: String,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model or stacking pipeline JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Scores CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StackArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Shot rows per level-0 model.
    #[arg(long, default_value_t = 300)]
    pub k_per_model: usize,
    /// Sell, hold and buy shares, e.g. `0.3,0.4,0.3`.
    #[arg(
        long,
        default_value = "0.3333333333333333,0.3333333333333334,0.3333333333333333"
    )]
    pub target_dist: String,
    /// Comma-separated static feature names excluded from the base set;
    /// defaults to columns named `I<number>`.
    #[arg(long, value_delimiter = ',')]
    pub static_features: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pipeline JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// CSV holding a score column.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value = "blended_score")]
    pub column: String,
    #[arg(long)]
    pub target_dist: String,
    /// Thresholds JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    configure_threads();
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads() {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if n > 0 {
        // A pool may already exist when `run` is called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Bench(a) => cmd_bench(a),
        Command::Train(a) => cmd_train(a).map(|_| 0),
        Command::Predict(a) => cmd_predict(a).map(|_| 0),
        Command::Stack(a) => cmd_stack(a).map(|_| 0),
        Command::Calibrate(a) => cmd_calibrate(a).map(|_| 0),
    }
}

fn schema_for(args: &DataArgs) -> Result<Schema> {
    match (&args.schema, &args.target) {
        (Some(path), _) => Schema::from_json_file(path),
        (None, Some(target)) => infer_schema(&args.data, target),
        (None, None) => Err(validation("either --schema or --target is required")),
    }
}

fn load_labeled(args: &DataArgs) -> Result<Dataset> {
    load_csv(&args.data, &schema_for(args)?)
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// `default`, `fsl`, or a JSON file holding either a `{name, params}` preset
/// or a bare parameter object.
pub fn resolve_preset(spec: &str) -> Result<Preset> {
    if let Some(p) = Preset::by_name(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(validation(format!(
            "unknown preset '{spec}': expected default, fsl or a JSON file"
        )));
    }
    let value = read_json(path)?;
    if value.get("params").is_some() {
        return Ok(serde_json::from_value(value)?);
    }
    let name = path
        .file_stem()
        .map_or(spec.into(), |s| s.to_string_lossy().into_owned());
    Ok(Preset::new(name, serde_json::from_value(value)?))
}

/// Overlays the keys of a JSON object onto `params`.
pub fn apply_overrides(params: &Params, overrides: Option<&Path>) -> Result<Params> {
    let Some(path) = overrides else {
        return Ok(params.clone());
    };
    let serde_json::Value::Object(patch) = read_json(path)? else {
        return Err(validation("--params must hold a JSON object"));
    };
    let mut base = serde_json::to_value(params)?;
    let obj = base.as_object_mut().expect("params serialize as an object");
    for (k, v) in patch {
        let key = if k == "learning_rate" {
            "eta".to_string()
        } else {
            k
        };
        if !obj.contains_key(&key) {
            return Err(validation(format!("unknown parameter '{key}'")));
        }
        obj.insert(key, v);
    }
    let merged: Params = serde_json::from_value(base)?;
    merged.validate()?;
    Ok(merged)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(Error::from)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let ds = load_labeled(&args.data)?;
    let presets: Vec<Preset> = args
        .preset
        .iter()
        .map(|p| {
            let preset = resolve_preset(p)?;
            let params = apply_overrides(&preset.params, args.params.as_deref())?;
            Ok(Preset::new(preset.name, params))
        })
        .collect::<Result<_>>()?;
    if args.seeds == 0 {
        return Err(validation("--seeds must be at least 1"));
    }
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
    let name = args
        .data
        .data
        .file_stem()
        .map_or("data".into(), |s| s.to_string_lossy().into_owned());
    let table_path = args.out.with_extension("txt");
    if table_path == args.out {
        return Err(validation(
            "--out must not end in .txt; the table is written there",
        ));
    }

    let report = run_benchmark(&ds, &name, &args.shots, &seeds, &presets)?;
    let table = report.to_table();
    write_file(&args.out, &serde_json::to_string_pretty(&report)?)?;
    write_file(&table_path, &table)?;
    print!("{table}");
    Ok(if report.has_failures() { 2 } else { 0 })
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let ds = load_labeled(&args.data)?;
    let preset = resolve_preset(&args.preset)?;
    let mut params = apply_overrides(&preset.params, args.params.as_deref())?;
    if let Some(seed) = args.seed {
        params.seed = seed;
    }
    let bds = bin_features(&ds, params.max_bin, params.min_data_in_bin);
    let model = train(&bds, &params)?;
    model.save(&args.out)
}

enum Scorer {
    Model(Model),
    Pipeline(StackingPipeline),
}

fn load_scorer(path: &Path) -> Result<Scorer> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some("fewboost-model") => Ok(Scorer::Model(Model::from_json(&text)?)),
        Some("fewboost-stacking") => Ok(Scorer::Pipeline(StackingPipeline::from_json(&text)?)),
        other => Err(validation(format!(
            "unrecognised model file format {other:?}"
        ))),
    }
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let scorer = load_scorer(&args.model)?;
    let ds = load_csv_unlabeled(&args.data.data, &schema_for(&args.data)?)?;
    let mut out = String::new();
    match scorer {
        Scorer::Model(m) => {
            out.push_str("row_id,score\n");
            for (i, s) in m.predict_dataset(&ds)?.iter().enumerate() {
                let _ = writeln!(out, "{i},{s}");
            }
        }
        Scorer::Pipeline(p) => {
            out.push_str("row_id,blended_score,action\n");
            let scores = p.predict_scores(&ds)?;
            for (i, s) in scores.iter().enumerate() {
                let _ = writeln!(out, "{i},{s},{}", p.thresholds.action(*s));
            }
        }
    }
    write_file(&args.out, &out)
}

pub fn cmd_stack(args: &StackArgs) -> Result<()> {
    let target_dist: ActionDistribution = args.target_dist.parse()?;
    let ds = load_labeled(&args.data)?;
    let statics = match &args.static_features {
        None => static_feature_indices(&ds),
        Some(names) => names
            .iter()
            .map(|n| {
                ds.feature_index(n)
                    .ok_or_else(|| validation(format!("unknown static feature '{n}'")))
            })
            .collect::<Result<_>>()?,
    };
    let configs = default_level0_configs(&ds, &statics, args.seed);
    let opts = StackingOptions::new(args.k_per_model, args.seed, target_dist);
    let fit = StackingPipeline::fit(&ds, &configs, &opts)?;
    fit.pipeline.save(&args.out)
}

/// Thresholds file written by `calibrate`.
#[derive(Debug, serde::Serialize)]
struct CalibrationReport {
    thresholds: crate::stacking::ActionThresholds,
    target_dist: ActionDistribution,
    n: usize,
    counts: [usize; 3],
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let target_dist: ActionDistribution = args.target_dist.parse()?;
    let mut reader = csv::Reader::from_path(&args.scores).map_err(|e| validation(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| validation(e.to_string()))?
        .clone();
    let col = headers
        .iter()
        .position(|h| h == args.column)
        .ok_or_else(|| validation(format!("scores file has no '{}' column", args.column)))?;
    let mut scores = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| validation(e.to_string()))?;
        let cell = record.get(col).unwrap_or("");
        scores.push(cell.trim().parse::<f64>().map_err(|_| Error::Parse {
            row: i + 2,
            column: args.column.clone(),
            message: format!("'{cell}' is not a number"),
        })?);
    }
    let thresholds = calibrate_thresholds(&scores, &target_dist)?;
    let actions = thresholds.apply(&scores);
    let count = |a: i8| actions.iter().filter(|&&x| x == a).count();
    let report = CalibrationReport {
        thresholds,
        target_dist,
        n: scores.len(),
        counts: [count(-1), count(0), count(1)],
    };
    write_file(&args.out, &serde_json::to_string_pretty(&report)?)
}
