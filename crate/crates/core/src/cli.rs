//! Command-line front end.
//!
//! Every artifact-producing command writes its files into the output
//! directory together with a `manifest.json` that records the resolved
//! configuration, SHA-256 fingerprints of the inputs and the list of outputs.
//! If a command fails, the files it already wrote are removed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    drop_incomplete_rows, fit_bounds, format_timestamp, ingest_csv, smooth, ChannelBounds, CleanDataset,
    NormalizationBounds, DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::exchange::{bundled_by_name, export_model, import_model, ModelProvenance};
use crate::lite::{self, Precision};
use crate::mlp::{run_ensemble, Leaderboard, MlpModel, RunOutcome, TrainingConfig};
use crate::stats::{
    correlation_matrix, select_predictors, CorrelationJson, CorrelationMatrix, PolicyExclusion,
    PredictorSelection, SelectionPolicy,
};
use crate::synthetic::{self, StationConfig};

pub const OUT_DIR_ENV: &str = "PM25NET_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "pm25net", version, about = "PM2.5 estimation from co-pollutant sensor data")]
pub struct Cli {
    /// TOML configuration file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    /// Output directory.
    #[arg(long, short, global = true, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drop incomplete rows, smooth, and write the clean dataset.
    Preprocess(PreprocessArgs),
    /// Correlation matrix and predictor selection.
    Correlate(CorrelateArgs),
    /// Train an ensemble of networks and export the selected one.
    Train(TrainArgs),
    /// Evaluate a model over sensor frames.
    Predict(PredictArgs),
    /// Turn an artifact into gnuplot-ready TSV files.
    PlotData(PlotDataArgs),
    /// Export one of the bundled reference models.
    ExportBundled(ExportBundledArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw CSV: timestamp column then one column per channel.
    pub input: PathBuf,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Clean dataset CSV.
    pub input: PathBuf,
    #[arg(long)]
    pub target: Option<String>,
    /// Strong-correlation threshold on |R|.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub weak_threshold: Option<f64>,
    /// Channel never selected; repeatable. Defaults to `NO`.
    #[arg(long)]
    pub exclude: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Clean dataset CSV.
    pub input: PathBuf,
    /// Comma-separated predictor channels.
    #[arg(long, value_delimiter = ',')]
    pub predictors: Vec<String>,
    /// Take predictors from a `selection.json` written by `correlate`.
    #[arg(long, conflicts_with = "predictors")]
    pub selection: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Ndjson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionArg {
    F64,
    F32,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model document (JSON or text), or `bundled:three` / `bundled:eight`.
    pub model: String,
    /// Frames as CSV, or line-delimited JSON (`.ndjson` / `.jsonl`).
    pub frames: PathBuf,
    /// Column with measured PM2.5; adds RMSE and R² to the summary.
    #[arg(long)]
    pub targets: Option<String>,
    /// `bounds.json` supplying input (and optionally target) bounds.
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    /// Target bounds as `min,max`.
    #[arg(long, value_name = "MIN,MAX", value_parser = parse_pair)]
    pub target_bounds: Option<(f64, f64)>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((num(a)?, num(b)?))
}

#[derive(Debug, Args)]
pub struct PlotDataArgs {
    /// `report.json`, `correlation.json`, `leaderboard.json`, `summary.json`
    /// or a convergence trace CSV.
    pub artifact: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportBundledArgs {
    /// `three` or `eight`.
    #[arg(long, default_value = "three")]
    pub which: String,
    /// `bounds.json` to attach as input bounds.
    #[arg(long)]
    pub bounds: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Station,
    Teacher,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "station")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 5000)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maintenance gaps to plant (station data only).
    #[arg(long, default_value_t = 20)]
    pub gaps: usize,
}

/// Resolved configuration; the TOML file uses the same layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub out: Option<PathBuf>,
    pub preprocess: PreprocessSettings,
    pub correlate: CorrelateSettings,
    pub train: TrainSettings,
    pub training: TrainingConfig,
    pub predict: PredictSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSettings {
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateSettings {
    pub target: String,
    pub threshold: f64,
    pub weak_threshold: f64,
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub target: String,
    pub predictors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSettings {
    pub format: OutputFormat,
    pub precision: PrecisionArg,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW }
    }
}

impl Default for CorrelateSettings {
    fn default() -> Self {
        let p = SelectionPolicy::default();
        Self {
            target: synthetic::TARGET_CHANNEL.into(),
            threshold: p.strong_threshold,
            weak_threshold: p.weak_threshold,
            exclude: vec!["NO".into()],
        }
    }
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            target: synthetic::TARGET_CHANNEL.into(),
            predictors: Vec::new(),
        }
    }
}

impl Default for PredictSettings {
    fn default() -> Self {
        Self {
            format: OutputFormat::Csv,
            precision: PrecisionArg::F64,
        }
    }
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies command-line flags on top of the file values.
    fn apply(&mut self, cli: &Cli) {
        if let Some(o) = &cli.out {
            self.out = Some(o.clone());
        }
        match &cli.command {
            Command::Preprocess(a) => set(&mut self.preprocess.window, a.window),
            Command::Correlate(a) => {
                set(&mut self.correlate.target, a.target.clone());
                set(&mut self.correlate.threshold, a.threshold);
                set(&mut self.correlate.weak_threshold, a.weak_threshold);
                if !a.exclude.is_empty() {
                    self.correlate.exclude = a.exclude.clone();
                }
            }
            Command::Train(a) => {
                set(&mut self.train.target, a.target.clone());
                if !a.predictors.is_empty() {
                    self.train.predictors = a.predictors.clone();
                }
                set(&mut self.training.restarts, a.restarts);
                set(&mut self.training.seed, a.seed);
                set(&mut self.training.max_epochs, a.max_epochs);
                if a.hidden.is_some() {
                    self.training.hidden_neurons = a.hidden;
                }
            }
            Command::Predict(a) => {
                set(&mut self.predict.format, a.format);
                set(&mut self.predict.precision, a.precision);
            }
            Command::PlotData(_) | Command::ExportBundled(_) | Command::Synth(_) => {}
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub path: String,
    pub sha256: String,
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub command: String,
    pub version: String,
    pub master_seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputFingerprint>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files written so far by one command, removed again on failure.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
    created: Vec<PathBuf>,
    inputs: Vec<InputFingerprint>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            written: Vec::new(),
            created: Vec::new(),
            inputs: Vec::new(),
        }
    }

    fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputFingerprint {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut d = Some(dir);
        while let Some(p) = d {
            if p.as_os_str().is_empty() || p.exists() {
                break;
            }
            missing.push(p.to_path_buf());
            d = p.parent();
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        missing.reverse();
        self.created.extend(missing);
        Ok(())
    }

    fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(rel.to_owned());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(rel, s)
    }

    fn finish(mut self, command: &str, settings: &Settings, master_seed: Option<u64>) -> Result<Vec<String>> {
        let mut outputs = self.written.clone();
        outputs.push("manifest.json".into());
        let manifest = RunManifest {
            kind: "manifest".into(),
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            master_seed,
            config: serde_json::to_value(settings)?,
            inputs: self.inputs.clone(),
            outputs,
        };
        let result = self.write_json("manifest.json", &manifest);
        match result {
            Ok(()) => Ok(std::mem::take(&mut self.written)),
            Err(e) => {
                self.cleanup();
                Err(e)
            }
        }
    }

    fn cleanup(&self) {
        for rel in &self.written {
            let _ = fs::remove_file(self.dir.join(rel));
        }
        for d in self.created.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn read_clean(bytes: &[u8]) -> Result<CleanDataset> {
    let series = ingest_csv(bytes, None)?;
    CleanDataset::from_complete(&series)
}

fn csv_bytes(d: &CleanDataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    d.write_csv(&mut buf)?;
    Ok(buf)
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Parses arguments from the process and runs; returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    settings.apply(cli);
    if cli.print_config {
        let text = toml::to_string_pretty(&settings).map_err(|e| Error::Config(e.to_string()))?;
        print!("{text}");
        return Ok(());
    }
    let mut out = Outputs::new(settings.out_dir());
    let (name, seed) = match &cli.command {
        Command::Preprocess(_) => ("preprocess", None),
        Command::Correlate(_) => ("correlate", None),
        Command::Train(_) => ("train", Some(settings.training.seed)),
        Command::Predict(_) => ("predict", None),
        Command::PlotData(_) => ("plot-data", None),
        Command::ExportBundled(_) => ("export-bundled", None),
        Command::Synth(a) => ("synth", Some(a.seed)),
    };
    let result = match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a, &settings, &mut out),
        Command::Correlate(a) => cmd_correlate(a, &settings, &mut out),
        Command::Train(a) => cmd_train(a, &settings, &mut out),
        Command::Predict(a) => cmd_predict(a, &settings, &mut out),
        Command::PlotData(a) => cmd_plot_data(a, &mut out),
        Command::ExportBundled(a) => cmd_export_bundled(a, &mut out),
        Command::Synth(a) => cmd_synth(a, &mut out),
    };
    match result {
        Ok(()) => {
            let dir = out.dir.clone();
            for f in out.finish(name, &settings, seed)? {
                println!("wrote {}", dir.join(f).display());
            }
            Ok(())
        }
        Err(e) => {
            out.cleanup();
            Err(e)
        }
    }
}

/// `report.json` of the preprocess command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub kind: String,
    pub window: usize,
    pub channels: Vec<String>,
    pub raw_rows: usize,
    pub dropped_missing: usize,
    pub dropped_warmup: usize,
    pub retained: usize,
    pub complete_file: String,
    pub clean_file: String,
}

fn cmd_preprocess(a: &PreprocessArgs, s: &Settings, out: &mut Outputs) -> Result<()> {
    let bytes = out.read_input(&a.input)?;
    let raw = ingest_csv(bytes.as_slice(), None)?;
    let complete = drop_incomplete_rows(&raw)?;
    let clean = smooth(&complete, s.preprocess.window)?;
    let bounds = fit_bounds(&clean)?;
    let p = clean.provenance();
    out.write("complete.csv", csv_bytes(&CleanDataset::from_complete(&complete)?)?)?;
    out.write("clean.csv", csv_bytes(&clean)?)?;
    out.write_json("bounds.json", &bounds)?;
    out.write_json(
        "report.json",
        &PreprocessReport {
            kind: "preprocess-report".into(),
            window: s.preprocess.window,
            channels: clean.channel_names().to_vec(),
            raw_rows: p.raw_rows,
            dropped_missing: p.dropped_missing,
            dropped_warmup: p.dropped_warmup,
            retained: p.retained,
            complete_file: "complete.csv".into(),
            clean_file: "clean.csv".into(),
        },
    )
}

#[derive(Serialize, Deserialize)]
struct SelectionFile {
    kind: String,
    #[serde(flatten)]
    selection: PredictorSelection,
}

fn cmd_correlate(a: &CorrelateArgs, s: &Settings, out: &mut Outputs) -> Result<()> {
    let d = read_clean(&out.read_input(&a.input)?)?;
    let c = &s.correlate;
    let policy = SelectionPolicy {
        strong_threshold: c.threshold,
        weak_threshold: c.weak_threshold,
        exclude: c
            .exclude
            .iter()
            .map(|ch| PolicyExclusion {
                channel: ch.clone(),
                reason: if ch == "NO" {
                    "NO excluded in favour of NO2".into()
                } else {
                    "excluded by configuration".into()
                },
            })
            .collect(),
    };
    let m = correlation_matrix(&d)?;
    let mut csv = Vec::new();
    m.write_csv(&mut csv)?;
    out.write("correlation.csv", csv)?;
    out.write_json("correlation.json", &m.to_json())?;
    let selection = select_predictors(&m, &c.target, &policy)?;
    println!("selected: {}", selection.channels().join(","));
    out.write_json(
        "selection.json",
        &SelectionFile {
            kind: "selection".into(),
            selection,
        },
    )
}

fn cmd_train(a: &TrainArgs, s: &Settings, out: &mut Outputs) -> Result<()> {
    let bytes = out.read_input(&a.input)?;
    let fingerprint = out.inputs.last().map(|i| i.sha256.clone());
    let d = read_clean(&bytes)?;
    let predictors = match &a.selection {
        Some(path) => {
            let sel: SelectionFile = serde_json::from_slice(&out.read_input(path)?)?;
            sel.selection.channels()
        }
        None => s.train.predictors.clone(),
    };
    if predictors.is_empty() {
        return Err(Error::Config("no predictors given (use --predictors or --selection)".into()));
    }
    let target = &s.train.target;
    let ensemble = run_ensemble(&d, &predictors, target, &s.training)?;
    let best = ensemble.best_run();

    let mut model = best.model.clone();
    let mut target_spec = model.target().clone();
    target_spec.unit = "µg/m³".into();
    let inputs = model.inputs().to_vec();
    model = model.with_channels(inputs, target_spec)?;
    let doc = export_model(
        &model,
        Some(ModelProvenance {
            source: Some(format!("pm25net {} train", env!("CARGO_PKG_VERSION"))),
            training_seed: Some(best.seed),
            run: Some(best.run),
            rng: Some(best.rng.into()),
            init_scheme: Some(best.init_scheme.into()),
            dataset_fingerprint: fingerprint,
            metrics: Some(best.metrics),
        }),
    );
    out.write("model.json", doc.to_json())?;
    out.write("model.txt", doc.render_text())?;
    out.write_json("leaderboard.json", &ensemble.leaderboard())?;
    out.write_json("bounds.json", &ensemble.bounds)?;
    for r in ensemble.runs.iter().filter_map(RunOutcome::completed) {
        out.write(&format!("traces/run_{:03}.csv", r.run), r.trace_csv())?;
    }
    println!(
        "selected run {} (unseen RMSE {:.4}, R² {:.4})",
        best.run, best.metrics.unseen.rmse, best.metrics.unseen.r2
    );
    Ok(())
}

fn load_model(spec: &str, out: &mut Outputs) -> Result<MlpModel> {
    if let Some(name) = spec.strip_prefix("bundled:") {
        return bundled_by_name(name).ok_or_else(|| Error::Config(format!("unknown bundled model `{name}`")));
    }
    import_model(&out.read_input(Path::new(spec))?)
}

fn read_bounds(path: &Path, out: &mut Outputs) -> Result<NormalizationBounds> {
    Ok(serde_json::from_slice(&out.read_input(path)?)?)
}

/// `summary.json` of the predict command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub kind: String,
    pub n: usize,
    pub predictions_file: String,
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
    pub actual: Option<Vec<f64>>,
}

fn cmd_predict(a: &PredictArgs, s: &Settings, out: &mut Outputs) -> Result<()> {
    let mut model = load_model(&a.model, out)?;
    if let Some(path) = &a.bounds {
        let b = read_bounds(path, out)?;
        model.set_input_bounds(&b)?;
        if let Some(t) = b.get(&model.target().name) {
            model.set_target_bounds(t);
        }
    }
    if let Some((lo, hi)) = a.target_bounds {
        model.set_target_bounds(ChannelBounds::new(lo, hi)?);
    }
    let names = model.input_names();
    let bytes = out.read_input(&a.frames)?;
    let ndjson = matches!(
        a.frames.extension().and_then(|e| e.to_str()),
        Some("ndjson") | Some("jsonl")
    );
    let table = if ndjson {
        lite::read_frames_ndjson(bytes.as_slice(), &names, a.targets.as_deref())?
    } else {
        lite::read_frames_csv(bytes.as_slice(), &names, a.targets.as_deref())?
    };
    let precision = match s.predict.precision {
        PrecisionArg::F64 => Precision::F64,
        PrecisionArg::F32 => Precision::F32,
    };
    let result = lite::predict_stream(&model, &table.frames, table.targets.as_deref(), precision)?;
    let mut buf = Vec::new();
    let file = match s.predict.format {
        OutputFormat::Csv => {
            lite::write_predictions_csv(&mut buf, &result.predictions)?;
            "predictions.csv"
        }
        OutputFormat::Ndjson => {
            lite::write_predictions_ndjson(&mut buf, &result.predictions)?;
            "predictions.ndjson"
        }
    };
    out.write(file, buf)?;
    if let Some(sum) = result.summary {
        let r2 = sum.r2.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"));
        println!("n = {}, RMSE = {:.4}, R² = {r2}", sum.n, sum.rmse);
    }
    out.write_json(
        "summary.json",
        &PredictionSummary {
            kind: "prediction-summary".into(),
            n: result.predictions.len(),
            predictions_file: file.into(),
            rmse: result.summary.map(|s| s.rmse),
            r2: result.summary.and_then(|s| s.r2),
            actual: table.targets,
        },
    )
}

fn tsv_row(values: &[String]) -> String {
    let mut s = values.join("\t");
    s.push('\n');
    s
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NaN".into()
    }
}

fn cmd_plot_data(a: &PlotDataArgs, out: &mut Outputs) -> Result<()> {
    let bytes = out.read_input(&a.artifact)?;
    let base = a.artifact.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = String::from_utf8_lossy(&bytes);
    if text.starts_with("epoch,train_mse") {
        let mut s = String::from("# epoch\ttrain_mse\tvalidation_mse\n");
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        for rec in rdr.records() {
            let rec = rec?;
            let val = rec.get(2).filter(|v| !v.is_empty()).unwrap_or("NaN");
            s.push_str(&tsv_row(&[rec[0].to_owned(), rec[1].to_owned(), val.to_owned()]));
        }
        return out.write("convergence.tsv", s);
    }
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let kind = value.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_owned();
    match kind.as_str() {
        "preprocess-report" => {
            let report: PreprocessReport = serde_json::from_value(value)?;
            let raw = read_clean(&out.read_input(&base.join(&report.complete_file))?)?;
            let clean = read_clean(&out.read_input(&base.join(&report.clean_file))?)?;
            let offset = raw
                .timestamps()
                .iter()
                .position(|t| Some(t) == clean.timestamps().first())
                .ok_or_else(|| Error::Config("smoothed rows do not align with the raw rows".into()))?;
            for name in clean.channel_names() {
                let r = raw.column(name)?;
                let c = clean.column(name)?;
                let mut s = format!("# row\ttimestamp\traw\tsmoothed ({name})\n");
                for (i, v) in r.iter().enumerate() {
                    let sm = i.checked_sub(offset).and_then(|k| c.get(k)).copied().unwrap_or(f64::NAN);
                    s.push_str(&tsv_row(&[
                        i.to_string(),
                        format_timestamp(&raw.timestamps()[i]),
                        fmt(*v),
                        fmt(sm),
                    ]));
                }
                out.write(&format!("smoothing_{}.tsv", file_safe(name)), s)?;
            }
            Ok(())
        }
        "correlation" => {
            let m = CorrelationMatrix::try_from(serde_json::from_value::<CorrelationJson>(value)?)?;
            let mut grid = String::new();
            let mut labels = String::new();
            for (i, name) in m.channel_names().iter().enumerate() {
                let row: Vec<String> = m.matrix().row(i).iter().map(|v| fmt(*v)).collect();
                grid.push_str(&tsv_row(&row));
                labels.push_str(&tsv_row(&[i.to_string(), name.clone()]));
            }
            out.write("correlation_heatmap.tsv", grid)?;
            out.write("correlation_labels.tsv", labels)
        }
        "leaderboard" => {
            let lb: Leaderboard = serde_json::from_value(value)?;
            let mut s = String::from("# run\tunseen_rmse\tunseen_r2\ttest_rmse\tepochs\n");
            for r in &lb.rows {
                let pick = |m: Option<crate::mlp::SetMetrics>, f: fn(&crate::mlp::SetMetrics) -> f64| {
                    m.as_ref().map_or(f64::NAN, f)
                };
                s.push_str(&tsv_row(&[
                    r.run.to_string(),
                    fmt(pick(r.unseen, |m| m.rmse)),
                    fmt(pick(r.unseen, |m| m.r2)),
                    fmt(pick(r.test, |m| m.rmse)),
                    r.epochs_used.map_or_else(|| "NaN".into(), |e| e.to_string()),
                ]));
            }
            out.write("leaderboard.tsv", s)
        }
        "prediction-summary" => {
            let summary: PredictionSummary = serde_json::from_value(value)?;
            let pred_bytes = out.read_input(&base.join(&summary.predictions_file))?;
            let predicted: Vec<f64> = if summary.predictions_file.ends_with(".ndjson") {
                String::from_utf8_lossy(&pred_bytes)
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        let v: serde_json::Value = serde_json::from_str(l)?;
                        v["pm25"].as_f64().ok_or_else(|| Error::Frame("prediction without pm25".into()))
                    })
                    .collect::<Result<_>>()?
            } else {
                let mut rdr = csv::Reader::from_reader(pred_bytes.as_slice());
                rdr.records()
                    .map(|r| {
                        let r = r?;
                        r[1].parse::<f64>()
                            .map_err(|_| Error::Frame(format!("bad pm25 value `{}`", &r[1])))
                    })
                    .collect::<Result<_>>()?
            };
            let mut s = String::new();
            match &summary.actual {
                Some(actual) => {
                    if actual.len() != predicted.len() {
                        return Err(Error::Frame(format!(
                            "{} actual values for {} predictions",
                            actual.len(),
                            predicted.len()
                        )));
                    }
                    s.push_str("# index\tactual\tpredicted\n");
                    for (i, (a, p)) in actual.iter().zip(&predicted).enumerate() {
                        s.push_str(&tsv_row(&[i.to_string(), fmt(*a), fmt(*p)]));
                    }
                }
                None => {
                    s.push_str("# index\tpredicted\n");
                    for (i, p) in predicted.iter().enumerate() {
                        s.push_str(&tsv_row(&[i.to_string(), fmt(*p)]));
                    }
                }
            }
            out.write("prediction.tsv", s)
        }
        other => Err(Error::Config(format!(
            "{}: unrecognized artifact kind `{other}`",
            a.artifact.display()
        ))),
    }
}

fn cmd_export_bundled(a: &ExportBundledArgs, out: &mut Outputs) -> Result<()> {
    let mut model =
        bundled_by_name(&a.which).ok_or_else(|| Error::Config(format!("unknown bundled model `{}`", a.which)))?;
    if let Some(path) = &a.bounds {
        model.set_input_bounds(&read_bounds(path, out)?)?;
    }
    let doc = export_model(
        &model,
        Some(ModelProvenance {
            source: Some("published reference weights".into()),
            ..Default::default()
        }),
    );
    out.write("model.json", doc.to_json())?;
    out.write("model.txt", doc.render_text())
}

fn cmd_synth(a: &SynthArgs, out: &mut Outputs) -> Result<()> {
    match a.kind {
        SynthKind::Station => {
            let s = synthetic::station_series(&StationConfig {
                rows: a.rows,
                seed: a.seed,
                gaps: a.gaps,
                ..Default::default()
            })?;
            let mut buf = Vec::new();
            synthetic::write_series_csv(&s, &mut buf)?;
            out.write("station.csv", buf)
        }
        SynthKind::Teacher => {
            let t = synthetic::teacher_dataset(3, 3, a.rows, a.seed)?;
            out.write("teacher.csv", csv_bytes(&t.to_dataset()?)?)?;
            out.write("teacher_model.json", export_model(&t.teacher, None).to_json())?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "[training]\nrestarts = 7\nseed = 3\n[preprocess]\nwindow = 10\n").unwrap();
        let cli = Cli::parse_from([
            "pm25net",
            "--config",
            cfg.to_str().unwrap(),
            "train",
            "x.csv",
            "--seed",
            "9",
        ]);
        let mut s = Settings::load(cli.config.as_deref()).unwrap();
        s.apply(&cli);
        assert_eq!(s.training.restarts, 7);
        assert_eq!(s.training.seed, 9);
        assert_eq!(s.training.max_epochs, 1000);
        assert_eq!(s.preprocess.window, 10);
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "[training]\nrestartz = 7\n").unwrap();
        assert!(matches!(Settings::load(Some(&cfg)), Err(Error::Config(_))));
    }

    #[test]
    fn settings_round_trip_through_toml() {
        let s = Settings::default();
        let text = toml::to_string_pretty(&s).unwrap();
        assert_eq!(toml::from_str::<Settings>(&text).unwrap(), s);
    }

    #[test]
    fn failed_command_leaves_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let out_dir = dir.path().join("o/nested");
        let mut out = Outputs::new(out_dir.clone());
        out.write("a.txt", "x").unwrap();
        out.write("sub/b.txt", "y").unwrap();
        out.cleanup();
        assert!(!dir.path().join("o").exists());
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
