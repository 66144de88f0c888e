//! Command-line front end: the run configuration, the five subcommands,
//! output-directory locking and exit codes.
//!
//! Every command writes `config.resolved.toml` into its output directory
//! with all defaults expanded and every sub-seed spelled out, so the file
//! can be passed back through `--config` to repeat the run.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Real;
use crate::container::ContainerError;
use crate::dataio::{
    aggregate_sessions, clean_rows, default_channels, load_recording, read_manifest, synth_generate, write_manifest,
    write_recording_csv, ClassLabel, DataError, ManifestSource, SynthSpec,
};
use crate::dsp::{
    apply_stats, bandpass_filter, run_pipeline, standardize, window_segments, DspError, PipelineConfig, PipelineMode,
    PipelineSeeds, StandardizeMode, StatsSource,
};
use crate::eval::{argmax_label, evaluate_model, export_report, EvalError, EvalReport, ReportPaths};
use crate::nn::{ArchConfig, NnError};
use crate::seed;
use crate::store::{load_prepared, save_prepared, PreparedDataset};
use crate::train::{
    kfold_cv, load_checkpoint, predict_proba, save_checkpoint, Checkpoint, CvResult, TrainConfig, TrainError,
    TrainHistory, TrainSeeds,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_RUNTIME: i32 = 5;

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
const LOCK_FILE: &str = ".lock";

/// Failure classes, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Io(e.to_string()),
            DataError::InvalidSpec(_) => CliError::Config(e.to_string()),
            DataError::Entry { ref source, .. } if matches!(**source, DataError::Io { .. }) => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DspError> for CliError {
    fn from(e: DspError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ContainerError> for CliError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::BadArch(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BadConfig(_) => CliError::Config(e.to_string()),
            TrainError::Container(c) => c.into(),
            TrainError::Dsp(d) => d.into(),
            TrainError::ArchMismatch { .. }
            | TrainError::DtypeMismatch { .. }
            | TrainError::Metadata(_)
            | TrainError::InputShape { .. }
            | TrainError::EmptyData
            | TrainError::TooFewSamples(_) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            EvalError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Seeds are written as decimal strings because TOML integers stop at
/// `i64::MAX`; plain integers are accepted on input too.
mod seed_text {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Text(String),
    }

    fn parse<E: serde::de::Error>(raw: Raw) -> Result<u64, E> {
        match raw {
            Raw::Int(v) => u64::try_from(v).map_err(|_| E::custom(format!("seed must be ≥ 0, got {v}"))),
            Raw::Text(s) => s.trim().parse().map_err(|_| E::custom(format!("seed {s:?} is not an unsigned integer"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        parse(Raw::deserialize(d)?)
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => s.serialize_str(&v.to_string()),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
            Option::<Raw>::deserialize(d)?.map(parse).transpose()
        }
    }
}

/// Global seed plus optional per-stage overrides. Unset stage seeds are
/// derived from `global` by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SeedBlock {
    #[serde(with = "seed_text")]
    pub global: u64,
    #[serde(with = "seed_text::opt", skip_serializing_if = "Option::is_none")]
    pub balance: Option<u64>,
    #[serde(with = "seed_text::opt", skip_serializing_if = "Option::is_none")]
    pub augment: Option<u64>,
    #[serde(with = "seed_text::opt", skip_serializing_if = "Option::is_none")]
    pub split: Option<u64>,
    #[serde(with = "seed_text::opt", skip_serializing_if = "Option::is_none")]
    pub init: Option<u64>,
    #[serde(with = "seed_text::opt", skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<u64>,
    #[serde(with = "seed_text::opt", skip_serializing_if = "Option::is_none")]
    pub dropout: Option<u64>,
    #[serde(with = "seed_text::opt", skip_serializing_if = "Option::is_none")]
    pub folds: Option<u64>,
}

impl SeedBlock {
    /// Fills every unset stage seed from the global one.
    pub fn resolve(&mut self) {
        let g = self.global;
        for (slot, name) in [
            (&mut self.balance, "balance"),
            (&mut self.augment, "augment"),
            (&mut self.split, "split"),
            (&mut self.init, "init"),
            (&mut self.shuffle, "shuffle"),
            (&mut self.dropout, "dropout"),
            (&mut self.folds, "folds"),
        ] {
            slot.get_or_insert_with(|| seed::derive(g, name));
        }
    }

    pub fn pipeline(&self) -> PipelineSeeds {
        let d = PipelineSeeds::from_global(self.global);
        PipelineSeeds {
            balance: self.balance.unwrap_or(d.balance),
            augment: self.augment.unwrap_or(d.augment),
            split: self.split.unwrap_or(d.split),
        }
    }

    pub fn train(&self) -> TrainSeeds {
        let d = TrainSeeds::from_global(self.global);
        TrainSeeds {
            init: self.init.unwrap_or(d.init),
            shuffle: self.shuffle.unwrap_or(d.shuffle),
            dropout: self.dropout.unwrap_or(d.dropout),
            folds: self.folds.unwrap_or(d.folds),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Columns read from each recording, in model input order.
    pub channels: Vec<String>,
    pub source: ManifestSource,
    /// Floating-point type used for training.
    pub precision: Precision,
    /// Batch size for inference passes.
    pub eval_batch_size: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            channels: default_channels(),
            source: ManifestSource::Synthetic,
            precision: Precision::default(),
            eval_batch_size: 256,
        }
    }
}

/// Full configuration file, one TOML table per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: SeedBlock,
    pub io: IoConfig,
    pub synth: SynthSpec,
    pub pipeline: PipelineConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Applies command-line overrides, resolves every seed and checks the
    /// sections against each other.
    pub fn resolve(mut self, seed: Option<u64>, mode: Option<PipelineMode>) -> Result<Self, CliError> {
        if let Some(g) = seed {
            self.seeds.global = g;
        }
        if let Some(m) = mode {
            self.pipeline.mode = m;
        }
        self.seeds.resolve();
        self.pipeline.seeds = self.seeds.pipeline();
        self.train.seeds = self.seeds.train();

        let bad = |m: String| Err(CliError::Config(m));
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.arch.validate()?;
        self.train.validate()?;
        if self.io.channels.is_empty() || self.io.eval_batch_size == 0 {
            return bad("io.channels must be non-empty and io.eval_batch_size positive".into());
        }
        if self.arch.input_features != self.io.channels.len() {
            return bad(format!(
                "arch.input_features = {} but io.channels lists {} channels",
                self.arch.input_features,
                self.io.channels.len()
            ));
        }
        if self.arch.seq_len != self.pipeline.window {
            return bad(format!(
                "arch.seq_len = {} but pipeline.window = {}",
                self.arch.seq_len, self.pipeline.window
            ));
        }
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path, seed: Option<u64>, mode: Option<PipelineMode>) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)?.resolve(seed, mode)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Exclusive hold on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    pub path: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    /// Creates the directory, takes the lock and echoes the resolved config.
    pub fn open(path: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(path).map_err(|e| io_error(path, e))?;
        let lock = path.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                CliError::Io(format!("{} is in use by another run (remove {} if stale)", path.display(), lock.display()))
            } else {
                io_error(&lock, e)
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        let dir = Self {
            path: path.to_path_buf(),
            lock,
        };
        write_file(&dir.file(RESOLVED_CONFIG), &cfg.to_toml()?)?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Writes `manifest.csv` and one CSV per synthetic recording; returns the
/// manifest path.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let (mut manifest, recs) = synth_generate(&cfg.synth, cfg.seeds.global)?;
    let dir = OutputDir::open(out, cfg)?;
    for (entry, rec) in manifest.entries.iter_mut().zip(&recs) {
        entry.path = dir.file(&entry.path.display().to_string());
        write_recording_csv(rec, &entry.path)?;
    }
    let path = dir.file("manifest.csv");
    write_manifest(&manifest, &path)?;
    log::info!("wrote {} recordings to {}", recs.len(), out.display());
    Ok(path)
}

/// Runs the preprocessing chain on a manifest and persists the split as
/// `dataset.bin`, with the stage report as `pipeline_report.txt` and
/// `pipeline_report.kv`.
pub fn cmd_preprocess(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let manifest = read_manifest(manifest, cfg.io.source)?;
    let recs = aggregate_sessions(&manifest, &cfg.io.channels, cfg.pipeline.sample_rate_hz)?;
    let output = run_pipeline(&recs, &cfg.pipeline)?;
    let dir = OutputDir::open(out, cfg)?;
    let path = dir.file("dataset.bin");
    save_prepared(&path, &output, &cfg.pipeline, &cfg.io.channels)?;
    write_file(&dir.file("pipeline_report.txt"), &output.report.to_text())?;
    write_file(&dir.file("pipeline_report.kv"), &output.report.to_kv())?;
    log::info!(
        "{} mode: {} train / {} test windows",
        cfg.pipeline.mode,
        output.split.train.len(),
        output.split.test.len()
    );
    Ok(path)
}

fn check_dataset_shape(cfg: &RunConfig, data: &PreparedDataset) -> Result<(), CliError> {
    let t = data.config.window;
    let c = data.channel_names.len();
    if (t, c) != (cfg.arch.seq_len, cfg.arch.input_features) {
        return Err(CliError::Data(format!(
            "dataset windows are {t}×{c}, the configured model expects {}×{}",
            cfg.arch.seq_len, cfg.arch.input_features
        )));
    }
    Ok(())
}

fn epoch_log(out: &mut String, run: &str, history: &TrainHistory) {
    for r in &history.records {
        let _ = writeln!(
            out,
            "{run} epoch {}: {} batches, train_loss={} train_acc={} val_loss={} val_acc={}",
            r.epoch, r.n_batches, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    }
    let best = history.best_epoch.map_or("-".into(), |e| e.to_string());
    match history.stopped_epoch {
        Some(e) => {
            let _ = writeln!(out, "{run} early stop at epoch {e}, best epoch {best}");
        }
        None => {
            let _ = writeln!(out, "{run} ran {} epochs, best epoch {best}", history.records.len());
        }
    }
}

fn write_training_outputs<T: Real>(
    dir: &OutputDir,
    cv: &CvResult<T>,
    data: &PreparedDataset,
) -> Result<PathBuf, CliError> {
    let mut log_text = String::new();
    let mut summary = String::new();
    let _ = writeln!(summary, "selection = {:?}", cv.selection);
    let _ = writeln!(summary, "parameters = {}", cv.final_params.param_count());
    let _ = writeln!(summary, "train_windows = {}", data.split.train.len());
    for (i, fold) in cv.folds.iter().enumerate() {
        let name = format!("fold{}", i + 1);
        write_file(&dir.file(&format!("{name}_history.csv")), &fold.history.to_csv())?;
        epoch_log(&mut log_text, &name, &fold.history);
        let _ = writeln!(
            summary,
            "{name}: epochs = {}, best_epoch = {}, best_val_loss = {}",
            fold.history.records.len(),
            fold.history.best_epoch.unwrap_or(0),
            fold.history.best_val_loss().unwrap_or(f64::NAN)
        );
    }
    if let Some(f) = cv.chosen_fold {
        let _ = writeln!(summary, "chosen_fold = {}", f + 1);
    }
    write_file(&dir.file("final_history.csv"), &cv.final_history.to_csv())?;
    epoch_log(&mut log_text, "final", &cv.final_history);
    let _ = writeln!(
        summary,
        "final: epochs = {}, best_epoch = {}, best_val_loss = {}",
        cv.final_history.records.len(),
        cv.final_history.best_epoch.unwrap_or(0),
        cv.final_history.best_val_loss().unwrap_or(f64::NAN)
    );
    write_file(&dir.file("train.log"), &log_text)?;
    write_file(&dir.file("summary.txt"), &summary)?;
    let ck = dir.file("checkpoint.bin");
    save_checkpoint(&ck, &cv.final_params, Some(&data.config), data.stats.as_ref())?;
    Ok(ck)
}

/// k-fold cross validation plus final-model selection on a prepared
/// dataset. Writes `checkpoint.bin`, `foldN_history.csv`,
/// `final_history.csv`, `train.log` and `summary.txt`; returns the
/// checkpoint path.
pub fn cmd_train(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let data = load_prepared(dataset)?;
    check_dataset_shape(cfg, &data)?;
    let dir = OutputDir::open(out, cfg)?;
    match cfg.io.precision {
        Precision::F32 => {
            let cv = kfold_cv::<f32>(&data.split.train, &cfg.arch, &cfg.train)?;
            write_training_outputs(&dir, &cv, &data)
        }
        Precision::F64 => {
            let cv = kfold_cv::<f64>(&data.split.train, &cfg.arch, &cfg.train)?;
            write_training_outputs(&dir, &cv, &data)
        }
    }
}

/// Checkpoint in whichever precision it was saved in.
enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    fn load(path: &Path, arch: &ArchConfig) -> Result<Self, CliError> {
        match load_checkpoint::<f32>(path, Some(arch)) {
            Ok(ck) => Ok(Self::F32(ck)),
            Err(TrainError::DtypeMismatch { .. }) => Ok(Self::F64(load_checkpoint::<f64>(path, Some(arch))?)),
            Err(e) => Err(e.into()),
        }
    }

    fn pipeline(&self) -> Option<&PipelineConfig> {
        match self {
            Self::F32(c) => c.pipeline.as_ref(),
            Self::F64(c) => c.pipeline.as_ref(),
        }
    }

    fn stats(&self) -> Option<&crate::dsp::ChannelStats> {
        match self {
            Self::F32(c) => c.stats.as_ref(),
            Self::F64(c) => c.stats.as_ref(),
        }
    }

    fn evaluate(&self, samples: &[crate::dsp::WindowSample], batch: usize) -> Result<EvalReport, EvalError> {
        match self {
            Self::F32(c) => evaluate_model(&c.params, samples, batch),
            Self::F64(c) => evaluate_model(&c.params, samples, batch),
        }
    }

    fn predict(&self, samples: &[crate::dsp::WindowSample], batch: usize) -> Result<Vec<[f64; 2]>, TrainError> {
        match self {
            Self::F32(c) => predict_proba(&c.params, samples, batch),
            Self::F64(c) => predict_proba(&c.params, samples, batch),
        }
    }
}

/// Scores the checkpoint on the persisted test split and writes
/// `report.txt`, `metrics.kv`, `confusion.csv` and `history.csv` (a copy of
/// `history` when given, otherwise just the header).
pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset: &Path,
    history: Option<&Path>,
    out: &Path,
) -> Result<EvalReport, CliError> {
    let ck = AnyCheckpoint::load(checkpoint, &cfg.arch)?;
    let data = load_prepared(dataset)?;
    check_dataset_shape(cfg, &data)?;
    if ck.pipeline() != Some(&data.config) || ck.stats() != data.stats.as_ref() {
        log::warn!("checkpoint preprocessing settings differ from the dataset's");
    }
    let hist = match history {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            TrainHistory::from_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => TrainHistory::default(),
    };
    let report = ck.evaluate(&data.split.test, cfg.io.eval_batch_size)?;
    let dir = OutputDir::open(out, cfg)?;
    export_report(&report, &hist, &ReportPaths::in_dir(&dir.path))?;
    log::info!("test accuracy {:.4}, test loss {:.4}", report.accuracy, report.test_loss.unwrap_or(f64::NAN));
    Ok(report)
}

/// Per-window probabilities for one recording and the recording-level
/// majority vote.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<[f64; 2]>,
    pub window_labels: Vec<ClassLabel>,
    /// Votes for truth and lie.
    pub votes: [usize; 2],
    /// Majority label; a tie goes to truth.
    pub recording_label: ClassLabel,
}

/// Runs filter, standardization with the checkpoint's stored statistics,
/// windowing and the forward pass on one raw recording. Writes
/// `predictions.csv` and `prediction.txt`.
pub fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, recording: &Path, out: &Path) -> Result<Prediction, CliError> {
    let ck = AnyCheckpoint::load(checkpoint, &cfg.arch)?;
    let pipeline = ck
        .pipeline()
        .cloned()
        .ok_or_else(|| CliError::Data(format!("{} carries no preprocessing settings", checkpoint.display())))?;
    let channels = ck.stats().map_or_else(|| cfg.io.channels.clone(), |s| s.channel_names.clone());
    let raw = load_recording(recording, &channels, ClassLabel::Truth, pipeline.sample_rate_hz)?;
    let rec = bandpass_filter(&clean_rows(&raw)?, &pipeline.filter_spec()).map_err(DspError::at("filter"))?;
    let rec = match pipeline.standardize {
        StandardizeMode::Off => rec,
        StandardizeMode::PerRecording => {
            let (mut v, _) = standardize(std::slice::from_ref(&rec), StatsSource::PerRecording)
                .map_err(DspError::at("standardize"))?;
            v.remove(0)
        }
        StandardizeMode::TrainingSet => {
            let stats = ck
                .stats()
                .ok_or_else(|| CliError::Data(format!("{} carries no channel statistics", checkpoint.display())))?;
            apply_stats(&rec, stats).map_err(DspError::at("standardize"))?
        }
    };
    let windows = window_segments(&rec, pipeline.window, pipeline.stride)?;
    if windows.is_empty() {
        return Err(CliError::Data(format!(
            "no windows: {} has {} usable samples, a window needs {}",
            recording.display(),
            rec.n_samples(),
            pipeline.window
        )));
    }
    let probabilities = ck.predict(&windows, cfg.io.eval_batch_size)?;
    let window_labels: Vec<ClassLabel> = probabilities.iter().map(argmax_label).collect();
    let lie = window_labels.iter().filter(|&&l| l == ClassLabel::Lie).count();
    let votes = [window_labels.len() - lie, lie];
    let recording_label = if votes[1] > votes[0] { ClassLabel::Lie } else { ClassLabel::Truth };

    let dir = OutputDir::open(out, cfg)?;
    let mut csv = String::from("window,start_sample,p_truth,p_lie,label\n");
    for (i, (p, l)) in probabilities.iter().zip(&window_labels).enumerate() {
        let _ = writeln!(csv, "{i},{},{},{},{l}", i * pipeline.stride, p[0], p[1]);
    }
    write_file(&dir.file("predictions.csv"), &csv)?;
    let summary = format!(
        "recording = {}\nwindows = {}\nvotes.truth = {}\nvotes.lie = {}\n\
         # recording-level label by majority vote over windows (ties to truth); \
         the model itself classifies windows\nrecording_label = {recording_label}\n",
        recording.display(),
        window_labels.len(),
        votes[0],
        votes[1]
    );
    write_file(&dir.file("prediction.txt"), &summary)?;
    Ok(Prediction {
        probabilities,
        window_labels,
        votes,
        recording_label,
    })
}

#[derive(Debug, Parser)]
#[command(name = "eegbigru", version, about = "Bi-GRU EEG window classifier: synth, preprocess, train, evaluate, predict")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seeds.global`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `pipeline.mode`.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<PipelineMode>,
}

fn parse_mode(s: &str) -> Result<PipelineMode, String> {
    PipelineMode::parse(s).ok_or_else(|| format!("expected paper_faithful or leak_safe, got {s:?}"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-class dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Filter, window, balance, augment and split recordings.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Cross-validate and train the final model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a checkpoint on a dataset's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Training curve to copy into the report directory.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Classify the windows of one raw recording.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        recording: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common }
            | Command::Preprocess { common, .. }
            | Command::Train { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Predict { common, .. } => common,
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let c = cli.command.common();
    let cfg = RunConfig::load(&c.config, c.seed, c.mode)?;
    match &cli.command {
        Command::Synth { common } => cmd_synth(&cfg, &common.out).map(drop),
        Command::Preprocess { common, manifest } => cmd_preprocess(&cfg, manifest, &common.out).map(drop),
        Command::Train { common, dataset } => cmd_train(&cfg, dataset, &common.out).map(drop),
        Command::Evaluate {
            common,
            checkpoint,
            dataset,
            history,
        } => {
            let r = cmd_evaluate(&cfg, checkpoint, dataset, history.as_deref(), &common.out)?;
            print!("{}", r.to_table());
            Ok(())
        }
        Command::Predict {
            common,
            checkpoint,
            recording,
        } => {
            let p = cmd_predict(&cfg, checkpoint, recording, &common.out)?;
            println!(
                "{}: {} ({} of {} windows voted lie)",
                recording.display(),
                p.recording_label,
                p.votes[1],
                p.window_labels.len()
            );
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        let text = r#"
            [seeds]
            global = 7
            [synth]
            n_recordings = 6
            duration_s = 2.0
            [pipeline]
            window = 32
            stride = 16
            [arch]
            seq_len = 32
            gru_hidden = [4, 3]
            head_input = 6
            dense_hidden = [4]
            [train]
            max_epochs = 1
            k_folds = 2
            batch_size = 16
        "#;
        RunConfig::parse(text).unwrap().resolve(None, None).unwrap()
    }

    #[test]
    fn defaults_resolve_and_round_trip() {
        let cfg = RunConfig::default().resolve(None, None).unwrap();
        assert_eq!(cfg.pipeline.seeds, PipelineSeeds::from_global(0));
        assert_eq!(cfg.train.seeds, TrainSeeds::from_global(0));
        let echoed = cfg.to_toml().unwrap();
        let back = RunConfig::parse(&echoed).unwrap().resolve(None, None).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_and_explicit_sub_seeds() {
        let cfg = RunConfig::parse("[seeds]\nglobal = 1\nsplit = \"18446744073709551615\"\nfolds = 3\n")
            .unwrap()
            .resolve(Some(9), Some(PipelineMode::PaperFaithful))
            .unwrap();
        assert_eq!(cfg.seeds.global, 9);
        assert_eq!(cfg.pipeline.mode, PipelineMode::PaperFaithful);
        assert_eq!(cfg.pipeline.seeds.split, u64::MAX);
        assert_eq!(cfg.train.seeds.folds, 3);
        assert_eq!(cfg.pipeline.seeds.balance, seed::derive(9, "balance"));
        assert_eq!(cfg.train.seeds.init, seed::derive(9, "init"));
    }

    #[test]
    fn unknown_keys_and_inconsistent_sections_rejected() {
        for text in ["[pipeline]\nwindoww = 3\n", "bogus = 1\n", "[seeds]\nglobal = -1\n"] {
            assert!(matches!(RunConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
        let cfg = RunConfig::parse("[pipeline]\nwindow = 32\nstride = 16\n").unwrap();
        assert!(matches!(cfg.resolve(None, None), Err(CliError::Config(m)) if m.contains("seq_len")));
        let cfg = RunConfig::parse("[io]\nchannels = [\"F3\"]\n").unwrap();
        assert!(matches!(cfg.resolve(None, None), Err(CliError::Config(m)) if m.contains("input_features")));
    }

    #[test]
    fn lock_excludes_second_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let held = OutputDir::open(dir.path(), &cfg).unwrap();
        let err = OutputDir::open(dir.path(), &cfg).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_IO);
        drop(held);
        assert!(OutputDir::open(dir.path(), &cfg).is_ok());
        assert!(dir.path().join(RESOLVED_CONFIG).exists());
    }

    #[test]
    fn synth_is_byte_reproducible_and_rejects_empty_spec() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let a = cmd_synth(&cfg, &dir.path().join("a")).unwrap();
        let b = cmd_synth(&cfg, &dir.path().join("b")).unwrap();
        let files: Vec<_> = fs::read_dir(a.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(files.iter().filter(|f| f.to_string_lossy().starts_with("rec_")).count(), 6);
        for f in files {
            let x = fs::read(a.parent().unwrap().join(&f)).unwrap();
            let y = fs::read(b.parent().unwrap().join(&f)).unwrap();
            assert_eq!(x, y, "{f:?}");
        }
        let mut empty = cfg.clone();
        empty.synth.n_recordings = 0;
        let err = cmd_synth(&empty, &dir.path().join("c")).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn missing_manifest_and_pipeline_failure_exit_differently() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let missing = cmd_preprocess(&cfg, &dir.path().join("nope.csv"), &dir.path().join("p")).unwrap_err();
        assert_eq!(missing.exit_code(), EXIT_IO);

        // two recordings cannot be split by recording with a test share
        let mut tiny = cfg.clone();
        tiny.synth.n_recordings = 2;
        let manifest = cmd_synth(&tiny, &dir.path().join("s")).unwrap();
        let failed = cmd_preprocess(&cfg, &manifest, &dir.path().join("q")).unwrap_err();
        assert_eq!(failed.exit_code(), EXIT_DATA);
        assert_ne!(missing.exit_code(), failed.exit_code());
    }

    #[test]
    fn parse_errors_exit_with_config_code() {
        assert_eq!(main_with_args(["eegbigru", "train"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["eegbigru", "synth", "--config", "/nonexistent.toml", "--out", "/tmp/x"]), EXIT_CONFIG);
    }
}
