use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::{
    augment_gaussian, balance_undersample, bandpass_filter, class_counts, split_train_test, standardize,
    window_segments, ChannelStats, DspError, FilterSpec, SplitDataset, StatsSource, WindowSample,
};
use crate::dataio::{EegRecording, Labeled};
use crate::seed;

/// Stage ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// filter → standardize → window → balance → augment → split. Windows of
    /// one recording and noisy copies of a window can land on both sides.
    PaperFaithful,
    /// filter → split recordings → standardize → window → balance(train) →
    /// augment(train). The test side never sees a training recording or a
    /// synthetic copy.
    #[default]
    LeakSafe,
}

impl PipelineMode {
    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::PaperFaithful => "paper_faithful",
            PipelineMode::LeakSafe => "leak_safe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper_faithful" => Some(PipelineMode::PaperFaithful),
            "leak_safe" => Some(PipelineMode::LeakSafe),
            _ => None,
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-channel z-scoring after filtering. `TrainingSet` pools the training
/// recordings in leak-safe mode and all recordings in paper-faithful mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    Off,
    PerRecording,
    #[default]
    TrainingSet,
}

/// Seeds for the three randomized stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineSeeds {
    pub balance: u64,
    pub augment: u64,
    pub split: u64,
}

impl PipelineSeeds {
    pub fn from_global(global: u64) -> Self {
        Self {
            balance: seed::derive(global, "balance"),
            augment: seed::derive(global, "augment"),
            split: seed::derive(global, "split"),
        }
    }
}

impl Default for PipelineSeeds {
    fn default() -> Self {
        Self::from_global(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub sample_rate_hz: f64,
    pub f_low: f64,
    pub f_high: f64,
    pub order: usize,
    pub zero_phase: bool,
    pub window: usize,
    pub stride: usize,
    pub noise_factor: f64,
    pub test_fraction: f64,
    pub stratified: bool,
    pub mode: PipelineMode,
    pub standardize: StandardizeMode,
    #[serde(skip)]
    pub seeds: PipelineSeeds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let f = FilterSpec::default();
        Self {
            sample_rate_hz: crate::dataio::DEFAULT_SAMPLE_RATE_HZ,
            f_low: f.f_low_hz,
            f_high: f.f_high_hz,
            order: f.order,
            zero_phase: f.zero_phase,
            window: 64,
            stride: 32,
            noise_factor: 0.02,
            test_fraction: 0.2,
            stratified: true,
            mode: PipelineMode::default(),
            standardize: StandardizeMode::default(),
            seeds: PipelineSeeds::default(),
        }
    }
}

impl PipelineConfig {
    pub fn filter_spec(&self) -> FilterSpec {
        FilterSpec {
            f_low_hz: self.f_low,
            f_high_hz: self.f_high,
            order: self.order,
            zero_phase: self.zero_phase,
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        self.filter_spec().validate(self.sample_rate_hz)?;
        if self.window < 1 || self.stride < 1 || self.stride > self.window {
            return Err(DspError::BadParams(format!(
                "window {} / stride {} must satisfy 1 ≤ stride ≤ window",
                self.window, self.stride
            )));
        }
        if !(self.noise_factor >= 0.0 && self.noise_factor.is_finite()) {
            return Err(DspError::BadParams(format!("noise_factor must be ≥ 0, got {}", self.noise_factor)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(DspError::BadParams(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Class counts after one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageCount {
    pub stage: String,
    /// `recordings` or `windows`.
    pub unit: String,
    pub truth: usize,
    pub lie: usize,
}

impl StageCount {
    fn of<S: Labeled>(stage: &str, unit: &str, items: &[S]) -> Self {
        let [truth, lie] = class_counts(items);
        Self {
            stage: stage.into(),
            unit: unit.into(),
            truth,
            lie,
        }
    }

    pub fn total(&self) -> usize {
        self.truth + self.lie
    }
}

/// Stage-by-stage class counts of one pipeline run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineReport {
    pub mode: PipelineMode,
    pub stages: Vec<StageCount>,
}

impl PipelineReport {
    pub fn stage(&self, name: &str) -> Option<&StageCount> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut out = format!("pipeline mode: {}\n", self.mode);
        let _ = writeln!(out, "{:<20} {:<11} {:>8} {:>8} {:>8}", "stage", "unit", "truth", "lie", "total");
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{:<20} {:<11} {:>8} {:>8} {:>8}",
                s.stage,
                s.unit,
                s.truth,
                s.lie,
                s.total()
            );
        }
        out
    }

    /// `key = value` lines: `mode`, then `<stage>.unit`, `<stage>.truth`,
    /// `<stage>.lie` for every stage in order.
    pub fn to_kv(&self) -> String {
        let mut out = format!("mode = {}\n", self.mode);
        for s in &self.stages {
            let _ = writeln!(out, "{}.unit = {}", s.stage, s.unit);
            let _ = writeln!(out, "{}.truth = {}", s.stage, s.truth);
            let _ = writeln!(out, "{}.lie = {}", s.stage, s.lie);
        }
        out
    }

    /// Inverse of [`to_kv`](Self::to_kv).
    pub fn from_kv(text: &str) -> Result<Self, String> {
        let mut mode = None;
        let mut stages: Vec<StageCount> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            if key == "mode" {
                mode = Some(PipelineMode::parse(value).ok_or_else(|| format!("unknown mode {value}"))?);
                continue;
            }
            let (stage, field) = key.rsplit_once('.').ok_or_else(|| format!("line {}: bad key {key}", n + 1))?;
            if stages.last().map(|s| s.stage != stage).unwrap_or(true) {
                stages.push(StageCount {
                    stage: stage.into(),
                    unit: String::new(),
                    truth: 0,
                    lie: 0,
                });
            }
            let s = stages.last_mut().expect("pushed above");
            let count = || value.parse::<usize>().map_err(|e| format!("line {}: {e}", n + 1));
            match field {
                "unit" => s.unit = value.into(),
                "truth" => s.truth = count()?,
                "lie" => s.lie = count()?,
                other => return Err(format!("line {}: unknown field {other}", n + 1)),
            }
        }
        Ok(Self {
            mode: mode.ok_or("missing mode")?,
            stages,
        })
    }
}

/// Split windows, the stage report, and the pooled standardization
/// statistics when one set was used (needed again at inference).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub split: SplitDataset,
    pub report: PipelineReport,
    pub stats: Option<ChannelStats>,
}

fn window_all(recs: &[EegRecording], cfg: &PipelineConfig) -> Result<Vec<WindowSample>, DspError> {
    let mut out = Vec::new();
    for r in recs {
        out.extend(window_segments(r, cfg.window, cfg.stride)?);
    }
    Ok(out)
}

fn with_copies(samples: Vec<WindowSample>, cfg: &PipelineConfig) -> Result<Vec<WindowSample>, DspError> {
    let copies = augment_gaussian(&samples, cfg.noise_factor, cfg.seeds.augment)?;
    let mut all = samples;
    all.extend(copies);
    Ok(all)
}

/// Runs the full preprocessing chain in the order fixed by `cfg.mode`.
pub fn run_pipeline(recs: &[EegRecording], cfg: &PipelineConfig) -> Result<PipelineOutput, DspError> {
    if recs.is_empty() {
        return Err(DspError::EmptyInput);
    }
    cfg.validate()?;
    if let Some(r) = recs.iter().find(|r| r.sample_rate_hz != cfg.sample_rate_hz) {
        return Err(DspError::BadParams(format!(
            "({}, {}) is sampled at {} Hz, configuration expects {} Hz",
            r.subject_id, r.run_id, r.sample_rate_hz, cfg.sample_rate_hz
        )));
    }
    let mut stages = vec![StageCount::of("input", "recordings", recs)];

    let spec = cfg.filter_spec();
    let filtered = recs
        .iter()
        .map(|r| bandpass_filter(r, &spec))
        .collect::<Result<Vec<_>, _>>()
        .map_err(DspError::at("filter"))?;
    stages.push(StageCount::of("filter", "recordings", &filtered));

    let (split, stats) = match cfg.mode {
        PipelineMode::PaperFaithful => {
            let (normed, stats) = match cfg.standardize {
                StandardizeMode::Off => (filtered, None),
                StandardizeMode::PerRecording => {
                    (standardize(&filtered, StatsSource::PerRecording).map_err(DspError::at("standardize"))?.0, None)
                }
                StandardizeMode::TrainingSet => {
                    let (n, mut s) =
                        standardize(&filtered, StatsSource::TrainingSet).map_err(DspError::at("standardize"))?;
                    (n, s.pop())
                }
            };
            let windows = window_all(&normed, cfg).map_err(DspError::at("window"))?;
            stages.push(StageCount::of("window", "windows", &windows));
            let balanced = balance_undersample(&windows, cfg.seeds.balance).map_err(DspError::at("balance"))?;
            stages.push(StageCount::of("balance", "windows", &balanced));
            let augmented = with_copies(balanced, cfg).map_err(DspError::at("augment"))?;
            stages.push(StageCount::of("augment", "windows", &augmented));
            let split = split_train_test(&augmented, cfg.test_fraction, cfg.seeds.split, cfg.stratified)
                .map_err(DspError::at("split"))?;
            (split, stats)
        }
        PipelineMode::LeakSafe => {
            let by_rec = split_train_test(&filtered, cfg.test_fraction, cfg.seeds.split, cfg.stratified)
                .map_err(DspError::at("split"))?;
            stages.push(StageCount::of("split.train", "recordings", &by_rec.train));
            stages.push(StageCount::of("split.test", "recordings", &by_rec.test));
            let (train_recs, test_recs, stats) = match cfg.standardize {
                StandardizeMode::Off => (by_rec.train, by_rec.test, None),
                StandardizeMode::PerRecording => {
                    let f = |rs: &[EegRecording]| {
                        standardize(rs, StatsSource::PerRecording).map(|x| x.0).map_err(DspError::at("standardize"))
                    };
                    (f(&by_rec.train)?, f(&by_rec.test)?, None)
                }
                StandardizeMode::TrainingSet => {
                    let (train, mut s) =
                        standardize(&by_rec.train, StatsSource::TrainingSet).map_err(DspError::at("standardize"))?;
                    let s = s.pop().expect("pooled stats");
                    let test = by_rec
                        .test
                        .iter()
                        .map(|r| super::apply_stats(r, &s))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(DspError::at("standardize"))?;
                    (train, test, Some(s))
                }
            };
            let train_w = window_all(&train_recs, cfg).map_err(DspError::at("window"))?;
            let test_w = window_all(&test_recs, cfg).map_err(DspError::at("window"))?;
            stages.push(StageCount::of("window.train", "windows", &train_w));
            stages.push(StageCount::of("window.test", "windows", &test_w));
            if test_w.is_empty() {
                return Err(DspError::at("window")(DspError::TooFewSamples(
                    "test recordings produced no windows".into(),
                )));
            }
            let balanced = balance_undersample(&train_w, cfg.seeds.balance).map_err(DspError::at("balance"))?;
            stages.push(StageCount::of("balance.train", "windows", &balanced));
            let train = with_copies(balanced, cfg).map_err(DspError::at("augment"))?;
            stages.push(StageCount::of("augment.train", "windows", &train));
            (
                SplitDataset {
                    train,
                    test: test_w,
                    seed: cfg.seeds.split,
                    test_fraction: cfg.test_fraction,
                },
                stats,
            )
        }
    };
    stages.push(StageCount::of("final.train", "windows", &split.train));
    stages.push(StageCount::of("final.test", "windows", &split.test));
    Ok(PipelineOutput {
        split,
        report: PipelineReport { mode: cfg.mode, stages },
        stats,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::dataio::{synth_generate, SynthSpec};

    fn recs(n: usize) -> Vec<EegRecording> {
        let spec = SynthSpec {
            n_recordings: n,
            duration_s: 3.0,
            ..SynthSpec::default()
        };
        synth_generate(&spec, 5).unwrap().1
    }

    #[test]
    fn empty_input_fails_first() {
        let bad = PipelineConfig {
            order: 3,
            ..PipelineConfig::default()
        };
        assert!(matches!(run_pipeline(&[], &bad), Err(DspError::EmptyInput)));
    }

    #[test]
    fn paper_faithful_stage_counts() {
        let cfg = PipelineConfig {
            mode: PipelineMode::PaperFaithful,
            ..PipelineConfig::default()
        };
        let mut rs = recs(10);
        // drop one lie recording so balancing has something to do
        rs.remove(9);
        let out = run_pipeline(&rs, &cfg).unwrap();
        let r = &out.report;
        let win = r.stage("window").unwrap();
        assert_eq!((win.truth, win.lie), (5 * 11, 4 * 11));
        let bal = r.stage("balance").unwrap();
        assert_eq!((bal.truth, bal.lie), (44, 44));
        let aug = r.stage("augment").unwrap();
        assert_eq!((aug.truth, aug.lie), (88, 88));
        let (tr, te) = (r.stage("final.train").unwrap(), r.stage("final.test").unwrap());
        assert_eq!((te.truth, te.lie), (18, 18));
        assert_eq!(tr.total() + te.total(), 176);
        assert!(out.stats.is_some());
    }

    #[test]
    fn leak_safe_keeps_test_clean() {
        let out = run_pipeline(&recs(20), &PipelineConfig::default()).unwrap();
        let train_recs: HashSet<_> = out.split.train.iter().map(|w| w.recording_key()).collect();
        assert!(out.split.test.iter().all(|w| !w.augmented));
        assert!(out.split.test.iter().all(|w| !train_recs.contains(&w.recording_key())));
        let r = &out.report;
        assert_eq!(r.stage("split.test").unwrap().total(), 4);
        let bal = r.stage("balance.train").unwrap();
        assert_eq!(bal.truth, bal.lie);
        assert_eq!(r.stage("augment.train").unwrap().total(), 2 * bal.total());
    }

    #[test]
    fn deterministic() {
        let rs = recs(10);
        for mode in [PipelineMode::PaperFaithful, PipelineMode::LeakSafe] {
            let cfg = PipelineConfig { mode, ..PipelineConfig::default() };
            assert_eq!(run_pipeline(&rs, &cfg).unwrap(), run_pipeline(&rs, &cfg).unwrap());
        }
    }

    #[test]
    fn report_kv_round_trip() {
        let out = run_pipeline(&recs(10), &PipelineConfig::default()).unwrap();
        let parsed = PipelineReport::from_kv(&out.report.to_kv()).unwrap();
        assert_eq!(parsed, out.report);
        assert!(out.report.to_text().contains("augment.train"));
        assert!(PipelineReport::from_kv("filter.truth = 3\n").is_err());
    }

    #[test]
    fn stage_errors_carry_context() {
        let mut rs = recs(4);
        for r in &mut rs {
            r.samples.truncate(13 * 10);
        }
        let err = run_pipeline(&rs, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, DspError::Stage { stage: "window", .. }), "{err}");
        let mut rs = recs(4);
        rs[0].sample_rate_hz = 256.0;
        assert!(matches!(run_pipeline(&rs, &PipelineConfig::default()), Err(DspError::BadParams(_))));
    }
}
