//! Optimization: Adam, mini-batch epochs, early stopping, k-fold cross
//! validation and checkpoints.

mod adam;
mod checkpoint;
mod data;
mod early;
mod fit;
mod kfold;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{batch_tensors, predict_proba};
pub use early::{early_stopping_check, EarlyStopping, StopDecision};
pub use fit::{fit, fit_with, train_epoch, EpochMetrics};
pub use kfold::{kfold_cv, stratified_folds, CvResult, FoldResult};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::container::ContainerError;
use crate::dsp::DspError;
use crate::nn::NnError;
use crate::seed;

/// How the model scored on the test split is chosen once CV is done.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Fresh model on the whole training split, early-stopped on a
    /// stratified hold-out of `holdout_fraction`.
    #[default]
    RetrainFull,
    /// The fold model with the lowest best validation loss.
    BestFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub k_folds: usize,
    pub patience: usize,
    /// A validation loss counts as an improvement only if it is below the
    /// best so far by more than this.
    pub min_delta: f64,
    pub adam: AdamConfig,
    pub selection: Selection,
    pub holdout_fraction: f64,
    #[serde(skip)]
    pub seeds: TrainSeeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 64,
            k_folds: 5,
            patience: 10,
            min_delta: 0.0,
            adam: AdamConfig::default(),
            selection: Selection::default(),
            holdout_fraction: 0.1,
            seeds: TrainSeeds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("max_epochs, batch_size and patience must be positive".into());
        }
        if self.k_folds < 2 {
            return bad(format!("k_folds must be ≥ 2, got {}", self.k_folds));
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta must be ≥ 0, got {}", self.min_delta));
        }
        let a = &self.adam;
        if !(a.lr >= 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad(format!("Adam hyperparameters out of range: {a:?}"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!("holdout_fraction must lie in (0, 1), got {}", self.holdout_fraction));
        }
        if self.patience >= self.max_epochs {
            log::warn!(
                "patience {} ≥ max_epochs {}: early stopping can never trigger",
                self.patience,
                self.max_epochs
            );
        }
        Ok(())
    }
}

/// Seeds of the stochastic training stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSeeds {
    pub init: u64,
    pub shuffle: u64,
    pub dropout: u64,
    pub folds: u64,
}

impl TrainSeeds {
    pub fn from_global(global: u64) -> Self {
        Self {
            init: seed::derive(global, "init"),
            shuffle: seed::derive(global, "shuffle"),
            dropout: seed::derive(global, "dropout"),
            folds: seed::derive(global, "folds"),
        }
    }

    /// Independent streams for run number `k` (a fold or the final refit).
    pub fn for_run(&self, k: u64) -> Self {
        Self {
            init: seed::mix(self.init, k),
            shuffle: seed::mix(self.shuffle, k),
            dropout: seed::mix(self.dropout, k),
            folds: self.folds,
        }
    }
}

impl Default for TrainSeeds {
    fn default() -> Self {
        Self::from_global(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub n_batches: usize,
}

/// Per-epoch metrics of one training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch at which early stopping fired, if it did.
    pub stopped_epoch: Option<usize>,
    /// Epoch whose weights were kept.
    pub best_epoch: Option<usize>,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

impl TrainHistory {
    pub fn val_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_loss).collect()
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        let e = self.best_epoch?;
        self.records.iter().find(|r| r.epoch == e).map(|r| r.val_loss)
    }

    /// Curve file; values use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
        }
        out
    }

    /// Parses [`to_csv`](Self::to_csv) output (batch counts and stop
    /// markers are not part of the file).
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
            return Err("missing history header".into());
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(format!("row {}: expected 5 fields", i + 2));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", i + 2));
            records.push(EpochRecord {
                epoch: f[0].trim().parse().map_err(|e| format!("row {}: {e}", i + 2))?,
                train_loss: num(f[1])?,
                train_acc: num(f[2])?,
                val_loss: num(f[3])?,
                val_acc: num(f[4])?,
                n_batches: 0,
            });
        }
        Ok(Self {
            records,
            stopped_epoch: None,
            best_epoch: None,
        })
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("no training samples")]
    EmptyData,
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("window shape {found:?} does not match the model input {expected:?}")]
    InputShape { found: Vec<usize>, expected: Vec<usize> },
    #[error("checkpoint layer {layer} mismatch: {detail}")]
    ArchMismatch { layer: String, detail: String },
    #[error("checkpoint stores {found} parameters, expected {expected}")]
    DtypeMismatch { found: String, expected: String },
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Nn(e.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.max_epochs, c.batch_size, c.k_folds, c.patience), (100, 64, 5, 10));
        c.validate().unwrap();
        for bad in [
            TrainConfig { batch_size: 0, ..c.clone() },
            TrainConfig { k_folds: 1, ..c.clone() },
            TrainConfig { holdout_fraction: 0.0, ..c.clone() },
            TrainConfig {
                adam: AdamConfig { beta1: 1.0, ..AdamConfig::default() },
                ..c.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        TrainConfig { max_epochs: 1, ..c }.validate().unwrap();
    }

    #[test]
    fn history_csv_round_trip() {
        let empty = TrainHistory::default();
        assert_eq!(empty.to_csv(), format!("{HISTORY_HEADER}\n"));
        let h = TrainHistory {
            records: vec![
                EpochRecord { epoch: 1, train_loss: 0.7, train_acc: 0.5, val_loss: 0.69, val_acc: 0.5, n_batches: 0 },
                EpochRecord { epoch: 2, train_loss: 0.1 + 0.2, train_acc: 1.0 / 3.0, val_loss: 1e-9, val_acc: 1.0, n_batches: 0 },
            ],
            ..TrainHistory::default()
        };
        assert_eq!(TrainHistory::from_csv(&h.to_csv()).unwrap(), h);
        assert!(TrainHistory::from_csv("a,b\n").is_err());
    }
}
