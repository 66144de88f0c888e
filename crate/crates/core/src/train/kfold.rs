use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fit, Selection, TrainConfig, TrainError, TrainHistory};
use crate::autodiff::Real;
use crate::dataio::ClassLabel;
use crate::dsp::{split_train_test, WindowSample};
use crate::nn::{ArchConfig, ModelParams};
use crate::seed::mix;

/// Fold index of every sample. Each class is shuffled, the class lists are
/// concatenated, and position `p` goes to fold `p mod k`; fold sizes differ
/// by at most one and every fold gets its share of each class.
pub fn stratified_folds(labels: &[ClassLabel], k: usize, seed: u64) -> Result<Vec<usize>, TrainError> {
    if k < 2 {
        return Err(TrainError::BadConfig(format!("k_folds must be ≥ 2, got {k}")));
    }
    let mut order = Vec::with_capacity(labels.len());
    for class in ClassLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(TrainError::TooFewSamples(format!(
                "class {class} has {} samples, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, class.index() as u64)));
        order.extend(idx);
    }
    let mut fold = vec![0; labels.len()];
    for (p, &i) in order.iter().enumerate() {
        fold[i] = p % k;
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult<T> {
    pub history: TrainHistory,
    pub params: ModelParams<T>,
    /// Indices into the training split used for validation.
    pub val_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult<T> {
    pub folds: Vec<FoldResult<T>>,
    pub selection: Selection,
    /// Model carried forward to evaluation.
    pub final_params: ModelParams<T>,
    /// History of the final refit; for [`Selection::BestFold`] a copy of the
    /// chosen fold's history.
    pub final_history: TrainHistory,
    /// Fold whose model was chosen, for [`Selection::BestFold`].
    pub chosen_fold: Option<usize>,
}

/// k-fold cross validation over the training split followed by final-model
/// selection. Every fold and the final refit start from fresh parameters
/// with their own seeds.
pub fn kfold_cv<T: Real>(samples: &[WindowSample], arch: &ArchConfig, cfg: &TrainConfig) -> Result<CvResult<T>, TrainError> {
    cfg.validate()?;
    let labels: Vec<ClassLabel> = samples.iter().map(|s| s.label).collect();
    let assignment = stratified_folds(&labels, cfg.k_folds, cfg.seeds.folds)?;
    let mut folds = Vec::with_capacity(cfg.k_folds);
    for f in 0..cfg.k_folds {
        let (mut train, mut val, mut val_indices) = (Vec::new(), Vec::new(), Vec::new());
        for (i, s) in samples.iter().enumerate() {
            if assignment[i] == f {
                val.push(s.clone());
                val_indices.push(i);
            } else {
                train.push(s.clone());
            }
        }
        log::info!("fold {}/{}: {} train, {} validation", f + 1, cfg.k_folds, train.len(), val.len());
        let seeds = cfg.seeds.for_run(f as u64);
        let init = ModelParams::build(arch, seeds.init)?;
        let (params, history) = fit(init, &train, &val, cfg, &seeds)?;
        folds.push(FoldResult {
            history,
            params,
            val_indices,
        });
    }

    match cfg.selection {
        Selection::BestFold => {
            let (chosen, best) = folds
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let la = a.1.history.best_val_loss().unwrap_or(f64::INFINITY);
                    let lb = b.1.history.best_val_loss().unwrap_or(f64::INFINITY);
                    la.total_cmp(&lb)
                })
                .expect("k ≥ 2 folds");
            let (final_params, final_history) = (best.params.clone(), best.history.clone());
            Ok(CvResult {
                folds,
                selection: cfg.selection,
                final_params,
                final_history,
                chosen_fold: Some(chosen),
            })
        }
        Selection::RetrainFull => {
            let k = cfg.k_folds as u64;
            let holdout = split_train_test(samples, cfg.holdout_fraction, mix(cfg.seeds.folds, k), true)?;
            log::info!(
                "final refit: {} train, {} hold-out",
                holdout.train.len(),
                holdout.test.len()
            );
            let seeds = cfg.seeds.for_run(k);
            let init = ModelParams::build(arch, seeds.init)?;
            let (final_params, final_history) = fit(init, &holdout.train, &holdout.test, cfg, &seeds)?;
            Ok(CvResult {
                folds,
                selection: cfg.selection,
                final_params,
                final_history,
                chosen_fold: None,
            })
        }
    }
}
