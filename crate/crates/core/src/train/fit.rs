use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{batch_tensors, check_input, predict_proba};
use super::early::{EarlyStopping, StopDecision};
use super::{AdamState, EpochRecord, TrainConfig, TrainError, TrainHistory, TrainSeeds};
use crate::autodiff::{Real, Tape};
use crate::dsp::WindowSample;
use crate::nn::ModelParams;
use crate::seed::mix;

/// Sample-weighted means over one pass through the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub n_samples: usize,
    pub batch_sizes: Vec<usize>,
}

impl EpochMetrics {
    pub fn n_batches(&self) -> usize {
        self.batch_sizes.len()
    }
}

/// One epoch: seeded shuffle, then forward, loss, backward and an Adam step
/// per batch. The final short batch is kept. Loss and accuracy are averaged
/// per sample, with accuracy taken from the training-mode forward pass.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Real>(
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    samples: &[WindowSample],
    batch_size: usize,
    shuffle_seed: u64,
    dropout_seed: u64,
    epoch: usize,
) -> Result<EpochMetrics, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyData);
    }
    if batch_size == 0 {
        return Err(TrainError::BadConfig("batch_size must be positive".into()));
    }
    check_input(params, &samples[0])?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(shuffle_seed, epoch as u64)));

    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut batch_sizes = Vec::new();
    for (b, idx) in order.chunks(batch_size).enumerate() {
        let refs: Vec<&WindowSample> = idx.iter().map(|&i| &samples[i]).collect();
        let (x, y) = batch_tensors::<T>(&refs)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let xv = tape.constant(x);
        let logits = bound.logits(&mut tape, xv, true, mix(mix(dropout_seed, epoch as u64), b as u64))?;
        let loss = tape.softmax_cross_entropy(logits, y)?;
        let lv = tape.value(loss).item().to_f64_lossy();
        if !lv.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: b });
        }
        loss_sum += lv * refs.len() as f64;
        for (row, s) in tape.value(logits).data().chunks(2).zip(&refs) {
            let pred = usize::from(row[1] > row[0]);
            correct += usize::from(pred == s.label.index());
        }
        let mut grads = tape.backward(loss)?;
        let g = bound.collect_grads(&mut grads);
        super::adam_step(params, &g, state)?;
        batch_sizes.push(refs.len());
    }
    let n = samples.len();
    Ok(EpochMetrics {
        loss: loss_sum / n as f64,
        accuracy: correct as f64 / n as f64,
        n_samples: n,
        batch_sizes,
    })
}

/// Mean clamped cross-entropy and argmax accuracy (ties to truth) of
/// probability rows against sample labels.
pub(crate) fn score(probs: &[[f64; 2]], samples: &[WindowSample]) -> (f64, f64) {
    let eps = crate::autodiff::PROB_CLAMP;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, s) in probs.iter().zip(samples) {
        let k = s.label.index();
        loss -= p[k].clamp(eps, 1.0).ln();
        let pred = usize::from(p[1] > p[0]);
        correct += usize::from(pred == k);
    }
    let n = samples.len().max(1) as f64;
    (loss / n, correct as f64 / n)
}

/// Epoch loop with early stopping. `validate` returns `(val_loss, val_acc)`
/// for the current weights. The returned parameters are those of the best
/// validation epoch, whether or not stopping fired.
pub fn fit_with<T: Real>(
    mut params: ModelParams<T>,
    train: &[WindowSample],
    cfg: &TrainConfig,
    seeds: &TrainSeeds,
    validate: &mut dyn FnMut(&ModelParams<T>) -> Result<(f64, f64), TrainError>,
) -> Result<(ModelParams<T>, TrainHistory), TrainError> {
    cfg.validate()?;
    let mut state = AdamState::for_model(&params, cfg.adam);
    let mut es = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.max_epochs {
        let m = train_epoch(&mut params, &mut state, train, cfg.batch_size, seeds.shuffle, seeds.dropout, epoch)?;
        let (val_loss, val_acc) = validate(&params)?;
        log::info!(
            "epoch {epoch}: {} batches, train_loss {:.4}, train_acc {:.4}, val_loss {:.4}, val_acc {:.4}",
            m.n_batches(),
            m.loss,
            m.accuracy,
            val_loss,
            val_acc
        );
        history.records.push(EpochRecord {
            epoch,
            train_loss: m.loss,
            train_acc: m.accuracy,
            val_loss,
            val_acc,
            n_batches: m.n_batches(),
        });
        if es.observe(epoch, val_loss, &params) == StopDecision::Stop {
            history.stopped_epoch = Some(epoch);
            log::info!("early stopping at epoch {epoch}");
            break;
        }
    }
    let (best_epoch, best) = es.into_best().expect("at least one epoch ran");
    history.best_epoch = Some(best_epoch);
    Ok((best, history))
}

/// [`fit_with`] validating on a held-out sample list.
pub fn fit<T: Real>(
    params: ModelParams<T>,
    train: &[WindowSample],
    val: &[WindowSample],
    cfg: &TrainConfig,
    seeds: &TrainSeeds,
) -> Result<(ModelParams<T>, TrainHistory), TrainError> {
    if val.is_empty() {
        return Err(TrainError::TooFewSamples("validation set is empty".into()));
    }
    let batch = cfg.batch_size;
    fit_with(params, train, cfg, seeds, &mut |p| Ok(score(&predict_proba(p, val, batch)?, val)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ClassLabel;
    use crate::dsp::WindowOrigin;
    use crate::nn::ArchConfig;

    fn tiny_arch(dropout: f64) -> ArchConfig {
        ArchConfig {
            input_features: 2,
            seq_len: 6,
            dropout,
            dense_hidden: vec![4],
            ..ArchConfig::with_gru_hidden(&[3, 2])
        }
    }

    /// Class by sign of the mean of channel 0.
    fn samples(n: usize, seed: u64) -> Vec<WindowSample> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { ClassLabel::Truth } else { ClassLabel::Lie };
                let shift = if label == ClassLabel::Truth { -1.0 } else { 1.0 };
                WindowSample {
                    data: (0..12).map(|k| if k % 2 == 0 { shift } else { 0.0 } + rng.random_range(-0.3..0.3)).collect(),
                    len: 6,
                    channels: 2,
                    label,
                    origin: WindowOrigin { subject_id: format!("s{i}"), run_id: "r".into(), window_index: 0 },
                    augmented: false,
                }
            })
            .collect()
    }

    #[test]
    fn batch_sizes_keep_partial_tail() {
        let mut p = ModelParams::<f32>::build(&tiny_arch(0.0), 1).unwrap();
        let mut st = AdamState::for_model(&p, Default::default());
        let m = train_epoch(&mut p, &mut st, &samples(130, 0), 64, 1, 2, 1).unwrap();
        assert_eq!(m.batch_sizes, vec![64, 64, 2]);
        assert_eq!(st.t, 3);
        assert!(train_epoch(&mut p, &mut st, &[], 64, 1, 2, 1).is_err());
    }

    #[test]
    fn zero_lr_leaves_params_and_matches_eval_loss() {
        let data = samples(20, 3);
        let p0 = ModelParams::<f64>::build(&tiny_arch(0.0), 4).unwrap();
        let mut p = p0.clone();
        let hyper = crate::train::AdamConfig { lr: 0.0, ..Default::default() };
        let mut st = AdamState::for_model(&p, hyper);
        let m = train_epoch(&mut p, &mut st, &data, 8, 1, 2, 1).unwrap();
        assert_eq!(p, p0);
        let (eval_loss, _) = score(&predict_proba(&p0, &data, 8).unwrap(), &data);
        assert!((m.loss - eval_loss).abs() < 1e-12, "{} vs {eval_loss}", m.loss);
    }

    #[test]
    fn fit_learns_and_restores_best() {
        let train = samples(64, 5);
        let val = samples(16, 6);
        let cfg = TrainConfig { max_epochs: 15, batch_size: 16, patience: 4, ..TrainConfig::default() };
        let cfg = TrainConfig { adam: crate::train::AdamConfig { lr: 1e-2, ..Default::default() }, ..cfg };
        let p = ModelParams::<f32>::build(&tiny_arch(0.0), 7).unwrap();
        let (best, h) = fit(p, &train, &val, &cfg, &TrainSeeds::from_global(1)).unwrap();
        let first = h.records[0].train_loss;
        let last = h.records.last().unwrap().train_loss;
        assert!(last < first, "{first} → {last}");
        let (vl, _) = score(&predict_proba(&best, &val, 16).unwrap(), &val);
        let min = h.val_losses().into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(vl, min);
        assert_eq!(h.best_val_loss(), Some(min));
    }

    #[test]
    fn fit_is_deterministic_with_dropout() {
        let train = samples(24, 8);
        let val = samples(8, 9);
        let cfg = TrainConfig { max_epochs: 3, batch_size: 8, patience: 2, ..TrainConfig::default() };
        let run = || {
            let p = ModelParams::<f32>::build(&tiny_arch(0.5), 7).unwrap();
            fit(p, &train, &val, &cfg, &TrainSeeds::from_global(2)).unwrap()
        };
        assert_eq!(run(), run());
    }
}
