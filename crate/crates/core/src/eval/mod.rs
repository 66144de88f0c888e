//! Confusion matrices, per-class metrics and report files.

mod report;

pub use report::{export_report, ReportPaths};

use thiserror::Error;

use crate::autodiff::Real;
use crate::dataio::ClassLabel;
use crate::dsp::WindowSample;
use crate::nn::ModelParams;
use crate::train::{predict_proba, TrainError};

/// Counts indexed `[actual][predicted]`, index 0 = truth, 1 = lie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        Self { counts }
    }

    pub fn get(&self, actual: ClassLabel, predicted: ClassLabel) -> u64 {
        self.counts[actual.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    /// Number of samples whose actual class is `k`.
    pub fn support(&self, k: ClassLabel) -> u64 {
        self.counts[k.index()].iter().sum()
    }

    /// Number of samples predicted as `k`.
    pub fn predicted(&self, k: ClassLabel) -> u64 {
        self.counts[0][k.index()] + self.counts[1][k.index()]
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {actuals} labels")]
    LengthMismatch { predictions: usize, actuals: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn confusion(predictions: &[ClassLabel], actuals: &[ClassLabel]) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != actuals.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            actuals: actuals.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, a) in predictions.iter().zip(actuals) {
        cm.counts[a.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// Which ratios of a class had a zero denominator and were set to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Degenerate {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub degenerate: Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Average {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Table-style classification report. Values are kept at full precision;
/// only the text rendering rounds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    /// Indexed by [`ClassLabel::index`].
    pub per_class: [ClassMetrics; 2],
    pub accuracy: f64,
    pub macro_avg: Average,
    pub weighted_avg: Average,
    pub test_loss: Option<f64>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn class(&self, k: ClassLabel) -> &ClassMetrics {
        &self.per_class[k.index()]
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Per-class precision, recall and F1, accuracy, and macro and
/// support-weighted averages. Zero denominators give 0 and set the
/// corresponding [`Degenerate`] flag.
pub fn metrics(cm: &ConfusionMatrix) -> EvalReport {
    let mut per_class = [ClassMetrics::default(); 2];
    for k in ClassLabel::ALL {
        let tp = cm.get(k, k);
        let (precision, dp) = ratio(tp, cm.predicted(k));
        let (recall, dr) = ratio(tp, cm.support(k));
        let (f1, df) = if precision + recall > 0.0 {
            (2.0 * precision * recall / (precision + recall), false)
        } else {
            (0.0, true)
        };
        per_class[k.index()] = ClassMetrics {
            precision,
            recall,
            f1,
            support: cm.support(k),
            degenerate: Degenerate {
                precision: dp,
                recall: dr,
                f1: df,
            },
        };
    }
    let total = cm.total();
    let (accuracy, _) = ratio(cm.trace(), total);
    let macro_avg = Average {
        precision: (per_class[0].precision + per_class[1].precision) / 2.0,
        recall: (per_class[0].recall + per_class[1].recall) / 2.0,
        f1: (per_class[0].f1 + per_class[1].f1) / 2.0,
        support: total,
    };
    let w = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
        }
    };
    let weighted_avg = Average {
        precision: w(|c| c.precision),
        recall: w(|c| c.recall),
        f1: w(|c| c.f1),
        support: total,
    };
    EvalReport {
        per_class,
        accuracy,
        macro_avg,
        weighted_avg,
        test_loss: None,
        confusion: *cm,
    }
}

/// Decision rule: lie only if its probability is strictly larger, so an
/// exact tie goes to truth.
pub fn argmax_label(p: &[f64; 2]) -> ClassLabel {
    if p[1] > p[0] {
        ClassLabel::Lie
    } else {
        ClassLabel::Truth
    }
}

/// Sum in a fixed pairwise order so the result does not depend on how the
/// caller batched the work.
fn pairwise_sum(x: &[f64]) -> f64 {
    match x.len() {
        0 => 0.0,
        1 => x[0],
        n => pairwise_sum(&x[..n / 2]) + pairwise_sum(&x[n / 2..]),
    }
}

/// Inference-mode evaluation: argmax predictions, confusion-based metrics,
/// and mean cross-entropy (probabilities clamped at 1e-12) as test loss.
pub fn evaluate_model<T: Real>(
    params: &ModelParams<T>,
    samples: &[WindowSample],
    batch_size: usize,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let probs = predict_proba(params, samples, batch_size)?;
    let preds: Vec<ClassLabel> = probs.iter().map(argmax_label).collect();
    let actuals: Vec<ClassLabel> = samples.iter().map(|s| s.label).collect();
    let losses: Vec<f64> = probs
        .iter()
        .zip(&actuals)
        .map(|(p, a)| -p[a.index()].clamp(crate::autodiff::PROB_CLAMP, 1.0).ln())
        .collect();
    let mut report = metrics(&confusion(&preds, &actuals)?);
    report.test_loss = Some(pairwise_sum(&losses) / samples.len() as f64);
    Ok(report)
}
