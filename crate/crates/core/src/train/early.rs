use super::TrainHistory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Epoch index (0-based) of the last strict improvement, where epoch `i`
/// improves if its loss is below every earlier loss by more than
/// `min_delta`.
fn last_improvement(val_losses: &[f64], min_delta: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &l) in val_losses.iter().enumerate() {
        match best {
            Some((_, b)) if !(l < b - min_delta) => {}
            _ => best = Some((i, l)),
        }
    }
    best.map(|(i, _)| i)
}

/// Stop once `patience` consecutive epochs have passed without a strict
/// improvement of the validation loss.
pub fn early_stopping_check(history: &TrainHistory, patience: usize, min_delta: f64) -> StopDecision {
    let losses = history.val_losses();
    match last_improvement(&losses, min_delta) {
        Some(best) if losses.len() - 1 - best >= patience => StopDecision::Stop,
        _ => StopDecision::Continue,
    }
}

/// Tracks the best epoch and a snapshot of its weights.
#[derive(Debug, Clone)]
pub struct EarlyStopping<P> {
    patience: usize,
    min_delta: f64,
    best: Option<(usize, f64, P)>,
    since_best: usize,
}

impl<P: Clone> EarlyStopping<P> {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: None,
            since_best: 0,
        }
    }

    /// Records epoch `epoch` and snapshots `weights` on improvement.
    pub fn observe(&mut self, epoch: usize, val_loss: f64, weights: &P) -> StopDecision {
        let improved = match &self.best {
            None => true,
            Some((_, b, _)) => val_loss < b - self.min_delta,
        };
        if improved {
            self.best = Some((epoch, val_loss, weights.clone()));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    /// The best snapshot, consuming the tracker.
    pub fn into_best(self) -> Option<(usize, P)> {
        self.best.map(|(e, _, p)| (e, p))
    }
}
