use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DspError;
use crate::dataio::{ClassLabel, Labeled};

/// `[truth, lie]` counts.
pub fn class_counts<S: Labeled>(samples: &[S]) -> [usize; 2] {
    let mut counts = [0; 2];
    for s in samples {
        counts[s.label().index()] += 1;
    }
    counts
}

/// Random undersampling of the majority class down to the minority count.
/// The minority class is kept whole and survivors keep their relative order.
pub fn balance_undersample<S: Labeled + Clone>(samples: &[S], seed: u64) -> Result<Vec<S>, DspError> {
    let counts = class_counts(samples);
    for label in ClassLabel::ALL {
        if counts[label.index()] == 0 {
            return Err(DspError::MissingClass(label));
        }
    }
    let keep_n = counts[0].min(counts[1]);
    let majority = if counts[0] > counts[1] { ClassLabel::Truth } else { ClassLabel::Lie };
    if counts[0] == counts[1] {
        return Ok(samples.to_vec());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; counts[majority.index()]];
    for i in rand::seq::index::sample(&mut rng, keep.len(), keep_n) {
        keep[i] = true;
    }
    let mut rank = 0;
    Ok(samples
        .iter()
        .filter(|s| {
            if s.label() != majority {
                return true;
            }
            rank += 1;
            keep[rank - 1]
        })
        .cloned()
        .collect())
}
