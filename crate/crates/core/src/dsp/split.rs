use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DspError, WindowSample};
use crate::dataio::{ClassLabel, Labeled};
use crate::seed::mix;

/// Disjoint train/test partition of a sample list.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset<S = WindowSample> {
    pub train: Vec<S>,
    pub test: Vec<S>,
    pub seed: u64,
    pub test_fraction: f64,
}

fn test_size(n: usize, fraction: f64, what: &str) -> Result<usize, DspError> {
    let k = ((n as f64 * fraction).round() as usize).max(1);
    if k >= n {
        return Err(DspError::TooFewSamples(format!(
            "{what} has {n} samples; a test share of {fraction} leaves no training sample"
        )));
    }
    Ok(k)
}

/// Seeded shuffle then cut. Each stratum (each class when `stratified`, the
/// whole list otherwise) sends `max(1, round(n · test_fraction))` samples to
/// test. Both outputs keep the input order.
pub fn split_train_test<S: Labeled + Clone>(
    samples: &[S],
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitDataset<S>, DspError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DspError::BadParams(format!("test_fraction must lie in (0, 1), got {test_fraction}")));
    }
    let strata: Vec<(String, Vec<usize>)> = if stratified {
        ClassLabel::ALL
            .iter()
            .map(|&l| {
                let idx = (0..samples.len()).filter(|&i| samples[i].label() == l).collect();
                (format!("class {l}"), idx)
            })
            .collect()
    } else {
        vec![("sample list".to_string(), (0..samples.len()).collect())]
    };

    let mut in_test = vec![false; samples.len()];
    for (stream, (what, mut idx)) in strata.into_iter().enumerate() {
        let k = test_size(idx.len(), test_fraction, &what)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, stream as u64));
        idx.shuffle(&mut rng);
        for &i in &idx[..k] {
            in_test[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (s, t) in samples.iter().zip(in_test) {
        if t { &mut test } else { &mut train }.push(s.clone());
    }
    Ok(SplitDataset {
        train,
        test,
        seed,
        test_fraction,
    })
}
