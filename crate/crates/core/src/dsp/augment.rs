use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DspError, WindowSample};
use crate::seed::mix;

/// One noisy copy per input window. Channel `j` of window `i` receives
/// zero-mean Gaussian noise with standard deviation `noise_factor · σ_ij`,
/// where `σ_ij` is that channel's population deviation inside the window.
/// Copies are flagged `augmented`; inputs are untouched and not returned.
pub fn augment_gaussian(
    samples: &[WindowSample],
    noise_factor: f64,
    seed: u64,
) -> Result<Vec<WindowSample>, DspError> {
    if !(noise_factor >= 0.0 && noise_factor.is_finite()) {
        return Err(DspError::BadParams(format!("noise_factor must be ≥ 0, got {noise_factor}")));
    }
    Ok(samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut copy = s.clone();
            copy.augmented = true;
            if noise_factor == 0.0 {
                return copy;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64));
            let c = s.channels;
            let sigma: Vec<f64> = (0..c)
                .map(|j| {
                    let m = s.channel(j).sum::<f64>() / s.len as f64;
                    (s.channel(j).map(|v| (v - m).powi(2)).sum::<f64>() / s.len as f64).sqrt()
                })
                .collect();
            for row in copy.data.chunks_exact_mut(c) {
                for (v, sd) in row.iter_mut().zip(&sigma) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += noise_factor * sd * z;
                }
            }
            copy
        })
        .collect())
}
