use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    default_channels, ClassLabel, DataError, DatasetManifest, EegRecording, ManifestEntry, ManifestSource,
};
use crate::seed::mix;

/// Parameters of the synthetic two-class generator.
///
/// Each channel is a sum of a few sinusoids whose frequencies fall in the
/// class band `center ± band_halfwidth_hz`, plus white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_recordings: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub truth_hz: f64,
    pub lie_hz: f64,
    pub band_halfwidth_hz: f64,
    pub components: usize,
    pub noise_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_recordings: 40,
            duration_s: 4.0,
            sample_rate_hz: 128.0,
            truth_hz: 10.0,
            lie_hz: 20.0,
            band_halfwidth_hz: 1.0,
            components: 3,
            noise_std: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.n_recordings < 2 {
            return bad(format!("n_recordings must be ≥ 2 so both classes appear, got {}", self.n_recordings));
        }
        if !(self.duration_s > 0.0) || !(self.sample_rate_hz > 0.0) {
            return bad("duration_s and sample_rate_hz must be positive".into());
        }
        if self.n_samples() == 0 {
            return bad("duration shorter than one sample".into());
        }
        if !(self.noise_std >= 0.0) || self.components == 0 || !(self.band_halfwidth_hz >= 0.0) {
            return bad("noise_std and band_halfwidth_hz must be ≥ 0, components ≥ 1".into());
        }
        let nyquist = self.sample_rate_hz / 2.0;
        for (name, c) in [("truth", self.truth_hz), ("lie", self.lie_hz)] {
            let (lo, hi) = (c - self.band_halfwidth_hz, c + self.band_halfwidth_hz);
            if !(lo > 0.0 && hi < nyquist) {
                return bad(format!("{name} band [{lo}, {hi}] Hz outside (0, {nyquist}) Hz"));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }
}

/// Deterministic synthetic dataset: alternating labels starting with truth,
/// manifest paths `rec_NNN.csv` relative to wherever the files get written.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<(DatasetManifest, Vec<EegRecording>), DataError> {
    spec.validate()?;
    let channels = default_channels();
    let n = spec.n_samples();
    let fs = spec.sample_rate_hz;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| DataError::InvalidSpec(e.to_string()))?;
    let mut entries = Vec::with_capacity(spec.n_recordings);
    let mut recordings = Vec::with_capacity(spec.n_recordings);
    for i in 0..spec.n_recordings {
        let label = if i % 2 == 0 { ClassLabel::Truth } else { ClassLabel::Lie };
        let center = match label {
            ClassLabel::Truth => spec.truth_hz,
            ClassLabel::Lie => spec.lie_hz,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64));
        let mut samples = vec![0.0; n * channels.len()];
        for c in 0..channels.len() {
            for _ in 0..spec.components {
                let f = center + spec.band_halfwidth_hz * rng.random_range(-1.0..=1.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.5..1.5) / spec.components as f64;
                for t in 0..n {
                    samples[t * channels.len() + c] += amp * (2.0 * PI * f * t as f64 / fs + phase).sin();
                }
            }
            for t in 0..n {
                samples[t * channels.len() + c] += noise.sample(&mut rng);
            }
        }
        let subject_id = format!("synth{i:03}");
        let run_id = "run1".to_string();
        entries.push(ManifestEntry {
            subject_id: subject_id.clone(),
            run_id: run_id.clone(),
            path: PathBuf::from(format!("rec_{i:03}.csv")),
            label,
        });
        recordings.push(EegRecording {
            subject_id,
            run_id,
            label,
            channel_names: channels.clone(),
            samples,
            sample_rate_hz: fs,
        });
    }
    Ok((
        DatasetManifest {
            entries,
            source: ManifestSource::Synthetic,
        },
        recordings,
    ))
}
