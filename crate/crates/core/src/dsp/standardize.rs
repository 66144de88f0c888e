use serde::{Deserialize, Serialize};

use super::DspError;
use crate::dataio::EegRecording;

/// Which recordings the per-channel mean and deviation come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsSource {
    /// Each recording is normalized with its own statistics.
    PerRecording,
    /// One set of statistics pooled over all given recordings.
    TrainingSet,
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channel_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn is_flat(mean: f64, std: f64) -> bool {
    !(std > 1e-12 * (1.0 + mean.abs()))
}

/// Pools every sample of every recording. All recordings must share one
/// channel layout.
pub fn channel_stats(recs: &[EegRecording]) -> Result<ChannelStats, DspError> {
    let first = recs.first().ok_or(DspError::EmptyInput)?;
    let c = first.n_channels();
    let mut count = 0usize;
    let mut sum = vec![0.0; c];
    for r in recs {
        if r.channel_names != first.channel_names {
            return Err(DspError::ChannelMismatch(format!(
                "({}, {}) differs from ({}, {})",
                r.subject_id, r.run_id, first.subject_id, first.run_id
            )));
        }
        for row in r.samples.chunks_exact(c) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        count += r.n_samples();
    }
    if count == 0 {
        return Err(DspError::TooFewSamples("recordings hold no samples".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; c];
    for r in recs {
        for row in r.samples.chunks_exact(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                sq[j] += d * d;
            }
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    for j in 0..c {
        if is_flat(mean[j], std[j]) {
            return Err(DspError::ZeroVariance {
                subject_id: if recs.len() == 1 { first.subject_id.clone() } else { "<pooled>".into() },
                run_id: if recs.len() == 1 { first.run_id.clone() } else { "<pooled>".into() },
                channel: first.channel_names[j].clone(),
            });
        }
    }
    Ok(ChannelStats {
        channel_names: first.channel_names.clone(),
        mean,
        std,
    })
}

/// `(x − µ)/σ` per channel with precomputed statistics.
pub fn apply_stats(rec: &EegRecording, stats: &ChannelStats) -> Result<EegRecording, DspError> {
    if rec.channel_names != stats.channel_names {
        return Err(DspError::ChannelMismatch(format!(
            "({}, {}) channels {:?} vs stored {:?}",
            rec.subject_id, rec.run_id, rec.channel_names, stats.channel_names
        )));
    }
    for j in 0..stats.std.len() {
        if is_flat(stats.mean[j], stats.std[j]) {
            return Err(DspError::ZeroVariance {
                subject_id: rec.subject_id.clone(),
                run_id: rec.run_id.clone(),
                channel: stats.channel_names[j].clone(),
            });
        }
    }
    let c = rec.n_channels();
    let mut out = rec.clone();
    for row in out.samples.chunks_exact_mut(c) {
        for j in 0..c {
            row[j] = (row[j] - stats.mean[j]) / stats.std[j];
        }
    }
    Ok(out)
}

/// Returns the transformed recordings plus the statistics used: one entry per
/// recording for [`StatsSource::PerRecording`], a single pooled entry for
/// [`StatsSource::TrainingSet`].
pub fn standardize(
    recs: &[EegRecording],
    source: StatsSource,
) -> Result<(Vec<EegRecording>, Vec<ChannelStats>), DspError> {
    match source {
        StatsSource::PerRecording => {
            let mut out = Vec::with_capacity(recs.len());
            let mut stats = Vec::with_capacity(recs.len());
            for r in recs {
                let s = channel_stats(std::slice::from_ref(r))?;
                out.push(apply_stats(r, &s)?);
                stats.push(s);
            }
            Ok((out, stats))
        }
        StatsSource::TrainingSet => {
            let s = channel_stats(recs)?;
            let out = recs.iter().map(|r| apply_stats(r, &s)).collect::<Result<_, _>>()?;
            Ok((out, vec![s]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ClassLabel;

    fn rec(cols: &[Vec<f64>]) -> EegRecording {
        let n = cols[0].len();
        let mut samples = Vec::with_capacity(n * cols.len());
        for i in 0..n {
            for c in cols {
                samples.push(c[i]);
            }
        }
        EegRecording {
            subject_id: "s1".into(),
            run_id: "r1".into(),
            label: ClassLabel::Truth,
            channel_names: (0..cols.len()).map(|j| format!("C{j}")).collect(),
            samples,
            sample_rate_hz: 128.0,
        }
    }

    fn mean_std(x: &[f64]) -> (f64, f64) {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64;
        (m, v.sqrt())
    }

    #[test]
    fn zero_mean_unit_std() {
        // µ = 2, σ = 3 exactly: alternating −1, 5
        let x: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { -1.0 } else { 5.0 }).collect();
        let r = rec(&[x]);
        let (out, stats) = standardize(&[r], StatsSource::PerRecording).unwrap();
        assert!((stats[0].mean[0] - 2.0).abs() < 1e-12);
        assert!((stats[0].std[0] - 3.0).abs() < 1e-12);
        let (m, s) = mean_std(&out[0].channel(0));
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn idempotent_on_normalized_data() {
        let x: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin() * 4.0 + 1.0).collect();
        let y: Vec<f64> = (0..300).map(|i| (i as f64 * 0.11).cos()).collect();
        let (once, _) = standardize(&[rec(&[x, y])], StatsSource::PerRecording).unwrap();
        let (twice, _) = standardize(&once, StatsSource::PerRecording).unwrap();
        for (a, b) in once[0].samples.iter().zip(&twice[0].samples) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_channel_is_rejected() {
        let r = rec(&[vec![1.0, 2.0, 3.0], vec![7.0; 3]]);
        let err = standardize(&[r.clone()], StatsSource::PerRecording).unwrap_err();
        assert!(matches!(err, DspError::ZeroVariance { ref channel, .. } if channel == "C1"));
        assert!(standardize(&[r], StatsSource::TrainingSet).is_err());
    }

    #[test]
    fn pooled_stats_span_all_recordings() {
        let a = rec(&[vec![0.0, 0.0]]);
        let b = rec(&[vec![2.0, 2.0]]);
        let (out, stats) = standardize(&[a, b], StatsSource::TrainingSet).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!((stats[0].mean[0], stats[0].std[0]), (1.0, 1.0));
        assert_eq!(out[0].samples, vec![-1.0, -1.0]);
        assert_eq!(out[1].samples, vec![1.0, 1.0]);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let a = rec(&[vec![0.0, 1.0]]);
        let mut b = a.clone();
        b.channel_names = vec!["X".into()];
        assert!(matches!(channel_stats(&[a.clone(), b.clone()]), Err(DspError::ChannelMismatch(_))));
        let s = channel_stats(&[a]).unwrap();
        assert!(matches!(apply_stats(&b, &s), Err(DspError::ChannelMismatch(_))));
    }
}
