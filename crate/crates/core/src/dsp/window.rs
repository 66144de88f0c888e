use super::DspError;
use crate::dataio::{ClassLabel, EegRecording, Labeled};

/// Where a window came from: recording identity plus its index `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowOrigin {
    pub subject_id: String,
    pub run_id: String,
    pub window_index: usize,
}

/// One `len × channels` segment, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub data: Vec<f64>,
    pub len: usize,
    pub channels: usize,
    pub label: ClassLabel,
    pub origin: WindowOrigin,
    pub augmented: bool,
}

impl WindowSample {
    pub fn channel(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.channels).copied()
    }

    pub fn recording_key(&self) -> (&str, &str) {
        (&self.origin.subject_id, &self.origin.run_id)
    }
}

impl Labeled for WindowSample {
    fn label(&self) -> ClassLabel {
        self.label
    }
}

/// Cuts `rec` into windows of `t` rows every `stride` rows. Window `j` covers
/// rows `j·stride .. j·stride + t`; trailing rows that do not fill a whole
/// window are dropped. A recording shorter than `t` yields no windows.
pub fn window_segments(rec: &EegRecording, t: usize, stride: usize) -> Result<Vec<WindowSample>, DspError> {
    if t < 1 || stride < 1 || stride > t {
        return Err(DspError::BadParams(format!(
            "window length {t} and stride {stride} must satisfy 1 ≤ stride ≤ length"
        )));
    }
    let n = rec.n_samples();
    if n < t {
        log::warn!(
            "({}, {}) has {n} rows, fewer than the window length {t}; no windows produced",
            rec.subject_id,
            rec.run_id
        );
        return Ok(Vec::new());
    }
    let c = rec.n_channels();
    let count = (n - t) / stride + 1;
    Ok((0..count)
        .map(|j| {
            let start = j * stride;
            WindowSample {
                data: rec.samples[start * c..(start + t) * c].to_vec(),
                len: t,
                channels: c,
                label: rec.label,
                origin: WindowOrigin {
                    subject_id: rec.subject_id.clone(),
                    run_id: rec.run_id.clone(),
                    window_index: j,
                },
                augmented: false,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, c: usize) -> EegRecording {
        EegRecording {
            subject_id: "s".into(),
            run_id: "r".into(),
            label: ClassLabel::Lie,
            channel_names: (0..c).map(|j| format!("C{j}")).collect(),
            samples: (0..n * c).map(|v| v as f64).collect(),
            sample_rate_hz: 128.0,
        }
    }

    fn first_row(w: &WindowSample) -> usize {
        w.data[0] as usize / w.channels
    }

    #[test]
    fn documented_counts() {
        let w = window_segments(&ramp(64, 2), 64, 32).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].data.len(), 128);

        let w = window_segments(&ramp(160, 2), 64, 32).unwrap();
        assert_eq!(w.iter().map(first_row).collect::<Vec<_>>(), vec![0, 32, 64, 96]);
        assert!(w.iter().all(|w| w.label == ClassLabel::Lie && !w.augmented));
        assert_eq!(w[3].origin.window_index, 3);

        assert_eq!(window_segments(&ramp(95, 2), 64, 32).unwrap().len(), 1);
        assert!(window_segments(&ramp(63, 2), 64, 32).unwrap().is_empty());
    }

    #[test]
    fn bad_params() {
        let r = ramp(100, 1);
        for (t, s) in [(0, 1), (4, 0), (4, 5)] {
            assert!(matches!(window_segments(&r, t, s), Err(DspError::BadParams(_))));
        }
    }

    #[test]
    fn matches_brute_force_enumeration() {
        for t in [1, 7, 64] {
            for stride in [1, t / 2 + 1, t] {
                for n in (0..=300).step_by(7) {
                    let starts: Vec<usize> = (0..n).filter(|s| s % stride == 0 && s + t <= n).collect();
                    let w = window_segments(&ramp(n, 1), t, stride).unwrap();
                    assert_eq!(w.iter().map(first_row).collect::<Vec<_>>(), starts, "n={n} t={t} sr={stride}");
                }
            }
        }
    }
}
