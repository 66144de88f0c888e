use crate::autodiff::{Real, Tape, Tensor};
use crate::dsp::WindowSample;
use crate::nn::ModelParams;

use super::TrainError;

/// Stacks windows into a `B×T×C` input and a `B×2` one-hot target.
pub fn batch_tensors<T: Real>(samples: &[&WindowSample]) -> Result<(Tensor<T>, Tensor<T>), TrainError> {
    let first = samples.first().ok_or(TrainError::EmptyData)?;
    let (t, c) = (first.len, first.channels);
    let mut x = Vec::with_capacity(samples.len() * t * c);
    let mut y = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        if (s.len, s.channels) != (t, c) || s.data.len() != t * c {
            return Err(TrainError::InputShape {
                found: vec![s.len, s.channels],
                expected: vec![t, c],
            });
        }
        x.extend(s.data.iter().map(|&v| T::from_f64_lossy(v)));
        y.extend(s.label.one_hot().iter().map(|&v| T::from_f64_lossy(v)));
    }
    let b = samples.len();
    Ok((Tensor::new(vec![b, t, c], x)?, Tensor::new(vec![b, 2], y)?))
}

pub(crate) fn check_input<T: Real>(params: &ModelParams<T>, s: &WindowSample) -> Result<(), TrainError> {
    let a = &params.arch;
    if (s.len, s.channels) != (a.seq_len, a.input_features) {
        return Err(TrainError::InputShape {
            found: vec![s.len, s.channels],
            expected: vec![a.seq_len, a.input_features],
        });
    }
    Ok(())
}

/// Inference-mode class probabilities, one `[truth, lie]` row per sample,
/// computed in fixed-order batches.
pub fn predict_proba<T: Real>(
    params: &ModelParams<T>,
    samples: &[WindowSample],
    batch_size: usize,
) -> Result<Vec<[f64; 2]>, TrainError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        check_input(params, &chunk[0])?;
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let (x, _) = batch_tensors::<T>(&refs)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let xv = tape.constant(x);
        let p = bound.probabilities(&mut tape, xv, false, 0)?;
        out.extend(
            tape.value(p)
                .data()
                .chunks(2)
                .map(|r| [r[0].to_f64_lossy(), r[1].to_f64_lossy()]),
        );
    }
    Ok(out)
}
