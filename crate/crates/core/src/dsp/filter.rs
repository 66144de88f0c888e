//! Butterworth band-pass design as cascaded second-order sections, with
//! causal and forward-backward application.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;
use crate::dataio::EegRecording;

/// Band-pass settings. `order` is the order of the band-pass filter itself
/// (twice the low-pass prototype order) and must be even.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub order: usize,
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            f_low_hz: 1.0,
            f_high_hz: 30.0,
            order: 4,
            zero_phase: true,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<(), DspError> {
        let nyquist = sample_rate_hz / 2.0;
        if !(self.f_low_hz > 0.0 && self.f_low_hz < self.f_high_hz && self.f_high_hz < nyquist) {
            return Err(DspError::InvalidFilterSpec(format!(
                "need 0 < f_low ({}) < f_high ({}) < Nyquist ({nyquist})",
                self.f_low_hz, self.f_high_hz
            )));
        }
        if self.order < 2 || self.order % 2 != 0 {
            return Err(DspError::InvalidFilterSpec(format!(
                "order must be even and ≥ 2, got {}",
                self.order
            )));
        }
        Ok(())
    }
}

/// One biquad, `[b0, b1, b2, a1, a2]` with `a0 = 1`.
pub type Section = [f64; 5];

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Section>,
}

impl SosFilter {
    /// Digital Butterworth band-pass via analog prototype, low-pass to
    /// band-pass transform and pre-warped bilinear mapping. Unit gain at the
    /// (digital image of the) geometric center frequency.
    pub fn butterworth_bandpass(spec: &FilterSpec, sample_rate_hz: f64) -> Result<Self, DspError> {
        spec.validate(sample_rate_hz)?;
        let fs2 = 2.0 * sample_rate_hz;
        let warp = |f: f64| fs2 * (PI * f / sample_rate_hz).tan();
        let (wl, wh) = (warp(spec.f_low_hz), warp(spec.f_high_hz));
        let bw = wh - wl;
        let w0 = (wl * wh).sqrt();
        let n = spec.order / 2;

        let mut poles = Vec::with_capacity(2 * n);
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let a = p * (bw / 2.0);
            let d = (a * a - w0 * w0).sqrt();
            for s in [a + d, a - d] {
                poles.push((fs2 + s) / (fs2 - s));
            }
        }
        if poles.iter().any(|z| !(z.norm() < 1.0)) {
            return Err(DspError::NumericalInstability("designed pole on or outside the unit circle".into()));
        }

        // conjugate pairs first, then real poles two at a time
        const IMAG_TOL: f64 = 1e-12;
        let mut denominators = Vec::with_capacity(n);
        let mut reals = Vec::new();
        for z in &poles {
            if z.im > IMAG_TOL {
                denominators.push([-2.0 * z.re, z.norm_sqr()]);
            } else if z.im.abs() <= IMAG_TOL {
                reals.push(z.re);
            }
        }
        for pair in reals.chunks(2) {
            let (p1, p2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            denominators.push([-(p1 + p2), p1 * p2]);
        }
        if denominators.len() != n {
            return Err(DspError::NumericalInstability("pole pairing failed".into()));
        }
        // each section gets one zero at z = 1 and one at z = −1
        let mut filter = SosFilter {
            sections: denominators.iter().map(|&[a1, a2]| [1.0, 0.0, -1.0, a1, a2]).collect(),
        };
        let wc = 2.0 * (w0 / fs2).atan();
        let g = filter.response(wc).norm();
        let per_section = g.powf(-1.0 / n as f64);
        for s in &mut filter.sections {
            s[0] *= per_section;
            s[1] *= per_section;
            s[2] *= per_section;
        }
        Ok(filter)
    }

    /// Complex response at normalized angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, &[b0, b1, b2, a1, a2]| {
            acc * (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)
        })
    }

    /// Magnitude response at `f_hz` for a single causal pass.
    pub fn gain_at(&self, f_hz: f64, sample_rate_hz: f64) -> f64 {
        self.response(2.0 * PI * f_hz / sample_rate_hz).norm()
    }

    /// Per-section states reached after a long run of unit input.
    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|&[b0, b1, b2, a1, a2]| {
                let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
                let z2 = b2 - a2 * dc;
                let z1 = b1 - a1 * dc + z2;
                let zi = [scale * z1, scale * z2];
                scale *= dc;
                zi
            })
            .collect()
    }

    /// Causal pass (transposed direct form II) with every section's state
    /// initialized to its steady state for a constant input of `x[0]`.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let Some(&x0) = x.first() else { return Vec::new() };
        let mut y = x.to_vec();
        for (&[b0, b1, b2, a1, a2], zi) in self.sections.iter().zip(self.steady_state()) {
            let (mut z1, mut z2) = (zi[0] * x0, zi[1] * x0);
            for v in y.iter_mut() {
                let xin = *v;
                let out = b0 * xin + z1;
                z1 = b1 * xin - a1 * out + z2;
                z2 = b2 * xin - a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Forward-backward application with odd reflection padding at both
    /// ends; zero phase, squared magnitude.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Filters every channel of `rec` independently.
pub fn bandpass_filter(rec: &EegRecording, spec: &FilterSpec) -> Result<EegRecording, DspError> {
    let sos = SosFilter::butterworth_bandpass(spec, rec.sample_rate_hz)?;
    let mut out = rec.clone();
    for j in 0..rec.n_channels() {
        let ch = rec.channel(j);
        let y = if spec.zero_phase { sos.filtfilt(&ch) } else { sos.filter(&ch) };
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DspError::NumericalInstability(format!(
                "channel {} of ({}, {}) became non-finite",
                rec.channel_names[j], rec.subject_id, rec.run_id
            )));
        }
        out.set_channel(j, &y);
    }
    Ok(out)
}
