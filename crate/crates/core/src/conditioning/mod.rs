//! Acceleration-channel conditioning: elliptic high-pass, Blackman boundary
//! taper and sym4 wavelet denoising.

mod denoise;
pub mod dwt;
mod elliptic;

pub use denoise::{fdr_threshold, hard_threshold, wavelet_denoise, DenoiseConfig, DenoiseReport};
pub use elliptic::design_highpass;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal_model::AccelRecording;

#[derive(Debug, Clone, PartialEq)]
pub struct HighpassSpec {
    pub stopband_hz: f64,
    pub passband_hz: f64,
    pub stopband_atten_db: f64,
    pub passband_ripple_db: f64,
    pub sample_rate_hz: f64,
}

impl HighpassSpec {
    /// 8.4 Hz stopband, 10 Hz passband, 60 dB attenuation, 0.1 dB ripple.
    pub fn new(sample_rate_hz: f64) -> Self {
        Self {
            stopband_hz: 8.4,
            passband_hz: 10.0,
            stopband_atten_db: 60.0,
            passband_ripple_db: 0.1,
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = 0.5 * self.sample_rate_hz;
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidSampleRate(self.sample_rate_hz));
        }
        if !(0.0 < self.stopband_hz && self.stopband_hz < self.passband_hz && self.passband_hz < nyq) {
            return Err(Error::FilterDesign(format!(
                "need 0 < stopband ({}) < passband ({}) < nyquist ({nyq})",
                self.stopband_hz, self.passband_hz
            )));
        }
        if !(self.passband_ripple_db > 0.0 && self.stopband_atten_db > self.passband_ripple_db) {
            return Err(Error::FilterDesign("need 0 < ripple < attenuation".into()));
        }
        Ok(())
    }
}

/// One biquad: `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    fn response(&self, zinv: Complex64) -> Complex64 {
        let z2 = zinv * zinv;
        (self.b[0] + self.b[1] * zinv + self.b[2] * z2) / (self.a[0] + self.a[1] * zinv + self.a[2] * z2)
    }

    /// Pole magnitudes of the section.
    pub fn pole_radii(&self) -> [f64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            let r = a2.sqrt();
            [r, r]
        } else {
            let s = disc.sqrt();
            [(0.5 * (-a1 + s)).abs(), (0.5 * (-a1 - s)).abs()]
        }
    }

    /// Steady-state state vector for a unit step input (transposed DF-II).
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let u0 = b1 - a1 * b0;
        let u1 = b2 - a2 * b0;
        let z0 = (u0 + u1) / (1.0 + a1 + a2);
        [z0, u1 - a2 * z0]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }
}

/// Cascade of second-order sections with an overall gain.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRealization {
    pub sections: Vec<Section>,
    pub gain: f64,
    pub order: usize,
    pub sample_rate_hz: f64,
}

impl FilterRealization {
    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.pole_radii().iter().all(|&r| r < 1.0))
    }

    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / self.sample_rate_hz;
        let zinv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(self.gain, 0.0), |acc, s| acc * s.response(zinv))
    }

    /// Single-pass magnitude response in dB.
    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response(freq_hz).norm().log10()
    }

    /// Padding used by [`apply_filter`] on each side.
    pub fn pad_len(&self) -> usize {
        let nb = self.sections.iter().filter(|s| s.b[2] == 0.0).count();
        let na = self.sections.iter().filter(|s| s.a[2] == 0.0).count();
        3 * (2 * self.sections.len() + 1 - nb.min(na))
    }

    fn effective_sections(&self) -> Vec<Section> {
        let mut secs = self.sections.clone();
        if let Some(first) = secs.first_mut() {
            for b in &mut first.b {
                *b *= self.gain;
            }
        }
        secs
    }

    fn initial_states(secs: &[Section]) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        secs.iter()
            .map(|s| {
                let st = s.step_state();
                let out = [scale * st[0], scale * st[1]];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }
}

fn run_cascade(secs: &[Section], states: &[[f64; 2]], init: f64, x: &mut [f64]) {
    for (s, st) in secs.iter().zip(states) {
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        let (mut z0, mut z1) = (st[0] * init, st[1] * init);
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z0;
            z0 = b1 * xin - a1 * y + z1;
            z1 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Zero-phase forward-backward filtering with odd-extension padding and
/// steady-state initial conditions.
pub fn apply_filter(f: &FilterRealization, x: &[f64]) -> Result<Vec<f64>> {
    let pad = f.pad_len();
    if x.len() <= pad.max(1) {
        return Err(Error::ShortSignal {
            len: x.len(),
            required: pad.max(1) + 1,
        });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let secs = f.effective_sections();
    let states = FilterRealization::initial_states(&secs);
    let first = ext[0];
    run_cascade(&secs, &states, first, &mut ext);
    ext.reverse();
    let first = ext[0];
    run_cascade(&secs, &states, first, &mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Multiplies the first and last `taper_len` samples by the rising and
/// falling halves of a length `2·taper_len` Blackman window.
pub fn taper_boundaries(x: &[f64], taper_len: usize) -> Result<Vec<f64>> {
    if 2 * taper_len > x.len() {
        return Err(Error::invalid(format!(
            "taper length {taper_len} too large for {} samples",
            x.len()
        )));
    }
    let mut out = x.to_vec();
    if taper_len == 0 {
        return Ok(out);
    }
    let w = blackman(2 * taper_len);
    let n = out.len();
    for i in 0..taper_len {
        out[i] *= w[i];
        out[n - taper_len + i] *= w[taper_len + i];
    }
    Ok(out)
}

/// Symmetric Blackman window (a0 = 0.42, a1 = 0.5, a2 = 0.08).
pub fn blackman(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let m = (len - 1) as f64;
    (0..len)
        .map(|n| {
            let t = 2.0 * std::f64::consts::PI * n as f64 / m;
            0.42 - 0.5 * t.cos() + 0.08 * (2.0 * t).cos()
        })
        .collect()
}

/// Taper length for a signal, from a fraction of its length (minimum 8).
pub fn taper_len_for(len: usize, taper_frac: f64) -> usize {
    ((taper_frac * len as f64).round() as usize).max(8).min(len / 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningConfig {
    pub taper_frac: f64,
    pub denoise: Option<DenoiseConfig>,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        Self {
            taper_frac: 0.01,
            denoise: Some(DenoiseConfig::default()),
        }
    }
}

/// High-pass, taper and (optionally) denoise one channel.
pub fn condition_channel(
    filter: &FilterRealization,
    x: &[f64],
    cfg: &ConditioningConfig,
) -> Result<Vec<f64>> {
    let filtered = apply_filter(filter, x)?;
    let tapered = taper_boundaries(&filtered, taper_len_for(x.len(), cfg.taper_frac))?;
    match &cfg.denoise {
        Some(d) => wavelet_denoise(&tapered, d),
        None => Ok(tapered),
    }
}

/// Conditions the three acceleration channels; the ECG passes through.
pub fn condition_recording(rec: &AccelRecording, cfg: &ConditioningConfig) -> Result<AccelRecording> {
    let filter = design_highpass(&HighpassSpec::new(rec.sample_rate_hz))?;
    AccelRecording::new(
        rec.sample_rate_hz,
        condition_channel(&filter, &rec.acc_x, cfg)?,
        condition_channel(&filter, &rec.acc_y, cfg)?,
        condition_channel(&filter, &rec.acc_z, cfg)?,
        rec.ecg.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn design() -> FilterRealization {
        design_highpass(&HighpassSpec::new(1000.0)).unwrap()
    }

    #[test]
    fn meets_spec_at_quoted_points() {
        let f = design();
        assert!(f.magnitude_db(8.4) <= -60.0);
        for fr in [10.0, 50.0, 200.0, 499.0] {
            let db = f.magnitude_db(fr);
            assert!((-0.1 - 1e-9..=1e-9).contains(&db), "{fr} Hz: {db} dB");
        }
        // even-order elliptic: DC sits on the stopband floor, not a zero
        assert!(f.response(0.0).norm() <= 1e-3 * (1.0 + 1e-9));
    }

    #[test]
    fn infeasible_spec_errors() {
        let mut s = HighpassSpec::new(1000.0);
        s.stopband_hz = 12.0;
        assert!(matches!(design_highpass(&s), Err(Error::FilterDesign(_))));
    }

    #[test]
    fn zero_in_zero_out() {
        let y = apply_filter(&design(), &vec![0.0; 1000]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    fn mid_amplitude(y: &[f64]) -> f64 {
        let n = y.len();
        y[n / 4..3 * n / 4].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn low_tone_is_suppressed_and_band_tone_passes() {
        let f = design();
        let n = 10_000;
        let tone = |fr: f64| -> Vec<f64> { (0..n).map(|i| (2.0 * PI * fr * i as f64 / 1000.0).sin()).collect() };
        // forward-backward gain is |H|^2
        let expect2 = f.response(2.0).norm().powi(2);
        let got2 = mid_amplitude(&apply_filter(&f, &tone(2.0)).unwrap());
        assert!(expect2 < 1e-3);
        assert!(got2 <= 1e-3, "2 Hz residual {got2} (designed {expect2})");

        let expect50 = f.response(50.0).norm().powi(2);
        let got50 = mid_amplitude(&apply_filter(&f, &tone(50.0)).unwrap());
        assert!((got50 - 1.0).abs() <= 0.03, "50 Hz amplitude {got50}");
        assert!((got50 - expect50).abs() < 1e-3);
    }

    #[test]
    fn short_signal_rejected() {
        let f = design();
        let pad = f.pad_len();
        assert!(matches!(apply_filter(&f, &vec![1.0; pad]), Err(Error::ShortSignal { .. })));
    }

    #[test]
    fn taper_examples() {
        let ones = vec![1.0; 20];
        assert_eq!(taper_boundaries(&ones, 0).unwrap(), ones);
        let t = taper_boundaries(&ones, 4).unwrap();
        let expected = 0.42 - 0.5 * (2.0 * PI * 2.0 / 7.0).cos() + 0.08 * (4.0 * PI * 2.0 / 7.0).cos();
        assert!((t[2] - expected).abs() < 1e-15);
        assert!(t[4..16].iter().all(|&v| v == 1.0));
        assert_eq!(t[0], blackman(8)[0]);
        assert_eq!(t[19], blackman(8)[7]);
        assert!(taper_boundaries(&ones, 11).is_err());
    }
}
