//! Analytic generalized Morse wavelet filter bank and FFT-based CWT.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal_model::Scalogram;

pub const DEFAULT_GAMMA: f64 = 3.0;
pub const DEFAULT_BETA: f64 = 20.0;
pub const DEFAULT_VOICES: usize = 48;
/// Every filter's peak magnitude.
pub const PEAK_GAIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorseParams {
    pub gamma: f64,
    pub beta: f64,
    pub voices_per_octave: usize,
}

impl Default for MorseParams {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            beta: DEFAULT_BETA,
            voices_per_octave: DEFAULT_VOICES,
        }
    }
}

impl MorseParams {
    /// Peak angular frequency of the unit-scale wavelet, (β/γ)^(1/γ).
    pub fn peak_frequency(&self) -> f64 {
        (self.beta / self.gamma).powf(1.0 / self.gamma)
    }

    /// ω^β·exp(−ω^γ), unnormalized, zero for ω <= 0.
    fn shape(&self, w: f64) -> f64 {
        if w <= 0.0 {
            0.0
        } else {
            (self.beta * w.ln() - w.powf(self.gamma)).exp()
        }
    }

    /// Log of the response relative to its peak value.
    fn log_rel(&self, w: f64) -> f64 {
        let wp = self.peak_frequency();
        self.beta * (w / wp).ln() - w.powf(self.gamma) + wp.powf(self.gamma)
    }

    /// Time-domain standard deviation of the unit-scale wavelet, in samples.
    pub fn time_std(&self) -> f64 {
        // σ_t² = ∫ Ψ'(ω)² dω / ∫ Ψ(ω)² dω; Ψ is real, so the time centre is 0.
        let wp = self.peak_frequency();
        let upper = wp * 6.0;
        let n = 20_000;
        let h = upper / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        let rel = |w: f64| (self.log_rel(w)).exp();
        for i in 0..=n {
            let w = i as f64 * h;
            if w <= 0.0 {
                continue;
            }
            let coef = if i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let psi = rel(w);
            let dpsi = psi * (self.beta / w - self.gamma * w.powf(self.gamma - 1.0));
            num += coef * dpsi * dpsi;
            den += coef * psi * psi;
        }
        (num / den).sqrt()
    }

    /// Smallest scale: the response at the Nyquist frequency (ω = π) is
    /// half the peak.
    pub fn nyquist_half_scale(&self) -> f64 {
        let wp = self.peak_frequency();
        let target = -(2f64.ln());
        let (mut lo, mut hi) = (wp, wp * 4.0);
        while self.log_rel(hi) > target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.log_rel(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi) / PI
    }
}

/// Filter bank for a fixed signal length. Rows run from the highest centre
/// frequency to the lowest.
#[derive(Clone)]
pub struct MorseFilterBank {
    pub params: MorseParams,
    pub signal_len: usize,
    pub sample_rate_hz: f64,
    pub scales: Vec<f64>,
    pub center_freqs_hz: Vec<f64>,
    /// `n_scales × signal_len` magnitude responses on the FFT bins.
    pub responses: Vec<Vec<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for MorseFilterBank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MorseFilterBank")
            .field("params", &self.params)
            .field("signal_len", &self.signal_len)
            .field("sample_rate_hz", &self.sample_rate_hz)
            .field("n_scales", &self.scales.len())
            .finish()
    }
}

/// Angular frequency (radians/sample) of FFT bin `k`; bins above N/2 are negative.
fn bin_frequency(k: usize, n: usize) -> f64 {
    if 2 * k <= n {
        2.0 * PI * k as f64 / n as f64
    } else {
        -2.0 * PI * (n - k) as f64 / n as f64
    }
}

/// f_k = ω_p / (2π s_k) · fs for each scale.
pub fn scale_to_frequency(params: &MorseParams, scales: &[f64], sample_rate_hz: f64) -> Vec<f64> {
    let wp = params.peak_frequency();
    scales.iter().map(|s| wp / (2.0 * PI * s) * sample_rate_hz).collect()
}

impl MorseFilterBank {
    pub fn new(signal_len: usize, sample_rate_hz: f64, params: MorseParams) -> Result<Self> {
        if signal_len < 16 {
            return Err(Error::ShortSignal {
                len: signal_len,
                required: 16,
            });
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidSampleRate(sample_rate_hz));
        }
        if params.voices_per_octave == 0 || !(params.gamma > 0.0 && params.beta > 0.0) {
            return Err(Error::Config("Morse parameters must be positive".into()));
        }
        let s_min = params.nyquist_half_scale();
        // two time-domain standard deviations span the signal at the largest scale
        let s_max = signal_len as f64 / (2.0 * params.time_std());
        let octaves = (s_max / s_min).log2();
        if !(octaves >= 1.0) {
            return Err(Error::ShortSignal {
                len: signal_len,
                required: (4.0 * params.time_std() * s_min).ceil() as usize,
            });
        }
        let voices = params.voices_per_octave as f64;
        let n_scales = (voices * octaves + 1e-9).floor() as usize + 1;
        let scales: Vec<f64> = (0..n_scales)
            .map(|k| s_min * 2f64.powf(k as f64 / voices))
            .collect();
        let center_freqs_hz = scale_to_frequency(&params, &scales, sample_rate_hz);

        let responses = scales
            .iter()
            .map(|&s| {
                let mut row: Vec<f64> = (0..signal_len)
                    .map(|k| params.shape(s * bin_frequency(k, signal_len)))
                    .collect();
                let peak = row.iter().copied().fold(0.0, f64::max);
                if peak > 0.0 {
                    for v in &mut row {
                        *v *= PEAK_GAIN / peak;
                    }
                }
                row
            })
            .collect();

        let mut planner = FftPlanner::new();
        Ok(Self {
            params,
            signal_len,
            sample_rate_hz,
            scales,
            center_freqs_hz,
            responses,
            forward: planner.plan_fft_forward(signal_len),
            inverse: planner.plan_fft_inverse(signal_len),
        })
    }

    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    /// Complex CWT coefficients (`n_scales × signal_len`).
    pub fn transform(&self, x: &[f64]) -> Result<Vec<Vec<Complex64>>> {
        if x.len() != self.signal_len {
            return Err(Error::invalid(format!(
                "signal length {} does not match filter bank length {}",
                x.len(),
                self.signal_len
            )));
        }
        let n = self.signal_len;
        let mut spectrum: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut spectrum);
        let norm = 1.0 / n as f64;
        Ok(self
            .responses
            .iter()
            .map(|resp| {
                let mut buf: Vec<Complex64> = spectrum
                    .iter()
                    .zip(resp)
                    .map(|(s, r)| s * (r * norm))
                    .collect();
                self.inverse.process(&mut buf);
                buf
            })
            .collect())
    }
}

/// |CWT| of a pulse; its length must equal the bank's signal length.
pub fn cwt(samples: &[f64], bank: &MorseFilterBank) -> Result<Scalogram> {
    let coeffs = bank.transform(samples)?;
    let magnitude = coeffs.iter().flat_map(|row| row.iter().map(|c| c.norm())).collect();
    Ok(Scalogram {
        magnitude,
        freqs_hz: bank.center_freqs_hz.clone(),
        times_s: (0..bank.signal_len).map(|j| j as f64 / bank.sample_rate_hz).collect(),
    })
}
