//! Level-dependent FDR hard-threshold wavelet denoising.

use statrs::function::erf::erfc;

use super::dwt::{levels_for, wavedec, waverec, Wavelet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    /// False-discovery rate for the per-level threshold selection.
    pub fdr_q: f64,
    /// Overrides the automatic level count when set.
    pub levels: Option<usize>,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            fdr_q: 0.05,
            levels: None,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fdr_q > 0.0 && self.fdr_q < 1.0) {
            return Err(Error::Config(format!("fdr_q must be in (0,1), got {}", self.fdr_q)));
        }
        if self.levels == Some(0) {
            return Err(Error::Config("levels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-level noise estimates and thresholds, coarsest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseReport {
    pub sigmas: Vec<f64>,
    pub thresholds: Vec<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Benjamini–Hochberg threshold on one detail level: the smallest retained
/// magnitude, or `INFINITY` when nothing is significant. A zero noise
/// estimate retains every coefficient.
pub fn fdr_threshold(detail: &[f64], sigma: f64, q: f64) -> f64 {
    if detail.is_empty() {
        return f64::INFINITY;
    }
    if sigma <= 0.0 {
        return 0.0;
    }
    let mut mags: Vec<f64> = detail.iter().map(|d| d.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let n = mags.len() as f64;
    let mut threshold = f64::INFINITY;
    for (k, &m) in mags.iter().enumerate() {
        let p = erfc(m / (sigma * std::f64::consts::SQRT_2));
        if p <= q * (k + 1) as f64 / n {
            threshold = m;
        }
    }
    threshold
}

/// Keeps coefficients with |c| >= threshold, zeroes the rest.
pub fn hard_threshold(coeffs: &[f64], threshold: f64) -> Vec<f64> {
    coeffs
        .iter()
        .map(|&c| if c.abs() >= threshold { c } else { 0.0 })
        .collect()
}

pub(crate) fn denoise_with_report(x: &[f64], cfg: &DenoiseConfig) -> Result<(Vec<f64>, DenoiseReport)> {
    cfg.validate()?;
    if x.len() < 8 {
        return Err(Error::ShortSignal {
            len: x.len(),
            required: 8,
        });
    }
    let w = Wavelet::sym4();
    let levels = cfg.levels.unwrap_or_else(|| levels_for(x.len(), w.len()));
    let mut dec = wavedec(x, &w, levels);
    let mut sigmas = Vec::with_capacity(levels);
    let mut thresholds = Vec::with_capacity(levels);
    for d in &mut dec.details {
        let mut mags: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        let sigma = median(&mut mags) / 0.6745;
        let t = fdr_threshold(d, sigma, cfg.fdr_q);
        *d = hard_threshold(d, t);
        sigmas.push(sigma);
        thresholds.push(t);
    }
    Ok((waverec(&dec, &w), DenoiseReport { sigmas, thresholds }))
}

/// sym4 decomposition, per-level FDR hard thresholding of the detail
/// coefficients, reconstruction to the input length.
pub fn wavelet_denoise(x: &[f64], cfg: &DenoiseConfig) -> Result<Vec<f64>> {
    denoise_with_report(x, cfg).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_stay_zero() {
        let y = wavelet_denoise(&vec![0.0; 512], &DenoiseConfig::default()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            wavelet_denoise(&[1.0; 7], &DenoiseConfig::default()),
            Err(Error::ShortSignal { .. })
        ));
    }

    #[test]
    fn fdr_keeps_outliers_and_drops_gaussian_bulk() {
        let mut d: Vec<f64> = (0..200).map(|i| ((i as f64 * 0.61).sin()) * 0.5).collect();
        d[10] = 20.0;
        d[50] = -15.0;
        let t = fdr_threshold(&d, 0.5, 0.05);
        let kept = hard_threshold(&d, t);
        assert_eq!(kept[10], 20.0);
        assert_eq!(kept[50], -15.0);
        assert_eq!(kept.iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn nothing_significant_zeroes_level() {
        let d = vec![0.1, -0.1, 0.2, -0.2];
        assert_eq!(fdr_threshold(&d, 1.0, 0.05), f64::INFINITY);
    }

    #[test]
    fn bad_q_rejected() {
        let cfg = DenoiseConfig {
            fdr_q: 1.5,
            levels: None,
        };
        assert!(wavelet_denoise(&[0.0; 16], &cfg).is_err());
    }
}
