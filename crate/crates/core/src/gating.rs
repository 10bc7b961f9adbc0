//! R-peak detection, beat segmentation and magnitude SCG pulses.
//!
//! Detectors are strategies behind [`PeakDetector`] and are looked up by
//! name in a [`DetectorRegistry`]: `pan-tompkins` runs the built-in QRS
//! detector, `annotations` replays sample indices from a file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::conditioning::{apply_filter, FilterRealization, Section};
use crate::error::{Error, Result};
use crate::signal_model::{AccelRecording, ScgPulse};

/// Refractory period between accepted R-peaks.
pub const REFRACTORY_S: f64 = 0.25;
/// Beats outside this duration range are discarded.
pub const MIN_BEAT_S: f64 = 0.3;
pub const MAX_BEAT_S: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RPeakList {
    indices: Vec<usize>,
    source_len: usize,
}

impl RPeakList {
    pub fn new(indices: Vec<usize>, source_len: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("R-peak indices must be strictly increasing"));
        }
        if indices.last().is_some_and(|&i| i >= source_len) {
            return Err(Error::invalid("R-peak index beyond signal end"));
        }
        Ok(Self { indices, source_len })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub trait PeakDetector: Send + Sync {
    fn name(&self) -> &'static str;
    fn detect(&self, ecg: &[f64], sample_rate_hz: f64) -> Result<RPeakList>;
}

/// Options a detector factory may consume.
#[derive(Debug, Clone, Default)]
pub struct DetectorParams {
    pub annotations: Option<PathBuf>,
}

type DetectorFactory = fn(&DetectorParams) -> Result<Box<dyn PeakDetector>>;

pub struct DetectorRegistry {
    factories: BTreeMap<&'static str, DetectorFactory>,
}

impl DetectorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: DetectorFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, params: &DetectorParams) -> Result<Box<dyn PeakDetector>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "peak detector",
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        factory(params)
    }
}

impl Default for DetectorRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("pan-tompkins", |_| Ok(Box::new(PanTompkins::default())));
        r.register("annotations", |p| {
            let path = p
                .annotations
                .as_ref()
                .ok_or_else(|| Error::Config("annotations detector needs an annotations file".into()))?;
            Ok(Box::new(AnnotatedPeaks::load(path)?))
        });
        r
    }
}

/// Band-pass, differentiate, square, moving-window integrate, then an
/// adaptive threshold with a refractory period.
#[derive(Debug, Clone)]
pub struct PanTompkins {
    pub band_hz: (f64, f64),
    pub window_s: f64,
    pub threshold_frac: f64,
    pub refractory_s: f64,
}

impl Default for PanTompkins {
    fn default() -> Self {
        Self {
            band_hz: (5.0, 20.0),
            window_s: 0.150,
            threshold_frac: 0.5,
            refractory_s: REFRACTORY_S,
        }
    }
}

/// Second-order band-pass centred on the geometric mean of the band edges.
fn bandpass(lo: f64, hi: f64, fs: f64) -> FilterRealization {
    let f0 = (lo * hi).sqrt();
    let q = f0 / (hi - lo);
    let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    FilterRealization {
        sections: vec![Section {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [1.0, -2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
        }],
        gain: 1.0,
        order: 2,
        sample_rate_hz: fs,
    }
}

/// Centred moving average of width `w` samples.
fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let half = w / 2;
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

impl PeakDetector for PanTompkins {
    fn name(&self) -> &'static str {
        "pan-tompkins"
    }

    fn detect(&self, ecg: &[f64], fs: f64) -> Result<RPeakList> {
        let n = ecg.len();
        let min_len = (2.0 * fs).ceil() as usize;
        if n < min_len {
            return Err(Error::ShortSignal { len: n, required: min_len });
        }
        let mean = ecg.iter().sum::<f64>() / n as f64;
        let var = ecg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if !(var > 1e-12) {
            return Err(Error::NoPeaks);
        }

        let filtered = apply_filter(&bandpass(self.band_hz.0, self.band_hz.1, fs), ecg)?;
        // five-point derivative
        let mut deriv = vec![0.0; n];
        for i in 2..n.saturating_sub(2) {
            deriv[i] = (2.0 * filtered[i + 1] + filtered[i + 2] - filtered[i - 2] - 2.0 * filtered[i - 1]) * fs / 8.0;
        }
        let squared: Vec<f64> = deriv.iter().map(|d| d * d).collect();
        let width = ((self.window_s * fs).round() as usize).max(1);
        let mwi = moving_average(&squared, width);

        let learn = min_len.min(n);
        let mut level = mwi[..learn].iter().copied().fold(0.0, f64::max);
        if !(level > 0.0) {
            return Err(Error::NoPeaks);
        }
        let refractory = (self.refractory_s * fs).round() as usize;
        let search = width;
        let mut peaks: Vec<usize> = Vec::new();
        let mut i = 0;
        while i < n {
            let threshold = self.threshold_frac * level;
            if mwi[i] <= threshold {
                i += 1;
                continue;
            }
            // region above threshold
            let start = i;
            while i < n && mwi[i] > threshold {
                i += 1;
            }
            let (top, top_val) = (start..i).fold((start, mwi[start]), |best, k| {
                if mwi[k] > best.1 { (k, mwi[k]) } else { best }
            });
            // refine on the raw ECG around the integrator maximum
            let lo = top.saturating_sub(search);
            let hi = (top + search / 2 + 1).min(n);
            let r = (lo..hi).fold(lo, |best, k| if ecg[k] > ecg[best] { k } else { best });
            match peaks.last() {
                Some(&last) if r < last + refractory => {
                    if ecg[r] > ecg[last] {
                        *peaks.last_mut().unwrap() = r;
                    }
                }
                _ => peaks.push(r),
            }
            level = 0.875 * level + 0.125 * top_val;
        }
        peaks.dedup();
        if peaks.is_empty() {
            return Err(Error::NoPeaks);
        }
        RPeakList::new(peaks, n)
    }
}

/// Peaks supplied externally, one sample index per line.
#[derive(Debug, Clone)]
pub struct AnnotatedPeaks {
    pub indices: Vec<usize>,
}

impl AnnotatedPeaks {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            indices: parse_annotations(&text)?,
        })
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| Error::BadNumber {
                line: i + 1,
                field: 0,
                value: l.to_string(),
            })
        })
        .collect()
}

impl PeakDetector for AnnotatedPeaks {
    fn name(&self) -> &'static str {
        "annotations"
    }

    fn detect(&self, ecg: &[f64], _fs: f64) -> Result<RPeakList> {
        if self.indices.is_empty() {
            return Err(Error::NoPeaks);
        }
        RPeakList::new(self.indices.clone(), ecg.len())
    }
}

/// Three-axis acceleration over one R–R interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatWindow {
    pub beat_index: usize,
    pub start: usize,
    pub acc_x: Vec<f64>,
    pub acc_y: Vec<f64>,
    pub acc_z: Vec<f64>,
}

impl BeatWindow {
    pub fn len(&self) -> usize {
        self.acc_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acc_x.is_empty()
    }
}

/// Beat `i` spans `[peaks[i], peaks[i+1])`. A final peak equal to the
/// recording length closes the last beat at the end of the recording.
pub fn segment_beats(rec: &AccelRecording, peaks: &[usize]) -> Result<Vec<BeatWindow>> {
    if peaks.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 R-peaks, got {}", peaks.len())));
    }
    if peaks.windows(2).any(|w| w[0] >= w[1]) || peaks[peaks.len() - 1] > rec.len() {
        return Err(Error::invalid("R-peaks must be strictly increasing and within the recording"));
    }
    Ok(peaks
        .windows(2)
        .enumerate()
        .map(|(i, w)| BeatWindow {
            beat_index: i,
            start: w[0],
            acc_x: rec.acc_x[w[0]..w[1]].to_vec(),
            acc_y: rec.acc_y[w[0]..w[1]].to_vec(),
            acc_z: rec.acc_z[w[0]..w[1]].to_vec(),
        })
        .collect())
}

/// Pointwise Euclidean norm of the acceleration vector.
pub fn magnitude_scg(beat: &BeatWindow, sample_rate_hz: f64, subject_id: &str) -> Result<ScgPulse> {
    if beat.acc_y.len() != beat.len() || beat.acc_z.len() != beat.len() {
        return Err(Error::invalid("beat channels differ in length"));
    }
    let samples = beat
        .acc_x
        .iter()
        .zip(&beat.acc_y)
        .zip(&beat.acc_z)
        .map(|((x, y), z)| (x * x + y * y + z * z).sqrt())
        .collect();
    Ok(ScgPulse {
        samples,
        sample_rate_hz,
        beat_index: beat.beat_index,
        subject_id: subject_id.to_string(),
        sqi: None,
    })
}

pub fn is_plausible_beat(len: usize, sample_rate_hz: f64) -> bool {
    let d = len as f64 / sample_rate_hz;
    (MIN_BEAT_S..=MAX_BEAT_S).contains(&d)
}

/// Segments, drops implausible beats and takes the magnitude.
pub fn extract_pulses(rec: &AccelRecording, peaks: &RPeakList, subject_id: &str) -> Result<Vec<ScgPulse>> {
    segment_beats(rec, peaks.indices())?
        .iter()
        .filter(|b| is_plausible_beat(b.len(), rec.sample_rate_hz))
        .map(|b| magnitude_scg(b, rec.sample_rate_hz, subject_id))
        .collect()
}
