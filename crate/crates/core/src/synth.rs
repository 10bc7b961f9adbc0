//! Deterministic synthetic cohorts with known R-peaks, labels and SCG
//! morphology.
//!
//! Each beat carries two Gaussian-windowed tone bursts. The first sits at a
//! fixed latency after the R-peak; the second burst's amplitude (relative to
//! the first) and latency are linear in the subject's V_max with
//! class-specific offsets. Carrier frequencies are class-specific, so the
//! classes are separable by construction.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::signal_model::{save_manifest, save_recording, AccelRecording, Demographics, ManifestEntry, Sex, ValveClass};

/// Latency of the first burst after the R-peak.
pub const FIRST_BURST_S: f64 = 0.06;
/// Gaussian window standard deviations of the two bursts.
pub const BURST_WIDTH_S: [f64; 2] = [0.018, 0.014];
/// Bursts are truncated at this many window standard deviations.
pub const BURST_SUPPORT: f64 = 4.0;
/// Quiet time before the first and after the last R-peak.
pub const MARGIN_S: f64 = 1.2;
pub const ECG_SPIKE_S: f64 = 0.04;

/// Carrier frequencies (Hz) per class for burst 1 and burst 2.
pub const CARRIERS_HZ: [[f64; 2]; 4] = [[24.0, 45.0], [34.0, 58.0], [44.0, 71.0], [54.0, 84.0]];
/// V_max range (m/s) per class.
pub const VMAX_RANGE: [[f64; 2]; 4] = [[1.0, 1.6], [1.4, 2.4], [2.0, 2.8], [3.0, 4.5]];
pub const RATIO_OFFSET: [f64; 4] = [0.2, 0.0, 0.1, -0.3];
pub const DELAY_OFFSET_S: [f64; 4] = [0.30, 0.29, 0.31, 0.28];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub pulses_min: usize,
    pub pulses_max: usize,
    pub hr_min_bpm: f64,
    pub hr_max_bpm: f64,
    /// Subjects per class in TAV, BAV, MAV, AS order.
    pub class_mix: [usize; 4],
    /// Per-axis SNR; `inf` disables noise.
    pub snr_db: f64,
    pub sample_rate_hz: f64,
    /// Second-burst amplitude ratio per m/s.
    pub ratio_slope: f64,
    /// Second-burst latency per m/s.
    pub delay_slope_s: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::balanced(20, 50)
    }
}

pub const SPEC_KEYS: &[&str] = &[
    "n_subjects",
    "pulses_min",
    "pulses_max",
    "hr_min_bpm",
    "hr_max_bpm",
    "class_mix",
    "snr_db",
    "sample_rate_hz",
    "ratio_slope",
    "delay_slope_s",
    "seed",
];

/// Splits `n` as evenly as possible over the four classes.
pub fn balanced_mix(n: usize) -> [usize; 4] {
    let mut mix = [n / 4; 4];
    for m in mix.iter_mut().take(n % 4) {
        *m += 1;
    }
    mix
}

impl SynthSpec {
    pub fn balanced(n_subjects: usize, pulses: usize) -> Self {
        Self {
            n_subjects,
            pulses_min: pulses,
            pulses_max: pulses,
            hr_min_bpm: 60.0,
            hr_max_bpm: 80.0,
            class_mix: balanced_mix(n_subjects),
            snr_db: 20.0,
            sample_rate_hz: 500.0,
            ratio_slope: 0.5,
            delay_slope_s: 0.02,
            seed: 1,
        }
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.reject_unknown(SPEC_KEYS)?;
        let d = Self::default();
        let n_subjects = kv.get_or("n_subjects", d.n_subjects)?;
        let class_mix = match kv.get_list::<usize>("class_mix")? {
            Some(v) => <[usize; 4]>::try_from(v)
                .map_err(|_| Error::Config("class_mix needs exactly 4 counts".into()))?,
            None => balanced_mix(n_subjects),
        };
        let spec = Self {
            n_subjects,
            pulses_min: kv.get_or("pulses_min", d.pulses_min)?,
            pulses_max: kv.get_or("pulses_max", d.pulses_max)?,
            hr_min_bpm: kv.get_or("hr_min_bpm", d.hr_min_bpm)?,
            hr_max_bpm: kv.get_or("hr_max_bpm", d.hr_max_bpm)?,
            class_mix,
            snr_db: kv.get_or("snr_db", d.snr_db)?,
            sample_rate_hz: kv.get_or("sample_rate_hz", d.sample_rate_hz)?,
            ratio_slope: kv.get_or("ratio_slope", d.ratio_slope)?,
            delay_slope_s: kv.get_or("delay_slope_s", d.delay_slope_s)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("n_subjects", self.n_subjects);
        kv.insert("pulses_min", self.pulses_min);
        kv.insert("pulses_max", self.pulses_max);
        kv.insert("hr_min_bpm", self.hr_min_bpm);
        kv.insert("hr_max_bpm", self.hr_max_bpm);
        let mix: Vec<String> = self.class_mix.iter().map(|c| c.to_string()).collect();
        kv.insert("class_mix", mix.join(","));
        kv.insert("snr_db", self.snr_db);
        kv.insert("sample_rate_hz", self.sample_rate_hz);
        kv.insert("ratio_slope", self.ratio_slope);
        kv.insert("delay_slope_s", self.delay_slope_s);
        kv.insert("seed", self.seed);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        if self.class_mix.iter().sum::<usize>() != self.n_subjects {
            return bad(format!(
                "class_mix {:?} does not sum to n_subjects {}",
                self.class_mix, self.n_subjects
            ));
        }
        if self.pulses_min == 0 || self.pulses_min > self.pulses_max {
            return bad("need 1 <= pulses_min <= pulses_max".into());
        }
        if !(self.hr_min_bpm >= 35.0 && self.hr_min_bpm <= self.hr_max_bpm && self.hr_max_bpm <= 170.0) {
            return bad("heart rate range must lie within 35..170 bpm".into());
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad("snr_db must be a number or inf".into());
        }
        if !(self.sample_rate_hz >= 250.0 && self.sample_rate_hz.is_finite()) {
            return bad("sample_rate_hz must be at least 250".into());
        }
        if !(self.ratio_slope > 0.0 && self.delay_slope_s > 0.0) {
            return bad("morphology slopes must be positive".into());
        }
        Ok(())
    }
}

/// Per-subject burst parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Morphology {
    pub carriers_hz: [f64; 2],
    pub amplitudes: [f64; 2],
    pub delays_s: [f64; 2],
}

impl Morphology {
    pub fn for_subject(spec: &SynthSpec, class: ValveClass, vmax: f64) -> Self {
        let c = class.index();
        Self {
            carriers_hz: CARRIERS_HZ[c],
            amplitudes: [1.0, RATIO_OFFSET[c] + spec.ratio_slope * vmax],
            delays_s: [FIRST_BURST_S, DELAY_OFFSET_S[c] + spec.delay_slope_s * vmax],
        }
    }

    /// Clean burst signal at time `t` after the R-peak.
    pub fn eval(&self, t: f64) -> f64 {
        (0..2)
            .map(|k| {
                let x = (t - self.delays_s[k]) / BURST_WIDTH_S[k];
                if x.abs() > BURST_SUPPORT {
                    0.0
                } else {
                    self.amplitudes[k]
                        * (-0.5 * x * x).exp()
                        * (2.0 * PI * self.carriers_hz[k] * (t - self.delays_s[k])).sin()
                }
            })
            .sum()
    }

    /// Time after the R-peak beyond which the pulse is identically zero.
    pub fn extent_s(&self) -> f64 {
        (0..2)
            .map(|k| self.delays_s[k] + BURST_SUPPORT * BURST_WIDTH_S[k])
            .fold(0.0, f64::max)
    }
}

/// Raised-cosine ECG spike of unit height centred on the R-peak.
pub fn ecg_spike(t: f64) -> f64 {
    if t.abs() >= ECG_SPIKE_S / 2.0 {
        0.0
    } else {
        0.5 * (1.0 + (2.0 * PI * t / ECG_SPIKE_S).cos())
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn subject_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64 + 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubject {
    pub entry: ManifestEntry,
    pub morphology: Morphology,
    /// Direction of the SCG vibration in accelerometer axes (unit norm).
    pub axis_weights: [f64; 3],
    pub axis_offsets: [f64; 3],
    pub r_peaks: Vec<usize>,
    pub recording: AccelRecording,
}

impl SynthSubject {
    pub fn n_pulses(&self) -> usize {
        self.r_peaks.len().saturating_sub(1)
    }
}

/// Subject ids in class-block order; class assignment follows `class_mix`.
fn classes(spec: &SynthSpec) -> Vec<ValveClass> {
    ValveClass::ALL
        .iter()
        .zip(spec.class_mix)
        .flat_map(|(&c, n)| std::iter::repeat_n(c, n))
        .collect()
}

pub fn subject_id(index: usize) -> String {
    format!("S{:03}", index + 1)
}

pub fn generate_subject(spec: &SynthSpec, index: usize, class: ValveClass) -> Result<SynthSubject> {
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(spec.seed, index));
    let fs = spec.sample_rate_hz;
    let c = class.index();
    let vmax = rng.gen_range(VMAX_RANGE[c][0]..=VMAX_RANGE[c][1]);
    let demographics = Demographics {
        weight_kg: rng.gen_range(50.0..=100.0),
        height_cm: rng.gen_range(150.0..=195.0),
        age_years: rng.gen_range(20.0..=85.0),
        sex: if rng.gen_bool(0.5) { Sex::Female } else { Sex::Male },
    };
    let n_pulses = rng.gen_range(spec.pulses_min..=spec.pulses_max);
    let hr = rng.gen_range(spec.hr_min_bpm..=spec.hr_max_bpm);
    let morphology = Morphology::for_subject(spec, class, vmax);

    let mut dir = [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)];
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    let offsets = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 1.0 + rng.gen_range(-0.05..0.05)];

    // R-peak times with ±3% beat-to-beat jitter around the mean interval.
    let mean_rr = 60.0 / hr;
    let mut r_peaks = Vec::with_capacity(n_pulses + 1);
    let mut t = MARGIN_S;
    for k in 0..=n_pulses {
        if k > 0 {
            t += mean_rr * (1.0 + rng.gen_range(-0.03..=0.03));
        }
        r_peaks.push((t * fs).round() as usize);
    }
    let len = r_peaks[n_pulses] + (MARGIN_S * fs).round() as usize;

    let mut clean = vec![0.0; len];
    let mut ecg = vec![0.0; len];
    let extent = (morphology.extent_s() * fs).ceil() as usize + 1;
    let half_spike = (ECG_SPIKE_S * fs).ceil() as usize;
    for &r in &r_peaks {
        for j in r..(r + extent).min(len) {
            clean[j] += morphology.eval((j - r) as f64 / fs);
        }
        for j in r.saturating_sub(half_spike)..(r + half_spike).min(len) {
            ecg[j] += ecg_spike((j as f64 - r as f64) / fs);
        }
    }

    let mut axes: Vec<Vec<f64>> = (0..3)
        .map(|a| clean.iter().map(|s| offsets[a] + dir[a] * s).collect())
        .collect();
    if spec.snr_db.is_finite() {
        for (a, axis) in axes.iter_mut().enumerate() {
            let power = clean.iter().map(|s| (dir[a] * s).powi(2)).sum::<f64>() / len as f64;
            let sigma = (power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
            let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
            for v in axis.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        let ecg_noise = Normal::new(0.0, 0.01).map_err(|e| Error::Config(e.to_string()))?;
        for v in ecg.iter_mut() {
            *v += ecg_noise.sample(&mut rng);
        }
    }
    let [x, y, z]: [Vec<f64>; 3] = axes.try_into().expect("three axes");
    let recording = AccelRecording::new(fs, x, y, z, ecg)?;
    let id = subject_id(index);
    Ok(SynthSubject {
        entry: ManifestEntry {
            recording_path: PathBuf::from(format!("recordings/{id}.csv")),
            subject_id: id,
            demographics,
            valve_class: class,
            vmax_ms: vmax,
        },
        morphology,
        axis_weights: dir,
        axis_offsets: offsets,
        r_peaks,
        recording,
    })
}

/// Generates every subject in memory.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthSubject>> {
    spec.validate()?;
    classes(spec)
        .into_iter()
        .enumerate()
        .map(|(i, c)| generate_subject(spec, i, c))
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MODEL_FILE: &str = "synth_model.txt";

/// Writes `manifest.csv`, `recordings/<id>.csv`, `peaks/<id>.csv` (true
/// R-peak indices) and `synth_model.txt` (spec plus per-subject burst
/// parameters) under `out_dir`; returns the manifest path.
pub fn generate_cohort(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out = out_dir.as_ref();
    let subjects = generate(spec)?;
    let mut model = spec.to_kv().to_text();
    for s in &subjects {
        save_recording(&s.recording, out.join(&s.entry.recording_path))?;
        let peaks: String = s.r_peaks.iter().map(|p| format!("{p}\n")).collect();
        write_file(&out.join("peaks").join(format!("{}.csv", s.entry.subject_id)), &peaks)?;
        let m = &s.morphology;
        model.push_str(&format!(
            "subject.{}={},{},{},{},{},{},{}\n",
            s.entry.subject_id,
            m.carriers_hz[0],
            m.carriers_hz[1],
            m.amplitudes[1],
            m.delays_s[1],
            s.entry.vmax_ms,
            s.entry.valve_class,
            s.n_pulses()
        ));
    }
    write_file(&out.join(MODEL_FILE), &model)?;
    let manifest = out.join(MANIFEST_FILE);
    let entries: Vec<ManifestEntry> = subjects.into_iter().map(|s| s.entry).collect();
    save_manifest(&entries, &manifest)?;
    Ok(manifest)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
