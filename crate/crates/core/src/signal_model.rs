//! Core data types and their on-disk formats.
//!
//! Formats:
//!
//! * recording CSV: a `sample_rate_hz=<float>` header line followed by one
//!   `t,acc_x,acc_y,acc_z,ecg` row per sample;
//! * cohort manifest CSV: one row per subject,
//!   `subject_id,weight_kg,height_cm,age_years,sex,valve_class,vmax_ms,recording_path`;
//! * pulse set CSV: one row per beat,
//!   `subject_id,beat_index,sample_rate_hz,sqi,s0,s1,...` (`sqi` may be empty);
//! * scalogram image: `SCGI`, u32 LE height, u32 LE width, then
//!   height·width f32 LE values in row-major order.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Raw three-axis chest acceleration with a simultaneous ECG lead.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelRecording {
    pub sample_rate_hz: f64,
    pub acc_x: Vec<f64>,
    pub acc_y: Vec<f64>,
    pub acc_z: Vec<f64>,
    pub ecg: Vec<f64>,
}

impl AccelRecording {
    pub fn new(
        sample_rate_hz: f64,
        acc_x: Vec<f64>,
        acc_y: Vec<f64>,
        acc_z: Vec<f64>,
        ecg: Vec<f64>,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidSampleRate(sample_rate_hz));
        }
        let n = acc_x.len();
        if acc_y.len() != n || acc_z.len() != n || ecg.len() != n {
            return Err(Error::invalid("recording channels differ in length"));
        }
        if n < 2 {
            return Err(Error::ShortSignal {
                len: n,
                required: 2,
            });
        }
        let all = acc_x.iter().chain(&acc_y).chain(&acc_z).chain(&ecg);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("recording contains non-finite samples"));
        }
        Ok(Self {
            sample_rate_hz,
            acc_x,
            acc_y,
            acc_z,
            ecg,
        })
    }

    pub fn len(&self) -> usize {
        self.acc_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acc_x.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }
}

/// One magnitude SCG beat spanning a single R–R interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ScgPulse {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub beat_index: usize,
    pub subject_id: String,
    pub sqi: Option<f64>,
}

impl ScgPulse {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// |CWT| over (frequency, time).
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    /// Row-major, `n_freqs × n_times`.
    pub magnitude: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub times_s: Vec<f64>,
}

impl Scalogram {
    pub fn n_freqs(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn n_times(&self) -> usize {
        self.times_s.len()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.magnitude[row * self.n_times() + col]
    }
}

/// Fixed-size raster produced from a scalogram.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalogramImage {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height × width`.
    pub pixels: Vec<f64>,
    pub subject_id: String,
    pub beat_index: usize,
}

impl ScalogramImage {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValveClass {
    Tav = 0,
    Bav = 1,
    Mav = 2,
    As = 3,
}

impl ValveClass {
    pub const ALL: [ValveClass; 4] = [ValveClass::Tav, ValveClass::Bav, ValveClass::Mav, ValveClass::As];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ValveClass::Tav => "TAV",
            ValveClass::Bav => "BAV",
            ValveClass::Mav => "MAV",
            ValveClass::As => "AS",
        }
    }
}

impl fmt::Display for ValveClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ValveClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TAV" => Ok(ValveClass::Tav),
            "BAV" => Ok(ValveClass::Bav),
            "MAV" => Ok(ValveClass::Mav),
            "AS" => Ok(ValveClass::As),
            other => Err(Error::Format(format!("unknown valve class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    /// Binary encoding used as a model input: female = 1, male = 0.
    pub fn code(self) -> f64 {
        match self {
            Sex::Female => 1.0,
            Sex::Male => 0.0,
        }
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "f" | "female" => Ok(Sex::Female),
            "0" | "m" | "male" => Ok(Sex::Male),
            other => Err(Error::Format(format!("unknown sex code {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demographics {
    pub weight_kg: f64,
    pub height_cm: f64,
    pub age_years: f64,
    pub sex: Sex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub demographics: Demographics,
    pub valve_class: ValveClass,
    pub vmax_ms: f64,
    pub pulses: Vec<ScgPulse>,
}

/// A manifest row: the subject's labels plus where its recording lives.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub demographics: Demographics,
    pub valve_class: ValveClass,
    pub vmax_ms: f64,
    pub recording_path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cohort {
    subjects: Vec<SubjectRecord>,
}

impl Cohort {
    pub fn new(subjects: Vec<SubjectRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &subjects {
            if !seen.insert(s.subject_id.as_str()) {
                return Err(Error::invalid(format!("duplicate subject id {}", s.subject_id)));
            }
            if !(s.vmax_ms > 0.0) {
                return Err(Error::invalid(format!("subject {}: vmax must be positive", s.subject_id)));
            }
        }
        Ok(Self { subjects })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn total_pulses(&self) -> usize {
        self.subjects.iter().map(|s| s.pulses.len()).sum()
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_field(raw: &str, line: usize, field: usize) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::BadNumber {
        line,
        field,
        value: raw.to_string(),
    })
}

fn parse_rate_header(text: &str, line: usize) -> Result<f64> {
    let malformed = || Error::MalformedHeader {
        line,
        found: text.to_string(),
    };
    let (key, value) = text.split_once('=').ok_or_else(malformed)?;
    if key.trim() != "sample_rate_hz" {
        return Err(malformed());
    }
    let rate: f64 = value.trim().parse().map_err(|_| malformed())?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidSampleRate(rate));
    }
    Ok(rate)
}

pub fn parse_recording(reader: impl BufRead) -> Result<AccelRecording> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader {
            line: 1,
            found: String::new(),
        })?;
    let header = header.map_err(|e| Error::io("<recording>", e))?;
    let rate = parse_rate_header(header.trim(), 1)?;

    let (mut x, mut y, mut z, mut ecg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, text) in lines {
        let text = text.map_err(|e| Error::io("<recording>", e))?;
        let line = i + 1;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::RaggedRow {
                line,
                expected: 5,
                found: fields.len(),
            });
        }
        let mut vals = [0.0; 5];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = parse_field(f, line, k)?;
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { line });
        }
        x.push(vals[1]);
        y.push(vals[2]);
        z.push(vals[3]);
        ecg.push(vals[4]);
    }
    AccelRecording::new(rate, x, y, z, ecg)
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<AccelRecording> {
    let path = path.as_ref();
    parse_recording(open(path)?).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn save_recording(rec: &AccelRecording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "sample_rate_hz={}", rec.sample_rate_hz).map_err(io)?;
    for i in 0..rec.len() {
        let t = i as f64 / rec.sample_rate_hz;
        writeln!(
            w,
            "{},{},{},{},{}",
            t, rec.acc_x[i], rec.acc_y[i], rec.acc_z[i], rec.ecg[i]
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

const MANIFEST_HEADER: &str =
    "subject_id,weight_kg,height_cm,age_years,sex,valve_class,vmax_ms,recording_path";

/// Reads a cohort manifest. Relative recording paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, text) in open(path)?.lines().enumerate() {
        let text = text.map_err(|e| Error::io(path, e))?;
        let line = i + 1;
        let text = text.trim();
        if text.is_empty() || text.starts_with("subject_id,") {
            continue;
        }
        let f: Vec<&str> = text.split(',').map(str::trim).collect();
        if f.len() != 8 {
            return Err(Error::RaggedRow {
                line,
                expected: 8,
                found: f.len(),
            });
        }
        let vmax_ms = parse_field(f[6], line, 6)?;
        if !(vmax_ms > 0.0) {
            return Err(Error::Format(format!("line {line}: vmax_ms must be positive")));
        }
        let demographics = Demographics {
            weight_kg: parse_field(f[1], line, 1)?,
            height_cm: parse_field(f[2], line, 2)?,
            age_years: parse_field(f[3], line, 3)?,
            sex: f[4].parse()?,
        };
        let rec = PathBuf::from(f[7]);
        let recording_path = if rec.is_absolute() { rec } else { base.join(rec) };
        if !seen.insert(f[0].to_string()) {
            return Err(Error::Format(format!("line {line}: duplicate subject {}", f[0])));
        }
        entries.push(ManifestEntry {
            subject_id: f[0].to_string(),
            demographics,
            valve_class: f[5].parse()?,
            vmax_ms,
            recording_path,
        });
    }
    Ok(entries)
}

/// Writes a manifest; recording paths are written as given.
pub fn save_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{MANIFEST_HEADER}").map_err(io)?;
    for e in entries {
        let d = &e.demographics;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            e.subject_id,
            d.weight_kg,
            d.height_cm,
            d.age_years,
            d.sex.code() as u8,
            e.valve_class,
            e.vmax_ms,
            e.recording_path.display()
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_pulses(pulses: &[ScgPulse], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for p in pulses {
        let sqi = p.sqi.map(|s| s.to_string()).unwrap_or_default();
        write!(w, "{},{},{},{}", p.subject_id, p.beat_index, p.sample_rate_hz, sqi).map_err(io)?;
        for s in &p.samples {
            write!(w, ",{s}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_pulses(path: impl AsRef<Path>) -> Result<Vec<ScgPulse>> {
    let path = path.as_ref();
    let mut pulses = Vec::new();
    for (i, text) in open(path)?.lines().enumerate() {
        let text = text.map_err(|e| Error::io(path, e))?;
        let line = i + 1;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let f: Vec<&str> = text.split(',').collect();
        if f.len() < 6 {
            return Err(Error::RaggedRow {
                line,
                expected: 6,
                found: f.len(),
            });
        }
        let beat_index = f[1].trim().parse::<usize>().map_err(|_| Error::BadNumber {
            line,
            field: 1,
            value: f[1].to_string(),
        })?;
        let sample_rate_hz = parse_field(f[2], line, 2)?;
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidSampleRate(sample_rate_hz));
        }
        let sqi = match f[3].trim() {
            "" => None,
            s => Some(parse_field(s, line, 3)?),
        };
        let samples = f[4..]
            .iter()
            .enumerate()
            .map(|(k, v)| parse_field(v, line, k + 4))
            .collect::<Result<Vec<_>>>()?;
        if samples.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFiniteSample { line });
        }
        pulses.push(ScgPulse {
            samples,
            sample_rate_hz,
            beat_index,
            subject_id: f[0].trim().to_string(),
            sqi,
        });
    }
    Ok(pulses)
}

const IMAGE_MAGIC: &[u8; 4] = b"SCGI";
const MAX_IMAGE_PIXELS: u64 = 1 << 28;

pub fn write_scalogram_image(img: &ScalogramImage, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(IMAGE_MAGIC)?;
    w.write_all(&(img.height as u32).to_le_bytes())?;
    w.write_all(&(img.width as u32).to_le_bytes())?;
    for &p in &img.pixels {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn save_scalogram_image(img: &ScalogramImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if img.height > u32::MAX as usize || img.width > u32::MAX as usize {
        return Err(Error::DimensionOverflow {
            h: img.height as u64,
            w: img.width as u64,
        });
    }
    let mut w = create(path)?;
    write_scalogram_image(img, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parses an image file body. Identity fields are left for the caller.
pub fn read_scalogram_image(mut r: impl Read) -> Result<ScalogramImage> {
    let io = |e| Error::io("<image>", e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated image header".into()))?;
    if &magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("bad image magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| Error::Format("truncated image header".into()))?;
    let h = u32::from_le_bytes(word) as u64;
    r.read_exact(&mut word).map_err(|_| Error::Format("truncated image header".into()))?;
    let w = u32::from_le_bytes(word) as u64;
    if h.checked_mul(w).is_none_or(|n| n > MAX_IMAGE_PIXELS) {
        return Err(Error::DimensionOverflow { h, w });
    }
    let n = (h * w) as usize;
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated image data".into()))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after image data", rest.len())));
    }
    let pixels = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(ScalogramImage {
        height: h as usize,
        width: w as usize,
        pixels,
        subject_id: String::new(),
        beat_index: 0,
    })
}

/// Loads an image; identity is recovered from a `<subject>_<beat>.scgi` file name.
pub fn load_scalogram_image(path: impl AsRef<Path>) -> Result<ScalogramImage> {
    let path = path.as_ref();
    let mut img = read_scalogram_image(open(path)?).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    if let Some((subject, beat)) = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.rsplit_once('_'))
    {
        if let Ok(beat) = beat.parse() {
            img.subject_id = subject.to_string();
            img.beat_index = beat;
        }
    }
    Ok(img)
}

pub fn image_file_name(subject_id: &str, beat_index: usize) -> String {
    format!("{subject_id}_{beat_index:05}.scgi")
}
