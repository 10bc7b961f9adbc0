//! File-based composition of the stages: every stage reads the previous
//! stage's files under the output directory and writes its own.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::conditioning::{condition_recording, ConditioningConfig, DenoiseConfig};
use crate::error::{Error, Result};
use crate::experiment::{make_splits, run_trials, write_trials, ImageCohort, Trials};
use crate::gating::{extract_pulses, DetectorParams, DetectorRegistry, PeakDetector};
use crate::kv::KvMap;
use crate::neural::{train, Checkpoint, Dataset, ModelConfig, Task, TaskRegistry, MODEL_KEYS};
use crate::quality::score_and_select;
use crate::report::write_report;
use crate::scalogram::{export_pgm, MorseParams, ScalogramEngine, DEFAULT_IMAGE_SIZE};
use crate::signal_model::{
    image_file_name, load_manifest, load_pulses, load_recording, save_pulses, save_recording,
    save_scalogram_image, ManifestEntry, ScgPulse,
};
use crate::synth::MANIFEST_FILE;

pub const CONFIG_FILE: &str = "config.txt";
pub const CONDITIONED_DIR: &str = "conditioned";
pub const PULSES_DIR: &str = "pulses";
pub const KEPT_DIR: &str = "kept";
pub const IMAGES_DIR: &str = "images";
pub const RESULTS_DIR: &str = "results";
pub const REPORT_DIR: &str = "report";
/// Per-pulse quality scores written next to the kept pulses.
pub const SQI_TABLE: &str = "sqi.csv";
/// Cohort subdirectory holding `<subject>.csv` R-peak annotations.
pub const PEAKS_DIR: &str = "peaks";

/// Maps `f` over `items` on up to `threads` workers; results keep input
/// order and the first error in that order is returned.
pub fn par_try_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect()
}

pub fn condition_file(input: &Path, output: &Path, cfg: &ConditioningConfig) -> Result<()> {
    let rec = load_recording(input)?;
    save_recording(&condition_recording(&rec, cfg)?, output)
}

/// Gates one conditioned recording and writes `<out_dir>/<subject_id>.csv`.
pub fn gate_file(input: &Path, out_dir: &Path, subject_id: &str, detector: &dyn PeakDetector) -> Result<Vec<ScgPulse>> {
    let rec = load_recording(input)?;
    let peaks = detector.detect(&rec.ecg, rec.sample_rate_hz)?;
    let pulses = extract_pulses(&rec, &peaks, subject_id)?;
    save_pulses(&pulses, out_dir.join(format!("{subject_id}.csv")))?;
    Ok(pulses)
}

/// `(subject_id, path)` of every pulse file in `dir`, sorted by id.
pub fn pulse_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_csv = path.extension().and_then(|e| e.to_str()) == Some("csv");
        let is_table = path.file_name().and_then(|n| n.to_str()) == Some(SQI_TABLE);
        if !is_csv || is_table || !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            files.push((stem.to_string(), path.clone()));
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqiRow {
    pub subject_id: String,
    pub beat_index: usize,
    pub sqi: f64,
    pub kept: bool,
}

/// Scores the pulses of one subject; returns the kept pulses and one row
/// per pulse in beat order.
pub fn sqi_select(pulses: Vec<ScgPulse>, keep_fraction: f64) -> Result<(Vec<ScgPulse>, Vec<SqiRow>)> {
    let (kept, rejected) = score_and_select(pulses, keep_fraction)?;
    let row = |p: &ScgPulse, kept| SqiRow {
        subject_id: p.subject_id.clone(),
        beat_index: p.beat_index,
        sqi: p.sqi.unwrap_or(f64::NAN),
        kept,
    };
    let mut rows: Vec<SqiRow> = kept.iter().map(|p| row(p, true)).chain(rejected.iter().map(|p| row(p, false))).collect();
    rows.sort_by_key(|r| r.beat_index);
    Ok((kept, rows))
}

pub fn save_sqi_table(rows: &[SqiRow], path: &Path) -> Result<()> {
    let mut text = String::from("subject_id,beat_index,sqi,kept\n");
    for r in rows {
        text.push_str(&format!("{},{},{},{}\n", r.subject_id, r.beat_index, r.sqi, u8::from(r.kept)));
    }
    write_text(path, &text)
}

/// Scores every pulse file of `in_dir`, writing kept pulses and `sqi.csv`
/// to `out_dir`; returns the number of kept pulses.
pub fn sqi_dir(in_dir: &Path, out_dir: &Path, keep_fraction: f64, threads: usize) -> Result<usize> {
    let files = pulse_files(in_dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("{}: no pulse files", in_dir.display())));
    }
    let per_subject = par_try_map(&files, threads, |(id, path)| {
        let (kept, rows) = sqi_select(load_pulses(path)?, keep_fraction)?;
        save_pulses(&kept, out_dir.join(format!("{id}.csv")))?;
        Ok((kept.len(), rows))
    })?;
    let rows: Vec<SqiRow> = per_subject.iter().flat_map(|(_, r)| r.clone()).collect();
    save_sqi_table(&rows, &out_dir.join(SQI_TABLE))?;
    Ok(per_subject.iter().map(|(n, _)| n).sum())
}

/// Writes one `<subject>_<beat>.scgi` image per pulse of every pulse file
/// in `in_dir`, plus a `.pgm` preview when asked; returns the image count.
pub fn scalogram_dir(
    in_dir: &Path,
    out_dir: &Path,
    params: MorseParams,
    image_size: usize,
    pgm: bool,
    threads: usize,
) -> Result<usize> {
    let files = pulse_files(in_dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("{}: no pulse files", in_dir.display())));
    }
    let counts = par_try_map(&files, threads, |(_, path)| {
        let mut engine = ScalogramEngine::new(params, image_size);
        let pulses = load_pulses(path)?;
        for p in &pulses {
            let img = engine.image(p)?;
            let name = image_file_name(&img.subject_id, img.beat_index);
            save_scalogram_image(&img, out_dir.join(&name))?;
            if pgm {
                export_pgm(&img, out_dir.join(Path::new(&name).with_extension("pgm")))?;
            }
        }
        Ok(pulses.len())
    })?;
    Ok(counts.iter().sum())
}

/// Fits one model on every subject of the cohort.
pub fn train_cohort(cohort: &ImageCohort, task: &dyn Task, config: &ModelConfig) -> Result<Checkpoint> {
    let ids: Vec<String> = cohort.subjects().iter().map(|s| s.record.subject_id.clone()).collect();
    let data = cohort.dataset(&ids, task)?;
    let none = Dataset::new(cohort.height, cohort.width, Vec::new())?;
    let (model, prepared, _) = train(config, task, &data, &none)?;
    Ok(Checkpoint {
        task: task.name().to_string(),
        model,
        prepared,
    })
}

/// Repeated subject-level splits, trained and written to `out`.
pub fn run_experiment(
    cohort: &ImageCohort,
    task: &dyn Task,
    config: &ModelConfig,
    iterations: usize,
    train_frac: f64,
    seed: u64,
    threads: usize,
    out: &Path,
) -> Result<Trials> {
    let plans = make_splits(&cohort.pulse_counts(), iterations, train_frac, seed)?;
    let trials = run_trials(&plans, config, task, cohort, threads)?;
    write_trials(&trials, out)?;
    Ok(trials)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub threads: usize,
    pub conditioning: ConditioningConfig,
    pub detector: String,
    pub keep_fraction: f64,
    pub img_size: usize,
    pub morse: MorseParams,
    pub export_pgm: bool,
    pub iterations: usize,
    pub train_frac: f64,
    pub tasks: Vec<String>,
    /// Head, image size and seed are set per task from the fields above.
    pub model: ModelConfig,
}

pub const PIPELINE_KEYS: &[&str] = &[
    "seed",
    "threads",
    "taper_frac",
    "denoise",
    "fdr_q",
    "dwt_levels",
    "detector",
    "keep_fraction",
    "img_size",
    "morse_gamma",
    "morse_beta",
    "voices_per_octave",
    "export_pgm",
    "iterations",
    "train_frac",
    "tasks",
];

/// Model keys the pipeline derives itself.
const DERIVED_MODEL_KEYS: &[&str] = &["head", "image_h", "image_w", "seed"];

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            conditioning: ConditioningConfig::default(),
            detector: "pan-tompkins".into(),
            keep_fraction: 0.95,
            img_size: DEFAULT_IMAGE_SIZE,
            morse: MorseParams::default(),
            export_pgm: false,
            iterations: crate::experiment::DEFAULT_ITERATIONS,
            train_frac: crate::experiment::DEFAULT_TRAIN_FRAC,
            tasks: vec!["vmax".into(), "valve".into()],
            model: ModelConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn allowed_keys() -> Vec<&'static str> {
        let model = MODEL_KEYS.iter().filter(|k| !DERIVED_MODEL_KEYS.contains(k));
        PIPELINE_KEYS.iter().chain(model).copied().collect()
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.reject_unknown(&Self::allowed_keys())?;
        let d = Self::default();
        let denoise_on = kv.get_or("denoise", d.conditioning.denoise.is_some())?;
        let base = d.conditioning.denoise.clone().unwrap_or_default();
        let levels = match kv.get_str("dwt_levels") {
            None | Some("auto") => base.levels,
            Some(_) => Some(kv.get::<usize>("dwt_levels")?.expect("key present")),
        };
        let denoise = DenoiseConfig {
            fdr_q: kv.get_or("fdr_q", base.fdr_q)?,
            levels,
        };
        let tasks = match kv.get_list::<String>("tasks")? {
            Some(t) => t,
            None => d.tasks.clone(),
        };
        let c = Self {
            seed: kv.get_or("seed", d.seed)?,
            threads: kv.get_or("threads", d.threads)?,
            conditioning: ConditioningConfig {
                taper_frac: kv.get_or("taper_frac", d.conditioning.taper_frac)?,
                denoise: denoise_on.then_some(denoise),
            },
            detector: kv.get_str("detector").unwrap_or(&d.detector).to_string(),
            keep_fraction: kv.get_or("keep_fraction", d.keep_fraction)?,
            img_size: kv.get_or("img_size", d.img_size)?,
            morse: MorseParams {
                gamma: kv.get_or("morse_gamma", d.morse.gamma)?,
                beta: kv.get_or("morse_beta", d.morse.beta)?,
                voices_per_octave: kv.get_or("voices_per_octave", d.morse.voices_per_octave)?,
            },
            export_pgm: kv.get_or("export_pgm", d.export_pgm)?,
            iterations: kv.get_or("iterations", d.iterations)?,
            train_frac: kv.get_or("train_frac", d.train_frac)?,
            tasks,
            model: ModelConfig::default().update_from_kv(kv)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvMap::load(path)?)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        let model = self.model.to_kv();
        for k in MODEL_KEYS.iter().filter(|k| !DERIVED_MODEL_KEYS.contains(k)) {
            kv.insert(k, model.get_str(k).unwrap_or_default());
        }
        let denoise = self.conditioning.denoise.clone();
        let shown = denoise.clone().unwrap_or_default();
        kv.insert("seed", self.seed);
        kv.insert("threads", self.threads);
        kv.insert("taper_frac", self.conditioning.taper_frac);
        kv.insert("denoise", denoise.is_some());
        kv.insert("fdr_q", shown.fdr_q);
        kv.insert("dwt_levels", shown.levels.map_or("auto".to_string(), |l| l.to_string()));
        kv.insert("detector", &self.detector);
        kv.insert("keep_fraction", self.keep_fraction);
        kv.insert("img_size", self.img_size);
        kv.insert("morse_gamma", self.morse.gamma);
        kv.insert("morse_beta", self.morse.beta);
        kv.insert("voices_per_octave", self.morse.voices_per_octave);
        kv.insert("export_pgm", self.export_pgm);
        kv.insert("iterations", self.iterations);
        kv.insert("train_frac", self.train_frac);
        kv.insert("tasks", self.tasks.join(","));
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.threads == 0 {
            return bad("threads must be positive".into());
        }
        if !(0.0..0.5).contains(&self.conditioning.taper_frac) {
            return bad(format!("taper_frac must lie in [0, 0.5), got {}", self.conditioning.taper_frac));
        }
        if let Some(d) = &self.conditioning.denoise {
            if !(d.fdr_q > 0.0 && d.fdr_q < 1.0) {
                return bad(format!("fdr_q must lie in (0, 1), got {}", d.fdr_q));
            }
            if d.levels == Some(0) {
                return bad("dwt_levels must be positive".into());
            }
        }
        let detectors = DetectorRegistry::default().names();
        if !detectors.contains(&self.detector.as_str()) {
            return Err(Error::UnknownStrategy {
                kind: "peak detector",
                name: self.detector.clone(),
                available: detectors.join(", "),
            });
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return bad(format!("keep_fraction must lie in (0, 1], got {}", self.keep_fraction));
        }
        if self.img_size == 0 {
            return bad("img_size must be positive".into());
        }
        if self.morse.voices_per_octave == 0 || !(self.morse.gamma > 0.0 && self.morse.beta > 0.0) {
            return bad("Morse parameters must be positive".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad(format!("train_frac must lie in (0, 1), got {}", self.train_frac));
        }
        if self.tasks.is_empty() {
            return bad("tasks must not be empty".into());
        }
        let registry = TaskRegistry::default();
        for t in &self.tasks {
            registry.create(t)?;
        }
        self.model.validate()
    }

    /// The model configuration used for `task`.
    pub fn model_for(&self, task: &dyn Task) -> ModelConfig {
        ModelConfig {
            head: task.head(),
            image_h: self.img_size,
            image_w: self.img_size,
            seed: self.seed,
            ..self.model.clone()
        }
    }

    fn detector_for(&self, cohort_dir: &Path, subject_id: &str) -> Result<Box<dyn PeakDetector>> {
        let params = DetectorParams {
            annotations: Some(cohort_dir.join(PEAKS_DIR).join(format!("{subject_id}.csv"))),
        };
        DetectorRegistry::default().create(&self.detector, &params)
    }
}

/// What a stage sees: the configuration, the cohort and the output root.
pub struct StageContext<'a> {
    pub config: &'a PipelineConfig,
    pub cohort_dir: &'a Path,
    pub manifest: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub out_dir: &'a Path,
}

impl StageContext<'_> {
    pub fn dir(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Empties and recreates the stage directory `name`.
    fn fresh_dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.dir(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn tasks(&self) -> Result<Vec<Box<dyn Task>>> {
        let registry = TaskRegistry::default();
        self.config.tasks.iter().map(|t| registry.create(t)).collect()
    }
}

pub trait Stage: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &StageContext) -> Result<()>;
}

struct Condition;
struct Gate;
struct Sqi;
struct Scalograms;
struct Experiment;
struct Report;

impl Stage for Condition {
    fn name(&self) -> &'static str {
        "condition"
    }

    fn run(&self, ctx: &StageContext) -> Result<()> {
        let out = ctx.fresh_dir(CONDITIONED_DIR)?;
        par_try_map(&ctx.entries, ctx.config.threads, |e| {
            condition_file(&e.recording_path, &out.join(format!("{}.csv", e.subject_id)), &ctx.config.conditioning)
        })?;
        Ok(())
    }
}

impl Stage for Gate {
    fn name(&self) -> &'static str {
        "gate"
    }

    fn run(&self, ctx: &StageContext) -> Result<()> {
        let input = ctx.dir(CONDITIONED_DIR);
        let out = ctx.fresh_dir(PULSES_DIR)?;
        let counts = par_try_map(&ctx.entries, ctx.config.threads, |e| {
            let detector = ctx.config.detector_for(ctx.cohort_dir, &e.subject_id)?;
            let path = input.join(format!("{}.csv", e.subject_id));
            Ok(gate_file(&path, &out, &e.subject_id, detector.as_ref())?.len())
        })?;
        log::info!("gated {} pulses", counts.iter().sum::<usize>());
        Ok(())
    }
}

impl Stage for Sqi {
    fn name(&self) -> &'static str {
        "sqi"
    }

    fn run(&self, ctx: &StageContext) -> Result<()> {
        let out = ctx.fresh_dir(KEPT_DIR)?;
        let kept = sqi_dir(&ctx.dir(PULSES_DIR), &out, ctx.config.keep_fraction, ctx.config.threads)?;
        log::info!("kept {kept} pulses");
        Ok(())
    }
}

impl Stage for Scalograms {
    fn name(&self) -> &'static str {
        "scalogram"
    }

    fn run(&self, ctx: &StageContext) -> Result<()> {
        let out = ctx.fresh_dir(IMAGES_DIR)?;
        let c = ctx.config;
        let n = scalogram_dir(&ctx.dir(KEPT_DIR), &out, c.morse, c.img_size, c.export_pgm, c.threads)?;
        log::info!("wrote {n} scalogram images");
        Ok(())
    }
}

impl Stage for Experiment {
    fn name(&self) -> &'static str {
        "experiment"
    }

    fn run(&self, ctx: &StageContext) -> Result<()> {
        let results = ctx.fresh_dir(RESULTS_DIR)?;
        let cohort = ImageCohort::load(&ctx.manifest, ctx.dir(IMAGES_DIR))?;
        let c = ctx.config;
        for task in ctx.tasks()? {
            let out = results.join(task.name());
            let model = c.model_for(task.as_ref());
            run_experiment(&cohort, task.as_ref(), &model, c.iterations, c.train_frac, c.seed, c.threads, &out)?;
        }
        Ok(())
    }
}

impl Stage for Report {
    fn name(&self) -> &'static str {
        "report"
    }

    fn run(&self, ctx: &StageContext) -> Result<()> {
        let out = ctx.fresh_dir(REPORT_DIR)?;
        for task in ctx.tasks()? {
            write_report(ctx.dir(RESULTS_DIR).join(task.name()), out.join(task.name()))?;
        }
        Ok(())
    }
}

/// Stages in execution order.
pub struct StageRegistry {
    stages: Vec<Box<dyn Stage>>,
}

impl StageRegistry {
    pub fn empty() -> Self {
        Self { stages: Vec::new() }
    }

    pub fn push(&mut self, stage: Box<dyn Stage>) {
        self.stages.push(stage);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.stages.iter().map(|s| s.name()).collect()
    }

    /// Runs every stage in order; a failure names its stage.
    pub fn run(&self, ctx: &StageContext) -> Result<()> {
        for stage in &self.stages {
            log::info!("stage {} started", stage.name());
            stage.run(ctx).map_err(|e| Error::Stage {
                stage: stage.name(),
                source: Box::new(e),
            })?;
        }
        Ok(())
    }
}

impl Default for StageRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.push(Box::new(Condition));
        r.push(Box::new(Gate));
        r.push(Box::new(Sqi));
        r.push(Box::new(Scalograms));
        r.push(Box::new(Experiment));
        r.push(Box::new(Report));
        r
    }
}

/// Runs every stage on the cohort in `cohort_dir`; returns the report
/// directory.
pub fn run_pipeline(config: &PipelineConfig, cohort_dir: &Path, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    let manifest = cohort_dir.join(MANIFEST_FILE);
    let entries = load_manifest(&manifest)?;
    if entries.is_empty() {
        return Err(Error::invalid(format!("{}: no subjects", manifest.display())));
    }
    write_text(&out_dir.join(CONFIG_FILE), &config.to_kv().to_text())?;
    let ctx = StageContext {
        config,
        cohort_dir,
        manifest,
        entries,
        out_dir,
    };
    StageRegistry::default().run(&ctx)?;
    Ok(out_dir.join(REPORT_DIR))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let c = PipelineConfig {
            img_size: 64,
            iterations: 3,
            tasks: vec!["valve".into()],
            conditioning: ConditioningConfig {
                taper_frac: 0.02,
                denoise: None,
            },
            ..PipelineConfig::default()
        };
        assert_eq!(PipelineConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert_eq!(PipelineConfig::from_kv(&KvMap::default()).unwrap(), PipelineConfig::default());
        for bad in ["bogus=1", "head=regression", "keep_fraction=0", "tasks=vmax,nope", "detector=magic", "fdr_q=1"] {
            assert!(PipelineConfig::from_kv(&KvMap::parse(bad).unwrap()).is_err(), "{bad}");
        }
    }

    #[test]
    fn par_map_keeps_order_and_reports_first_error() {
        let items: Vec<usize> = (0..40).collect();
        let out = par_try_map(&items, 4, |&i| Ok(i * 2)).unwrap();
        assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
        let err = par_try_map(&items, 3, |&i| if i % 7 == 3 { Err(Error::Empty("x")) } else { Ok(i) });
        assert!(err.is_err());
    }
}
