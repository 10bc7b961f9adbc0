//! Argument parsing and dispatch for the `scgflow` executable.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scgflow::experiment::ImageCohort;
use scgflow::gating::{DetectorParams, DetectorRegistry};
use scgflow::kv::KvMap;
use scgflow::neural::{save_checkpoint, ModelConfig, Task, TaskRegistry};
use scgflow::pipeline::{
    condition_file, gate_file, run_experiment, run_pipeline, scalogram_dir, sqi_dir, train_cohort, PipelineConfig,
    CONFIG_FILE,
};
use scgflow::report::write_report;
use scgflow::synth::{generate_cohort, SynthSpec};
use scgflow::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "scgflow", version, about = "Seismocardiogram processing and V_max / valve modeling")]
pub struct Cli {
    /// key=value configuration file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for synthesis, splits and training
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Maximum worker threads
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Log stage progress to standard error
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (manifest, recordings, true R-peaks)
    Synth(SynthArgs),
    /// High-pass, taper and denoise one recording
    Condition(ConditionArgs),
    /// Detect R-peaks and cut one recording into SCG pulses
    Gate(GateArgs),
    /// Score pulses against their subject template and drop the worst
    Sqi(SqiArgs),
    /// Turn pulses into fixed-size Morse scalogram images
    Scalogram(ScalogramArgs),
    /// Fit one model on a whole cohort and save the checkpoint
    Train(TrainArgs),
    /// Repeated subject-level train/test splits with per-iteration metrics
    Experiment(ExperimentArgs),
    /// Tables and SVG figures from an experiment results directory
    Report(ReportArgs),
    /// Every stage from a cohort directory to the report
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// key=value synthesis spec
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Cohort directory to create
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct ConditioningFlags {
    /// Skip wavelet denoising
    #[arg(long)]
    pub no_denoise: bool,
    /// Blackman taper length as a fraction of the recording
    #[arg(long, value_name = "F")]
    pub taper_frac: Option<f64>,
    /// False-discovery rate of the wavelet threshold
    #[arg(long, value_name = "Q")]
    pub fdr_q: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    /// Raw recording CSV
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Conditioned recording CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cond: ConditioningFlags,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    /// Conditioned recording CSV
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Directory receiving `<subject>.csv`
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// R-peak annotations, one sample index per line, instead of detection
    #[arg(long, value_name = "FILE")]
    pub peaks: Option<PathBuf>,
    /// Subject id (default: the input file stem)
    #[arg(long, value_name = "ID")]
    pub subject: Option<String>,
}

#[derive(Debug, Args)]
pub struct SqiArgs {
    /// Directory of pulse files
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Directory receiving kept pulses and sqi.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Fraction of pulses kept per subject
    #[arg(long, value_name = "F")]
    pub keep: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScalogramArgs {
    /// Directory of kept pulse files
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Directory receiving `<subject>_<beat>.scgi` images
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Square image side
    #[arg(long, value_name = "N")]
    pub img_size: Option<usize>,
    /// Also write 8-bit PGM previews
    #[arg(long)]
    pub export_pgm: bool,
}

#[derive(Debug, Args, Default)]
pub struct ModelFlags {
    /// Training epochs
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long, value_name = "F")]
    pub learning_rate: Option<f64>,
    /// Mini-batch size
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Dropout after the first CNN dense layer
    #[arg(long, value_name = "F")]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Cohort manifest
    #[arg(long, value_name = "FILE")]
    pub cohort: PathBuf,
    /// vmax or valve
    #[arg(long)]
    pub task: String,
    /// Scalogram image directory (default: `images` next to the manifest)
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Checkpoint file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Cohort manifest
    #[arg(long, value_name = "FILE")]
    pub cohort: PathBuf,
    /// vmax or valve
    #[arg(long)]
    pub task: String,
    /// Scalogram image directory (default: `images` next to the manifest)
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Number of split iterations
    #[arg(long, value_name = "N")]
    pub iters: Option<usize>,
    /// Target fraction of pulses in the training set
    #[arg(long, value_name = "F")]
    pub train_frac: Option<f64>,
    /// Results directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Experiment results directory
    #[arg(long, value_name = "DIR")]
    pub results: PathBuf,
    /// Report directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Cohort directory holding manifest.csv
    #[arg(long, value_name = "DIR")]
    pub cohort: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub cond: ConditioningFlags,
    /// Fraction of pulses kept per subject
    #[arg(long, value_name = "F")]
    pub keep: Option<f64>,
    /// Square image side
    #[arg(long, value_name = "N")]
    pub img_size: Option<usize>,
    /// Also write 8-bit PGM previews
    #[arg(long)]
    pub export_pgm: bool,
    /// Number of split iterations
    #[arg(long, value_name = "N")]
    pub iters: Option<usize>,
    /// Target fraction of pulses in the training set
    #[arg(long, value_name = "F")]
    pub train_frac: Option<f64>,
    /// Comma-separated tasks
    #[arg(long, value_name = "LIST")]
    pub tasks: Option<String>,
    #[command(flatten)]
    pub model: ModelFlags,
}

fn put<T: ToString>(kv: &mut KvMap, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.insert(key, v.to_string());
    }
}

impl ConditioningFlags {
    fn apply(&self, kv: &mut KvMap) {
        if self.no_denoise {
            kv.insert("denoise", false);
        }
        put(kv, "taper_frac", &self.taper_frac);
        put(kv, "fdr_q", &self.fdr_q);
    }
}

impl ModelFlags {
    fn apply(&self, kv: &mut KvMap) {
        put(kv, "epochs", &self.epochs);
        put(kv, "learning_rate", &self.learning_rate);
        put(kv, "batch_size", &self.batch_size);
        put(kv, "dropout", &self.dropout);
    }
}

impl Cli {
    /// The flags given on the command line, as configuration keys.
    pub fn overrides(&self) -> KvMap {
        let mut kv = KvMap::default();
        put(&mut kv, "seed", &self.seed);
        put(&mut kv, "threads", &self.threads);
        match &self.command {
            Command::Synth(_) | Command::Gate(_) | Command::Report(_) => {}
            Command::Condition(a) => a.cond.apply(&mut kv),
            Command::Sqi(a) => put(&mut kv, "keep_fraction", &a.keep),
            Command::Scalogram(a) => {
                put(&mut kv, "img_size", &a.img_size);
                if a.export_pgm {
                    kv.insert("export_pgm", true);
                }
            }
            Command::Train(a) => a.model.apply(&mut kv),
            Command::Experiment(a) => {
                put(&mut kv, "iterations", &a.iters);
                put(&mut kv, "train_frac", &a.train_frac);
                a.model.apply(&mut kv);
            }
            Command::Pipeline(a) => {
                a.cond.apply(&mut kv);
                put(&mut kv, "keep_fraction", &a.keep);
                put(&mut kv, "img_size", &a.img_size);
                if a.export_pgm {
                    kv.insert("export_pgm", true);
                }
                put(&mut kv, "iterations", &a.iters);
                put(&mut kv, "train_frac", &a.train_frac);
                put(&mut kv, "tasks", &a.tasks);
                a.model.apply(&mut kv);
            }
        }
        kv
    }

    /// Config file values with the command-line flags on top.
    pub fn effective_config(&self) -> Result<PipelineConfig> {
        let mut kv = match &self.config {
            Some(p) => KvMap::load(p)?,
            None => KvMap::default(),
        };
        kv.extend(self.overrides());
        PipelineConfig::from_kv(&kv)
    }
}

fn default_images(manifest: &Path) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join("images")
}

fn task(name: &str) -> Result<Box<dyn Task>> {
    TaskRegistry::default().create(name)
}

/// Model settings for a cohort whose images are already on disk.
fn cohort_model(cfg: &PipelineConfig, task: &dyn Task, cohort: &ImageCohort) -> ModelConfig {
    ModelConfig {
        image_h: cohort.height,
        image_w: cohort.width,
        ..cfg.model_for(task)
    }
}

fn write_config(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_kv().to_text()).map_err(|e| Error::Io { path, source: e })
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.effective_config()?;
    match &cli.command {
        Command::Synth(a) => {
            let mut kv = match &a.spec {
                Some(p) => KvMap::load(p)?,
                None => KvMap::default(),
            };
            put(&mut kv, "seed", &cli.seed);
            let spec = SynthSpec::from_kv(&kv)?;
            let manifest = generate_cohort(&spec, &a.out)?;
            println!("wrote {} subjects to {}", spec.n_subjects, manifest.display());
        }
        Command::Condition(a) => {
            condition_file(&a.input, &a.out, &cfg.conditioning)?;
            println!("wrote {}", a.out.display());
        }
        Command::Gate(a) => {
            let id = match &a.subject {
                Some(s) => s.clone(),
                None => a
                    .input
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::Config(format!("cannot derive a subject id from {}", a.input.display())))?
                    .to_string(),
            };
            let (name, params) = match &a.peaks {
                Some(p) => ("annotations", DetectorParams { annotations: Some(p.clone()) }),
                None => (cfg.detector.as_str(), DetectorParams::default()),
            };
            let detector = DetectorRegistry::default().create(name, &params)?;
            let pulses = gate_file(&a.input, &a.out, &id, detector.as_ref())?;
            println!("wrote {} pulses for {id}", pulses.len());
        }
        Command::Sqi(a) => {
            let kept = sqi_dir(&a.input, &a.out, cfg.keep_fraction, cfg.threads)?;
            println!("kept {kept} pulses in {}", a.out.display());
        }
        Command::Scalogram(a) => {
            let n = scalogram_dir(&a.input, &a.out, cfg.morse, cfg.img_size, cfg.export_pgm, cfg.threads)?;
            println!("wrote {n} images to {}", a.out.display());
        }
        Command::Train(a) => {
            let task = task(&a.task)?;
            let images = a.images.clone().unwrap_or_else(|| default_images(&a.cohort));
            let cohort = ImageCohort::load(&a.cohort, images)?;
            let model = cohort_model(&cfg, task.as_ref(), &cohort);
            let ck = train_cohort(&cohort, task.as_ref(), &model)?;
            save_checkpoint(&ck, &a.out)?;
            println!("wrote {}", a.out.display());
        }
        Command::Experiment(a) => {
            let task = task(&a.task)?;
            let images = a.images.clone().unwrap_or_else(|| default_images(&a.cohort));
            let cohort = ImageCohort::load(&a.cohort, images)?;
            let model = cohort_model(&cfg, task.as_ref(), &cohort);
            let trials = run_experiment(
                &cohort,
                task.as_ref(),
                &model,
                cfg.iterations,
                cfg.train_frac,
                cfg.seed,
                cfg.threads,
                &a.out,
            )?;
            write_config(&cfg, &a.out)?;
            for row in &trials.summary {
                println!("{} mean={} sd={}", row.metric, fmt(row.mean), fmt(row.sd));
            }
        }
        Command::Report(a) => {
            for f in write_report(&a.results, &a.out)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Pipeline(a) => {
            let report = run_pipeline(&cfg, &a.cohort, &a.out)?;
            println!("report in {}", report.display());
        }
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

/// 0 on success, 1 for a computational failure, 2 for usage or I/O errors.
pub fn exit_code(r: &Result<()>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_usage() => ExitCode::from(2),
        Err(_) => ExitCode::from(1),
    }
}

pub fn main_with(cli: Cli) -> ExitCode {
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let r = run(&cli);
    if let Err(e) = &r {
        eprintln!("error: {e}");
    }
    exit_code(&r)
}
