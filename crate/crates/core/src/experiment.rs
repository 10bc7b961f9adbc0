//! Leave-subject-out cross-validation: subject-level splits, one training
//! run per iteration, per-pulse predictions and per-subject aggregation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::neural::{
    predict, save_checkpoint, train, Checkpoint, Dataset, EpochRecord, FusionModel, ModelConfig, Prepared, Sample,
    Target, Task,
};
use crate::scalogram::ScalogramEngine;
use crate::signal_model::{
    image_file_name, load_manifest, load_scalogram_image, save_scalogram_image, Cohort, ScalogramImage,
    SubjectRecord, ValveClass,
};
use crate::stats;
use crate::synth::splitmix64;

pub const DEFAULT_ITERATIONS: usize = 10;
pub const DEFAULT_TRAIN_FRAC: f64 = 0.8;
pub const IMAGE_EXT: &str = "scgi";

/// A subject with its scalogram images. `record.pulses` may be empty once
/// the images exist.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSubject {
    pub record: SubjectRecord,
    pub images: Vec<ScalogramImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageCohort {
    pub height: usize,
    pub width: usize,
    subjects: Vec<ImageSubject>,
}

impl ImageCohort {
    pub fn new(subjects: Vec<ImageSubject>) -> Result<Self> {
        let first = subjects
            .iter()
            .flat_map(|s| s.images.first())
            .next()
            .ok_or(Error::Empty("image cohort"))?;
        let (height, width) = (first.height, first.width);
        let mut seen = HashSet::new();
        for s in &subjects {
            let id = &s.record.subject_id;
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate subject id {id}")));
            }
            if s.images.is_empty() {
                return Err(Error::invalid(format!("subject {id} has no images")));
            }
            if !(s.record.vmax_ms > 0.0) {
                return Err(Error::invalid(format!("subject {id}: vmax must be positive")));
            }
            if let Some(img) = s.images.iter().find(|i| i.height != height || i.width != width) {
                return Err(Error::invalid(format!(
                    "subject {id}: image {}x{} differs from {height}x{width}",
                    img.height, img.width
                )));
            }
        }
        Ok(Self {
            height,
            width,
            subjects,
        })
    }

    /// Images of every pulse of every subject.
    pub fn build(cohort: &Cohort, engine: &mut ScalogramEngine) -> Result<Self> {
        let mut subjects = Vec::with_capacity(cohort.len());
        for s in cohort.subjects() {
            let images = s.pulses.iter().map(|p| engine.image(p)).collect::<Result<Vec<_>>>()?;
            let record = SubjectRecord {
                pulses: Vec::new(),
                ..s.clone()
            };
            subjects.push(ImageSubject { record, images });
        }
        Self::new(subjects)
    }

    /// Reads the manifest and every `<subject>_<beat>.scgi` file in `images_dir`.
    pub fn load(manifest: impl AsRef<Path>, images_dir: impl AsRef<Path>) -> Result<Self> {
        let dir = images_dir.as_ref();
        let entries = load_manifest(manifest)?;
        let mut by_subject: HashMap<String, Vec<PathBuf>> = HashMap::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(IMAGE_EXT) {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if let Some((id, _)) = stem.rsplit_once('_') {
                by_subject.entry(id.to_string()).or_default().push(path);
            }
        }
        let mut subjects = Vec::with_capacity(entries.len());
        for e in entries {
            let paths = by_subject.remove(&e.subject_id).unwrap_or_default();
            let mut images = paths.iter().map(load_scalogram_image).collect::<Result<Vec<_>>>()?;
            images.sort_by_key(|i| i.beat_index);
            subjects.push(ImageSubject {
                record: SubjectRecord {
                    subject_id: e.subject_id,
                    demographics: e.demographics,
                    valve_class: e.valve_class,
                    vmax_ms: e.vmax_ms,
                    pulses: Vec::new(),
                },
                images,
            });
        }
        Self::new(subjects)
    }

    pub fn save_images(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for s in &self.subjects {
            for img in &s.images {
                save_scalogram_image(img, dir.join(image_file_name(&s.record.subject_id, img.beat_index)))?;
            }
        }
        Ok(())
    }

    pub fn subjects(&self) -> &[ImageSubject] {
        &self.subjects
    }

    pub fn subject(&self, id: &str) -> Option<&ImageSubject> {
        self.subjects.iter().find(|s| s.record.subject_id == id)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_pulses(&self) -> usize {
        self.subjects.iter().map(|s| s.images.len()).sum()
    }

    pub fn pulse_counts(&self) -> Vec<(String, usize)> {
        self.subjects
            .iter()
            .map(|s| (s.record.subject_id.clone(), s.images.len()))
            .collect()
    }

    /// Samples of the named subjects, in the given order.
    pub fn dataset(&self, ids: &[String], task: &dyn Task) -> Result<Dataset> {
        let mut samples = Vec::new();
        for id in ids {
            let s = self
                .subject(id)
                .ok_or_else(|| Error::invalid(format!("unknown subject {id}")))?;
            let target = task.target(&s.record);
            samples.extend(s.images.iter().map(|img| Sample {
                subject_id: id.clone(),
                beat_index: img.beat_index,
                image: img.pixels.clone(),
                demographics: s.record.demographics.clone(),
                target,
            }));
        }
        Dataset::new(self.height, self.width, samples)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub iteration: usize,
    pub train_subject_ids: Vec<String>,
    pub test_subject_ids: Vec<String>,
    /// Drives the subject shuffle and the training run of this iteration.
    pub seed: u64,
}

impl SplitPlan {
    /// Checks exclusivity and coverage against the full subject list.
    pub fn validate(&self, all: &[String]) -> Result<()> {
        if self.train_subject_ids.is_empty() || self.test_subject_ids.is_empty() {
            return Err(Error::invalid(format!("split {}: empty train or test set", self.iteration)));
        }
        let train: HashSet<&String> = self.train_subject_ids.iter().collect();
        let test: HashSet<&String> = self.test_subject_ids.iter().collect();
        if let Some(id) = train.intersection(&test).next() {
            return Err(Error::invalid(format!("split {}: {id} in both sets", self.iteration)));
        }
        let covered = train.len() + test.len();
        if covered != self.train_subject_ids.len() + self.test_subject_ids.len()
            || covered != all.len()
            || all.iter().any(|id| !train.contains(id) && !test.contains(id))
        {
            return Err(Error::invalid(format!(
                "split {}: sets do not partition the cohort",
                self.iteration
            )));
        }
        Ok(())
    }
}

pub fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    splitmix64(seed ^ splitmix64(0x5350_4c49_5400_0000 | iteration as u64))
}

/// One plan per iteration: subjects in a seeded random order are packed
/// into training while that moves the training pulse count closer to
/// `train_frac` of the total; the rest form the test set.
pub fn make_splits(
    pulse_counts: &[(String, usize)],
    n_iter: usize,
    train_frac: f64,
    seed: u64,
) -> Result<Vec<SplitPlan>> {
    if pulse_counts.len() < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 subjects"));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train_frac {train_frac} must lie in (0, 1)")));
    }
    let ids: Vec<String> = pulse_counts.iter().map(|(id, _)| id.clone()).collect();
    let total: usize = pulse_counts.iter().map(|(_, n)| n).sum();
    let target = train_frac * total as f64;
    (0..n_iter)
        .map(|iteration| {
            let seed = iteration_seed(seed, iteration);
            let mut order: Vec<usize> = (0..pulse_counts.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut in_train = vec![false; order.len()];
            let mut count = 0usize;
            for &i in &order {
                let n = pulse_counts[i].1;
                if ((count + n) as f64 - target).abs() < (count as f64 - target).abs() {
                    in_train[i] = true;
                    count += n;
                }
            }
            if in_train.iter().all(|&t| t) {
                in_train[*order.last().expect("at least 2 subjects")] = false;
            }
            if !in_train.iter().any(|&t| t) {
                in_train[order[0]] = true;
            }
            let pick = |want: bool| {
                order
                    .iter()
                    .filter(|&&i| in_train[i] == want)
                    .map(|&i| ids[i].clone())
                    .collect::<Vec<_>>()
            };
            let plan = SplitPlan {
                iteration,
                train_subject_ids: pick(true),
                test_subject_ids: pick(false),
                seed,
            };
            plan.validate(&ids)?;
            Ok(plan)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulsePrediction {
    pub subject_id: String,
    pub beat_index: usize,
    pub truth: Target,
    /// V_max in m/s for regression, class probabilities otherwise.
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub truth: Target,
    pub n_pulses: usize,
    /// Mean per-pulse output.
    pub mean_output: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct IterationResult {
    pub plan: SplitPlan,
    pub predictions: Vec<PulsePrediction>,
    pub subjects: Vec<SubjectPrediction>,
    pub history: Vec<EpochRecord>,
    pub model: FusionModel,
    pub prepared: Prepared,
}

/// Trains on the plan's training subjects and predicts every test pulse.
/// The test set doubles as the per-epoch monitoring set.
pub fn run_iteration(
    plan: &SplitPlan,
    config: &ModelConfig,
    task: &dyn Task,
    cohort: &ImageCohort,
) -> Result<IterationResult> {
    if plan.test_subject_ids.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let train_set = cohort.dataset(&plan.train_subject_ids, task)?;
    let test_set = cohort.dataset(&plan.test_subject_ids, task)?;
    let config = ModelConfig {
        seed: plan.seed,
        ..config.clone()
    };
    let (model, prepared, history) = train(&config, task, &train_set, &test_set)?;
    let outputs = predict(&model, &prepared, &test_set)?;
    let predictions: Vec<PulsePrediction> = test_set
        .samples
        .iter()
        .zip(outputs)
        .map(|(s, output)| PulsePrediction {
            subject_id: s.subject_id.clone(),
            beat_index: s.beat_index,
            truth: s.target,
            output,
        })
        .collect();
    let subjects = aggregate(&predictions, &plan.test_subject_ids);
    Ok(IterationResult {
        plan: plan.clone(),
        predictions,
        subjects,
        history,
        model,
        prepared,
    })
}

/// Per-subject arithmetic mean of the per-pulse outputs.
pub fn aggregate(predictions: &[PulsePrediction], ids: &[String]) -> Vec<SubjectPrediction> {
    ids.iter()
        .filter_map(|id| {
            let mine: Vec<&PulsePrediction> = predictions.iter().filter(|p| &p.subject_id == id).collect();
            let first = mine.first()?;
            let mut mean = vec![0.0; first.output.len()];
            for p in &mine {
                for (m, v) in mean.iter_mut().zip(&p.output) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= mine.len() as f64);
            Some(SubjectPrediction {
                subject_id: id.clone(),
                truth: first.truth,
                n_pulses: mine.len(),
                mean_output: mean,
            })
        })
        .collect()
}

/// Named metric values; `None` marks an undefined value.
pub type Metrics = Vec<(String, Option<f64>)>;

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn value(t: &Target) -> f64 {
    match t {
        Target::Value(v) => *v,
        Target::Class(c) => *c as f64,
    }
}

fn class(t: &Target) -> usize {
    match t {
        Target::Class(c) => *c,
        Target::Value(_) => usize::MAX,
    }
}

/// Agreement metrics between per-subject truth and mean prediction, plus
/// per-pulse errors.
pub fn regression_metrics(pulses: &[PulsePrediction], subjects: &[SubjectPrediction]) -> Metrics {
    let truth: Vec<f64> = subjects.iter().map(|s| value(&s.truth)).collect();
    let pred: Vec<f64> = subjects.iter().map(|s| s.mean_output[0]).collect();
    let fit = stats::fit_linear(&truth, &pred).ok();
    let ba = stats::bland_altman(&pred, &truth).ok();
    let sq = |a: &[f64], b: &[f64]| {
        (!a.is_empty()).then(|| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
    };
    let pt: Vec<f64> = pulses.iter().map(|p| value(&p.truth)).collect();
    let pp: Vec<f64> = pulses.iter().map(|p| p.output[0]).collect();
    let pulse_mse = sq(&pp, &pt);
    let subject_mse = sq(&pred, &truth);
    let pulse_mpe = crate::neural::loss_mpe(&pp, &pt).ok();
    vec![
        ("pearson_r".into(), stats::pearson(&truth, &pred).ok()),
        ("slope_origin".into(), stats::fit_through_origin(&truth, &pred).ok()),
        ("fit_slope".into(), fit.map(|f| f.0)),
        ("fit_intercept".into(), fit.map(|f| f.1)),
        ("ba_bias".into(), ba.map(|b| b.bias)),
        ("ba_sd".into(), ba.map(|b| b.sd)),
        ("ba_loa".into(), ba.map(|b| b.loa)),
        ("ba_p".into(), ba.map(|b| b.p_value)),
        ("subject_mse".into(), subject_mse),
        ("subject_rmse".into(), subject_mse.map(f64::sqrt)),
        ("pulse_mse".into(), pulse_mse),
        ("pulse_rmse".into(), pulse_mse.map(f64::sqrt)),
        ("pulse_mpe".into(), pulse_mpe),
    ]
}

/// Per-pulse one-vs-rest AUCs, macro AUC over the classes present,
/// accuracy, and per-class precision / recall from the arg-max class.
pub fn classification_metrics(pulses: &[PulsePrediction]) -> Metrics {
    let n = ValveClass::COUNT;
    let truth: Vec<usize> = pulses.iter().map(|p| class(&p.truth)).collect();
    let pred: Vec<usize> = pulses.iter().map(|p| argmax(&p.output)).collect();
    let mut out = Metrics::new();
    let mut aucs = Vec::new();
    for c in ValveClass::ALL {
        let k = c.index();
        let scores: Vec<f64> = pulses.iter().map(|p| p.output[k]).collect();
        let labels: Vec<bool> = truth.iter().map(|&t| t == k).collect();
        let auc = stats::roc_auc(&scores, &labels).ok().map(|r| r.auc);
        aucs.extend(auc);
        out.push((format!("auc_{}", c.name()), auc));
    }
    out.push((
        "auc_macro".into(),
        (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
    ));
    let cm = stats::confusion(&pred, &truth, n).ok();
    out.push((
        "accuracy".into(),
        cm.as_ref()
            .filter(|m| m.total() > 0)
            .map(|m| (0..n).map(|c| m.matrix[c][c]).sum::<usize>() as f64 / m.total() as f64),
    ));
    for c in ValveClass::ALL {
        let k = c.index();
        out.push((format!("precision_{}", c.name()), cm.as_ref().and_then(|m| m.precision[k])));
        out.push((format!("recall_{}", c.name()), cm.as_ref().and_then(|m| m.recall[k])));
    }
    out
}

pub fn iteration_metrics(task: &dyn Task, r: &IterationResult) -> Metrics {
    match task.head() {
        crate::neural::HeadKind::Regression => regression_metrics(&r.predictions, &r.subjects),
        crate::neural::HeadKind::Classification => classification_metrics(&r.predictions),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    /// Mean and sample SD over the iterations where the metric is defined;
    /// SD is 0 for a single defined value.
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

pub fn summarize(per_iteration: &[Metrics]) -> Vec<SummaryRow> {
    let mut names: Vec<String> = Vec::new();
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in per_iteration {
        for (name, v) in m {
            if !names.contains(name) {
                names.push(name.clone());
            }
            let e = values.entry(name.clone()).or_default();
            e.extend(v.filter(|x| x.is_finite()));
        }
    }
    names
        .into_iter()
        .map(|metric| {
            let v = &values[&metric];
            let (mean, sd) = stats::mean_sd(v);
            SummaryRow {
                n: v.len(),
                mean: (!v.is_empty()).then_some(mean),
                sd: (!v.is_empty()).then_some(sd),
                metric,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Trials {
    pub task: String,
    pub iterations: Vec<IterationResult>,
    pub metrics: Vec<Metrics>,
    pub summary: Vec<SummaryRow>,
    /// Metrics over the held-out predictions of all iterations together.
    pub pooled: Metrics,
}

/// Runs every plan, up to `threads` at a time; results keep plan order.
pub fn run_trials(
    plans: &[SplitPlan],
    config: &ModelConfig,
    task: &dyn Task,
    cohort: &ImageCohort,
    threads: usize,
) -> Result<Trials> {
    if plans.is_empty() {
        return Err(Error::Empty("split plans"));
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<IterationResult>>>> = Mutex::new((0..plans.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, plans.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(plan) = plans.get(i) else { break };
                log::info!("{} iteration {} started", task.name(), plan.iteration);
                let r = run_iteration(plan, config, task, cohort);
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    let iterations = slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every plan ran"))
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<Metrics> = iterations.iter().map(|r| iteration_metrics(task, r)).collect();
    let summary = summarize(&metrics);
    let all_pulses: Vec<PulsePrediction> = iterations.iter().flat_map(|r| r.predictions.clone()).collect();
    let all_subjects: Vec<SubjectPrediction> = iterations.iter().flat_map(|r| r.subjects.clone()).collect();
    let pooled = match task.head() {
        crate::neural::HeadKind::Regression => regression_metrics(&all_pulses, &all_subjects),
        crate::neural::HeadKind::Classification => classification_metrics(&all_pulses),
    };
    Ok(Trials {
        task: task.name().to_string(),
        iterations,
        metrics,
        summary,
        pooled,
    })
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_target(t: &Target) -> String {
    match t {
        Target::Value(v) => v.to_string(),
        Target::Class(c) => c.to_string(),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const TASK_FILE: &str = "task.txt";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const POOLED_FILE: &str = "pooled.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SPLITS_FILE: &str = "splits.csv";

pub fn predictions_file(iteration: usize) -> String {
    format!("predictions_iter{iteration}.csv")
}

pub fn subjects_file(iteration: usize) -> String {
    format!("subjects_iter{iteration}.csv")
}

pub fn history_file(iteration: usize) -> String {
    format!("history_iter{iteration}.csv")
}

pub fn model_file(iteration: usize) -> String {
    format!("model_iter{iteration}.scgm")
}

fn output_header(n: usize) -> String {
    if n == 1 {
        "pred".into()
    } else {
        (0..n).map(|k| format!("p{k}")).collect::<Vec<_>>().join(",")
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn metrics_csv(rows: &Metrics) -> String {
    let mut s = String::from("metric,value\n");
    for (name, v) in rows {
        let _ = writeln!(s, "{name},{}", fmt_opt(*v));
    }
    s
}

/// Writes every per-iteration artifact plus the summary tables into `dir`.
pub fn write_trials(trials: &Trials, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut kv = KvMap::default();
    kv.insert("task", &trials.task);
    kv.insert("iterations", trials.iterations.len());
    write(&dir.join(TASK_FILE), &kv.to_text())?;

    let mut splits = String::from("iteration,seed,subject_id,set\n");
    let mut long = String::from("iteration,metric,value\n");
    for (r, m) in trials.iterations.iter().zip(&trials.metrics) {
        let k = r.plan.iteration;
        for (set, ids) in [("train", &r.plan.train_subject_ids), ("test", &r.plan.test_subject_ids)] {
            for id in ids {
                let _ = writeln!(splits, "{k},{},{id},{set}", r.plan.seed);
            }
        }
        for (name, v) in m {
            let _ = writeln!(long, "{k},{name},{}", fmt_opt(*v));
        }
        let nout = r.predictions.first().map_or(1, |p| p.output.len());
        let mut preds = format!("subject_id,beat_index,truth,{}\n", output_header(nout));
        for p in &r.predictions {
            let _ = writeln!(preds, "{},{},{},{}", p.subject_id, p.beat_index, fmt_target(&p.truth), join(&p.output));
        }
        write(&dir.join(predictions_file(k)), &preds)?;
        let mut subj = format!("subject_id,truth,n_pulses,{}\n", output_header(nout));
        for s in &r.subjects {
            let _ = writeln!(subj, "{},{},{},{}", s.subject_id, fmt_target(&s.truth), s.n_pulses, join(&s.mean_output));
        }
        write(&dir.join(subjects_file(k)), &subj)?;
        let mut hist = String::from("epoch,train_loss,valid_loss\n");
        for e in &r.history {
            let _ = writeln!(hist, "{},{},{}", e.epoch, e.train_loss, e.valid_loss);
        }
        write(&dir.join(history_file(k)), &hist)?;
        let ck = Checkpoint {
            task: trials.task.clone(),
            model: r.model.clone(),
            prepared: r.prepared.clone(),
        };
        save_checkpoint(&ck, dir.join(model_file(k)))?;
    }
    write(&dir.join(SPLITS_FILE), &splits)?;
    write(&dir.join(METRICS_FILE), &long)?;

    let mut summary = String::from("metric,mean,sd,n\n");
    for row in &trials.summary {
        let _ = writeln!(summary, "{},{},{},{}", row.metric, fmt_opt(row.mean), fmt_opt(row.sd), row.n);
    }
    write(&dir.join(SUMMARY_FILE), &summary)?;
    write(&dir.join(POOLED_FILE), &metrics_csv(&trials.pooled))
}
