//! Datasets, input normalization, the Adam optimizer and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::Task;
use super::model::{FusionModel, Mode};
use super::{ModelConfig, DEMO_FEATURES};
use crate::error::{Error, Result};
use crate::signal_model::Demographics;
use crate::synth::splitmix64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// V_max in m/s.
    Value(f64),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub subject_id: String,
    pub beat_index: usize,
    /// Row-major H × W scalogram image.
    pub image: Vec<f64>,
    pub demographics: Demographics,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, samples: Vec<Sample>) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.image.len() != height * width) {
            return Err(Error::invalid(format!(
                "sample {}/{} has {} pixels, expected {}x{}",
                s.subject_id,
                s.beat_index,
                s.image.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Applied test values are clamped to this range.
pub const DEMO_GUARD: (f64, f64) = (-0.5, 1.5);

/// Min-max scaling of weight, height and age fitted on training subjects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemographicNormalizer {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

fn continuous(d: &Demographics) -> [f64; 3] {
    [d.weight_kg, d.height_cm, d.age_years]
}

impl DemographicNormalizer {
    pub fn fit<'a>(demos: impl IntoIterator<Item = &'a Demographics>) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for d in demos {
            for (k, v) in continuous(d).into_iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Self { min, max }
    }

    /// `[weight, height, age, sex]`; a constant training feature maps to 0.
    pub fn apply(&self, d: &Demographics) -> [f64; DEMO_FEATURES] {
        let mut out = [0.0; DEMO_FEATURES];
        for (k, v) in continuous(d).into_iter().enumerate() {
            let range = self.max[k] - self.min[k];
            out[k] = if range > 0.0 {
                ((v - self.min[k]) / range).clamp(DEMO_GUARD.0, DEMO_GUARD.1)
            } else {
                0.0
            };
        }
        out[3] = d.sex.code();
        out
    }
}

/// First/second-moment gradient descent with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Splits `n` items into ⌈n / batch_size⌉ batches whose sizes differ by at
/// most one, so no batch is left with a single sample for batchnorm.
pub fn batch_plan(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let k = n.div_ceil(batch_size.max(1));
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean train-mode loss over the epoch's batches, weighted by size.
    pub train_loss: f64,
    /// Eval-mode loss on the validation set (NaN when it is empty).
    pub valid_loss: f64,
}

pub type History = Vec<EpochRecord>;

/// Model plus the input transforms fitted on its training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub normalizer: DemographicNormalizer,
    /// Images are multiplied by this before entering the network.
    pub pixel_scale: f64,
}

impl Prepared {
    pub fn fit(data: &Dataset) -> Self {
        let max = data
            .samples
            .iter()
            .flat_map(|s| s.image.iter().copied())
            .fold(0.0, f64::max);
        Self {
            normalizer: DemographicNormalizer::fit(data.samples.iter().map(|s| &s.demographics)),
            pixel_scale: if max > 0.0 { 1.0 / max } else { 1.0 },
        }
    }

    fn inputs(&self, data: &Dataset, idx: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<Target>) {
        let hw = data.height * data.width;
        let mut images = Vec::with_capacity(idx.len() * hw);
        let mut demos = Vec::with_capacity(idx.len() * DEMO_FEATURES);
        let mut targets = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = &data.samples[i];
            images.extend(s.image.iter().map(|v| v * self.pixel_scale));
            demos.extend(self.normalizer.apply(&s.demographics));
            targets.push(s.target);
        }
        (images, demos, targets)
    }
}

const EVAL_CHUNK: usize = 64;

/// Head outputs (m/s for regression, class probabilities otherwise) for
/// every sample, in order, computed in eval mode.
pub fn predict(model: &FusionModel, prep: &Prepared, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let nout = model.config.head.n_outputs();
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (images, demos, _) = prep.inputs(data, chunk);
        let c = model.forward(&images, &demos, Mode::Eval)?;
        out.extend(c.outputs.chunks(nout).map(<[f64]>::to_vec));
    }
    Ok(out)
}

fn eval_loss(model: &FusionModel, prep: &Prepared, task: &dyn Task, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (images, demos, targets) = prep.inputs(data, chunk);
        let c = model.forward(&images, &demos, Mode::Eval)?;
        total += task.loss_and_grad(&c.outputs, &targets)?.0 * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

fn check_shapes(config: &ModelConfig, task: &dyn Task, data: &Dataset) -> Result<()> {
    if data.height != config.image_h || data.width != config.image_w {
        return Err(Error::invalid(format!(
            "dataset images are {}x{}, model expects {}x{}",
            data.height, data.width, config.image_h, config.image_w
        )));
    }
    if task.head() != config.head {
        return Err(Error::Config(format!(
            "task {} needs a {} head, config has {}",
            task.name(),
            task.head().name(),
            config.head.name()
        )));
    }
    Ok(())
}

/// Trains for exactly `config.epochs` epochs. The shuffle order and every
/// dropout mask derive from `config.seed`.
pub fn train(
    config: &ModelConfig,
    task: &dyn Task,
    train_set: &Dataset,
    valid_set: &Dataset,
) -> Result<(FusionModel, Prepared, History)> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    check_shapes(config, task, train_set)?;
    if !valid_set.is_empty() {
        check_shapes(config, task, valid_set)?;
    }
    let prep = Prepared::fit(train_set);
    let mut model = FusionModel::new(config.clone())?;
    if let Some(scale) = regression_scale(train_set) {
        model.output_scale = scale;
        // start every prediction at the mean target so no sample begins in a
        // region where all head inputs are zero
        let b = model.layout.head.b;
        model.params[b] = 1.0;
    }
    let mut adam = Adam::new(model.n_params(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x5348_5546));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let plan = batch_plan(train_set.len(), config.batch_size);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.lr_decay_epochs > 0 && epoch > 0 && epoch % config.lr_decay_epochs == 0 {
            adam.lr *= config.lr_decay_factor;
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, range) in plan.iter().enumerate() {
            let idx = &order[range.clone()];
            let (images, demos, targets) = prep.inputs(train_set, idx);
            let dropout_seed = splitmix64(config.seed ^ splitmix64(((epoch as u64) << 20) | bi as u64));
            let cache = model
                .forward(&images, &demos, Mode::Train { dropout_seed })
                .map_err(|e| divergence(e, epoch))?;
            let (loss, g) = task.loss_and_grad(&cache.outputs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let grad = model.backward(&cache, &g).map_err(|e| divergence(e, epoch))?;
            adam.step(&mut model.params, &grad);
            model.update_running_stats(&cache);
            total += loss * idx.len() as f64;
        }
        if model.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        let valid_loss = eval_loss(&model, &prep, task, valid_set).map_err(|e| divergence(e, epoch))?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            valid_loss,
        });
    }
    Ok((model, prep, history))
}

fn divergence(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Divergence { epoch },
        other => other,
    }
}

/// Mean training target, used as the regression output scale.
fn regression_scale(data: &Dataset) -> Option<f64> {
    let values: Vec<f64> = data
        .samples
        .iter()
        .filter_map(|s| match s.target {
            Target::Value(v) => Some(v),
            Target::Class(_) => None,
        })
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Eval-mode loss of a trained model on `data`.
pub fn evaluate(model: &FusionModel, prep: &Prepared, task: &dyn Task, data: &Dataset) -> Result<f64> {
    eval_loss(model, prep, task, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::Sex;

    #[test]
    fn batches_are_balanced() {
        let sizes: Vec<usize> = batch_plan(65, 32).iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![22, 22, 21]);
        assert_eq!(batch_plan(16, 32), vec![0..16]);
        assert!(batch_plan(0, 32).is_empty());
    }

    #[test]
    fn normalizer_range_and_guard() {
        let d = |w: f64, sex| Demographics {
            weight_kg: w,
            height_cm: 170.0,
            age_years: 40.0,
            sex,
        };
        let train = [d(50.0, Sex::Male), d(100.0, Sex::Female)];
        let n = DemographicNormalizer::fit(&train);
        assert_eq!(n.apply(&train[0]), [0.0, 0.0, 0.0, 0.0]);
        assert_eq!(n.apply(&train[1]), [1.0, 0.0, 0.0, 1.0]);
        assert_eq!(n.apply(&d(500.0, Sex::Male))[0], 1.5);
        assert_eq!(n.apply(&d(0.0, Sex::Male))[0], -0.5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0];
        let mut a = Adam::new(2, 0.01);
        a.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-9 && (p[1] + 1.99).abs() < 1e-9);
        let mut z = Adam::new(2, 0.0);
        let before = p.clone();
        z.step(&mut p, &[1.0, 1.0]);
        assert_eq!(p, before);
    }
}
