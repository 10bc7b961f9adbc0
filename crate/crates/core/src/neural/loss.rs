//! Losses and the task strategies that pair a head with its loss.

use std::collections::BTreeMap;

use super::train::Target;
use super::HeadKind;
use crate::error::{Error, Result};
use crate::signal_model::{SubjectRecord, ValveClass};

/// Smallest admissible true velocity (m/s).
pub const MPE_MIN_TRUE: f64 = 0.1;
pub const CCE_CLIP: f64 = 1e-7;

/// Mean absolute percentage error, 100·|pred − true|/true averaged.
pub fn loss_mpe(pred: &[f64], truth: &[f64]) -> Result<f64> {
    Ok(mpe_with_grad(pred, truth)?.0)
}

/// MPE and its gradient with respect to `pred`; the gradient is 0 where
/// pred = true.
fn mpe_with_grad(pred: &[f64], truth: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::invalid("loss_mpe: length mismatch or empty batch"));
    }
    let guard = MPE_MIN_TRUE;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(truth) {
        if !(t >= guard) {
            return Err(Error::invalid(format!("loss_mpe: true value {t} below guard {guard}")));
        }
        loss += 100.0 * (p - t).abs() / t;
        let s = if p > t {
            1.0
        } else if p < t {
            -1.0
        } else {
            0.0
        };
        grad.push(100.0 * s / (t * n));
    }
    Ok((loss / n, grad))
}

/// Mean categorical cross-entropy on probabilities clipped to [1e-7, 1 − 1e-7].
pub fn loss_cce(probs: &[f64], labels: &[f64], n_classes: usize) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() || !probs.len().is_multiple_of(n_classes) {
        return Err(Error::invalid("loss_cce: shape mismatch"));
    }
    let batch = probs.len() / n_classes;
    let mut loss = 0.0;
    for b in 0..batch {
        let row = &labels[b * n_classes..(b + 1) * n_classes];
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != n_classes - 1 {
            return Err(Error::invalid(format!("loss_cce: row {b} is not one-hot")));
        }
        for (p, y) in probs[b * n_classes..(b + 1) * n_classes].iter().zip(row) {
            if *y == 1.0 {
                loss -= p.clamp(CCE_CLIP, 1.0 - CCE_CLIP).ln();
            }
        }
    }
    Ok(loss / batch as f64)
}

pub fn one_hot(class: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[class] = 1.0;
    v
}

/// A learning task: which head it needs, how subjects map to targets and
/// how the loss and its logit gradient are computed.
pub trait Task: Send + Sync {
    fn name(&self) -> &'static str;
    fn head(&self) -> HeadKind;
    fn target(&self, subject: &SubjectRecord) -> Target;
    /// Loss over a batch and the gradient [`FusionModel::backward`] expects:
    /// at the outputs for a regression head, at the logits for a softmax head.
    ///
    /// [`FusionModel::backward`]: super::FusionModel::backward
    fn loss_and_grad(&self, outputs: &[f64], targets: &[Target]) -> Result<(f64, Vec<f64>)>;
}

/// V_max regression under the MPE loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct Regression;

impl Task for Regression {
    fn name(&self) -> &'static str {
        "vmax"
    }

    fn head(&self) -> HeadKind {
        HeadKind::Regression
    }

    fn target(&self, subject: &SubjectRecord) -> Target {
        Target::Value(subject.vmax_ms)
    }

    fn loss_and_grad(&self, outputs: &[f64], targets: &[Target]) -> Result<(f64, Vec<f64>)> {
        let truth = targets
            .iter()
            .map(|t| match t {
                Target::Value(v) => Ok(*v),
                Target::Class(_) => Err(Error::invalid("regression task given a class label")),
            })
            .collect::<Result<Vec<f64>>>()?;
        mpe_with_grad(outputs, &truth)
    }
}

/// Four-way valve classification with softmax + cross-entropy.
#[derive(Debug, Clone, Copy, Default)]
pub struct Classification;

impl Task for Classification {
    fn name(&self) -> &'static str {
        "valve"
    }

    fn head(&self) -> HeadKind {
        HeadKind::Classification
    }

    fn target(&self, subject: &SubjectRecord) -> Target {
        Target::Class(subject.valve_class.index())
    }

    /// Uses the closed form (p − y)/batch at the logits.
    fn loss_and_grad(&self, outputs: &[f64], targets: &[Target]) -> Result<(f64, Vec<f64>)> {
        let n = ValveClass::COUNT;
        let mut labels = Vec::with_capacity(targets.len() * n);
        for t in targets {
            match t {
                Target::Class(c) if *c < n => labels.extend(one_hot(*c, n)),
                _ => return Err(Error::invalid("classification task needs class labels 0..4")),
            }
        }
        let loss = loss_cce(outputs, &labels, n)?;
        let batch = targets.len() as f64;
        let grad = outputs.iter().zip(&labels).map(|(p, y)| (p - y) / batch).collect();
        Ok((loss, grad))
    }
}

type TaskFactory = fn() -> Box<dyn Task>;

/// Tasks by CLI name.
pub struct TaskRegistry {
    factories: BTreeMap<&'static str, TaskFactory>,
}

impl TaskRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: TaskFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn Task>> {
        self.factories
            .get(name)
            .map(|f| f())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "task",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}

impl Default for TaskRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("vmax", || Box::new(Regression));
        r.register("valve", || Box::new(Classification));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mpe_examples() {
        assert_eq!(loss_mpe(&[1.3, 2.0], &[1.3, 2.0]).unwrap(), 0.0);
        assert!((loss_mpe(&[1.1], &[1.0]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(loss_mpe(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 50.0);
        assert!(loss_mpe(&[1.0], &[0.05]).is_err());
    }

    #[test]
    fn cce_examples() {
        let l = loss_cce(&[1.0, 0.0, 0.0, 0.0], &one_hot(0, 4), 4).unwrap();
        assert!(l.abs() < 1.1e-7);
        let l = loss_cce(&[0.25; 4], &one_hot(2, 4), 4).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        let l = loss_cce(&[0.5, 0.5, 0.0, 0.0], &one_hot(0, 4), 4).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!(loss_cce(&[0.25; 4], &[1.0, 1.0, 0.0, 0.0], 4).is_err());
        assert!(loss_cce(&[0.25; 4], &[0.5, 0.5, 0.0, 0.0], 4).is_err());
    }

    #[test]
    fn registry() {
        let r = TaskRegistry::default();
        assert_eq!(r.names(), vec!["valve", "vmax"]);
        assert_eq!(r.create("vmax").unwrap().head(), HeadKind::Regression);
        assert!(matches!(r.create("hr"), Err(Error::UnknownStrategy { .. })));
    }
}
