//! Shared oracles for the integration tests.
#![allow(dead_code)]

use scgflow::neural::{FusionModel, Mode, Target, Task};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub checked: usize,
    /// Parameters whose ±h probes change a ReLU state or pooling choice.
    pub kinks: usize,
    /// Parameters above 1e-4, with their relative error.
    pub over: Vec<(usize, f64)>,
}

/// Central finite differences for every trainable parameter, compared with
/// backprop. The relative error denominator is floored at the
/// finite-difference resolution, 1e-5·max(1, |loss|).
pub fn gradient_check(
    model: &mut FusionModel,
    images: &[f64],
    demos: &[f64],
    task: &dyn Task,
    targets: &[Target],
) -> GradCheck {
    let mode = Mode::Train { dropout_seed: 7 };
    let cache = model.forward(images, demos, mode).unwrap();
    let pattern = cache.activation_pattern();
    let (loss0, g) = task.loss_and_grad(&cache.outputs, targets).unwrap();
    let grad = model.backward(&cache, &g).unwrap();
    let floor = 1e-5 * loss0.abs().max(1.0);
    let probe = |m: &FusionModel| {
        let c = m.forward(images, demos, mode).unwrap();
        (task.loss_and_grad(&c.outputs, targets).unwrap().0, c.activation_pattern())
    };
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst_param: 0,
        checked: 0,
        kinks: 0,
        over: Vec::new(),
    };
    for i in 0..model.n_params() {
        let orig = model.params[i];
        model.params[i] = orig + FD_STEP;
        let (up, pu) = probe(model);
        model.params[i] = orig - FD_STEP;
        let (down, pd) = probe(model);
        model.params[i] = orig;
        if pu != pattern || pd != pattern {
            out.kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let e = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(floor);
        out.checked += 1;
        if e > 1e-4 {
            out.over.push((i, e));
        }
        if e > out.max_rel_err {
            out.max_rel_err = e;
            out.worst_param = i;
        }
    }
    out
}

/// Relative error of the central difference with step `h` for one parameter.
pub fn fd_rel_err(
    model: &mut FusionModel,
    images: &[f64],
    demos: &[f64],
    task: &dyn Task,
    targets: &[Target],
    param: usize,
    h: f64,
) -> f64 {
    let mode = Mode::Train { dropout_seed: 7 };
    let loss = |m: &FusionModel| {
        let c = m.forward(images, demos, mode).unwrap();
        task.loss_and_grad(&c.outputs, targets).unwrap().0
    };
    let cache = model.forward(images, demos, mode).unwrap();
    let (l0, g) = task.loss_and_grad(&cache.outputs, targets).unwrap();
    let a = model.backward(&cache, &g).unwrap()[param];
    let orig = model.params[param];
    model.params[param] = orig + h;
    let up = loss(model);
    model.params[param] = orig - h;
    let down = loss(model);
    model.params[param] = orig;
    let n = (up - down) / (2.0 * h);
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5 * l0.abs().max(1.0))
}

/// Synthetic subjects run through conditioning, gating and quality
/// selection, with their first `per_subject` kept pulses imaged at `size`.
pub fn synthetic_images(spec: &scgflow::synth::SynthSpec, per_subject: usize, size: usize) -> scgflow::experiment::ImageCohort {
    use scgflow::conditioning::{condition_recording, ConditioningConfig};
    use scgflow::gating::{extract_pulses, DetectorParams, DetectorRegistry};
    use scgflow::quality::score_and_select;
    use scgflow::scalogram::{MorseParams, ScalogramEngine};
    use scgflow::signal_model::{Cohort, SubjectRecord};

    let detector = DetectorRegistry::default()
        .create("pan-tompkins", &DetectorParams::default())
        .unwrap();
    let mut records = Vec::new();
    for s in scgflow::synth::generate(spec).unwrap() {
        let cond = condition_recording(&s.recording, &ConditioningConfig::default()).unwrap();
        let peaks = detector.detect(&cond.ecg, cond.sample_rate_hz).unwrap();
        let pulses = extract_pulses(&cond, &peaks, &s.entry.subject_id).unwrap();
        let (mut kept, _) = score_and_select(pulses, 0.95).unwrap();
        kept.truncate(per_subject);
        records.push(SubjectRecord {
            subject_id: s.entry.subject_id.clone(),
            demographics: s.entry.demographics.clone(),
            valve_class: s.entry.valve_class,
            vmax_ms: s.entry.vmax_ms,
            pulses: kept,
        });
    }
    let cohort = Cohort::new(records).unwrap();
    scgflow::experiment::ImageCohort::build(&cohort, &mut ScalogramEngine::new(MorseParams::default(), size)).unwrap()
}

/// Minimum cost over every monotone warping path, enumerated one by one.
pub fn dtw_brute(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

/// Fraction of (positive, negative) pairs ranked correctly, ties count half.
pub fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Cubic convolution weight with a = -1/2, written out per piece.
pub fn keys_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        1.5 * x.powi(3) - 2.5 * x.powi(2) + 1.0
    } else if x < 2.0 {
        -0.5 * x.powi(3) + 2.5 * x.powi(2) - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Two-dimensional Keys summation over the 4x4 neighbourhood of each
/// output pixel centre, with clamped edges.
pub fn bicubic_direct(src: &[f64], ih: usize, iw: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        let sy = (r as f64 + 0.5) * ih as f64 / oh as f64 - 0.5;
        for c in 0..ow {
            let sx = (c as f64 + 0.5) * iw as f64 / ow as f64 - 0.5;
            let mut acc = 0.0;
            for i in sy.floor() as i64 - 1..=sy.floor() as i64 + 2 {
                for j in sx.floor() as i64 - 1..=sx.floor() as i64 + 2 {
                    let (ci, cj) = (i.clamp(0, ih as i64 - 1) as usize, j.clamp(0, iw as i64 - 1) as usize);
                    acc += keys_weight(sy - i as f64) * keys_weight(sx - j as f64) * src[ci * iw + cj];
                }
            }
            out[r * ow + c] = acc;
        }
    }
    out
}
