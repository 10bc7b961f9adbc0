mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use scgflow::experiment::{make_splits, run_iteration};
use scgflow::neural::{HeadKind, ModelConfig, Regression};
use scgflow::signal_model::ValveClass;
use scgflow::stats::{bland_altman, confusion, pearson, roc_auc, t_two_sided_p};
use scgflow::synth::{generate, Morphology, SynthSpec, VMAX_RANGE};

fn vals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()
}

/// Scores on a coarse grid so that ties are common.
fn scores_labels(seed: u64, n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (0..n).map(|_| rng.gen_range(0..6) as f64 / 2.0).collect();
    let mut l: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    l[0] = true;
    l[1] = false;
    (s, l)
}

proptest! {
    #[test]
    fn pearson_ignores_positive_affine_maps(seed in any::<u64>(), n in 3usize..40, a in 0.01f64..100.0, b in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (vals(&mut rng, n), vals(&mut rng, n));
        let r = pearson(&x, &y).unwrap();
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson(&ax, &y).unwrap() - r).abs() < 1e-9);
        prop_assert!((pearson(&x, &ax).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(r.abs() <= 1.0 + 1e-15);
    }

    #[test]
    fn auc_matches_pair_counting_and_its_complement(seed in any::<u64>(), n in 2usize..=20) {
        let (s, l) = scores_labels(seed, n);
        let auc = roc_auc(&s, &l).unwrap().auc;
        prop_assert!((auc - common::auc_pairs(&s, &l)).abs() <= 1e-12);
        let flipped: Vec<bool> = l.iter().map(|v| !v).collect();
        prop_assert_eq!(auc + roc_auc(&s, &flipped).unwrap().auc, 1.0);
    }

    #[test]
    fn bland_altman_swap_flips_only_the_bias(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (vals(&mut rng, n), vals(&mut rng, n));
        let (ab, ba) = (bland_altman(&a, &b).unwrap(), bland_altman(&b, &a).unwrap());
        prop_assert_eq!(ab.bias, -ba.bias);
        prop_assert_eq!(ab.sd, ba.sd);
        prop_assert_eq!(ab.loa, ba.loa);
        prop_assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn t_test_p_values_match_an_independent_cdf(t in -12.0f64..12.0, df in 1u32..60) {
        let oracle = 2.0 * StudentsT::new(0.0, 1.0, df as f64).unwrap().cdf(-t.abs());
        prop_assert!((t_two_sided_p(t, df as f64) - oracle).abs() <= 1e-6);
    }

    #[test]
    fn confusion_rows_count_the_truth(seed in any::<u64>(), n in 1usize..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let cm = confusion(&pred, &truth, 4).unwrap();
        for c in 0..4 {
            prop_assert_eq!(cm.matrix[c].iter().sum::<usize>(), truth.iter().filter(|&&t| t == c).count());
            prop_assert_eq!((0..4).map(|r| cm.matrix[r][c]).sum::<usize>(), pred.iter().filter(|&&p| p == c).count());
        }
        prop_assert_eq!(cm.total(), n);
    }

    #[test]
    fn split_plans_are_exclusive_and_exhaustive(
        seed in any::<u64>(),
        n in 2usize..30,
        iters in 1usize..8,
        frac in 0.3f64..0.95,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts: Vec<(String, usize)> = (0..n).map(|i| (format!("S{i:03}"), rng.gen_range(1..40))).collect();
        let all: Vec<String> = counts.iter().map(|c| c.0.clone()).collect();
        let plans = make_splits(&counts, iters, frac, seed).unwrap();
        prop_assert_eq!(plans.len(), iters);
        for p in &plans {
            p.validate(&all).unwrap();
            let train: HashSet<&String> = p.train_subject_ids.iter().collect();
            let test: HashSet<&String> = p.test_subject_ids.iter().collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(train.len() + test.len(), n);
            prop_assert!(!train.is_empty() && !test.is_empty());
        }
        prop_assert_eq!(make_splits(&counts, iters, frac, seed).unwrap(), plans);
    }

    #[test]
    fn morphology_encodes_class_and_vmax_injectively(
        c1 in 0usize..4, c2 in 0usize..4, u1 in 0.0f64..1.0, u2 in 0.0f64..1.0,
    ) {
        let spec = SynthSpec::default();
        let v = |c: usize, u: f64| VMAX_RANGE[c][0] + u * (VMAX_RANGE[c][1] - VMAX_RANGE[c][0]);
        let (v1, v2) = (v(c1, u1), v(c2, u2));
        let (k1, k2) = (ValveClass::from_index(c1).unwrap(), ValveClass::from_index(c2).unwrap());
        let (m1, m2) = (Morphology::for_subject(&spec, k1, v1), Morphology::for_subject(&spec, k2, v2));
        if (c1, v1) != (c2, v2) {
            prop_assert_ne!(m1, m2);
        }
        if c1 != c2 {
            // carrier frequencies never overlap across classes
            prop_assert!(m1.carriers_hz.iter().all(|f| !m2.carriers_hz.contains(f)));
        } else if v1 < v2 {
            prop_assert!(m1.amplitudes[1] < m2.amplitudes[1] && m1.delays_s[1] < m2.delays_s[1]);
        }
    }
}

#[test]
fn bland_altman_examples() {
    let a = [1.2, 2.5, 3.1, 0.7];
    let r = bland_altman(&a, &a).unwrap();
    assert_eq!((r.bias, r.sd, r.loa), (0.0, 0.0, 0.0));
    let b: Vec<f64> = a.iter().map(|v| v - 0.25).collect();
    let r = bland_altman(&a, &b).unwrap();
    assert!((r.bias - 0.25).abs() < 1e-15 && r.sd < 1e-15);
    let d = [0.1, -0.1, 0.2, 0.0, -0.2];
    let r = bland_altman(&d, &[0.0; 5]).unwrap();
    let t = r.bias / (r.sd / 5f64.sqrt());
    let oracle = 2.0 * StudentsT::new(0.0, 1.0, 4.0).unwrap().cdf(-t.abs());
    assert!((r.p_value - oracle).abs() <= 1e-6);
    assert!(bland_altman(&[1.0], &[2.0]).is_err());
}

#[test]
fn synthetic_class_ranges_are_disjoint_and_generation_is_reproducible() {
    for w in VMAX_RANGE.windows(2) {
        assert!(w[0][0] < w[1][0]);
    }
    let spec = SynthSpec::balanced(8, 4);
    let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.recording, y.recording);
        assert_eq!(x.entry, y.entry);
        let c = x.entry.valve_class.index();
        assert!((VMAX_RANGE[c][0]..=VMAX_RANGE[c][1]).contains(&x.entry.vmax_ms));
    }
    let other = generate(&SynthSpec { seed: 2, ..spec }).unwrap();
    assert_ne!(other[0].recording, a[0].recording);
}

#[test]
fn one_prediction_per_test_pulse() {
    let cohort = common::synthetic_images(&SynthSpec::balanced(6, 5), usize::MAX, 16);
    let plan = &make_splits(&cohort.pulse_counts(), 1, 0.7, 3).unwrap()[0];
    let cfg = ModelConfig {
        epochs: 1,
        batch_size: 8,
        ..ModelConfig::with_head(HeadKind::Regression, 16)
    };
    let r = run_iteration(plan, &cfg, &Regression, &cohort).unwrap();
    let expected: usize = plan.test_subject_ids.iter().map(|id| cohort.subject(id).unwrap().images.len()).sum();
    assert_eq!(r.predictions.len(), expected);
    assert_eq!(r.subjects.len(), plan.test_subject_ids.len());
    let ids: HashSet<&str> = r.predictions.iter().map(|p| p.subject_id.as_str()).collect();
    assert!(plan.train_subject_ids.iter().all(|id| !ids.contains(id.as_str())));
}
