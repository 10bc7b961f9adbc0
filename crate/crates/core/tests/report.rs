mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use scgflow::experiment::{predictions_file, subjects_file, METRICS_FILE, SUMMARY_FILE};
use scgflow::neural::{Classification, HeadKind, ModelConfig, Regression, Task};
use scgflow::pipeline::run_experiment;
use scgflow::report::{write_report, ResultsDir, CONFUSION_CSV, CORRELATION_CSV, ROC_CSV, VOTE_CSV};
use scgflow::synth::SynthSpec;

fn quick(head: HeadKind) -> ModelConfig {
    ModelConfig {
        epochs: 2,
        batch_size: 16,
        ..ModelConfig::with_head(head, 16)
    }
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// `# key=value` trailer lines of a report CSV.
fn trailer(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn run(task: &dyn Task, head: HeadKind, dir: &Path) {
    let cohort = common::synthetic_images(&SynthSpec::balanced(8, 6), usize::MAX, 16);
    run_experiment(&cohort, task, &quick(head), 3, 0.75, 11, 1, dir).unwrap();
}

#[test]
fn summary_matches_recomputation_from_per_iteration_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    run(&Regression, HeadKind::Regression, tmp.path());
    let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for line in read(&tmp.path().join(METRICS_FILE)).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if let Ok(v) = f[2].parse::<f64>() {
            per_metric.entry(f[1].to_string()).or_default().push(v);
        }
    }
    let summary = read(&tmp.path().join(SUMMARY_FILE));
    let mut checked = 0;
    for line in summary.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let Some(v) = per_metric.get(f[0]) else {
            assert_eq!(f[3], "0", "{line}");
            continue;
        };
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() < 2 { 0.0 } else { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
        assert!((f[1].parse::<f64>().unwrap() - mean).abs() <= 1e-12 * mean.abs().max(1.0), "{line}");
        assert!((f[2].parse::<f64>().unwrap() - sd).abs() <= 1e-12 * sd.abs().max(1.0), "{line}");
        assert_eq!(f[3].parse::<usize>().unwrap(), v.len());
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn regression_report_restates_pooled_subject_correlation() {
    let tmp = tempfile::tempdir().unwrap();
    let (res, out) = (tmp.path().join("res"), tmp.path().join("out"));
    run(&Regression, HeadKind::Regression, &res);
    let loaded = ResultsDir::load(&res).unwrap();
    assert!(loaded.is_regression());
    assert_eq!(loaded.iterations, 3);
    let subj_rows: usize = (0..3).map(|k| read(&res.join(subjects_file(k))).lines().count() - 1).sum();
    assert_eq!(loaded.subjects.len(), subj_rows);
    write_report(&res, &out).unwrap();

    let csv = read(&out.join(CORRELATION_CSV));
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), subj_rows);
    let n = rows.len() as f64;
    let (mx, my) = (rows.iter().map(|r| r.0).sum::<f64>() / n, rows.iter().map(|r| r.1).sum::<f64>() / n);
    let sxy: f64 = rows.iter().map(|r| (r.0 - mx) * (r.1 - my)).sum();
    let sxx: f64 = rows.iter().map(|r| (r.0 - mx).powi(2)).sum();
    let syy: f64 = rows.iter().map(|r| (r.1 - my).powi(2)).sum();
    let r: f64 = trailer(&csv)["pearson_r"].parse().unwrap();
    assert!((r - sxy / (sxx * syy).sqrt()).abs() < 1e-12);
}

#[test]
fn classification_report_counts_every_pulse_once() {
    let tmp = tempfile::tempdir().unwrap();
    let (res, out) = (tmp.path().join("res"), tmp.path().join("out"));
    run(&Classification, HeadKind::Classification, &res);
    write_report(&res, &out).unwrap();
    let n_pulses: usize = (0..3).map(|k| read(&res.join(predictions_file(k))).lines().count() - 1).sum();

    let confusion = read(&out.join(CONFUSION_CSV));
    let total: usize = confusion
        .lines()
        .skip(1)
        .take(4)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<usize>().unwrap()).collect::<Vec<_>>())
        .sum();
    assert_eq!(total, n_pulses);

    let roc = read(&out.join(ROC_CSV));
    for (k, v) in trailer(&roc) {
        assert!(k.starts_with("auc_"));
        if let Ok(a) = v.parse::<f64>() {
            assert!((0.0..=1.0).contains(&a), "{k}={a}");
        }
    }
    let votes = read(&out.join(VOTE_CSV));
    let voted: usize = votes.lines().skip(1).map(|l| l.split(',').nth(5).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(voted, n_pulses);
}
