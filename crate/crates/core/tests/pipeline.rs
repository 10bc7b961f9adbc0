use std::fs;
use std::path::Path;

use scgflow::experiment::{model_file, SUMMARY_FILE};
use scgflow::kv::KvMap;
use scgflow::pipeline::{run_pipeline, PipelineConfig, CONFIG_FILE, KEPT_DIR, RESULTS_DIR, SQI_TABLE};
use scgflow::report::{BLAND_ALTMAN_CSV, BLAND_ALTMAN_SVG, CONFUSION_CSV, CORRELATION_CSV, CORRELATION_SVG, ROC_CSV, ROC_SVG};
use scgflow::synth::{generate_cohort, SynthSpec};

fn quick_config() -> PipelineConfig {
    let mut c = PipelineConfig::from_kv(&KvMap::parse("img_size=64\niterations=2\nepochs=3\nthreads=2\nseed=5").unwrap()).unwrap();
    c.model.batch_size = 16;
    c
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn six_subject_cohort_yields_full_report_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = tmp.path().join("cohort");
    generate_cohort(&SynthSpec::balanced(6, 8), &cohort).unwrap();
    let cfg = quick_config();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    let report = run_pipeline(&cfg, &cohort, &a).unwrap();
    for f in [CORRELATION_CSV, CORRELATION_SVG, BLAND_ALTMAN_CSV, BLAND_ALTMAN_SVG] {
        assert!(report.join("vmax").join(f).is_file(), "{f}");
    }
    for f in [ROC_CSV, ROC_SVG, CONFUSION_CSV] {
        assert!(report.join("valve").join(f).is_file(), "{f}");
    }
    let svg = fs::read_to_string(report.join("vmax").join(CORRELATION_SVG)).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let sqi = fs::read_to_string(a.join(KEPT_DIR).join(SQI_TABLE)).unwrap();
    assert_eq!(sqi.lines().count(), 1 + 6 * 8);

    let written = PipelineConfig::load(a.join(CONFIG_FILE)).unwrap();
    assert_eq!(written, cfg);

    // a second run into a fresh directory and a rerun over the first one
    run_pipeline(&cfg, &cohort, &b).unwrap();
    let summary_a: Vec<Vec<u8>> = ["vmax", "valve"].iter().map(|t| bytes(&a.join(RESULTS_DIR).join(t).join(SUMMARY_FILE))).collect();
    let models_a: Vec<Vec<u8>> = ["vmax", "valve"].iter().map(|t| bytes(&a.join(RESULTS_DIR).join(t).join(model_file(0)))).collect();
    run_pipeline(&cfg, &cohort, &a).unwrap();
    for (k, t) in ["vmax", "valve"].iter().enumerate() {
        for dir in [&a, &b] {
            let res = dir.join(RESULTS_DIR).join(t);
            assert_eq!(bytes(&res.join(SUMMARY_FILE)), summary_a[k], "{t} summary");
            assert_eq!(bytes(&res.join(model_file(0))), models_a[k], "{t} checkpoint");
            assert_eq!(bytes(&res.join(model_file(1))), bytes(&a.join(RESULTS_DIR).join(t).join(model_file(1))));
        }
    }
}

#[test]
fn missing_manifest_is_a_usage_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let err = run_pipeline(&quick_config(), &tmp.path().join("nowhere"), &tmp.path().join("out")).unwrap_err();
    assert!(err.is_usage());
    assert!(err.to_string().contains("nowhere"), "{err}");
}

#[test]
fn stage_failure_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = tmp.path().join("cohort");
    generate_cohort(&SynthSpec::balanced(4, 6), &cohort).unwrap();
    let rec = cohort.join("recordings").join("S001.csv");
    fs::write(&rec, "not a recording\n").unwrap();
    let err = run_pipeline(&quick_config(), &cohort, &tmp.path().join("out")).unwrap_err();
    assert!(err.to_string().starts_with("stage condition:"), "{err}");
    assert!(err.is_usage());
}
