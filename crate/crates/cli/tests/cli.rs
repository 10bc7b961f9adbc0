use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::{CommandFactory, Parser};
use scgflow::pipeline::PipelineConfig;
use scgflow_cli::Cli;

fn scgflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scgflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = scgflow(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_documents_every_flag_of_every_subcommand() {
    let cmd = Cli::command();
    let globals: Vec<String> = cmd.get_arguments().filter_map(|a| a.get_long()).map(|l| format!("--{l}")).collect();
    assert_eq!(globals.len(), 4);
    let subs: Vec<&str> = cmd.get_subcommands().map(|c| c.get_name()).collect();
    assert_eq!(
        subs,
        ["synth", "condition", "gate", "sqi", "scalogram", "train", "experiment", "report", "pipeline"]
    );
    for sub in cmd.get_subcommands() {
        let help = ok(&[sub.get_name(), "--help"]);
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            assert!(help.contains(&format!("--{long}")), "{} --help lacks --{long}", sub.get_name());
            assert!(arg.get_help().is_some() || long == "help", "{} --{long} is undocumented", sub.get_name());
        }
        for g in &globals {
            assert!(help.contains(g.as_str()), "{} --help lacks {g}", sub.get_name());
        }
    }
}

#[test]
fn flags_round_trip_through_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let from_flags = Cli::try_parse_from([
        "scgflow", "--seed", "9", "--threads", "3", "pipeline", "--cohort", "c", "--out", "o", "--no-denoise",
        "--taper-frac", "0.02", "--keep", "0.9", "--img-size", "64", "--export-pgm", "--iters", "4", "--train-frac",
        "0.7", "--tasks", "valve", "--epochs", "12", "--learning-rate", "0.002", "--batch-size", "8", "--dropout", "0.1",
    ])
    .unwrap()
    .effective_config()
    .unwrap();
    assert_eq!(from_flags.seed, 9);
    assert_eq!(from_flags.img_size, 64);
    assert_eq!(from_flags.model.epochs, 12);
    assert!(from_flags.conditioning.denoise.is_none());

    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, from_flags.to_kv().to_text()).unwrap();
    let from_file = Cli::try_parse_from(["scgflow", "pipeline", "--config", s(&cfg), "--cohort", "c", "--out", "o"])
        .unwrap()
        .effective_config()
        .unwrap();
    assert_eq!(from_file, from_flags);

    // a flag beats the file
    let over = Cli::try_parse_from(["scgflow", "--config", s(&cfg), "sqi", "--in", "a", "--out", "b", "--keep", "0.8"])
        .unwrap()
        .effective_config()
        .unwrap();
    assert_eq!(over.keep_fraction, 0.8);
    assert_eq!(PipelineConfig { keep_fraction: 0.9, ..over }, from_flags);
}

#[test]
fn stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let spec = root.join("spec.cfg");
    fs::write(&spec, "n_subjects=6\npulses_min=6\npulses_max=6\nsnr_db=20\n").unwrap();
    let cohort = root.join("cohort");
    ok(&["synth", "--spec", s(&spec), "--out", s(&cohort), "--seed", "4"]);
    let manifest = cohort.join("manifest.csv");
    assert!(manifest.is_file());

    let (pulses, kept, images) = (root.join("pulses"), root.join("kept"), cohort.join("images"));
    for k in 1..=6 {
        let id = format!("S{k:03}");
        let rec = cohort.join("recordings").join(format!("{id}.csv"));
        let cond = root.join("conditioned").join(format!("{id}.csv"));
        ok(&["condition", "--in", s(&rec), "--out", s(&cond), "--taper-frac", "0.01"]);
        if k == 1 {
            let peaks = cohort.join("peaks").join(format!("{id}.csv"));
            ok(&["gate", "--in", s(&cond), "--out", s(&pulses), "--peaks", s(&peaks)]);
        } else {
            ok(&["gate", "--in", s(&cond), "--out", s(&pulses)]);
        }
    }
    ok(&["sqi", "--in", s(&pulses), "--out", s(&kept), "--keep", "0.95"]);
    let table = fs::read_to_string(kept.join("sqi.csv")).unwrap();
    assert_eq!(table.lines().filter(|l| l.ends_with(",0")).count(), 0, "floor(0.05*6) = 0 rejected");
    ok(&["scalogram", "--in", s(&kept), "--out", s(&images), "--img-size", "16", "--export-pgm"]);
    assert_eq!(fs::read_dir(&images).unwrap().count(), 2 * 36);

    let ckpt = root.join("model.scgm");
    ok(&["train", "--cohort", s(&manifest), "--task", "vmax", "--out", s(&ckpt), "--epochs", "2"]);
    assert_eq!(&fs::read(&ckpt).unwrap()[..4], b"SCGM");

    let results = root.join("results");
    let report = root.join("report");
    let summary = ok(&[
        "experiment", "--cohort", s(&manifest), "--task", "valve", "--iters", "2", "--out", s(&results), "--epochs",
        "2", "--batch-size", "8",
    ]);
    assert!(summary.contains("auc_macro"));
    ok(&["report", "--results", s(&results), "--out", s(&report)]);
    for f in ["roc.csv", "roc.svg", "confusion.csv", "summary_valve.csv"] {
        assert!(report.join(f).is_file(), "{f}");
    }
}

#[test]
fn exit_codes_separate_usage_from_computation() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent-cohort");
    let out = scgflow(&["pipeline", "--cohort", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent-cohort"));

    assert_eq!(scgflow(&["pipeline", "--bogus"]).status.code(), Some(2));
    let bad_cfg = tmp.path().join("bad.cfg");
    fs::write(&bad_cfg, "no_such_key=1\n").unwrap();
    let out = scgflow(&["--config", s(&bad_cfg), "report", "--results", "r", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    // a well-formed recording without any heartbeat
    let flat = tmp.path().join("flat.csv");
    let mut text = String::from("sample_rate_hz=500\n");
    for i in 0..5000 {
        text.push_str(&format!("{},0,0,0,0\n", i as f64 / 500.0));
    }
    fs::write(&flat, text).unwrap();
    let out = scgflow(&["gate", "--in", s(&flat), "--out", s(&tmp.path().join("p"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}
