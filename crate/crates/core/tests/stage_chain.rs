use scgflow::conditioning::{condition_recording, ConditioningConfig};
use scgflow::gating::{extract_pulses, DetectorParams, DetectorRegistry};
use scgflow::quality::score_and_select;
use scgflow::scalogram::{MorseParams, ScalogramEngine};
use scgflow::synth::{generate, SynthSpec};

#[test]
fn synthetic_subjects_flow_through_every_signal_stage() {
    let spec = SynthSpec::balanced(4, 20);
    let subjects = generate(&spec).unwrap();
    let detector = DetectorRegistry::default()
        .create("pan-tompkins", &DetectorParams::default())
        .unwrap();
    let mut engine = ScalogramEngine::new(MorseParams::default(), 64);
    for s in &subjects {
        let cond = condition_recording(&s.recording, &ConditioningConfig::default()).unwrap();
        let peaks = detector.detect(&cond.ecg, cond.sample_rate_hz).unwrap();
        assert_eq!(peaks.len(), s.r_peaks.len(), "{}", s.entry.subject_id);
        for (d, t) in peaks.indices().iter().zip(&s.r_peaks) {
            assert!(d.abs_diff(*t) <= 5, "peak {d} vs {t}");
        }
        let pulses = extract_pulses(&cond, &peaks, &s.entry.subject_id).unwrap();
        assert_eq!(pulses.len(), s.n_pulses());
        let (kept, rejected) = score_and_select(pulses, 0.95).unwrap();
        assert_eq!(rejected.len(), 1);
        let img = engine.image(&kept[0]).unwrap();
        assert_eq!(img.pixels.len(), 64 * 64);
        assert!(img.pixels.iter().all(|v| v.is_finite()));
    }
}
