mod common;

use scgflow::neural::{evaluate, train, Classification, HeadKind, ModelConfig, Regression, Task};
use scgflow::synth::SynthSpec;

fn fit(task: &dyn Task, head: HeadKind) -> (f64, f64) {
    let cohort = common::synthetic_images(&SynthSpec::balanced(8, 6), 2, 64);
    let ids: Vec<String> = cohort.subjects().iter().map(|s| s.record.subject_id.clone()).collect();
    let data = cohort.dataset(&ids, task).unwrap();
    assert_eq!(data.len(), 16);
    // memorisation probe: no dropout, one step decay of the learning rate
    let config = ModelConfig {
        epochs: 300,
        dropout: 0.0,
        learning_rate: 3e-3,
        lr_decay_epochs: 200,
        seed: 1,
        ..ModelConfig::with_head(head, 64)
    };
    let (model, prep, history) = train(&config, task, &data, &data).unwrap();
    assert_eq!(history.len(), 300);
    (evaluate(&model, &prep, task, &data).unwrap(), history[299].train_loss)
}

#[test]
fn regression_memorizes_sixteen_pulses() {
    let (eval, last) = fit(&Regression, HeadKind::Regression);
    assert!(eval < 1.0 && last < 1.0, "training MPE {eval}% (last epoch {last}%)");
}

#[test]
fn classification_memorizes_sixteen_pulses() {
    let (eval, last) = fit(&Classification, HeadKind::Classification);
    assert!(eval < 0.01 && last < 0.01, "training CCE {eval} (last epoch {last})");
}
