mod common;

use mosbench::models::{Architecture, Model, ModelConfig, ProviderRegistry};

fn run(arch: Architecture) {
    let cfg = ModelConfig::tiny(arch);
    let model = Model::new(cfg.clone(), 11, &ProviderRegistry::new()).unwrap();
    let sample = common::random_sample(&cfg, 3, 5);
    let report = common::check_gradients(&model, &sample, 1.0, 60, 1e-4, 1e-4, 17);
    assert!(report.checked >= 50);
    assert!(report.skipped * 5 <= report.checked, "{arch}: {} kink coordinates", report.skipped);
    assert!(report.failures.is_empty(), "{arch}: {:#?}", report.failures);
}

#[test]
fn nisqa_gradients() {
    run(Architecture::Nisqa);
}

#[test]
fn convmaxpool_gradients() {
    run(Architecture::ConvMaxPool);
}

#[test]
fn w2vmos_gradients() {
    run(Architecture::W2vMos);
}

#[test]
fn fusion1_gradients() {
    run(Architecture::Fusion1);
}

#[test]
fn fusion2_gradients() {
    run(Architecture::Fusion2);
}
