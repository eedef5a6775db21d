use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{load_checkpoint, save_checkpoint, Provenance};
use super::*;
use crate::features::MelConfig;

fn sample_for(cfg: &ModelConfig, n_patches: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.cnn.input_height, cfg.cnn.input_width);
    let patches = (0..n_patches)
        .map(|_| Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let audio = Audio::new((0..cfg.backbone.stride * 5).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000);
    Sample {
        utterance_id: "u".into(),
        patches: Some(MelPatchSequence::from_patches("u", patches, MelConfig::default())),
        audio: Some(audio),
    }
}

#[test]
fn temporal_max_pool_example() {
    let (v, arg) = temporal_max_pool(&[array![1.0, 0.0], array![0.0, 2.0]]);
    assert_eq!(v, array![1.0, 2.0]);
    assert_eq!(arg, vec![0, 1]);
}

#[test]
fn reference_budget_ratio() {
    let reg = ProviderRegistry::new();
    let nisqa = Model::new(ModelConfig::reference(Architecture::Nisqa), 0, &reg).unwrap();
    let cmp = Model::new(ModelConfig::reference(Architecture::ConvMaxPool), 0, &reg).unwrap();
    let ratio = cmp.count_parameters().total as f64 / nisqa.count_parameters().total as f64;
    assert!((0.55..=0.70).contains(&ratio), "ratio {ratio}");
    assert_eq!(cmp.count_parameters().per_group["head"], 65);
}

#[test]
fn fusion_head_widths() {
    assert_eq!(ModelConfig::reference(Architecture::Fusion1).fusion_input_dim(), 65);
    assert_eq!(ModelConfig::reference(Architecture::Fusion2).fusion_input_dim(), 833);
    let reg = ProviderRegistry::new();
    let m = Model::new(ModelConfig::reference(Architecture::Fusion2), 0, &reg).unwrap();
    assert_eq!(m.count_parameters().per_group["fusion_head"], 834);
    assert!(!m.params.group_is_trainable("w2v"));
    assert!(m.params.group_is_trainable("trunk"));
}

#[test]
fn outputs_are_bounded() {
    let reg = ProviderRegistry::new();
    for arch in Architecture::ALL {
        let cfg = ModelConfig::tiny(arch);
        let m = Model::new(cfg.clone(), 3, &reg).unwrap();
        let p = m.predict(&sample_for(&cfg, 3, 1)).unwrap();
        assert!(p > 1.0 && p < 5.0, "{arch}: {p}");
    }
}

#[test]
fn missing_inputs_are_reported() {
    let reg = ProviderRegistry::new();
    let m = Model::new(ModelConfig::tiny(Architecture::ConvMaxPool), 0, &reg).unwrap();
    let err = m.predict(&Sample::default()).unwrap_err();
    assert!(matches!(err, Error::EmptyInput(_)));
}

#[test]
fn external_provider_must_be_registered() {
    let reg = ProviderRegistry::new();
    let mut cfg = ModelConfig::reference(Architecture::W2vMos);
    cfg.backbone = BackboneConfig::external("ssl-base");
    let err = Model::new(cfg, 0, &reg).unwrap_err();
    assert!(matches!(err, Error::ProviderUnavailable { .. }));
}

#[test]
fn trunk_transfer_copies_weights() {
    let reg = ProviderRegistry::new();
    let a = Model::new(ModelConfig::tiny(Architecture::ConvMaxPool), 1, &reg).unwrap();
    let mut b = Model::new(ModelConfig::tiny(Architecture::Fusion1), 2, &reg).unwrap();
    b.load_trunk(&a.params).unwrap();
    for t in a.params.tensors().iter().filter(|t| t.group() == "trunk") {
        let id = b.params.find(&t.name).unwrap();
        assert_eq!(b.params.get(id), &t.data[..]);
    }
}

#[test]
fn checkpoint_round_trip() {
    let reg = ProviderRegistry::new();
    let cfg = ModelConfig::tiny(Architecture::Nisqa);
    let m = Model::new(cfg.clone(), 9, &reg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&m, &Provenance { seed: 9, ..Default::default() }, dir.path()).unwrap();
    let (back, meta) = load_checkpoint(dir.path(), &reg, Some(&cfg)).unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(meta.provenance.seed, 9);
    let s = sample_for(&cfg, 2, 4);
    assert_eq!(back.predict(&s).unwrap(), m.predict(&s).unwrap());

    let other = ModelConfig::tiny(Architecture::ConvMaxPool);
    let err = load_checkpoint(dir.path(), &reg, Some(&other)).unwrap_err();
    assert!(matches!(err, Error::ConfigHashMismatch { .. }));
}
