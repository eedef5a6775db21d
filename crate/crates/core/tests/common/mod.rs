#![allow(dead_code)]

use mosbench::audio::Audio;
use mosbench::features::{MelConfig, MelPatchSequence};
use mosbench::models::{Model, ModelConfig, Sample};
use mosbench::nn::ParamId;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_sample(cfg: &ModelConfig, n_patches: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.cnn.input_height, cfg.cnn.input_width);
    let patches = (0..n_patches)
        .map(|_| Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let n = cfg.backbone.stride * 4 + cfg.backbone.stride / 2;
    let audio = Audio::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000);
    Sample {
        utterance_id: format!("s{seed}"),
        patches: Some(MelPatchSequence::from_patches("s", patches, MelConfig::default())),
        audio: Some(audio),
    }
}

pub struct GradCheck {
    pub checked: usize,
    /// Coordinates within `step` of a ReLU or max-pool kink, where the
    /// central difference at `step` disagrees with one at `step / 10`.
    pub skipped: usize,
    pub failures: Vec<String>,
    pub max_rel: f64,
}

/// Compares analytic L1-loss gradients against central differences on
/// `n_coords` smooth trainable coordinates (at least one draw per
/// trainable tensor). A coordinate counts as smooth when the central
/// differences at `step` and `step / 10` agree within `tol`.
pub fn check_gradients(model: &Model, sample: &Sample, target: f64, n_coords: usize, step: f64, tol: f64, seed: u64) -> GradCheck {
    let mut grads = model.params.zero_grads();
    model
        .backward(sample, &mut grads, |p| if p > target { 1.0 } else { -1.0 })
        .unwrap();
    let loss = |m: &Model| (m.predict(sample).unwrap() - target).abs();

    let trainable: Vec<usize> = (0..model.params.len())
        .filter(|&i| model.params.is_trainable(ParamId(i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for &t in &trainable {
        let n = model.params.tensors()[t].data.len();
        coords.push((t, rng.random_range(0..n)));
    }
    let total: usize = trainable.iter().map(|&t| model.params.tensors()[t].data.len()).sum();
    let mut extra = Vec::new();
    while extra.len() < 4 * n_coords {
        let mut k = rng.random_range(0..total);
        for &t in &trainable {
            let n = model.params.tensors()[t].data.len();
            if k < n {
                extra.push((t, k));
                break;
            }
            k -= n;
        }
    }

    let mut probe = model.clone();
    let rel_err = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let mut central = |t: usize, k: usize, h: f64| {
        let orig = probe.params.tensors()[t].data[k];
        probe.params.tensors_mut()[t].data[k] = orig + h;
        let up = loss(&probe);
        probe.params.tensors_mut()[t].data[k] = orig - h;
        let down = loss(&probe);
        probe.params.tensors_mut()[t].data[k] = orig;
        (up - down) / (2.0 * h)
    };
    let mut out = GradCheck { checked: 0, skipped: 0, failures: Vec::new(), max_rel: 0.0 };
    for (t, k) in coords.into_iter().chain(extra) {
        if out.checked >= n_coords {
            break;
        }
        let numeric = central(t, k, step);
        let fine = central(t, k, step / 10.0);
        if rel_err(numeric, fine) > tol {
            out.skipped += 1;
            continue;
        }
        let analytic = grads.data[t][k];
        let rel = rel_err(analytic, numeric);
        out.max_rel = out.max_rel.max(rel);
        out.checked += 1;
        if rel > tol {
            out.failures.push(format!(
                "{}[{k}]: analytic {analytic:.6e} numeric {numeric:.6e} rel {rel:.2e}",
                model.params.tensors()[t].name
            ));
        }
    }
    out
}

use mosbench::data_model::{Manifest, Split, SystemType, Utterance};
use std::path::PathBuf;

/// A manifest from (system id, system type, MOS, split) rows with ids `u<i>`.
pub fn manifest(rows: &[(String, SystemType, f64, Split)]) -> Manifest {
    let utts = rows
        .iter()
        .enumerate()
        .map(|(i, (sys, t, mos, split))| Utterance {
            utterance_id: format!("u{i}"),
            audio_path: PathBuf::from(format!("u{i}.wav")),
            system_id: sys.clone(),
            system_type: *t,
            mos: *mos,
            split: *split,
            num_raters: None,
        })
        .collect();
    Manifest::new("fixture", utts).unwrap()
}
