//! Synthetic corpora for desk-scale runs: harmonic tones with additive
//! white noise, where MOS is a decreasing linear function of the noise
//! level in dB.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, Audio};
use crate::data_model::{Manifest, Split, SystemType, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub utterances: usize,
    pub systems: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    /// Per-system SNR range in dB; systems are spread evenly across it.
    pub snr_db_range: (f64, f64),
    /// Per-utterance SNR jitter (uniform ± this many dB).
    pub snr_jitter_db: f64,
    /// Standard deviation of Gaussian noise on each MOS label, standing in
    /// for listener disagreement.
    pub label_noise_sd: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            utterances: 600,
            systems: 12,
            duration_secs: 0.2,
            sample_rate: 16_000,
            snr_db_range: (-5.0, 30.0),
            snr_jitter_db: 1.5,
            label_noise_sd: 0.1,
            val_fraction: 0.15,
            test_fraction: 0.15,
            seed: 7,
        }
    }
}

/// System types cycle through this list, so twelve systems cover every
/// type with TTS and VC in the majority.
const TYPE_CYCLE: [SystemType; 12] = [
    SystemType::Bc,
    SystemType::Vcc,
    SystemType::Espnet,
    SystemType::Bc,
    SystemType::Vcc,
    SystemType::Natural,
    SystemType::Bc,
    SystemType::Vcc,
    SystemType::Espnet,
    SystemType::Bc,
    SystemType::Vcc,
    SystemType::Other,
];

/// MOS for a given SNR: linear from 1 at the low end of the range to 5 at
/// the high end, clamped.
pub fn mos_for_snr(snr_db: f64, range: (f64, f64)) -> f64 {
    (1.0 + 4.0 * (snr_db - range.0) / (range.1 - range.0)).clamp(1.0, 5.0)
}

/// A harmonic tone with RMS 0.1 plus white noise at `snr_db`.
pub fn noisy_tone(rng: &mut impl Rng, samples: usize, sample_rate: u32, snr_db: f64) -> Vec<f64> {
    let f0: f64 = rng.random_range(110.0..260.0);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let sr = sample_rate as f64;
    let harmonics = [1.0, 0.6, 0.35, 0.2];
    let mut tone: Vec<f64> = (0..samples)
        .map(|n| {
            let t = n as f64 / sr;
            harmonics
                .iter()
                .enumerate()
                .map(|(h, a)| a * (2.0 * PI * f0 * (h + 1) as f64 * t + phase).sin())
                .sum()
        })
        .collect();
    let rms = (tone.iter().map(|v| v * v).sum::<f64>() / samples as f64).sqrt();
    for v in &mut tone {
        *v *= 0.1 / rms;
    }
    let noise_rms = 0.1 / 10f64.powf(snr_db / 20.0);
    let normal = Normal::new(0.0, noise_rms).expect("finite noise level");
    tone.iter().map(|v| (v + normal.sample(rng)).clamp(-1.0, 1.0)).collect()
}

/// Writes WAV files under `dir/audio` and a labeled manifest at
/// `dir/<name>.csv`; returns the loaded manifest and its path.
pub fn generate_corpus(dir: &Path, cfg: &SynthConfig) -> Result<(Manifest, PathBuf)> {
    if cfg.systems == 0 || cfg.utterances < cfg.systems {
        return Err(Error::InvalidArgument("need at least one utterance per system".into()));
    }
    if !(cfg.val_fraction >= 0.0 && cfg.test_fraction >= 0.0 && cfg.val_fraction + cfg.test_fraction < 1.0) {
        return Err(Error::InvalidArgument("val_fraction + test_fraction must be below 1".into()));
    }
    let audio_dir = dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(format!("creating {}", audio_dir.display()), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = (cfg.duration_secs * cfg.sample_rate as f64).round() as usize;
    let (lo, hi) = cfg.snr_db_range;
    let label_noise = Normal::new(0.0, cfg.label_noise_sd)
        .map_err(|_| Error::InvalidArgument("label_noise_sd must be finite and non-negative".into()))?;
    let mut utterances = Vec::with_capacity(cfg.utterances);
    for s in 0..cfg.systems {
        let centre = if cfg.systems == 1 { (lo + hi) / 2.0 } else { lo + (hi - lo) * s as f64 / (cfg.systems - 1) as f64 };
        let n = cfg.utterances / cfg.systems + usize::from(s < cfg.utterances % cfg.systems);
        let n_test = ((n as f64) * cfg.test_fraction).round() as usize;
        let n_val = ((n as f64) * cfg.val_fraction).round() as usize;
        for k in 0..n {
            let snr = (centre + rng.random_range(-cfg.snr_jitter_db..=cfg.snr_jitter_db)).clamp(lo, hi);
            let id = format!("sys{s:02}_utt{k:03}");
            let rel = PathBuf::from("audio").join(format!("{id}.wav"));
            write_wav(&dir.join(&rel), &Audio::new(noisy_tone(&mut rng, samples, cfg.sample_rate, snr), cfg.sample_rate))?;
            let split = if k < n_test {
                Split::Test
            } else if k < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            utterances.push(Utterance {
                utterance_id: id,
                audio_path: rel,
                system_id: format!("sys{s:02}"),
                system_type: TYPE_CYCLE[s % TYPE_CYCLE.len()],
                mos: (mos_for_snr(snr, cfg.snr_db_range) + label_noise.sample(&mut rng)).clamp(1.0, 5.0),
                split,
                num_raters: Some(8),
            });
        }
    }
    let manifest = Manifest::new(cfg.name.clone(), utterances)?;
    let path = dir.join(format!("{}.csv", cfg.name));
    manifest.write_csv(&path)?;
    let loaded = crate::data_model::load_manifest(&path)?;
    Ok((loaded, path))
}

/// Writes `count` unlabeled noisy tones and an `audio_path` manifest.
pub fn generate_unlabeled(dir: &Path, count: usize, duration_secs: f64, seed: u64) -> Result<PathBuf> {
    let audio_dir = dir.join("unlabeled");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(format!("creating {}", audio_dir.display()), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (duration_secs * 16_000.0).round() as usize;
    let mut csv = String::from("audio_path\n");
    for i in 0..count {
        let snr = rng.random_range(-5.0..30.0);
        let rel = format!("unlabeled/u{i:04}.wav");
        write_wav(&dir.join(&rel), &Audio::new(noisy_tone(&mut rng, samples, 16_000, snr), 16_000))?;
        csv.push_str(&rel);
        csv.push('\n');
    }
    let path = dir.join("unlabeled.csv");
    fs::write(&path, csv).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { utterances: 48, systems: 12, ..Default::default() };
        let (m, _) = generate_corpus(dir.path(), &cfg).unwrap();
        assert_eq!(m.len(), 48);
        let counts = m.split_counts();
        assert_eq!(counts.len(), 3);
        let types: std::collections::HashSet<_> = m.utterances.iter().map(|u| u.system_type).collect();
        assert_eq!(types.len(), 5);
        let first = m.utterances.iter().find(|u| u.system_id == "sys00").unwrap().mos;
        let last = m.utterances.iter().find(|u| u.system_id == "sys11").unwrap().mos;
        assert!(first < 1.5 && last > 4.5);
    }

    #[test]
    fn mos_is_monotone_in_snr() {
        let r = (-5.0, 30.0);
        assert_eq!(mos_for_snr(-5.0, r), 1.0);
        assert_eq!(mos_for_snr(30.0, r), 5.0);
        assert!(mos_for_snr(10.0, r) < mos_for_snr(11.0, r));
    }
}
