//! Log-mel spectrogram frontend and fixed-size patching for the CNN models.

use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{s, Array2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Audio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub patch_frames: usize,
    pub patch_hop_frames: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub log_floor: f64,
    /// Per-utterance mean/variance normalization of the log-mel matrix.
    pub normalize: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            window_ms: 32.0,
            hop_ms: 10.0,
            n_mels: 48,
            patch_frames: 15,
            patch_hop_frames: 4,
            f_min_hz: 0.0,
            f_max_hz: 8_000.0,
            log_floor: 1e-7,
            normalize: false,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("mel config: {m}")));
        if self.sample_rate_hz == 0 {
            return bad("sample_rate_hz must be positive");
        }
        if !(self.window_ms > 0.0 && self.hop_ms > 0.0) {
            return bad("window_ms and hop_ms must be positive");
        }
        if self.hop_ms > self.window_ms {
            return bad("hop_ms must not exceed window_ms");
        }
        if self.n_mels == 0 || self.patch_frames == 0 || self.patch_hop_frames == 0 {
            return bad("n_mels, patch_frames and patch_hop_frames must be at least 1");
        }
        if !(self.f_max_hz > self.f_min_hz) || self.f_max_hz > self.sample_rate_hz as f64 / 2.0 + 1e-9 {
            return bad("mel range must satisfy f_min < f_max <= Nyquist");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    /// Frame count for an `len`-sample signal, `None` if shorter than a window.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        let win = self.window_samples();
        (len >= win).then(|| 1 + (len - win) / self.hop_samples())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("mel config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, shape (n_mels × n_fft/2+1).
pub fn mel_filterbank(cfg: &MelConfig) -> Array2<f64> {
    let n_fft = cfg.window_samples();
    let n_bins = n_fft / 2 + 1;
    let lo = hz_to_mel(cfg.f_min_hz);
    let hi = hz_to_mel(cfg.f_max_hz);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * cfg.sample_rate_hz as f64 / n_fft as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

pub fn hann(n: usize) -> Vec<f64> {
    // Periodic Hann, the usual STFT convention.
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable STFT + mel projection for one configuration.
pub struct MelFrontend {
    cfg: MelConfig,
    window: Vec<f64>,
    filterbank: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelFrontend {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.window_samples();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            window: hann(n),
            filterbank: mel_filterbank(&cfg),
            cfg,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Log-mel energies, shape (n_mels × T).
    pub fn compute(&self, audio: &Audio) -> Result<Array2<f64>> {
        if audio.samples.is_empty() {
            return Err(Error::EmptyInput("audio has no samples".into()));
        }
        let audio = audio.resampled(self.cfg.sample_rate_hz)?;
        let x = &audio.samples;
        let win = self.cfg.window_samples();
        let hop = self.cfg.hop_samples();
        let frames = self
            .cfg
            .frame_count(x.len())
            .ok_or(Error::AudioTooShort { samples: x.len(), window: win })?;
        let n_bins = win / 2 + 1;
        let mut out = Array2::zeros((self.cfg.n_mels, frames));
        let mut buf = vec![Complex::new(0.0, 0.0); win];
        let mut power = vec![0.0; n_bins];
        for t in 0..frames {
            let start = t * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(x[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..self.cfg.n_mels {
                let e: f64 = self
                    .filterbank
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                out[[m, t]] = e.max(self.cfg.log_floor).ln();
            }
        }
        if self.cfg.normalize {
            let mean = out.mean().unwrap_or(0.0);
            let std = out.std(0.0);
            out.mapv_inplace(|v| (v - mean) / std.max(1e-12));
        }
        Ok(out)
    }
}

pub fn compute_mel(audio: &Audio, cfg: &MelConfig) -> Result<Array2<f64>> {
    MelFrontend::new(cfg.clone())?.compute(audio)
}

/// An utterance as a sequence of equally-shaped log-mel patches.
#[derive(Debug, Clone, PartialEq)]
pub struct MelPatchSequence {
    pub utterance_id: String,
    pub patches: Vec<Array2<f64>>,
    pub config: MelConfig,
    /// The source had fewer than `patch_frames` columns and was right-padded.
    pub padded: bool,
}

impl MelPatchSequence {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn from_patches(utterance_id: impl Into<String>, patches: Vec<Array2<f64>>, config: MelConfig) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            patches,
            config,
            padded: false,
        }
    }
}

pub fn make_patches(utterance_id: &str, mel: &Array2<f64>, cfg: &MelConfig) -> Result<MelPatchSequence> {
    if mel.nrows() != cfg.n_mels {
        return Err(Error::shape("make_patches", format!("{} mel rows", cfg.n_mels), mel.nrows()));
    }
    let w = cfg.patch_frames;
    let (source, padded) = if mel.ncols() < w {
        let mut p = Array2::from_elem((cfg.n_mels, w), cfg.log_floor.ln());
        p.slice_mut(s![.., ..mel.ncols()]).assign(mel);
        (p, true)
    } else {
        (mel.clone(), false)
    };
    let n = 1 + (source.ncols() - w) / cfg.patch_hop_frames;
    let patches = (0..n)
        .map(|k| {
            let start = k * cfg.patch_hop_frames;
            source.slice(s![.., start..start + w]).to_owned()
        })
        .collect();
    Ok(MelPatchSequence {
        utterance_id: utterance_id.to_string(),
        patches,
        config: cfg.clone(),
        padded,
    })
}

/// On-disk patch cache keyed by audio content hash and config hash.
#[derive(Debug, Clone)]
pub struct PatchCache {
    dir: PathBuf,
}

const CACHE_MAGIC: &[u8; 4] = b"MPC1";

impl PatchCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(Self { dir })
    }

    pub fn key(audio: &Audio, cfg: &MelConfig) -> String {
        let mut h = Sha256::new();
        h.update(audio.sample_rate.to_le_bytes());
        for s in &audio.samples {
            h.update(s.to_le_bytes());
        }
        h.update(cfg.hash().as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.bin"))
    }

    pub fn get(&self, key: &str, utterance_id: &str, cfg: &MelConfig) -> Result<Option<MelPatchSequence>> {
        let path = self.path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(path.display().to_string(), e)),
        };
        decode_patches(&bytes, utterance_id, cfg).map(Some)
    }

    pub fn put(&self, key: &str, seq: &MelPatchSequence) -> Result<()> {
        let path = self.path(key);
        // Write-then-rename so concurrent readers never see a partial file.
        let tmp = self.dir.join(format!("{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, encode_patches(seq)).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Computes patches for `audio`, going through the cache.
    pub fn patches(&self, frontend: &MelFrontend, utterance_id: &str, audio: &Audio) -> Result<MelPatchSequence> {
        let key = Self::key(audio, frontend.config());
        if let Some(seq) = self.get(&key, utterance_id, frontend.config())? {
            return Ok(seq);
        }
        let mel = frontend.compute(audio)?;
        let seq = make_patches(utterance_id, &mel, frontend.config())?;
        self.put(&key, &seq)?;
        Ok(seq)
    }
}

fn encode_patches(seq: &MelPatchSequence) -> Vec<u8> {
    let (rows, cols) = seq
        .patches
        .first()
        .map(|p| p.dim())
        .unwrap_or((seq.config.n_mels, seq.config.patch_frames));
    let mut out = Vec::with_capacity(17 + seq.len() * rows * cols * 8);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.push(seq.padded as u8);
    for p in &seq.patches {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_patches(bytes: &[u8], utterance_id: &str, cfg: &MelConfig) -> Result<MelPatchSequence> {
    let corrupt = || Error::InvalidArgument("corrupt patch cache entry".into());
    if bytes.len() < 17 || &bytes[..4] != CACHE_MAGIC {
        return Err(corrupt());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (n, rows, cols) = (word(4), word(8), word(12));
    let padded = bytes[16] != 0;
    let body = &bytes[17..];
    if body.len() != n * rows * cols * 8 {
        return Err(corrupt());
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let patches = (0..n)
        .map(|_| Array2::from_shape_fn((rows, cols), |_| values.next().unwrap()))
        .collect();
    Ok(MelPatchSequence {
        utterance_id: utterance_id.to_string(),
        patches,
        config: cfg.clone(),
        padded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, secs: f64, amp: f64) -> Audio {
        let n = (16000.0 * secs) as usize;
        Audio::new(
            (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect(),
            16000,
        )
    }

    #[test]
    fn frame_count_formula() {
        let cfg = MelConfig::default();
        assert_eq!(cfg.window_samples(), 512);
        assert_eq!(cfg.hop_samples(), 160);
        let mel = compute_mel(&sine(300.0, 1.0, 0.5), &cfg).unwrap();
        assert_eq!(mel.dim(), (48, 97));
    }

    #[test]
    fn too_short_audio_is_rejected() {
        let cfg = MelConfig::default();
        let audio = Audio::new(vec![0.1; 511], 16000);
        assert!(matches!(compute_mel(&audio, &cfg), Err(Error::AudioTooShort { .. })));
        assert!(matches!(compute_mel(&Audio::new(vec![], 16000), &cfg), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = MelConfig::default();
        let mel = compute_mel(&Audio::new(vec![0.0; 4000], 16000), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(mel.iter().all(|&v| v == floor));
    }

    /// Direct O(N^2) DFT power spectrum of one windowed frame.
    fn dft_power(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn sine_peak_band_matches_direct_dft() {
        let cfg = MelConfig::default();
        let audio = sine(440.0, 0.25, 0.5);
        let mel = compute_mel(&audio, &cfg).unwrap();

        // Oracle: window with an independently written Hann, direct DFT,
        // triangle weights evaluated from the mel formula.
        let n = 512;
        let fmax_mel = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let centers: Vec<f64> = (0..50)
            .map(|i| 700.0 * (10f64.powf(fmax_mel * i as f64 / 49.0 / 2595.0) - 1.0))
            .collect();
        let frames = mel.ncols();
        let mut oracle_mean = vec![0.0; 48];
        for t in 0..frames {
            let frame: Vec<f64> = (0..n)
                .map(|i| audio.samples[t * 160 + i] * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()) / 2.0)
                .collect();
            let p = dft_power(&frame);
            for m in 0..48 {
                let mut e = 0.0;
                for (k, pk) in p.iter().enumerate() {
                    let f = k as f64 * 16000.0 / n as f64;
                    let (l, c, r) = (centers[m], centers[m + 1], centers[m + 2]);
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    e += w * pk;
                }
                let v = e.max(1e-7).ln();
                assert!((v - mel[[m, t]]).abs() < 1e-8, "band {m} frame {t}: {v} vs {}", mel[[m, t]]);
                oracle_mean[m] += v / frames as f64;
            }
        }
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let means: Vec<f64> = mel.rows().into_iter().map(|r| r.mean().unwrap()).collect();
        let peak = argmax(&means);
        assert_eq!(peak, argmax(&oracle_mean));
        assert!(centers[peak] < 440.0 && 440.0 < centers[peak + 2]);
    }

    #[test]
    fn louder_audio_never_lowers_log_mel() {
        let cfg = MelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-0.3..0.3)).collect();
        let quiet = compute_mel(&Audio::new(x.clone(), 16000), &cfg).unwrap();
        let loud = compute_mel(&Audio::new(x.iter().map(|v| v * 1.7).collect(), 16000), &cfg).unwrap();
        assert!(quiet.iter().zip(loud.iter()).all(|(q, l)| l >= q));
    }

    #[test]
    fn resamples_before_analysis() {
        let cfg = MelConfig::default();
        let audio = Audio::new(vec![0.0; 8000], 8000);
        assert_eq!(compute_mel(&audio, &cfg).unwrap().ncols(), 97);
    }

    #[test]
    fn patch_counts_and_slices() {
        let cfg = MelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mel = Array2::from_shape_fn((48, 97), |_| rng.random::<f64>());
        let seq = make_patches("u", &mel, &cfg).unwrap();
        assert_eq!(seq.len(), 21);
        assert!(!seq.padded);
        for (k, p) in seq.patches.iter().enumerate() {
            assert_eq!(p.dim(), (48, 15));
            assert_eq!(p, &mel.slice(s![.., k * 4..k * 4 + 15]));
        }

        let exact = Array2::from_shape_fn((48, 15), |(i, j)| (i * 15 + j) as f64);
        let seq = make_patches("u", &exact, &cfg).unwrap();
        assert_eq!(seq.patches, vec![exact]);
    }

    #[test]
    fn short_mel_is_padded() {
        let cfg = MelConfig::default();
        let mel = Array2::from_elem((48, 6), 2.0);
        let seq = make_patches("u", &mel, &cfg).unwrap();
        assert!(seq.padded);
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.patches[0][[0, 5]], 2.0);
        assert_eq!(seq.patches[0][[0, 6]], cfg.log_floor.ln());
        assert!(make_patches("u", &Array2::zeros((40, 20)), &cfg).is_err());
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = PatchCache::new(dir.path()).unwrap();
        let frontend = MelFrontend::new(MelConfig::default()).unwrap();
        let audio = sine(700.0, 0.4, 0.3);
        let fresh = cache.patches(&frontend, "u", &audio).unwrap();
        let key = PatchCache::key(&audio, frontend.config());
        let cached = cache.get(&key, "u", frontend.config()).unwrap().unwrap();
        assert_eq!(fresh.len(), cached.len());
        for (a, b) in fresh.patches.iter().zip(&cached.patches) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let direct = make_patches("u", &frontend.compute(&audio).unwrap(), frontend.config()).unwrap();
        assert_eq!(direct, cached);
    }

    #[test]
    fn config_validation() {
        let mut cfg = MelConfig::default();
        cfg.hop_ms = 40.0;
        assert!(cfg.validate().is_err());
        let mut cfg = MelConfig::default();
        cfg.n_mels = 0;
        assert!(cfg.validate().is_err());
    }
}
