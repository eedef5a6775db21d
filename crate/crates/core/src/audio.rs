//! WAV input/output and sample-rate conversion.

use std::path::Path;

use rubato::{FftFixedInOut, Resampler};

use crate::error::{Error, Result};

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Audio {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Returns the waveform at `target_rate`, resampling if needed.
    pub fn resampled(&self, target_rate: u32) -> Result<Audio> {
        if self.sample_rate == target_rate {
            return Ok(self.clone());
        }
        Ok(Audio::new(
            resample(&self.samples, self.sample_rate, target_rate)?,
            target_rate,
        ))
    }
}

/// Reads a 16-bit integer or 32-bit float PCM WAV file, mixing channels
/// down to mono.
pub fn read_wav(path: &Path) -> Result<Audio> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(Audio::new(samples, spec.sample_rate))
}

/// Writes mono 16-bit PCM. Samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, audio: &Audio) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Band-limited resampling of a whole signal. Output length is
/// `round(len * to / from)`, aligned to the input (resampler delay removed).
pub fn resample(samples: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == to {
        return Ok(samples.to_vec());
    }
    let expected = (samples.len() as f64 * to as f64 / from as f64).round() as usize;
    let mut resampler = FftFixedInOut::<f64>::new(from as usize, to as usize, 1024, 1)
        .map_err(|e| Error::Resample(e.to_string()))?;
    let delay = resampler.output_delay();
    let mut out = Vec::with_capacity(expected + delay);
    let mut pos = 0;
    while pos < samples.len() {
        let need = resampler.input_frames_next();
        let chunk = &samples[pos..(pos + need).min(samples.len())];
        let block = if chunk.len() == need {
            resampler.process(&[chunk], None)
        } else {
            resampler.process_partial(Some(&[chunk]), None)
        }
        .map_err(|e| Error::Resample(e.to_string()))?;
        out.extend_from_slice(&block[0]);
        pos += need;
    }
    while out.len() < expected + delay {
        let block = resampler
            .process_partial::<&[f64]>(None, None)
            .map_err(|e| Error::Resample(e.to_string()))?;
        if block[0].is_empty() {
            break;
        }
        out.extend_from_slice(&block[0]);
    }
    let mut aligned: Vec<f64> = out.into_iter().skip(delay).take(expected).collect();
    aligned.resize(expected, 0.0);
    Ok(aligned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let audio = Audio::new((0..800).map(|i| (i as f64 * 0.05).sin() * 0.5).collect(), 16000);
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.samples.len(), 800);
        for (a, b) in audio.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
    }

    #[test]
    fn missing_wav() {
        assert!(matches!(read_wav(Path::new("/nonexistent/x.wav")), Err(Error::MissingPath(_))));
    }

    #[test]
    fn resample_preserves_tone() {
        let from = 48000;
        let x: Vec<f64> = (0..48000).map(|i| (2.0 * PI * 440.0 * i as f64 / from as f64).sin()).collect();
        let y = resample(&x, from, 16000).unwrap();
        assert_eq!(y.len(), 16000);
        // Compare against the analytic tone away from the edges.
        let max_err = (2000..14000)
            .map(|i| (y[i] - (2.0 * PI * 440.0 * i as f64 / 16000.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 0.02, "max err {max_err}");
    }
}
