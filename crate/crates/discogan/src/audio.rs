//! Audio clips and WAV file I/O.
//!
//! All audio in this crate is mono f64 in [-1, 1] at a single sample rate
//! (16 kHz for the shipped configs). WAV files are read from and written to
//! 16-bit PCM or 32-bit float; anything else is rejected rather than
//! silently resampled or downmixed.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{DiscoganError, Result};

/// Mono audio buffer with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioClip { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean power over the whole clip.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

/// Reads a mono WAV file (16-bit PCM or 32-bit float).
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DiscoganError::UnsupportedWav {
            path: path.to_path_buf(),
            detail: format!("expected mono, got {} channels", spec.channels),
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(DiscoganError::UnsupportedWav {
                path: path.to_path_buf(),
                detail: format!("unsupported format {fmt:?} at {bits} bits"),
            });
        }
    };
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes a mono WAV file. Samples outside [-1, 1] (or non-finite values)
/// are an error, never clipped.
pub fn write_wav(clip: &AudioClip, path: &Path, format: WavFormat) -> Result<()> {
    for (index, &value) in clip.samples.iter().enumerate() {
        if !value.is_finite() || value.abs() > 1.0 {
            return Err(DiscoganError::Clipping { value, index });
        }
    }
    let spec = match format {
        WavFormat::Pcm16 => WavSpec {
            channels: 1,
            sample_rate: clip.sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavFormat::Float32 => WavSpec {
            channels: 1,
            sample_rate: clip.sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    match format {
        WavFormat::Pcm16 => {
            for &value in &clip.samples {
                // 1.0 maps to 32767; the clipping check above bounds the cast.
                let q = (value * 32767.0).round() as i32;
                writer.write_sample(q.clamp(-32768, 32767) as i16)?;
            }
        }
        WavFormat::Float32 => {
            for &value in &clip.samples {
                writer.write_sample(value as f32)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float32_roundtrip_is_lossless_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let clip = AudioClip::new(vec![0.0, 0.25, -0.5, 0.999, -1.0], 16_000);
        write_wav(&clip, &path, WavFormat::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.len(), clip.len());
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn pcm16_roundtrip_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let clip = AudioClip::new((0..100).map(|i| (i as f64 / 100.0) - 0.5).collect(), 16_000);
        write_wav(&clip, &path, WavFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn write_rejects_clipping_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let clip = AudioClip::new(vec![0.0, 1.5], 16_000);
        let err = write_wav(&clip, &path, WavFormat::Pcm16).unwrap_err();
        match err {
            DiscoganError::Clipping { index, .. } => assert_eq!(index, 1),
            other => panic!("expected clipping error, got {other:?}"),
        }
    }

    #[test]
    fn read_rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(read_wav(&path).is_err());
    }
}
