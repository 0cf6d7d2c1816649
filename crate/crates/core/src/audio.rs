//! Waveform file I/O: 16-bit PCM WAV and raw little-endian f32.

use crate::codec::Waveform;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub fn write_wav<P: AsRef<Path>>(path: P, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Parse(format!("wav create: {e}")))?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        writer.write_sample(v).map_err(|e| Error::Parse(format!("wav write: {e}")))?;
    }
    writer.finalize().map_err(|e| Error::Parse(format!("wav finalize: {e}")))?;
    Ok(())
}

/// Reads 16-bit integer or 32-bit float WAV; channels are averaged to mono.
pub fn read_wav<P: AsRef<Path>>(path: P) -> Result<Waveform> {
    let mut reader =
        hound::WavReader::open(path).map_err(|e| Error::Parse(format!("wav open: {e}")))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let mono: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let denom = (1i64 << (spec.bits_per_sample - 1)) as f64;
            let samples: Vec<f64> = reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / denom))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("wav read: {e}")))?;
            downmix(&samples, channels)
        }
        hound::SampleFormat::Float => {
            let samples: Vec<f64> = reader
                .samples::<f32>()
                .map(|s| s.map(|v| v as f64))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("wav read: {e}")))?;
            downmix(&samples, channels)
        }
    };
    Ok(Waveform { samples: mono, sample_rate: spec.sample_rate })
}

fn downmix(interleaved: &[f64], channels: usize) -> Vec<f64> {
    if channels <= 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect()
}

/// Raw 32-bit little-endian float samples, no header; the sample rate comes
/// from the runtime config.
pub fn write_raw_f32<P: AsRef<Path>>(path: P, w: &Waveform) -> Result<()> {
    let mut buf = Vec::with_capacity(w.samples.len() * 4);
    for &s in &w.samples {
        buf.extend_from_slice(&(s as f32).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_raw_f32<P: AsRef<Path>>(path: P, sample_rate: u32) -> Result<Waveform> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Parse("raw f32 file length not a multiple of 4".into()));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Waveform { samples, sample_rate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Waveform {
        Waveform {
            samples: (0..n).map(|i| (i as f64 / n as f64) * 1.6 - 0.8).collect(),
            sample_rate: 8000,
        }
    }

    #[test]
    fn wav_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = ramp(256);
        write_wav(&path, &w).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 8000);
        assert_eq!(r.samples.len(), 256);
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() < 1.0 / 16384.0, "{} vs {}", a, b);
        }
    }

    #[test]
    fn raw_roundtrip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.f32");
        let w = ramp(100);
        write_raw_f32(&path, &w).unwrap();
        let r = read_raw_f32(&path, 8000).unwrap();
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert_eq!(*a as f32, *b as f32);
        }
    }
}
