use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Reads a 16-bit signed PCM, mono, 16 kHz RIFF file. Anything else is rejected.
pub fn read_wav(path: &Path, label: usize) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedWav(format!(
            "{}: expected 16-bit signed PCM, got {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedWav(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedWav(format!(
            "{}: expected {SAMPLE_RATE} Hz, got {} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32_768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(AudioClip::new(samples, label, path.display().to_string()))
}

/// Writes samples in [-1, 1] as 16-bit mono PCM at 16 kHz.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        let v = (s * 32_767.0).round().clamp(-32_768.0, 32_767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}
