use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

/// Reads a WAV file, averaging channels down to mono.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let audio_err = |source| Error::Audio {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(audio_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(audio_err)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(audio_err)?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

/// Writes 16-bit PCM mono, clipping to [-1, 1].
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in wave.samples() {
        writer.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
