//! 16-bit PCM WAV export for listening.

use std::path::Path;

use anyhow::{Context, Result};

/// Writes mono `audio` (nominal range ±1, clipped) at `rate` Hz.
pub fn write_wav16(path: &Path, audio: &[f32], rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).with_context(|| format!("creating {}", path.display()))?;
    for &v in audio {
        let s = (v.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(())
}
