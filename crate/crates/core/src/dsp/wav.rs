//! Mono 16-bit PCM WAV reading and writing.

use std::io::Cursor;
use std::path::Path;

use super::Waveform;
use crate::{fsutil, Error, Result};

pub fn encode_wav(w: &Waveform) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut writer =
            hound::WavWriter::new(&mut buf, spec).map_err(|e| Error::Audio(e.to_string()))?;
        for &s in &w.samples {
            let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer
                .write_sample(q)
                .map_err(|e| Error::Audio(e.to_string()))?;
        }
        writer.finalize().map_err(|e| Error::Audio(e.to_string()))?;
    }
    Ok(buf.into_inner())
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let reader =
        hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::Audio(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Audio(format!(
            "expected mono PCM16, got {} ch / {} bit",
            spec.channels, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32767.0).map(|v| v.max(-1.0)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Audio(e.to_string()))?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    fsutil::write_atomic(path, &encode_wav(w)?)
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    decode_wav(&fsutil::read(path)?).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))
}

/// Sample count and rate from the header only.
pub fn probe_wav(path: &Path) -> Result<(usize, u32)> {
    let r = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    Ok((r.duration() as usize, r.spec().sample_rate))
}
