use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

fn spec() -> hound::WavSpec {
    hound::WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 16, sample_format: hound::SampleFormat::Int }
}

/// Quantise to 16-bit PCM, clamping to the representable range.
pub fn to_i16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn from_i16(s: i16) -> f32 {
    s as f32 / 32768.0
}

/// Read a mono 16 kHz 16-bit PCM WAV.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    read_wav_from(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn read_wav_from(r: impl std::io::Read) -> Result<Vec<f32>> {
    let mut reader = hound::WavReader::new(r)?;
    let s = reader.spec();
    if s.channels != 1 || s.sample_rate != SAMPLE_RATE || s.bits_per_sample != 16 || s.sample_format != hound::SampleFormat::Int {
        return Err(Error::Parameter(format!(
            "expected mono 16 kHz 16-bit PCM, got {} ch {} Hz {}-bit {:?}",
            s.channels, s.sample_rate, s.bits_per_sample, s.sample_format
        )));
    }
    reader.samples::<i16>().map(|s| Ok(from_i16(s?))).collect()
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<()> {
    let mut w = hound::WavWriter::create(path, spec())?;
    for &x in samples {
        w.write_sample(to_i16(x))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn wav_bytes(samples: &[f32]) -> Result<Vec<u8>> {
    let mut cur = std::io::Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cur, spec())?;
        for &x in samples {
            w.write_sample(to_i16(x))?;
        }
        w.finalize()?;
    }
    Ok(cur.into_inner())
}
