//! Articulatory feature frames: EMA inversion, label interpolation and the
//! 15-channel vocoder input layout.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::registry::{ARTIC_DIM, EMA_DIM};
use crate::nn::{ConvStreamState, FrameMatrix, Model};
use crate::source::SourceFeatures;

/// Bound on normalised EMA coordinates.
pub const EMA_CLAMP: f32 = 10.0;

/// Twelve EMA coordinates: (x, y) for lower incisor, upper lip, lower lip,
/// tongue tip, tongue blade and tongue dorsum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EmaFrame {
    pub coords: [f32; EMA_DIM],
}

impl EmaFrame {
    pub fn from_slice(v: &[f32]) -> Result<Self> {
        let coords: [f32; EMA_DIM] = v
            .try_into()
            .map_err(|_| Error::Structural(format!("EMA frame needs {EMA_DIM} values, got {}", v.len())))?;
        Ok(Self { coords })
    }
}

/// One 200 Hz vocoder input frame. Flattened order is
/// `[f0, periodicity, loudness, ema x 12]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArticFrame {
    pub f0: f64,
    pub periodicity: f32,
    pub loudness: f32,
    pub ema: EmaFrame,
}

impl ArticFrame {
    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(ARTIC_DIM);
        v.push(self.f0 as f32);
        v.push(self.periodicity);
        v.push(self.loudness);
        v.extend_from_slice(&self.ema.coords);
        v
    }

    pub fn from_slice(v: &[f32]) -> Result<Self> {
        if v.len() != ARTIC_DIM {
            return Err(Error::Structural(format!("artic frame needs {ARTIC_DIM} values, got {}", v.len())));
        }
        Ok(Self { f0: v[0] as f64, periodicity: v[1], loudness: v[2], ema: EmaFrame::from_slice(&v[3..])? })
    }

    /// Network input: like [`to_vec`](Self::to_vec) but with f0 as
    /// `ln(Hz) / 6`, and 0 for unvoiced frames.
    pub fn network_input(&self) -> [f32; ARTIC_DIM] {
        let mut v = [0.0; ARTIC_DIM];
        v[0] = if self.f0 > 0.0 { (self.f0.ln() / 6.0) as f32 } else { 0.0 };
        v[1] = self.periodicity;
        v[2] = self.loudness;
        v[3..].copy_from_slice(&self.ema.coords);
        v
    }
}

/// Combine source features and EMA for the same frame.
pub fn assemble(source: &SourceFeatures, ema: &EmaFrame) -> ArticFrame {
    ArticFrame { f0: source.f0, periodicity: source.periodicity, loudness: source.loudness, ema: *ema }
}

fn ema_frames(heads: &indexmap::IndexMap<String, FrameMatrix>) -> Result<Vec<EmaFrame>> {
    let m = heads.get("ema").ok_or_else(|| Error::Structural("inverter has no ema head".into()))?;
    m.rows()
        .map(|r| {
            let mut f = EmaFrame::from_slice(r)?;
            for c in &mut f.coords {
                *c = c.clamp(-EMA_CLAMP, EMA_CLAMP);
            }
            Ok(f)
        })
        .collect()
}

/// Run the inverter on MFCC frames (network-referenced), streaming.
pub fn invert_frames(model: &Model, state: &mut ConvStreamState, mfcc: &FrameMatrix) -> Result<Vec<EmaFrame>> {
    ema_frames(&model.infer_streaming(state, mfcc, None)?)
}

pub fn invert_offline(model: &Model, mfcc: &FrameMatrix) -> Result<Vec<EmaFrame>> {
    ema_frames(&model.infer_offline(mfcc, None)?)
}

/// Upsample 50 Hz EMA labels to 200 Hz by linear interpolation.
/// `N` frames become `4 * (N - 1) + 1`.
pub fn interpolate_labels(ema_50hz: &[EmaFrame]) -> Result<Vec<EmaFrame>> {
    if ema_50hz.len() < 2 {
        return Err(Error::Parameter(format!("need at least 2 frames, got {}", ema_50hz.len())));
    }
    let mut out = Vec::with_capacity(4 * (ema_50hz.len() - 1) + 1);
    for pair in ema_50hz.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        for j in 0..4 {
            let (wa, wb) = ((4 - j) as f32, j as f32);
            let mut f = EmaFrame::default();
            for c in 0..EMA_DIM {
                f.coords[c] = (wa * a.coords[c] + wb * b.coords[c]) / 4.0;
            }
            out.push(f);
        }
    }
    out.push(*ema_50hz.last().unwrap());
    Ok(out)
}

/// Header of the `EMA0` matrix format: magic, rows, cols, rate (u32 LE each),
/// followed by `rows * cols` little-endian f32 values in row-major order.
pub const EMA0_MAGIC: &[u8; 4] = b"EMA0";

pub fn write_ema0(mut w: impl Write, m: &FrameMatrix, rate_hz: u32) -> Result<()> {
    w.write_all(EMA0_MAGIC)?;
    w.write_all(&(m.frames() as u32).to_le_bytes())?;
    w.write_all(&(m.dim() as u32).to_le_bytes())?;
    w.write_all(&rate_hz.to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_ema0(mut r: impl Read) -> Result<(FrameMatrix, u32)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| Error::Length(format!("EMA0 header: {e}")))?;
    if &header[..4] != EMA0_MAGIC {
        return Err(Error::Format("bad EMA0 magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols, rate) = (word(4), word(8), word(12) as u32);
    let mut raw = vec![0u8; rows * cols * 4];
    r.read_exact(&mut raw).map_err(|e| Error::Length(format!("EMA0 data: {e}")))?;
    let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let m = if cols == 0 { FrameMatrix::new(0) } else { FrameMatrix::from_flat(cols, data)? };
    Ok((m, rate))
}
