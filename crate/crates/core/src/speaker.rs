//! Offline speaker enrollment and FiLM conditioning.
//!
//! Enrollment runs the strided feature stack on raw audio (one 50 Hz frame
//! per 320 samples), the dilated encoder on those frames, and pools the
//! per-frame outputs weighted by the source extractor's periodicity.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::frontend::{frame_offline, Analyzer};
use crate::models::Models;
use crate::nn::registry::EMBED_DIM;
use crate::nn::{FilmParams, FrameMatrix, Model, TRUNK_OUTPUT};
use crate::source::{decode_frames, PitchGrid, RunningMedian, SourceFeatures};

pub const SPKE_MAGIC: &[u8; 4] = b"SPKE";
pub const SPKE_VERSION: u32 = 1;
pub const MIN_ENROLL_SAMPLES: usize = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub vec: Vec<f32>,
    pub source_id: String,
}

impl SpeakerEmbedding {
    pub fn new(vec: Vec<f32>, source_id: impl Into<String>) -> Result<Self> {
        if vec.len() != EMBED_DIM {
            return Err(Error::Structural(format!("embedding has {} dims, expected {EMBED_DIM}", vec.len())));
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("embedding is not finite".into()));
        }
        Ok(Self { vec, source_id: source_id.into() })
    }

    /// `SPKE` file: magic, version u32 LE, then 128 f32 LE.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(SPKE_MAGIC)?;
        w.write_all(&SPKE_VERSION.to_le_bytes())?;
        for v in &self.vec {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read, source_id: impl Into<String>) -> Result<Self> {
        let mut header = [0u8; 8];
        r.read_exact(&mut header).map_err(|e| Error::Length(format!("SPKE header: {e}")))?;
        if &header[..4] != SPKE_MAGIC {
            return Err(Error::Format("bad SPKE magic".into()));
        }
        let version = u32::from_le_bytes(header[4..].try_into().unwrap());
        if version != SPKE_VERSION {
            return Err(Error::Format(format!("unsupported SPKE version {version}")));
        }
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != EMBED_DIM * 4 {
            return Err(Error::Length(format!("SPKE body has {} bytes, expected {}", raw.len(), EMBED_DIM * 4)));
        }
        let vec = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Self::new(vec, source_id)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::read_from(std::fs::File::open(path)?, id)
    }
}

/// Result of enrolling one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Enrollment {
    pub embedding: SpeakerEmbedding,
    /// Median voiced f0 of the utterance, the target median for rescaling.
    pub median_f0: f64,
    pub voiced_frames: usize,
}

/// `sum_t w_t x_t / sum_t w_t`.
pub fn pool_weighted(features: &FrameMatrix, weights: &[f32]) -> Result<Vec<f32>> {
    if features.frames() == 0 || features.frames() != weights.len() {
        return Err(Error::Parameter(format!(
            "{} frames with {} weights",
            features.frames(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Parameter("weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().map(|&w| w as f64).sum();
    if total <= 0.0 {
        return Err(Error::Enrollment("pooling weights sum to zero (no voiced content)".into()));
    }
    let mut acc = vec![0.0f64; features.dim()];
    for (row, &w) in features.rows().zip(weights) {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += w as f64 * x as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / total) as f32).collect())
}

/// FiLM parameters the vocoder derives from an embedding.
pub fn film(embedding: &SpeakerEmbedding, vocoder: &Model) -> Result<FilmParams> {
    vocoder.film_params(&embedding.vec)
}

/// Source features of a whole utterance at 200 Hz.
pub fn source_track(utterance: &[f32], analyzer: &Analyzer, source: &Model) -> Result<Vec<SourceFeatures>> {
    let frames = frame_offline(utterance, analyzer);
    let rows: Vec<Vec<f32>> = frames.iter().map(|f| analyzer.network_mel(f)).collect();
    let input = FrameMatrix::from_rows(analyzer.spec().mel_bins, &rows)?;
    decode_frames(&source.infer_offline(&input, None)?, &PitchGrid::default())
}

/// Per-frame speaker encodings at 50 Hz.
pub fn speaker_frames(utterance: &[f32], models: &Models) -> Result<FrameMatrix> {
    let audio = FrameMatrix::from_flat(1, utterance.to_vec())?;
    let feats = models.speaker_features.infer_offline(&audio, None)?;
    let feats = feats.get(TRUNK_OUTPUT).ok_or_else(|| Error::Structural("feature stack has heads".into()))?;
    let enc = models.speaker_encoder.infer_offline(feats, None)?;
    enc.get("embedding").cloned().ok_or_else(|| Error::Structural("speaker encoder has no embedding head".into()))
}

/// Mean periodicity over each group of `ratio` consecutive source frames.
pub fn group_weights(track: &[SourceFeatures], ratio: usize, n: usize) -> Vec<f32> {
    (0..n)
        .map(|t| {
            let group = &track[(t * ratio).min(track.len())..((t + 1) * ratio).min(track.len())];
            if group.is_empty() {
                0.0
            } else {
                group.iter().map(|f| f.periodicity).sum::<f32>() / group.len() as f32
            }
        })
        .collect()
}

pub fn enroll(utterance: &[f32], analyzer: &Analyzer, models: &Models, id: &str) -> Result<Enrollment> {
    if utterance.len() < MIN_ENROLL_SAMPLES {
        return Err(Error::Parameter(format!(
            "enrollment needs at least {MIN_ENROLL_SAMPLES} samples, got {}",
            utterance.len()
        )));
    }
    if utterance.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("utterance has non-finite samples".into()));
    }
    let track = source_track(utterance, analyzer, &models.source)?;
    let mut median = RunningMedian::new(0.0);
    for f in &track {
        median.update(f);
    }
    if median.is_empty() {
        return Err(Error::Enrollment("utterance has no voiced frames".into()));
    }
    let frames = speaker_frames(utterance, models)?;
    let ratio = (models.speaker_features.graph().total_stride() / analyzer.spec().hop).max(1);
    let n = frames.frames().min(track.len().div_ceil(ratio));
    let weights = group_weights(&track, ratio, n);
    let vec = pool_weighted(&frames.slice(0, n), &weights)?;
    Ok(Enrollment {
        embedding: SpeakerEmbedding::new(vec, id)?,
        median_f0: median.median(),
        voiced_frames: median.len(),
    })
}
