//! Harmonic-plus-noise vocoder driven by a FiLM-conditioned control encoder.

mod harmonic;
mod metric;
mod noise;

pub use harmonic::{one_hot, HarmonicControls, HarmonicSynth};
pub use metric::{multiscale_spectral_distance, MSS_FFT_SIZES};
pub use noise::{NoiseControls, NoiseSynth};

use indexmap::IndexMap;

use crate::articulatory::ArticFrame;
use crate::error::{Error, Result};
use crate::models::Models;
use crate::nn::registry::{ARTIC_DIM, HARMONICS, NOISE_BANDS};
use crate::nn::{sigmoid, softmax_in_place, ConvStreamState, FilmParams, FrameMatrix, Model, TRUNK_OUTPUT};

/// Decoded encoder outputs plus the f0 track they belong to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Controls {
    pub f0: Vec<f64>,
    pub harmonic: HarmonicControls,
    pub noise: NoiseControls,
}

impl Controls {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }
}

fn encoder_input(frames: &[ArticFrame]) -> FrameMatrix {
    let mut m = FrameMatrix::new(ARTIC_DIM);
    for f in frames {
        m.push_row(&f.network_input()).expect("fixed width");
    }
    m
}

/// Turn raw head outputs into controls. Loudness scales both branches, so a
/// silent input frame yields silent controls whatever the network says.
fn decode_heads(frames: &[ArticFrame], heads: &IndexMap<String, FrameMatrix>) -> Result<Controls> {
    let head = |name: &str, dim: usize| -> Result<&FrameMatrix> {
        let m = heads.get(name).ok_or_else(|| Error::Structural(format!("vocoder encoder has no {name} head")))?;
        if m.dim() != dim {
            return Err(Error::Structural(format!("head {name} has dim {}, expected {dim}", m.dim())));
        }
        Ok(m)
    };
    let harm = head("harmonic", HARMONICS + 1)?;
    let noise = head("noise", NOISE_BANDS)?;
    let mut out = Controls { f0: frames.iter().map(|f| f.f0).collect(), ..Default::default() };
    let mut bands = Vec::with_capacity(NOISE_BANDS);
    for (t, f) in frames.iter().enumerate() {
        let gain = f.loudness.max(0.0);
        let row = harm.row(t);
        out.harmonic.global_amp.push(sigmoid(row[0]) * gain);
        let mut dist = [0.0f32; HARMONICS];
        dist.copy_from_slice(&row[1..]);
        softmax_in_place(&mut dist);
        out.harmonic.harm_dist.push(dist);
        bands.clear();
        bands.extend(noise.row(t).iter().map(|&v| sigmoid(v) * gain));
        out.noise.band_mags.push_row(&bands)?;
    }
    Ok(out)
}

/// Streaming control encoder step.
pub fn encode_controls(
    frames: &[ArticFrame],
    film: Option<&FilmParams>,
    model: &Model,
    state: &mut ConvStreamState,
) -> Result<Controls> {
    decode_heads(frames, &model.infer_streaming(state, &encoder_input(frames), film)?)
}

pub fn encode_controls_offline(frames: &[ArticFrame], film: Option<&FilmParams>, model: &Model) -> Result<Controls> {
    decode_heads(frames, &model.infer_offline(&encoder_input(frames), film)?)
}

/// Session-owned synthesis state.
#[derive(Debug, Clone)]
pub struct SynthState {
    pub encoder: ConvStreamState,
    pub harmonic: HarmonicSynth,
    pub noise: NoiseSynth,
    pub post: ConvStreamState,
}

impl SynthState {
    pub fn new(models: &Models, sample_rate: u32, hop: usize, noise_seed: u64) -> Result<Self> {
        Ok(Self {
            encoder: models.vocoder.new_stream_state()?,
            harmonic: HarmonicSynth::new(sample_rate, hop),
            noise: NoiseSynth::new(hop, NOISE_BANDS, noise_seed),
            post: models.post.new_stream_state()?,
        })
    }

    /// Values held in ring buffers and overlap tails.
    pub fn buffered_values(&self) -> usize {
        self.encoder.buffered_values() + self.post.buffered_values() + self.noise.taps() - 1
    }
}

fn post_output(heads: IndexMap<String, FrameMatrix>) -> Result<Vec<f32>> {
    heads
        .into_iter()
        .find(|(k, _)| k == TRUNK_OUTPUT)
        .map(|(_, m)| m.into_vec())
        .ok_or_else(|| Error::Structural("post filter must have no heads".into()))
}

/// Harmonic plus noise, before the post filter.
pub fn excitation(controls: &Controls, harmonic: &mut HarmonicSynth, noise: &mut NoiseSynth) -> Vec<f32> {
    let mut h = harmonic.process(&controls.f0, &controls.harmonic);
    for (a, b) in h.iter_mut().zip(noise.process(&controls.noise)) {
        *a += b;
    }
    h
}

/// Synthesize `hop` samples per frame, continuing the stream in `state`.
pub fn synth_chunk(
    frames: &[ArticFrame],
    film: Option<&FilmParams>,
    models: &Models,
    state: &mut SynthState,
) -> Result<Vec<f32>> {
    let controls = encode_controls(frames, film, &models.vocoder, &mut state.encoder)?;
    let mixed = excitation(&controls, &mut state.harmonic, &mut state.noise);
    let input = FrameMatrix::from_flat(1, mixed)?;
    post_output(models.post.infer_streaming(&mut state.post, &input, None)?)
}

/// Whole-utterance synthesis from fresh state; the reference for [`synth_chunk`].
pub fn synth_offline(
    frames: &[ArticFrame],
    film: Option<&FilmParams>,
    models: &Models,
    sample_rate: u32,
    hop: usize,
    noise_seed: u64,
) -> Result<Vec<f32>> {
    let controls = encode_controls_offline(frames, film, &models.vocoder)?;
    let mut harmonic = HarmonicSynth::new(sample_rate, hop);
    let mut noise = NoiseSynth::new(hop, NOISE_BANDS, noise_seed);
    let mixed = excitation(&controls, &mut harmonic, &mut noise);
    post_output(models.post.infer_offline(&FrameMatrix::from_flat(1, mixed)?, None)?)
}
