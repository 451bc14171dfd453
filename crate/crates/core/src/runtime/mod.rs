//! Real-time conversion sessions and the offline reference path.

mod latency;

pub use latency::{
    measure_latency, ChunkProcessor, Clock, LatencyReport, ManualClock, MockProcessor, MonotonicClock,
    MIN_LATENCY_CHUNKS,
};

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::articulatory::{assemble, invert_frames, invert_offline, write_ema0, ArticFrame};
use crate::error::{Error, Result};
use crate::frontend::{frame_offline, Analyzer, FrameSpec, SpectralFrame, StreamFramer};
use crate::models::Models;
use crate::nn::registry::ARTIC_DIM;
use crate::nn::{ConvStreamState, FilmParams, FrameMatrix, InitConfig, Registry};
use crate::source::{decode_frames, rescale_pitch, PitchGrid, RunningMedian, SourceFeatures};
use crate::speaker::SpeakerEmbedding;
use crate::vocoder::{synth_chunk, synth_offline, SynthState};

/// Session configuration, loadable from JSON. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub frame_spec: FrameSpec,
    pub chunk_ms: u32,
    /// `"standard"`, `"compact"` or a path to a registry JSON file.
    pub registry: String,
    /// Weight bundle covering every graph. Without one, weights are random.
    pub weights: Option<PathBuf>,
    pub init_seed: u64,
    pub init_bias_scale: f32,
    pub default_median_hz: f64,
    pub noise_seed: u64,
    /// Write each chunk's vocoder input frames here as EMA0 files.
    pub debug_dump_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_spec: FrameSpec::default(),
            chunk_ms: 15,
            registry: "standard".into(),
            weights: None,
            init_seed: 0,
            init_bias_scale: 0.1,
            default_median_hz: crate::source::DEFAULT_MEDIAN_HZ,
            noise_seed: 0,
            debug_dump_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame_spec.validate()?;
        let samples = self.chunk_ms as u64 * self.frame_spec.sample_rate as u64;
        if self.chunk_ms == 0 || samples % 1000 != 0 || (samples / 1000) % self.frame_spec.hop as u64 != 0 {
            return Err(Error::Config(format!(
                "chunk of {} ms is not a whole number of {}-sample hops",
                self.chunk_ms, self.frame_spec.hop
            )));
        }
        if !(self.default_median_hz > 0.0) {
            return Err(Error::Config("default_median_hz must be positive".into()));
        }
        Ok(())
    }

    pub fn chunk_len(&self) -> usize {
        (self.chunk_ms as u64 * self.frame_spec.sample_rate as u64 / 1000) as usize
    }

    pub fn load_registry(&self) -> Result<Registry> {
        match self.registry.as_str() {
            "standard" => Ok(Registry::standard()),
            "compact" => Ok(Registry::compact()),
            path => Registry::load(path),
        }
    }

    pub fn init(&self) -> InitConfig {
        InitConfig { bias_scale: self.init_bias_scale, ..InitConfig::new(self.init_seed) }
    }
}

/// Samples the streaming output lags the offline output by: the frames a
/// stream is short of at any hop-aligned point, times the hop.
pub fn output_delay(spec: &FrameSpec) -> usize {
    (spec.lookahead() + 1).div_ceil(spec.hop).saturating_sub(1) * spec.hop
}

/// Config, analyzer and models shared by every session. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub analyzer: Analyzer,
    pub models: Models,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let registry = config.load_registry()?;
        let models = match &config.weights {
            Some(path) => Models::load(&registry, path)?,
            None => Models::random(&registry, config.init())?,
        };
        Self::with_models(config, models)
    }

    pub fn with_models(config: PipelineConfig, models: Models) -> Result<Self> {
        config.validate()?;
        let analyzer = Analyzer::new(&config.frame_spec)?;
        Ok(Self { config, analyzer, models })
    }

    pub fn chunk_len(&self) -> usize {
        self.config.chunk_len()
    }

    pub fn target(&self, embedding: SpeakerEmbedding, m_tgt: f64) -> Result<Target> {
        Target::new(embedding, m_tgt, &self.models)
    }
}

/// A conversion target: embedding, its median f0, and the FiLM parameters
/// derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub embedding: SpeakerEmbedding,
    pub m_tgt: f64,
    pub film: FilmParams,
}

impl Target {
    pub fn new(embedding: SpeakerEmbedding, m_tgt: f64, models: &Models) -> Result<Self> {
        if !(m_tgt > 0.0) || !m_tgt.is_finite() {
            return Err(Error::Parameter(format!("target median must be positive, got {m_tgt}")));
        }
        let film = crate::speaker::film(&embedding, &models.vocoder)?;
        Ok(Self { embedding, m_tgt, film })
    }
}

/// Per-frame conversion record shared by the streaming and offline paths.
fn convert_frames(
    source: &[SourceFeatures],
    ema: &[crate::articulatory::EmaFrame],
    median: &mut RunningMedian,
    m_tgt: f64,
) -> Result<Vec<ArticFrame>> {
    source
        .iter()
        .zip(ema)
        .map(|(s, e)| {
            let m_src = median.update(s);
            let mut frame = assemble(s, e);
            frame.f0 = rescale_pitch(s.f0, m_src, m_tgt)?;
            Ok(frame)
        })
        .collect()
}

fn network_inputs(analyzer: &Analyzer, frames: &[SpectralFrame]) -> Result<(FrameMatrix, FrameMatrix)> {
    let spec = analyzer.spec();
    let mut mel = FrameMatrix::new(spec.mel_bins);
    let mut mfcc = FrameMatrix::new(spec.mfcc_coeffs);
    for f in frames {
        mel.push_row(&analyzer.network_mel(f))?;
        mfcc.push_row(&analyzer.network_mfcc(f))?;
    }
    Ok((mel, mfcc))
}

/// What the instrumentation hook sees after each chunk.
#[derive(Debug, Clone, Default)]
pub struct DebugTap {
    pub chunk: u64,
    /// Vocoder input frames of the last chunk, with rescaled f0.
    pub last_frames: Vec<ArticFrame>,
    pub active_speaker: Option<String>,
    pub active_film: Option<FilmParams>,
    pub active_m_tgt: Option<f64>,
}

/// Sends speaker swaps to a session from another thread.
#[derive(Debug, Clone)]
pub struct SessionControl {
    tx: mpsc::Sender<Target>,
    models: Models,
}

impl SessionControl {
    pub fn swap_speaker(&self, embedding: SpeakerEmbedding, m_tgt: f64) -> Result<()> {
        let target = Target::new(embedding, m_tgt, &self.models)?;
        self.tx.send(target).map_err(|_| Error::State("session is gone".into()))
    }
}

/// One live conversion stream. Strictly sequential; move it between
/// threads, do not share it.
#[derive(Debug)]
pub struct Session {
    pipeline: Pipeline,
    framer: StreamFramer,
    source_state: ConvStreamState,
    inverter_state: ConvStreamState,
    synth: SynthState,
    median: RunningMedian,
    active: Option<Target>,
    slot: Option<Target>,
    control_rx: mpsc::Receiver<Target>,
    control_tx: mpsc::Sender<Target>,
    out: VecDeque<f32>,
    tap: DebugTap,
}

impl Session {
    pub fn new(pipeline: Pipeline) -> Result<Self> {
        let spec = pipeline.config.frame_spec.clone();
        let chunk = pipeline.chunk_len();
        let (control_tx, control_rx) = mpsc::channel();
        let models = &pipeline.models;
        Ok(Self {
            framer: StreamFramer::new(pipeline.analyzer.clone(), chunk)?,
            source_state: models.source.new_stream_state()?,
            inverter_state: models.inverter.new_stream_state()?,
            synth: SynthState::new(models, spec.sample_rate, spec.hop, pipeline.config.noise_seed)?,
            median: RunningMedian::new(pipeline.config.default_median_hz),
            active: None,
            slot: None,
            control_rx,
            control_tx,
            out: std::iter::repeat_n(0.0, output_delay(&spec)).collect(),
            tap: DebugTap::default(),
            pipeline,
        })
    }

    pub fn with_target(pipeline: Pipeline, embedding: SpeakerEmbedding, m_tgt: f64) -> Result<Self> {
        let mut s = Self::new(pipeline)?;
        s.swap_speaker(embedding, m_tgt)?;
        Ok(s)
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn control(&self) -> SessionControl {
        SessionControl { tx: self.control_tx.clone(), models: self.pipeline.models.clone() }
    }

    /// Stage a new target; it takes effect at the next chunk boundary. A
    /// later swap before that boundary replaces this one.
    pub fn swap_speaker(&mut self, embedding: SpeakerEmbedding, m_tgt: f64) -> Result<()> {
        self.slot = Some(self.pipeline.target(embedding, m_tgt)?);
        Ok(())
    }

    pub fn has_target(&self) -> bool {
        self.active.is_some() || self.slot.is_some()
    }

    pub fn debug(&self) -> &DebugTap {
        &self.tap
    }

    pub fn median(&self) -> &RunningMedian {
        &self.median
    }

    /// Floats held by buffers whose size must not grow with session length
    /// (everything except the running median).
    pub fn buffered_values(&self) -> usize {
        self.framer.buffered()
            + self.source_state.buffered_values()
            + self.inverter_state.buffered_values()
            + self.synth.buffered_values()
            + self.out.len()
    }

    fn apply_swaps(&mut self) {
        while let Ok(t) = self.control_rx.try_recv() {
            self.slot = Some(t);
        }
        if let Some(t) = self.slot.take() {
            self.tap.active_speaker = Some(t.embedding.source_id.clone());
            self.tap.active_film = Some(t.film.clone());
            self.tap.active_m_tgt = Some(t.m_tgt);
            self.active = Some(t);
        }
    }

    /// Convert one chunk. Output sample `n` is offline output sample
    /// `n - output_delay`.
    pub fn process_chunk(&mut self, chunk: &[f32]) -> Result<Vec<f32>> {
        self.apply_swaps();
        let target = self.active.as_ref().ok_or_else(|| Error::State("no target speaker selected".into()))?;
        let frames = self.framer.push_samples(chunk)?;
        let mut artic = Vec::new();
        if !frames.is_empty() {
            let models = &self.pipeline.models;
            let (mel, mfcc) = network_inputs(&self.pipeline.analyzer, &frames)?;
            let heads = models.source.infer_streaming(&mut self.source_state, &mel, None)?;
            let source = decode_frames(&heads, &PitchGrid::default())?;
            let ema = invert_frames(&models.inverter, &mut self.inverter_state, &mfcc)?;
            artic = convert_frames(&source, &ema, &mut self.median, target.m_tgt)?;
            let audio = synth_chunk(&artic, Some(&target.film), models, &mut self.synth)?;
            self.out.extend(audio);
        }
        if self.out.len() < chunk.len() {
            return Err(Error::State(format!("output queue underflow: {} < {}", self.out.len(), chunk.len())));
        }
        let result: Vec<f32> = self.out.drain(..chunk.len()).collect();
        if let Some(dir) = &self.pipeline.config.debug_dump_dir {
            let rows: Vec<Vec<f32>> = artic.iter().map(ArticFrame::to_vec).collect();
            let m = FrameMatrix::from_rows(ARTIC_DIM, &rows)?;
            let file = std::fs::File::create(dir.join(format!("chunk_{:06}.ema0", self.tap.chunk)))?;
            write_ema0(std::io::BufWriter::new(file), &m, FrameSpec::FRAME_RATE)?;
        }
        self.tap.chunk += 1;
        self.tap.last_frames = artic;
        Ok(result)
    }

    #[doc(hidden)]
    pub fn corrupt_for_test(&mut self) {
        self.framer.corrupt_for_test();
        self.source_state.corrupt_for_test();
    }
}

impl ChunkProcessor for Session {
    fn chunk_len(&self) -> usize {
        self.pipeline.chunk_len()
    }

    fn process(&mut self, chunk: &[f32]) -> Result<Vec<f32>> {
        self.process_chunk(chunk)
    }
}

/// Offline conversion result.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    /// `ceil(len / hop) * hop` samples, aligned with the input.
    pub samples: Vec<f32>,
    /// Vocoder input frames, f0 already rescaled.
    pub frames: Vec<ArticFrame>,
}

/// Whole-utterance conversion with the same per-frame math as [`Session`].
pub fn convert_offline(pipeline: &Pipeline, signal: &[f32], target: &Target) -> Result<Conversion> {
    if let Some(pos) = signal.iter().position(|x| !x.is_finite()) {
        return Err(Error::Data(format!("non-finite sample at {pos}")));
    }
    let spec = &pipeline.config.frame_spec;
    let frames = frame_offline(signal, &pipeline.analyzer);
    if frames.is_empty() {
        return Ok(Conversion { samples: Vec::new(), frames: Vec::new() });
    }
    let models = &pipeline.models;
    let (mel, mfcc) = network_inputs(&pipeline.analyzer, &frames)?;
    let source = decode_frames(&models.source.infer_offline(&mel, None)?, &PitchGrid::default())?;
    let ema = invert_offline(&models.inverter, &mfcc)?;
    let mut median = RunningMedian::new(pipeline.config.default_median_hz);
    let artic = convert_frames(&source, &ema, &mut median, target.m_tgt)?;
    let samples =
        synth_offline(&artic, Some(&target.film), models, spec.sample_rate, spec.hop, pipeline.config.noise_seed)?;
    Ok(Conversion { samples, frames: artic })
}

/// Feed `signal` through a session in chunks, zero-padding the last one.
pub fn convert_streaming(session: &mut Session, signal: &[f32]) -> Result<Vec<f32>> {
    let len = session.pipeline().chunk_len();
    let mut out = Vec::with_capacity(signal.len().next_multiple_of(len));
    let mut buf = vec![0.0f32; len];
    for chunk in signal.chunks(len) {
        buf[..chunk.len()].copy_from_slice(chunk);
        buf[chunk.len()..].iter_mut().for_each(|v| *v = 0.0);
        out.extend(session.process_chunk(&buf)?);
    }
    Ok(out)
}
