//! Spectral feature frontend.
//!
//! Turns a 16 kHz mono stream into 200 Hz spectral frames (linear STFT
//! magnitude, log-mel, MFCC). Frame `i` is centred on sample `i * hop` and
//! spans samples `i*hop - (window/2 - 1) ..= i*hop + window/2`, so a frame
//! needs exactly `window/2` samples of lookahead past its centre. Indices
//! before the start of the stream are reflected; the offline framer also
//! reflects past the end of the signal.

use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive floor inside the log compression, keeps silence finite.
pub const LOG_FLOOR: f32 = 1e-5;

/// Framing and filterbank parameters shared by every component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub mfcc_coeffs: usize,
    pub fmin: f32,
    pub fmax: f32,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window: 1024,
            hop: 80,
            mel_bins: 80,
            mfcc_coeffs: 20,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl FrameSpec {
    /// Feature frame rate in Hz.
    pub const FRAME_RATE: u32 = 200;

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop == 0 || self.window == 0 {
            return Err(Error::Config("frame spec has a zero field".into()));
        }
        if self.hop as u64 * Self::FRAME_RATE as u64 != self.sample_rate as u64 {
            return Err(Error::Config(format!(
                "hop {} is not sample_rate/{} for sample_rate {}",
                self.hop,
                Self::FRAME_RATE,
                self.sample_rate
            )));
        }
        if !self.window.is_power_of_two() {
            return Err(Error::Config(format!("window {} is not a power of two", self.window)));
        }
        if self.mel_bins == 0 || self.mfcc_coeffs == 0 || self.mfcc_coeffs > self.mel_bins {
            return Err(Error::Config("mfcc_coeffs must be in 1..=mel_bins".into()));
        }
        let nyquist = self.sample_rate as f32 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Config(format!(
                "mel range [{}, {}] outside [0, {nyquist}]",
                self.fmin, self.fmax
            )));
        }
        Ok(())
    }

    /// Samples of lookahead past a frame centre.
    pub fn lookahead(&self) -> usize {
        self.window / 2
    }

    pub fn n_freqs(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn lookahead_ms(&self) -> f64 {
        self.lookahead() as f64 * 1000.0 / self.sample_rate as f64
    }
}

/// One analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub index: usize,
    pub mel: Vec<f32>,
    pub mfcc: Vec<f32>,
    pub lin_mag: Vec<f32>,
}

/// Mean of the linear magnitude bins.
pub fn loudness_label(frame: &SpectralFrame) -> f32 {
    if frame.lin_mag.is_empty() {
        return 0.0;
    }
    let sum: f64 = frame.lin_mag.iter().map(|&m| m as f64).sum();
    (sum / frame.lin_mag.len() as f64) as f32
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, stored as one contiguous span per row.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    rows: Vec<(usize, Vec<f32>)>,
    n_freqs: usize,
}

impl MelFilterbank {
    pub fn new(spec: &FrameSpec) -> Self {
        let n_freqs = spec.n_freqs();
        let m_lo = hz_to_mel(spec.fmin as f64);
        let m_hi = hz_to_mel(spec.fmax as f64);
        let edges: Vec<f64> = (0..spec.mel_bins + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (spec.mel_bins + 1) as f64))
            .collect();
        let bin_hz = spec.sample_rate as f64 / spec.window as f64;

        let rows = (0..spec.mel_bins)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f32)> = (0..n_freqs)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - lo) / (mid - lo);
                        let down = (hi - f) / (hi - mid);
                        let w = up.min(down);
                        (w > 0.0).then_some((k, w as f32))
                    })
                    .collect();
                match (weights.first(), weights.last()) {
                    (Some(&(start, _)), Some(&(end, _))) => {
                        let mut dense = vec![0.0; end - start + 1];
                        for (k, w) in weights {
                            dense[k - start] = w;
                        }
                        (start, dense)
                    }
                    _ => (0, Vec::new()),
                }
            })
            .collect();
        Self { rows, n_freqs }
    }

    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    pub fn n_freqs(&self) -> usize {
        self.n_freqs
    }

    /// Dense `[n_mels][n_freqs]` copy of the filter weights.
    pub fn dense(&self) -> Vec<Vec<f32>> {
        self.rows
            .iter()
            .map(|(start, w)| {
                let mut row = vec![0.0; self.n_freqs];
                row[*start..*start + w.len()].copy_from_slice(w);
                row
            })
            .collect()
    }

    /// Log-compressed mel energies of a magnitude spectrum.
    pub fn apply_log(&self, mag: &[f32], out: &mut Vec<f32>) {
        out.clear();
        out.extend(self.rows.iter().map(|(start, w)| {
            let mut acc = 0.0f32;
            for (wk, mk) in w.iter().zip(&mag[*start..*start + w.len()]) {
                acc += wk * mk;
            }
            (acc + LOG_FLOOR).ln()
        }));
    }
}

/// Orthonormal DCT-II truncated to the first `n_out` coefficients.
#[derive(Debug, Clone)]
pub struct Dct {
    basis: Vec<f32>,
    n_in: usize,
    n_out: usize,
}

impl Dct {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let mut basis = Vec::with_capacity(n_in * n_out);
        for q in 0..n_out {
            let scale = if q == 0 { (1.0 / n_in as f64).sqrt() } else { (2.0 / n_in as f64).sqrt() };
            for m in 0..n_in {
                let arg = std::f64::consts::PI * q as f64 * (m as f64 + 0.5) / n_in as f64;
                basis.push((scale * arg.cos()) as f32);
            }
        }
        Self { basis, n_in, n_out }
    }

    pub fn apply(&self, input: &[f32], out: &mut Vec<f32>) {
        out.clear();
        out.extend(self.basis.chunks_exact(self.n_in).map(|row| {
            let mut acc = 0.0f32;
            for (b, x) in row.iter().zip(input) {
                acc += b * x;
            }
            acc
        }));
        debug_assert_eq!(out.len(), self.n_out);
    }
}

/// Windowed FFT plus filterbank; the single code path both framers use.
#[derive(Clone)]
pub struct Analyzer {
    spec: FrameSpec,
    fft: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
    mel: MelFilterbank,
    dct: Dct,
    silence_mfcc: Vec<f32>,
}

impl std::fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Analyzer").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl Analyzer {
    pub fn new(spec: &FrameSpec) -> Result<Self> {
        spec.validate()?;
        let fft = FftPlanner::<f32>::new().plan_fft_forward(spec.window);
        // periodic Hann
        let window = (0..spec.window)
            .map(|n| {
                let phase = 2.0 * std::f64::consts::PI * n as f64 / spec.window as f64;
                (0.5 - 0.5 * phase.cos()) as f32
            })
            .collect();
        let mel = MelFilterbank::new(spec);
        let dct = Dct::new(spec.mel_bins, spec.mfcc_coeffs);
        let mut silence_mfcc = Vec::new();
        dct.apply(&vec![LOG_FLOOR.ln(); spec.mel_bins], &mut silence_mfcc);
        Ok(Self { spec: spec.clone(), fft, window, mel, dct, silence_mfcc })
    }

    pub fn spec(&self) -> &FrameSpec {
        &self.spec
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.mel
    }

    pub fn dct(&self) -> &Dct {
        &self.dct
    }

    /// Analyse one `window`-length block of samples.
    pub fn analyze(&self, index: usize, block: &[f32]) -> SpectralFrame {
        debug_assert_eq!(block.len(), self.spec.window);
        let mut buf: Vec<Complex32> = block
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex32::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        let lin_mag: Vec<f32> = buf[..self.spec.n_freqs()].iter().map(|c| c.norm()).collect();
        let mut mel = Vec::with_capacity(self.spec.mel_bins);
        self.mel.apply_log(&lin_mag, &mut mel);
        let mut mfcc = Vec::with_capacity(self.spec.mfcc_coeffs);
        self.dct.apply(&mel, &mut mfcc);
        SpectralFrame { index, mel, mfcc, lin_mag }
    }

    /// Log-mel referenced to the silence floor: silence maps to all zeros.
    pub fn network_mel(&self, frame: &SpectralFrame) -> Vec<f32> {
        let floor = LOG_FLOOR.ln();
        frame.mel.iter().map(|m| m - floor).collect()
    }

    /// MFCC referenced to the MFCC of silence.
    pub fn network_mfcc(&self, frame: &SpectralFrame) -> Vec<f32> {
        frame.mfcc.iter().zip(&self.silence_mfcc).map(|(c, s)| c - s).collect()
    }
}

/// Mirror an index into `0..len` without repeating the edge sample.
pub(crate) fn reflect_index(idx: i64, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let m = idx.rem_euclid(period);
    if m >= len as i64 {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// First sample index covered by the frame centred at `center`.
fn frame_start(center: usize, spec: &FrameSpec) -> i64 {
    center as i64 + 1 - spec.lookahead() as i64
}

/// Frame a complete signal, reflecting at both ends. Yields `ceil(len/hop)`
/// frames; an empty signal yields none.
pub fn frame_offline(signal: &[f32], analyzer: &Analyzer) -> Vec<SpectralFrame> {
    let spec = analyzer.spec();
    if signal.is_empty() {
        return Vec::new();
    }
    let n_frames = signal.len().div_ceil(spec.hop);
    let mut block = vec![0.0f32; spec.window];
    (0..n_frames)
        .map(|i| {
            let start = frame_start(i * spec.hop, spec);
            for (j, slot) in block.iter_mut().enumerate() {
                *slot = signal[reflect_index(start + j as i64, signal.len())];
            }
            analyzer.analyze(i, &block)
        })
        .collect()
}

/// Incremental framer for a live stream.
///
/// Keeps at most `window + chunk` samples. Reflection is applied only at the
/// start of the stream; every later sample a frame needs is real input.
#[derive(Debug, Clone)]
pub struct StreamFramer {
    analyzer: Analyzer,
    chunk_len: usize,
    /// Absolute index of `pending[0]`.
    base: usize,
    pending: Vec<f32>,
    received: usize,
    emitted_frames: usize,
}

impl StreamFramer {
    pub fn new(analyzer: Analyzer, chunk_len: usize) -> Result<Self> {
        let hop = analyzer.spec().hop;
        if chunk_len == 0 || chunk_len % hop != 0 {
            return Err(Error::Sizing(format!("chunk length {chunk_len} is not a multiple of hop {hop}")));
        }
        let cap = analyzer.spec().window + chunk_len;
        Ok(Self {
            analyzer,
            chunk_len,
            base: 0,
            pending: Vec::with_capacity(cap),
            received: 0,
            emitted_frames: 0,
        })
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    pub fn emitted_frames(&self) -> usize {
        self.emitted_frames
    }

    pub fn received(&self) -> usize {
        self.received
    }

    /// Samples currently buffered.
    pub fn buffered(&self) -> usize {
        self.pending.len()
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    /// Accept one chunk and return every frame whose lookahead is now complete.
    pub fn push_samples(&mut self, chunk: &[f32]) -> Result<Vec<SpectralFrame>> {
        if chunk.len() != self.chunk_len {
            return Err(Error::Sizing(format!(
                "chunk has {} samples, expected {}",
                chunk.len(),
                self.chunk_len
            )));
        }
        if let Some(pos) = chunk.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at offset {pos}")));
        }
        self.pending.extend_from_slice(chunk);
        self.received += chunk.len();

        let spec = self.analyzer.spec().clone();
        let mut frames = Vec::new();
        let mut block = vec![0.0f32; spec.window];
        loop {
            let center = self.emitted_frames * spec.hop;
            // the newest sample this frame reads is center + lookahead
            if center + spec.lookahead() >= self.received {
                break;
            }
            let start = frame_start(center, &spec);
            for (j, slot) in block.iter_mut().enumerate() {
                let idx = start + j as i64;
                let abs = if idx < 0 { (-idx) as usize } else { idx as usize };
                *slot = self.pending[abs - self.base];
            }
            frames.push(self.analyzer.analyze(self.emitted_frames, &block));
            self.emitted_frames += 1;
        }

        let next_start = frame_start(self.emitted_frames * spec.hop, &spec).max(0) as usize;
        if next_start > self.base {
            self.pending.drain(..next_start - self.base);
            self.base = next_start;
        }
        Ok(frames)
    }

    #[doc(hidden)]
    pub fn corrupt_for_test(&mut self) {
        for x in self.pending.iter_mut() {
            *x += 0.25;
        }
    }
}
