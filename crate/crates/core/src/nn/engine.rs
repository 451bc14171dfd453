//! Causal convolution inference, offline and streaming.
//!
//! Both paths gather the same taps in the same order (input channel major,
//! tap minor, oldest tap first) and accumulate sequentially, so a streaming
//! run reproduces the offline result for any chunking.

use indexmap::IndexMap;

use super::graph::{ConvLayerCfg, ModelGraph};
use super::weights::WeightBundle;
use crate::error::{Error, Result};

/// Key under which a head-less graph returns its final layer output.
pub const TRUNK_OUTPUT: &str = "out";

/// Time-major matrix: `frames x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl FrameMatrix {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self { dim, data: vec![0.0; frames * dim] }
    }

    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Structural(format!("{} values do not form rows of {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut m = Self::new(dim);
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Structural(format!("row of {} values, matrix dim {}", row.len(), self.dim)));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn append(&mut self, other: &FrameMatrix) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Structural(format!("append dim {} to dim {}", other.dim, self.dim)));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice(&self, start: usize, end: usize) -> FrameMatrix {
        Self { dim: self.dim, data: self.data[start * self.dim..end * self.dim].to_vec() }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Values of channel `c` over time.
    pub fn column(&self, c: usize) -> Vec<f32> {
        self.rows().map(|r| r[c]).collect()
    }

    pub fn max_abs_diff(&self, other: &FrameMatrix) -> f32 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }
}

/// Per-channel scale and shift. Modulation is `h * (1 + gamma) + beta`,
/// so all-zero parameters leave `h` unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl FilmParams {
    pub fn neutral(width: usize) -> Self {
        Self { gamma: vec![0.0; width], beta: vec![0.0; width] }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    pub fn modulate(&self, h: &mut [f32]) {
        for ((x, g), b) in h.iter_mut().zip(&self.gamma).zip(&self.beta) {
            *x = *x * (1.0 + g) + b;
        }
    }
}

#[derive(Debug, Clone)]
struct LayerWeights {
    cfg: ConvLayerCfg,
    /// `[out][in * kernel]`
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl LayerWeights {
    fn span(&self) -> usize {
        self.cfg.in_ch * self.cfg.kernel
    }

    /// Pre-activation output for one frame from gathered taps.
    fn conv(&self, taps: &[f32], out: &mut [f32]) {
        let span = self.span();
        for (o, y) in out.iter_mut().enumerate() {
            let w = &self.weight[o * span..(o + 1) * span];
            let mut acc = self.bias[o];
            for (wj, xj) in w.iter().zip(taps) {
                acc += wj * xj;
            }
            *y = acc;
        }
    }

    /// Activation and residual on a pre-activation frame.
    fn finish(&self, input: &[f32], out: &mut [f32]) {
        self.cfg.activation.apply(out);
        if self.cfg.residual {
            for (y, x) in out.iter_mut().zip(input) {
                *y += x;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Linear {
    name: String,
    out_dim: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Linear {
    fn apply(&self, x: &[f32], out: &mut Vec<f32>) {
        let n = x.len();
        out.clear();
        out.extend((0..self.out_dim).map(|o| {
            let mut acc = self.bias[o];
            for (w, v) in self.weight[o * n..(o + 1) * n].iter().zip(x) {
                acc += w * v;
            }
            acc
        }));
    }
}

#[derive(Debug, Clone)]
struct FilmWeights {
    gamma: Linear,
    beta: Linear,
}

/// A graph bound to validated weights. Immutable; share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct Model {
    graph: ModelGraph,
    layers: Vec<LayerWeights>,
    heads: Vec<Linear>,
    film: Option<FilmWeights>,
}

impl Model {
    pub fn new(graph: ModelGraph, bundle: &WeightBundle) -> Result<Self> {
        bundle.validate_for(&graph)?;
        let data = |name: String| bundle.get(&name).expect("validated").data.clone();
        let layers = graph
            .layers
            .iter()
            .enumerate()
            .map(|(i, cfg)| LayerWeights {
                cfg: cfg.clone(),
                weight: data(graph.layer_weight_name(i)),
                bias: data(graph.layer_bias_name(i)),
            })
            .collect();
        let heads = graph
            .heads
            .iter()
            .map(|h| Linear {
                name: h.name.clone(),
                out_dim: h.out_dim,
                weight: data(graph.head_weight_name(&h.name)),
                bias: data(graph.head_bias_name(&h.name)),
            })
            .collect();
        let film = graph.film_width().map(|width| {
            let linear = |part: &str| Linear {
                name: part.to_owned(),
                out_dim: width,
                weight: data(graph.film_weight_name(part)),
                bias: data(graph.film_bias_name(part)),
            };
            FilmWeights { gamma: linear("gamma"), beta: linear("beta") }
        });
        Ok(Self { graph, layers, heads, film })
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    /// FiLM parameters for a conditioning vector.
    pub fn film_params(&self, embedding: &[f32]) -> Result<FilmParams> {
        let (film, cfg) = match (&self.film, &self.graph.film) {
            (Some(f), Some(c)) => (f, c),
            _ => return Err(Error::Structural(format!("graph {} takes no conditioning", self.graph.name))),
        };
        if embedding.len() != cfg.embed_dim {
            return Err(Error::Structural(format!(
                "embedding has {} dims, {} expects {}",
                embedding.len(),
                self.graph.name,
                cfg.embed_dim
            )));
        }
        let (mut gamma, mut beta) = (Vec::new(), Vec::new());
        film.gamma.apply(embedding, &mut gamma);
        film.beta.apply(embedding, &mut beta);
        Ok(FilmParams { gamma, beta })
    }

    fn check_input(&self, input: &FrameMatrix) -> Result<()> {
        if input.dim() != self.graph.input_dim {
            return Err(Error::Structural(format!(
                "{} expects input dim {}, got {}",
                self.graph.name,
                self.graph.input_dim,
                input.dim()
            )));
        }
        Ok(())
    }

    fn check_film<'a>(&self, film: Option<&'a FilmParams>) -> Result<Option<(usize, &'a FilmParams)>> {
        match (&self.graph.film, film) {
            (Some(cfg), Some(p)) => {
                let width = self.graph.layers[cfg.after_layer].out_ch;
                if p.gamma.len() != width || p.beta.len() != width {
                    return Err(Error::Structural(format!(
                        "film params have width {}, {} modulates {width}",
                        p.gamma.len(),
                        self.graph.name
                    )));
                }
                Ok(Some((cfg.after_layer, p)))
            }
            (Some(_), None) => Ok(None),
            (None, Some(_)) => Err(Error::Structural(format!("graph {} takes no conditioning", self.graph.name))),
            (None, None) => Ok(None),
        }
    }

    fn apply_heads(&self, trunk: FrameMatrix) -> IndexMap<String, FrameMatrix> {
        let mut out = IndexMap::new();
        if self.heads.is_empty() {
            out.insert(TRUNK_OUTPUT.to_owned(), trunk);
            return out;
        }
        let mut buf = Vec::new();
        for h in &self.heads {
            let mut m = FrameMatrix::new(h.out_dim);
            for row in trunk.rows() {
                h.apply(row, &mut buf);
                m.data.extend_from_slice(&buf);
            }
            out.insert(h.name.clone(), m);
        }
        out
    }

    /// Whole-sequence inference with zero left padding. Strided layers emit
    /// one frame per `stride` inputs, read up to the last frame of their block.
    pub fn infer_offline(
        &self,
        input: &FrameMatrix,
        film: Option<&FilmParams>,
    ) -> Result<IndexMap<String, FrameMatrix>> {
        self.check_input(input)?;
        let film = self.check_film(film)?;
        let mut x = input.clone();
        for (li, lw) in self.layers.iter().enumerate() {
            let cfg = &lw.cfg;
            let (k, d, s) = (cfg.kernel, cfg.dilation, cfg.stride);
            let t_out = x.frames() / s;
            let mut y = FrameMatrix::zeros(t_out, cfg.out_ch);
            let mut taps = vec![0.0f32; lw.span()];
            for t in 0..t_out {
                let pos = t * s + s - 1;
                for tap in 0..k {
                    let lag = (k - 1 - tap) * d;
                    if pos >= lag {
                        let src = x.row(pos - lag);
                        for i in 0..cfg.in_ch {
                            taps[i * k + tap] = src[i];
                        }
                    } else {
                        for i in 0..cfg.in_ch {
                            taps[i * k + tap] = 0.0;
                        }
                    }
                }
                let out = y.row_mut(t);
                lw.conv(&taps, out);
                lw.finish(x.row(pos), out);
                if let Some((after, p)) = film {
                    if after == li {
                        p.modulate(out);
                    }
                }
            }
            x = y;
        }
        Ok(self.apply_heads(x))
    }

    pub fn new_stream_state(&self) -> Result<ConvStreamState> {
        ConvStreamState::new(&self.graph)
    }

    /// Process the next frames of a stream. Requires a stride-1 graph.
    pub fn infer_streaming(
        &self,
        state: &mut ConvStreamState,
        input: &FrameMatrix,
        film: Option<&FilmParams>,
    ) -> Result<IndexMap<String, FrameMatrix>> {
        self.check_input(input)?;
        state.check(&self.graph)?;
        let film = self.check_film(film)?;
        let n = input.frames();
        let mut x = input.clone();
        for (li, (lw, ring)) in self.layers.iter().zip(state.rings.iter_mut()).enumerate() {
            let cfg = &lw.cfg;
            let (k, d) = (cfg.kernel, cfg.dilation);
            let mut y = FrameMatrix::zeros(n, cfg.out_ch);
            let mut taps = vec![0.0f32; lw.span()];
            for p in 0..n {
                for tap in 0..k {
                    let lag = (k - 1 - tap) * d;
                    let src = if p >= lag { x.row(p - lag) } else { ring.get(lag - p) };
                    for i in 0..cfg.in_ch {
                        taps[i * k + tap] = src[i];
                    }
                }
                let out = y.row_mut(p);
                lw.conv(&taps, out);
                lw.finish(x.row(p), out);
                if let Some((after, fp)) = film {
                    if after == li {
                        fp.modulate(out);
                    }
                }
            }
            ring.push_rows(&x);
            x = y;
        }
        state.frames_seen += n;
        Ok(self.apply_heads(x))
    }
}

/// Fixed-capacity history of a layer's most recent input frames.
#[derive(Debug, Clone, PartialEq)]
struct Ring {
    cap: usize,
    ch: usize,
    data: Vec<f32>,
    /// Slot of the oldest frame, also the next write position.
    next: usize,
}

impl Ring {
    fn new(cap: usize, ch: usize) -> Self {
        Self { cap, ch, data: vec![0.0; cap * ch], next: 0 }
    }

    /// Frame `lag` steps before the current chunk, `1 <= lag <= cap`.
    fn get(&self, lag: usize) -> &[f32] {
        debug_assert!(lag >= 1 && lag <= self.cap);
        let slot = (self.next + self.cap - lag) % self.cap;
        &self.data[slot * self.ch..(slot + 1) * self.ch]
    }

    fn push_rows(&mut self, m: &FrameMatrix) {
        if self.cap == 0 {
            return;
        }
        let n = m.frames();
        for t in n.saturating_sub(self.cap)..n {
            let slot = self.next;
            self.data[slot * self.ch..(slot + 1) * self.ch].copy_from_slice(m.row(t));
            self.next = (self.next + 1) % self.cap;
        }
    }
}

/// Per-layer input history for one stream, zero-filled at stream start.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStreamState {
    graph_name: String,
    rings: Vec<Ring>,
    frames_seen: usize,
}

impl ConvStreamState {
    pub fn new(graph: &ModelGraph) -> Result<Self> {
        graph.validate()?;
        if !graph.is_streamable() {
            return Err(Error::Structural(format!("graph {} has strided layers", graph.name)));
        }
        Ok(Self {
            graph_name: graph.name.clone(),
            rings: graph.layers.iter().map(|l| Ring::new(l.history(), l.in_ch)).collect(),
            frames_seen: 0,
        })
    }

    fn check(&self, graph: &ModelGraph) -> Result<()> {
        let matches = self.graph_name == graph.name
            && self.rings.len() == graph.layers.len()
            && self.rings.iter().zip(&graph.layers).all(|(r, l)| r.cap == l.history() && r.ch == l.in_ch);
        if matches {
            Ok(())
        } else {
            Err(Error::Structural(format!(
                "stream state for {} does not fit graph {}",
                self.graph_name, graph.name
            )))
        }
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Floats held across all layer histories.
    pub fn buffered_values(&self) -> usize {
        self.rings.iter().map(|r| r.data.len()).sum()
    }

    #[doc(hidden)]
    pub fn corrupt_for_test(&mut self) {
        for r in &mut self.rings {
            for v in &mut r.data {
                *v += 1.0;
            }
        }
    }
}

/// Offline inference on a graph/bundle pair.
pub fn infer_offline(
    graph: &ModelGraph,
    weights: &WeightBundle,
    input: &FrameMatrix,
) -> Result<IndexMap<String, FrameMatrix>> {
    Model::new(graph.clone(), weights)?.infer_offline(input, None)
}
