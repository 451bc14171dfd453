use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
    Sigmoid,
    /// Softmax across the channels of one frame.
    Softmax,
}

impl Activation {
    pub fn apply(self, v: &mut [f32]) {
        match self {
            Activation::Identity => {}
            Activation::Elu => v.iter_mut().for_each(|x| {
                if *x < 0.0 {
                    *x = x.exp_m1();
                }
            }),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
            Activation::Softmax => softmax_in_place(v),
        }
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax_in_place(v: &mut [f32]) {
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn one() -> usize {
    1
}

/// One causal convolution layer. Tap `k` of a kernel of size `K` reads the
/// input `(K - 1 - k) * dilation` frames back, so tap 0 is the oldest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerCfg {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    #[serde(default = "one")]
    pub stride: usize,
    pub activation: Activation,
    #[serde(default)]
    pub residual: bool,
}

impl ConvLayerCfg {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize, activation: Activation) -> Self {
        Self { in_ch, out_ch, kernel, dilation, stride: 1, activation, residual: false }
    }

    pub fn residual(mut self) -> Self {
        self.residual = true;
        self
    }

    pub fn strided(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn receptive_field(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    /// Past frames a streaming layer must remember.
    pub fn history(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }
}

/// Linear output projection on the final layer's channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCfg {
    pub name: String,
    pub out_dim: usize,
}

/// Feature-wise modulation of one layer's output by a conditioning vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilmCfg {
    /// Index of the layer whose output is modulated.
    pub after_layer: usize,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub name: String,
    pub input_dim: usize,
    pub frame_rate: f64,
    pub layers: Vec<ConvLayerCfg>,
    #[serde(default)]
    pub heads: Vec<HeadCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub film: Option<FilmCfg>,
}

impl ModelGraph {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Structural(format!("graph {}: {msg}", self.name)));
        if self.layers.is_empty() {
            return err("no layers".into());
        }
        let mut ch = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_ch != ch {
                return err(format!("layer {i} expects {} channels, receives {ch}", l.in_ch));
            }
            if l.kernel == 0 || l.dilation == 0 || l.stride == 0 || l.out_ch == 0 {
                return err(format!("layer {i} has a zero kernel, dilation, stride or width"));
            }
            if l.residual && (l.in_ch != l.out_ch || l.stride != 1) {
                return err(format!("residual layer {i} must keep width and stride 1"));
            }
            ch = l.out_ch;
        }
        let mut names = std::collections::HashSet::new();
        for h in &self.heads {
            if h.out_dim == 0 || !names.insert(h.name.as_str()) {
                return err(format!("head {} is empty or duplicated", h.name));
            }
        }
        if let Some(f) = &self.film {
            if f.after_layer >= self.layers.len() || f.embed_dim == 0 {
                return err(format!("film after layer {} is out of range", f.after_layer));
            }
        }
        Ok(())
    }

    pub fn is_streamable(&self) -> bool {
        self.layers.iter().all(|l| l.stride == 1)
    }

    /// Input frames that can influence one output frame:
    /// `1 + sum((kernel - 1) * dilation * input_stride)`.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for l in &self.layers {
            rf += l.history() * jump;
            jump *= l.stride;
        }
        rf
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// Channel count of the final layer.
    pub fn trunk_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.out_ch)
    }

    pub fn head(&self, name: &str) -> Option<&HeadCfg> {
        self.heads.iter().find(|h| h.name == name)
    }

    /// Width modulated by FiLM, if the graph takes conditioning.
    pub fn film_width(&self) -> Option<usize> {
        self.film.as_ref().map(|f| self.layers[f.after_layer].out_ch)
    }

    pub fn layer_weight_name(&self, i: usize) -> String {
        format!("{}.layers.{i}.weight", self.name)
    }

    pub fn layer_bias_name(&self, i: usize) -> String {
        format!("{}.layers.{i}.bias", self.name)
    }

    pub fn head_weight_name(&self, head: &str) -> String {
        format!("{}.heads.{head}.weight", self.name)
    }

    pub fn head_bias_name(&self, head: &str) -> String {
        format!("{}.heads.{head}.bias", self.name)
    }

    /// `part` is `gamma` or `beta`.
    pub fn film_weight_name(&self, part: &str) -> String {
        format!("{}.film.{part}.weight", self.name)
    }

    pub fn film_bias_name(&self, part: &str) -> String {
        format!("{}.film.{part}.bias", self.name)
    }

    /// Every tensor the graph reads, with its shape, in a fixed order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            specs.push((self.layer_weight_name(i), vec![l.out_ch, l.in_ch, l.kernel]));
            specs.push((self.layer_bias_name(i), vec![l.out_ch]));
        }
        let trunk = self.trunk_dim();
        for h in &self.heads {
            specs.push((self.head_weight_name(&h.name), vec![h.out_dim, trunk]));
            specs.push((self.head_bias_name(&h.name), vec![h.out_dim]));
        }
        if let (Some(f), Some(width)) = (&self.film, self.film_width()) {
            for part in ["gamma", "beta"] {
                specs.push((self.film_weight_name(part), vec![width, f.embed_dim]));
                specs.push((self.film_bias_name(part), vec![width]));
            }
        }
        specs
    }
}
