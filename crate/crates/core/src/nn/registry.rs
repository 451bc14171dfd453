//! Pinned topologies for every network in the pipeline.
//!
//! The 11-layer stacks share one shape: a kernel-3 input projection followed
//! by ten residual kernel-2 layers with dilations 1, 2, 4, ..., 512.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{Activation, ConvLayerCfg, FilmCfg, HeadCfg, ModelGraph};
use crate::error::{Error, Result};

pub const SOURCE_EXTRACTOR: &str = "source_extractor";
pub const EMA_INVERTER: &str = "ema_inverter";
pub const VOCODER_ENCODER: &str = "vocoder_encoder";
pub const VOCODER_POST: &str = "vocoder_post";
pub const SPEAKER_FEATURES: &str = "speaker_features";
pub const SPEAKER_ENCODER: &str = "speaker_encoder";

pub const ALL_GRAPHS: [&str; 6] =
    [SOURCE_EXTRACTOR, EMA_INVERTER, VOCODER_ENCODER, VOCODER_POST, SPEAKER_FEATURES, SPEAKER_ENCODER];

pub const PITCH_BINS: usize = 360;
pub const EMA_DIM: usize = 12;
pub const ARTIC_DIM: usize = 15;
pub const HARMONICS: usize = 60;
pub const NOISE_BANDS: usize = 65;
pub const POST_KERNEL: usize = 65;
pub const EMBED_DIM: usize = 128;
/// FiLM modulates the output of the sixth encoder layer.
pub const FILM_AFTER_LAYER: usize = 5;

const STANDARD_JSON: &str = include_str!("../../registry/standard.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub graphs: Vec<ModelGraph>,
}

fn dilated_stack(input_dim: usize, hidden: usize) -> Vec<ConvLayerCfg> {
    let mut layers = vec![ConvLayerCfg::new(input_dim, hidden, 3, 1, Activation::Elu)];
    layers.extend((0..10).map(|i| ConvLayerCfg::new(hidden, hidden, 2, 1 << i, Activation::Elu).residual()));
    layers
}

fn head(name: &str, out_dim: usize) -> HeadCfg {
    HeadCfg { name: name.to_owned(), out_dim }
}

impl Registry {
    /// Build the registry for a trunk width and speaker-feature width.
    pub fn with_widths(hidden: usize, feature_width: usize, mel_bins: usize, mfcc: usize) -> Self {
        let source = ModelGraph {
            name: SOURCE_EXTRACTOR.into(),
            input_dim: mel_bins,
            frame_rate: 200.0,
            layers: dilated_stack(mel_bins, hidden),
            heads: vec![head("pitch", PITCH_BINS), head("periodicity", 1), head("loudness", 1)],
            film: None,
        };
        let mut inverter_layers = dilated_stack(mfcc, hidden);
        inverter_layers.push(ConvLayerCfg::new(hidden, hidden, 1, 1, Activation::Elu));
        let inverter = ModelGraph {
            name: EMA_INVERTER.into(),
            input_dim: mfcc,
            frame_rate: 200.0,
            layers: inverter_layers,
            heads: vec![head("ema", EMA_DIM)],
            film: None,
        };
        let vocoder = ModelGraph {
            name: VOCODER_ENCODER.into(),
            input_dim: ARTIC_DIM,
            frame_rate: 200.0,
            layers: dilated_stack(ARTIC_DIM, hidden),
            heads: vec![head("harmonic", 1 + HARMONICS), head("noise", NOISE_BANDS)],
            film: Some(FilmCfg { after_layer: FILM_AFTER_LAYER, embed_dim: EMBED_DIM }),
        };
        let post = ModelGraph {
            name: VOCODER_POST.into(),
            input_dim: 1,
            frame_rate: 16_000.0,
            layers: vec![ConvLayerCfg::new(1, 1, POST_KERNEL, 1, Activation::Identity)],
            heads: vec![],
            film: None,
        };
        // strides 5 * 2^6 = 320 samples per 50 Hz frame
        let kernels = [10, 3, 3, 3, 3, 2, 2];
        let strides = [5, 2, 2, 2, 2, 2, 2];
        let features = ModelGraph {
            name: SPEAKER_FEATURES.into(),
            input_dim: 1,
            frame_rate: 16_000.0,
            layers: kernels
                .iter()
                .zip(strides)
                .enumerate()
                .map(|(i, (&k, s))| {
                    let in_ch = if i == 0 { 1 } else { feature_width };
                    ConvLayerCfg::new(in_ch, feature_width, k, 1, Activation::Elu).strided(s)
                })
                .collect(),
            heads: vec![],
            film: None,
        };
        let encoder = ModelGraph {
            name: SPEAKER_ENCODER.into(),
            input_dim: feature_width,
            frame_rate: 50.0,
            layers: dilated_stack(feature_width, hidden),
            heads: vec![head("embedding", EMBED_DIM)],
            film: None,
        };
        Self { graphs: vec![source, inverter, vocoder, post, features, encoder] }
    }

    /// Full-size topology: 128-wide trunks, 512-wide speaker features.
    pub fn standard() -> Self {
        Self::from_json(STANDARD_JSON).expect("bundled registry parses")
    }

    /// Same topology with narrow trunks, for fast tests.
    pub fn compact() -> Self {
        Self::with_widths(16, 16, 80, 20)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let reg: Registry = serde_json::from_str(text)?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serialises")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.graphs {
            g.validate()?;
        }
        for name in ALL_GRAPHS {
            self.get(name)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ModelGraph> {
        self.graphs
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Structural(format!("registry has no graph {name}")))
    }
}
