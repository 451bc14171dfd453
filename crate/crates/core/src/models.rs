use std::path::Path;
use std::sync::Arc;

use crate::error::Result;
use crate::nn::registry::{
    EMA_INVERTER, SOURCE_EXTRACTOR, SPEAKER_ENCODER, SPEAKER_FEATURES, VOCODER_ENCODER, VOCODER_POST,
};
use crate::nn::{random_init_with, InitConfig, Model, Registry, WeightBundle};

/// Every network the pipeline runs, bound to weights. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Models {
    pub source: Arc<Model>,
    pub inverter: Arc<Model>,
    pub vocoder: Arc<Model>,
    pub post: Arc<Model>,
    pub speaker_features: Arc<Model>,
    pub speaker_encoder: Arc<Model>,
}

impl Models {
    /// Bind registry graphs to one bundle holding all their tensors.
    pub fn from_bundle(registry: &Registry, bundle: &WeightBundle) -> Result<Self> {
        let model = |name: &str| -> Result<Arc<Model>> {
            Ok(Arc::new(Model::new(registry.get(name)?.clone(), bundle)?))
        };
        Ok(Self {
            source: model(SOURCE_EXTRACTOR)?,
            inverter: model(EMA_INVERTER)?,
            vocoder: model(VOCODER_ENCODER)?,
            post: model(VOCODER_POST)?,
            speaker_features: model(SPEAKER_FEATURES)?,
            speaker_encoder: model(SPEAKER_ENCODER)?,
        })
    }

    pub fn load(registry: &Registry, weights: impl AsRef<Path>) -> Result<Self> {
        Self::from_bundle(registry, &WeightBundle::load(weights)?)
    }

    /// Synthetic weights for every graph; graph `i` is seeded with `seed + i`.
    pub fn random_bundle(registry: &Registry, init: InitConfig) -> WeightBundle {
        let mut bundle = WeightBundle::default();
        for (i, g) in registry.graphs.iter().enumerate() {
            bundle.extend(random_init_with(g, InitConfig { seed: init.seed.wrapping_add(i as u64), ..init }));
        }
        bundle
    }

    pub fn random(registry: &Registry, init: InitConfig) -> Result<Self> {
        Self::from_bundle(registry, &Self::random_bundle(registry, init))
    }
}
