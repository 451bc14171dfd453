//! Causal convolution stacks: graph description, weight container and the
//! offline/streaming inference engine.

mod engine;
mod graph;
pub mod registry;
mod weights;

pub use engine::{infer_offline, ConvStreamState, FilmParams, FrameMatrix, Model, TRUNK_OUTPUT};
pub use graph::{sigmoid, softmax_in_place, Activation, ConvLayerCfg, FilmCfg, HeadCfg, ModelGraph};
pub use registry::Registry;
pub use weights::{random_init, random_init_with, InitConfig, Tensor, WeightBundle};
