//! The definition-generation network: token/type/position embeddings, a
//! bidirectional encoder over `[BOS] word [SEP] example [EOS]`, an affine
//! bridge into decoder space, and a causal transformer decoder that
//! cross-attends to the bridged memory.

mod checkpoint;
mod config;
mod forward;
mod input;
mod params;

pub use checkpoint::{
    checkpoint_bytes, import_decoder_embeddings, load_checkpoint, parse_checkpoint,
    save_checkpoint, verify_vocab_hash,
};
pub use config::{Activation, ModelConfig};
pub use forward::{teacher_forcing_pair, ForwardPass, LAYER_NORM_EPS};
pub use input::{build_input, EncodedInput};
pub use params::{init_params, is_encoder_param, parameter_specs, ParamSet};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    /// Freshly initialized model; the seed fixes every random draw.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }
}
