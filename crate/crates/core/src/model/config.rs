//! Model hyperparameters and the parameter-count formula.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Encoder width.
    pub d_enc: usize,
    /// Decoder width; the affine bridge reconciles the two.
    pub d_dec: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub enc_heads: usize,
    pub dec_heads: usize,
    pub ffn_units: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub activation: Activation,
    /// Learned position embeddings by default; sinusoidal tables otherwise.
    pub sinusoidal_positions: bool,
    /// Share the output projection with the decoder token embedding.
    pub tie_output: bool,
}

impl ModelConfig {
    /// Full-size defaults: 6 decoder layers with 5 heads and 2048 FFN units,
    /// dropout 0.2.
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_enc: 512,
            d_dec: 640,
            enc_layers: 6,
            dec_layers: 6,
            enc_heads: 8,
            dec_heads: 5,
            ffn_units: 2048,
            max_positions: 512,
            dropout: 0.2,
            activation: Activation::Gelu,
            sinusoidal_positions: false,
            tie_output: false,
        }
    }

    /// Desk-scale profile; training runs finish in minutes.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_enc: 64,
            d_dec: 40,
            enc_layers: 2,
            dec_layers: 2,
            enc_heads: 4,
            dec_heads: 5,
            ffn_units: 128,
            max_positions: 128,
            dropout: 0.2,
            activation: Activation::Gelu,
            sinusoidal_positions: false,
            tie_output: false,
        }
    }

    /// Miniature profile for finite-difference gradient checking (< 5k params).
    pub fn grad_check(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_enc: 8,
            d_dec: 10,
            enc_layers: 1,
            dec_layers: 1,
            enc_heads: 2,
            dec_heads: 5,
            ffn_units: 16,
            max_positions: 16,
            dropout: 0.0,
            activation: Activation::Gelu,
            sinusoidal_positions: false,
            tie_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_enc", self.d_enc),
            ("d_dec", self.d_dec),
            ("dec_layers", self.dec_layers),
            ("enc_heads", self.enc_heads),
            ("dec_heads", self.dec_heads),
            ("ffn_units", self.ffn_units),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be positive")));
            }
        }
        if self.d_enc % self.enc_heads != 0 {
            return Err(Error::contract(format!(
                "d_enc {} not divisible by enc_heads {}",
                self.d_enc, self.enc_heads
            )));
        }
        if self.d_dec % self.dec_heads != 0 {
            return Err(Error::contract(format!(
                "d_dec {} not divisible by dec_heads {}",
                self.d_dec, self.dec_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count; asserted against the built network.
    ///
    /// With `V` vocab, `P` positions, encoder width `e`, decoder width `d`,
    /// FFN width `F`:
    ///   embeddings: V*e + 2*e (+ P*e learned)
    ///   per encoder layer: 4e^2 + 2eF + 9e + F
    ///   bridge: e*d + d
    ///   decoder embeddings: V*d (+ P*d learned)
    ///   per decoder layer: 8d^2 + 2dF + 15d + F
    ///   final norm: 2d; output head: V (+ d*V when untied)
    pub fn param_count(&self) -> usize {
        let (v, p) = (self.vocab_size, self.max_positions);
        let (e, d, f) = (self.d_enc, self.d_dec, self.ffn_units);
        let pos = if self.sinusoidal_positions { 0 } else { p * (e + d) };
        let enc_layer = 4 * e * e + 2 * e * f + 9 * e + f;
        let dec_layer = 8 * d * d + 2 * d * f + 15 * d + f;
        let out_w = if self.tie_output { 0 } else { d * v };
        v * e + 2 * e
            + self.enc_layers * enc_layer
            + e * d + d
            + v * d
            + self.dec_layers * dec_layer
            + 2 * d
            + out_w + v
            + pos
    }
}
