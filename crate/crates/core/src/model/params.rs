//! Named parameter storage and initialization.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::ModelConfig;

/// Ordered name -> tensor map. Iteration order is the architecture
/// enumeration order, which checkpoints and the optimizer both rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.entries[self.index[name]].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index[name];
        &mut self.entries[i].1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_index(&self, i: usize) -> (&str, &Tensor) {
        let (name, t) = &self.entries[i];
        (name, t)
    }

    pub fn by_index_mut(&mut self, i: usize) -> (&str, &mut Tensor) {
        let (name, t) = &mut self.entries[i];
        (name.as_str(), t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.zero_grad();
        }
    }
}

/// Enumerate `(name, shape)` for every parameter the config implies, in the
/// fixed architecture order.
pub fn parameter_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (v, p) = (cfg.vocab_size, cfg.max_positions);
    let (e, d, f) = (cfg.d_enc, cfg.d_dec, cfg.ffn_units);
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>| specs.push((name, shape));

    push("enc.tok_emb".into(), vec![v, e]);
    push("enc.type_emb".into(), vec![2, e]);
    if !cfg.sinusoidal_positions {
        push("enc.pos_emb".into(), vec![p, e]);
    }
    for i in 0..cfg.enc_layers {
        let pre = format!("enc.l{i}");
        push(format!("{pre}.ln1.gain"), vec![e]);
        push(format!("{pre}.ln1.bias"), vec![e]);
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("{pre}.attn.{w}"), vec![e, e]);
        }
        for b in ["bq", "bk", "bv", "bo"] {
            push(format!("{pre}.attn.{b}"), vec![e]);
        }
        push(format!("{pre}.ln2.gain"), vec![e]);
        push(format!("{pre}.ln2.bias"), vec![e]);
        push(format!("{pre}.ffn.w1"), vec![e, f]);
        push(format!("{pre}.ffn.b1"), vec![f]);
        push(format!("{pre}.ffn.w2"), vec![f, e]);
        push(format!("{pre}.ffn.b2"), vec![e]);
    }
    push("bridge.w".into(), vec![e, d]);
    push("bridge.b".into(), vec![d]);
    push("dec.tok_emb".into(), vec![v, d]);
    if !cfg.sinusoidal_positions {
        push("dec.pos_emb".into(), vec![p, d]);
    }
    for i in 0..cfg.dec_layers {
        let pre = format!("dec.l{i}");
        push(format!("{pre}.ln1.gain"), vec![d]);
        push(format!("{pre}.ln1.bias"), vec![d]);
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("{pre}.self_attn.{w}"), vec![d, d]);
        }
        for b in ["bq", "bk", "bv", "bo"] {
            push(format!("{pre}.self_attn.{b}"), vec![d]);
        }
        push(format!("{pre}.ln2.gain"), vec![d]);
        push(format!("{pre}.ln2.bias"), vec![d]);
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("{pre}.cross_attn.{w}"), vec![d, d]);
        }
        for b in ["bq", "bk", "bv", "bo"] {
            push(format!("{pre}.cross_attn.{b}"), vec![d]);
        }
        push(format!("{pre}.ln3.gain"), vec![d]);
        push(format!("{pre}.ln3.bias"), vec![d]);
        push(format!("{pre}.ffn.w1"), vec![d, f]);
        push(format!("{pre}.ffn.b1"), vec![f]);
        push(format!("{pre}.ffn.w2"), vec![f, d]);
        push(format!("{pre}.ffn.b2"), vec![d]);
    }
    push("dec.final_ln.gain".into(), vec![d]);
    push("dec.final_ln.bias".into(), vec![d]);
    if !cfg.tie_output {
        push("out.w".into(), vec![d, v]);
    }
    push("out.b".into(), vec![v]);
    specs
}

/// True for encoder-side parameters (embeddings + encoder stack), the part
/// held fixed during the first training stage.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("enc.")
}

fn init_tensor(name: &str, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let is_gain = name.ends_with(".gain");
    let is_output_head = name == "out.w" || name == "out.b";
    let is_bias = name.ends_with(".bias")
        || name.ends_with(".b")
        || name.ends_with(".b1")
        || name.ends_with(".b2")
        || name.ends_with(".bq")
        || name.ends_with(".bk")
        || name.ends_with(".bv")
        || name.ends_with(".bo");
    if is_gain {
        Tensor::full(shape, 1.0)
    } else if is_output_head || is_bias {
        // zero output head: the first loss is exactly ln(vocab) — a cheap
        // sanity anchor for training runs
        Tensor::zeros(shape)
    } else {
        Tensor::randn(shape, std, rng)
    }
}

/// Build a freshly initialized parameter set: gains one, biases and the
/// output head zero, everything else N(0, 0.02), drawn in enumeration order
/// from a seeded generator.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut index = HashMap::new();
    for (name, shape) in parameter_specs(cfg) {
        let tensor = init_tensor(&name, &shape, 0.02, &mut rng);
        index.insert(name.clone(), entries.len());
        entries.push((name, tensor));
    }
    Ok(ParamSet { entries, index })
}

/// Rebuild a ParamSet from named tensors, verifying the exact name/shape map
/// the config implies.
pub fn params_from_tensors(
    cfg: &ModelConfig,
    tensors: Vec<(String, Tensor)>,
) -> Result<ParamSet> {
    let specs = parameter_specs(cfg);
    if tensors.len() != specs.len() {
        return Err(Error::format(format!(
            "checkpoint holds {} tensors, architecture needs {}",
            tensors.len(),
            specs.len()
        )));
    }
    let mut entries = Vec::with_capacity(specs.len());
    let mut index = HashMap::new();
    let by_name: HashMap<&str, &Tensor> =
        tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for (name, shape) in &specs {
        let t = by_name.get(name.as_str()).ok_or_else(|| {
            Error::format(format!("checkpoint is missing parameter {name:?}"))
        })?;
        if t.shape() != shape.as_slice() {
            return Err(Error::format(format!(
                "parameter {name:?} has shape {:?}, architecture implies {shape:?}",
                t.shape()
            )));
        }
        index.insert(name.clone(), entries.len());
        entries.push((name.clone(), (*t).clone()));
    }
    Ok(ParamSet { entries, index })
}
