//! Two-stage training: stage 1 trains decoder, bridge, and output head with
//! the encoder side frozen; stage 2 fine-tunes everything at a smaller rate
//! with a fresh warmup and fresh optimizer moments.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::decoding::{greedy, DecodeConfig, ModelScorer};
use crate::error::{Error, Result};
use crate::eval::{corpus_bleu, perplexity, PreparedEntry};
use crate::model::{is_encoder_param, ForwardPass, Model, ParamSet};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub stage1_lr: f64,
    pub stage1_warmup: usize,
    pub stage2_lr: f64,
    pub stage2_warmup: usize,
    pub dropout: f64,
    pub clip_norm: f64,
    /// Entries per optimizer step.
    pub batch_size: usize,
    /// Steps per stage.
    pub max_steps: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Consecutive non-improving evaluations before the PPL plateau is called.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_lr: 5e-4,
            stage1_warmup: 4000,
            stage2_lr: 2e-5,
            stage2_warmup: 2000,
            dropout: 0.2,
            clip_norm: 0.1,
            batch_size: 256,
            max_steps: 20_000,
            eval_every: 1000,
            seed: 42,
            patience: 3,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: small batches, short warmups, and rates sized for
    /// a from-scratch encoder rather than a pretrained one.
    pub fn toy() -> Self {
        TrainConfig {
            stage1_lr: 1e-3,
            stage1_warmup: 100,
            stage2_lr: 5e-4,
            stage2_warmup: 50,
            dropout: 0.2,
            clip_norm: 0.1,
            batch_size: 16,
            max_steps: 600,
            eval_every: 50,
            seed: 42,
            patience: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage1_lr <= 0.0 || self.stage2_lr <= 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::contract("learning rates and clip_norm must be positive"));
        }
        if self.stage1_warmup == 0
            || self.stage2_warmup == 0
            || self.batch_size == 0
            || self.max_steps == 0
            || self.eval_every == 0
            || self.patience == 0
        {
            return Err(Error::contract("step counts in the config must be positive"));
        }
        if self.stage1_warmup >= self.max_steps || self.stage2_warmup >= self.max_steps {
            return Err(Error::contract(format!(
                "warmup must be shorter than max_steps ({})",
                self.max_steps
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract("dropout must be in [0,1)"));
        }
        Ok(())
    }

    /// Apply one `key=value` pair; false when the key is not a field here.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |k: &str, v: &str| Error::contract(format!("bad value {v:?} for key {k}"));
        match key {
            "stage1_lr" => self.stage1_lr = value.parse().map_err(|_| bad(key, value))?,
            "stage2_lr" => self.stage2_lr = value.parse().map_err(|_| bad(key, value))?,
            "stage1_warmup" => self.stage1_warmup = value.parse().map_err(|_| bad(key, value))?,
            "stage2_warmup" => self.stage2_warmup = value.parse().map_err(|_| bad(key, value))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad(key, value))?,
            "clip_norm" => self.clip_norm = value.parse().map_err(|_| bad(key, value))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "max_steps" => self.max_steps = value.parse().map_err(|_| bad(key, value))?,
            "eval_every" => self.eval_every = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "patience" => self.patience = value.parse().map_err(|_| bad(key, value))?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Linear warmup to `peak_lr` at `warmup`, then inverse-sqrt decay:
/// `peak_lr * min(step/warmup, sqrt(warmup/step))`.
pub fn lr_at(step: usize, peak_lr: f64, warmup: usize) -> f64 {
    debug_assert!(step >= 1 && warmup >= 1);
    let s = step as f64;
    let w = warmup as f64;
    peak_lr * (s / w).min((w / s).sqrt())
}

/// Scale all gradients so the global L2 norm is at most `max_norm`; returns
/// the factor applied (1.0 when no clipping was needed).
pub fn clip_gradients(params: &mut ParamSet, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (name, t) in params.iter() {
        if let Some(grad) = t.grad.as_deref() {
            for &g in grad {
                if !g.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite gradient in parameter {name:?}"
                    )));
                }
                sq += g * g;
            }
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm {
        return Ok(1.0);
    }
    let factor = max_norm / norm;
    for (_, t) in params.iter_mut() {
        if let Some(grad) = t.grad.as_mut() {
            for g in grad.iter_mut() {
                *g *= factor;
            }
        }
    }
    Ok(factor)
}

/// Global L2 norm over all populated gradients.
pub fn gradient_norm(params: &ParamSet) -> f64 {
    params
        .iter()
        .filter_map(|(_, t)| t.grad.as_deref())
        .flat_map(|g| g.iter())
        .map(|&g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Adam with bias correction (betas 0.9/0.999, eps 1e-8).
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, lr: f64, trainable: &[bool]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if !trainable[i] {
                continue;
            }
            let (_, tensor) = params.by_index_mut(i);
            let (data, grad) = tensor.data_and_grad();
            let Some(grad) = grad else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn tag(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    fn lr_and_warmup(self, cfg: &TrainConfig) -> (f64, usize) {
        match self {
            Stage::One => (cfg.stage1_lr, cfg.stage1_warmup),
            Stage::Two => (cfg.stage2_lr, cfg.stage2_warmup),
        }
    }

    fn trainable_mask(self, params: &ParamSet) -> Vec<bool> {
        match self {
            Stage::One => params.iter().map(|(n, _)| !is_encoder_param(n)).collect(),
            Stage::Two => vec![true; params.len()],
        }
    }
}

/// One validation evaluation: scores plus the index of the parameter
/// snapshot taken at that moment.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub ppl: f64,
    pub bleu: f64,
    pub snapshot: usize,
}

#[derive(Debug)]
pub struct TrainState {
    pub stage: u8,
    pub steps: usize,
    pub history: Vec<EvalRecord>,
    pub snapshots: Vec<ParamSet>,
    pub patience: usize,
}

impl TrainState {
    /// The record chosen by the plateau-then-best-BLEU rule.
    pub fn best(&self) -> Option<&EvalRecord> {
        select_checkpoint(&self.history, self.patience).map(|i| &self.history[i])
    }
}

/// Training-log line: step, stage, learning rate, batch loss, pre-clip
/// gradient norm, and scores when the step evaluated.
#[derive(Debug, Clone, Serialize)]
pub struct LogRecord {
    pub step: usize,
    pub stage: u8,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub clip_factor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
}

/// Greedy decode used for validation BLEU during training.
fn validation_decode() -> DecodeConfig {
    DecodeConfig {
        max_len: 48,
        beam_size: 1,
        alpha: 0.0,
    }
}

/// PPL and greedy BLEU of `model` on an entry set, in inference mode.
pub fn evaluate_model(
    model: &Model,
    vocab: &Vocabulary,
    entries: &[PreparedEntry],
) -> Result<(f64, f64)> {
    let ppl = perplexity(model, entries)?;
    let cfg = validation_decode();
    let mut hyps = Vec::with_capacity(entries.len());
    let mut refs = Vec::with_capacity(entries.len());
    for p in entries {
        let scorer = ModelScorer::new(model, &p.input)?;
        let out = greedy(&scorer, &cfg)?;
        hyps.push(vocab.decode(&out.ids)?);
        refs.push(p.entry.definition.clone());
    }
    let bleu = corpus_bleu(&hyps, &refs)?;
    Ok((ppl, bleu.bleu))
}

fn train_stage(
    model: &mut Model,
    vocab: &Vocabulary,
    train: &[PreparedEntry],
    eval_set: Option<&[PreparedEntry]>,
    cfg: &TrainConfig,
    stage: Stage,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<TrainState> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    model.config.dropout = cfg.dropout;
    let trainable = stage.trainable_mask(&model.params);
    let mut adam = Adam::new(&model.params);
    let (peak_lr, warmup) = stage.lr_and_warmup(cfg);

    let mut order_rng =
        ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(stage.tag() as u64));
    let mut dropout_rng =
        ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x10_0000 + stage.tag() as u64));
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0usize;

    let mut state = TrainState {
        stage: stage.tag(),
        steps: cfg.max_steps,
        history: Vec::new(),
        snapshots: Vec::new(),
        patience: cfg.patience,
    };

    for step in 1..=cfg.max_steps {
        // assemble the batch, reshuffling at epoch boundaries
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        model.params.zero_grads();
        let mut batch_loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &idx in &batch {
            let seed = dropout_rng.next_u64();
            let (loss_value, grads) = {
                let mut fp = ForwardPass::training(model, trainable.clone(), seed);
                let loss =
                    fp.sequence_loss(&train[idx].input, &train[idx].definition_ids)?;
                fp.graph.backward(loss)?;
                (fp.graph.scalar_value(loss), fp.collect_param_grads())
            };
            if !loss_value.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at step {step}"
                )));
            }
            batch_loss += loss_value * scale;
            for (i, mut g) in grads {
                for v in g.iter_mut() {
                    *v *= scale;
                }
                let (_, tensor) = model.params.by_index_mut(i);
                tensor.accumulate_grad(&g);
            }
        }

        let grad_norm = gradient_norm(&model.params);
        let clip_factor = clip_gradients(&mut model.params, cfg.clip_norm)?;
        let lr = lr_at(step, peak_lr, warmup);
        adam.step(&mut model.params, lr, &trainable);

        let mut record = LogRecord {
            step,
            stage: stage.tag(),
            lr,
            loss: batch_loss,
            grad_norm,
            clip_factor,
            ppl: None,
            bleu: None,
        };
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let eval_entries = eval_set.unwrap_or(train);
            let (ppl, bleu) = evaluate_model(model, vocab, eval_entries)?;
            state.snapshots.push(model.params.clone());
            state.history.push(EvalRecord {
                step,
                ppl,
                bleu,
                snapshot: state.snapshots.len() - 1,
            });
            record.ppl = Some(ppl);
            record.bleu = Some(bleu);
        }
        log(&record);
    }
    Ok(state)
}

/// Stage 1: encoder-side parameters receive no updates.
pub fn train_stage1(
    model: &mut Model,
    vocab: &Vocabulary,
    train: &[PreparedEntry],
    eval_set: Option<&[PreparedEntry]>,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<TrainState> {
    train_stage(model, vocab, train, eval_set, cfg, Stage::One, log)
}

/// Stage 2: everything trains at the stage-2 rate, fresh warmup and moments.
pub fn train_stage2(
    model: &mut Model,
    vocab: &Vocabulary,
    train: &[PreparedEntry],
    eval_set: Option<&[PreparedEntry]>,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<TrainState> {
    train_stage(model, vocab, train, eval_set, cfg, Stage::Two, log)
}

/// Run both stages; after each stage the model is rewound to that stage's
/// selected checkpoint before continuing.
pub fn train_two_stages(
    model: &mut Model,
    vocab: &Vocabulary,
    train: &[PreparedEntry],
    eval_set: Option<&[PreparedEntry]>,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<(TrainState, TrainState)> {
    let stage1 = train_stage1(model, vocab, train, eval_set, cfg, log)?;
    if let Some(best) = stage1.best() {
        model.params = stage1.snapshots[best.snapshot].clone();
    }
    let stage2 = train_stage2(model, vocab, train, eval_set, cfg, log)?;
    if let Some(best) = stage2.best() {
        model.params = stage2.snapshots[best.snapshot].clone();
    }
    Ok((stage1, stage2))
}

/// Find the first evaluation where PPL has failed to improve for `patience`
/// consecutive evaluations; among evaluations from there on (or all, if PPL
/// never plateaus) return the index with the highest BLEU, earliest on ties.
pub fn select_checkpoint(history: &[EvalRecord], patience: usize) -> Option<usize> {
    if history.is_empty() {
        return None;
    }
    let mut best_ppl = f64::INFINITY;
    let mut fails = 0usize;
    let mut plateau = None;
    for (i, rec) in history.iter().enumerate() {
        if rec.ppl < best_ppl {
            best_ppl = rec.ppl;
            fails = 0;
        } else {
            fails += 1;
            if fails >= patience {
                plateau = Some(i);
                break;
            }
        }
    }
    let from = plateau.unwrap_or(0);
    let mut best = from;
    for i in from..history.len() {
        if history[i].bleu > history[best].bleu {
            best = i;
        }
    }
    Some(best)
}
