//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! execution order, so the node list is already topologically sorted and
//! [`Graph::backward`] is a single reverse sweep. Gradients accumulate
//! additively across fan-out.
//!
//! A graph must never be shared across threads; tensors fed in as leaves are
//! copied, so the caller's data stays immutable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul,
    Add,
    Mul,
    /// Row-wise `[r,c] + [c]` broadcast.
    AddBias,
    Scale(f64),
    Transpose,
    SliceCols {
        start: usize,
        end: usize,
    },
    ConcatCols,
    Softmax {
        axis: usize,
    },
    LayerNorm {
        eps: f64,
    },
    Gelu,
    Relu,
    Dropout {
        mask: Vec<f64>,
    },
    EmbedRows {
        ids: Vec<usize>,
    },
    CrossEntropy {
        targets: Vec<u32>,
        ignore_id: Option<u32>,
        probs: Vec<f64>,
        count: usize,
    },
    SumAll,
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub struct Graph {
    nodes: Vec<Node>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Graph {
    /// Inference-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            dropout_rng: None,
        }
    }

    /// Training-mode graph; `seed` drives the dropout masks.
    pub fn for_training(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, shape: Vec<usize>, value: Vec<f64>) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            value,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy a tensor into the graph as a leaf node.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            requires_grad: t.requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf from raw parts, never differentiated (masks, constants).
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<Var> {
        let t = Tensor::new(data, shape)?;
        Ok(self.leaf(&t))
    }

    /// Leaf whose differentiability is decided by the caller rather than the
    /// tensor (parameters are frozen or trained depending on the stage).
    pub fn leaf_param(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Copy a node's current value out as a standalone tensor.
    pub fn detach(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].value.clone(), self.nodes[v.0].shape.to_vec())
            .expect("node invariant: value length matches shape")
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    // ── Operations ──────────────────────────────────────────────────────

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        Ok(self.push(Op::MatMul, vec![a.0, b.0], vec![m, n], out))
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, Op::Add, |x, y| x + y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, Op::Mul, |x, y| x * y)
    }

    fn binary_same_shape(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(Error::Shape {
                op: "elementwise",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let shape = sa.clone();
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(op, vec![a.0, b.0], shape, value))
    }

    /// Add a bias row vector `[c]` to every row of `[r,c]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (&self.nodes[x.0].shape, &self.nodes[bias.0].shape);
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: sx.clone(),
                rhs: sb.clone(),
            });
        }
        let (r, c) = (sx[0], sx[1]);
        let shape = vec![r, c];
        let mut value = self.nodes[x.0].value.clone();
        for i in 0..r {
            for j in 0..c {
                value[i * c + j] += self.nodes[bias.0].value[j];
            }
        }
        Ok(self.push(Op::AddBias, vec![x.0, bias.0], shape, value))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let value = self.nodes[x.0].value.iter().map(|&v| v * factor).collect();
        self.push(Op::Scale(factor), vec![x.0], shape, value)
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let sx = &self.nodes[x.0].shape;
        if sx.len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: sx.clone(),
                rhs: vec![],
            });
        }
        let (r, c) = (sx[0], sx[1]);
        let d = &self.nodes[x.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = d[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose, vec![x.0], vec![c, r], value))
    }

    /// Column slice `[r, c] -> [r, end-start]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let sx = &self.nodes[x.0].shape;
        if sx.len() != 2 || start >= end || end > sx[1] {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: sx.clone(),
                rhs: vec![start, end],
            });
        }
        let (r, c) = (sx[0], sx[1]);
        let w = end - start;
        let d = &self.nodes[x.0].value;
        let mut value = Vec::with_capacity(r * w);
        for i in 0..r {
            value.extend_from_slice(&d[i * c + start..i * c + end]);
        }
        Ok(self.push(Op::SliceCols { start, end }, vec![x.0], vec![r, w], value))
    }

    /// Concatenate 2-D nodes with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols needs at least one input"));
        }
        let r = self.nodes[parts[0].0].shape[0];
        let mut total_c = 0;
        for p in parts {
            let sp = &self.nodes[p.0].shape;
            if sp.len() != 2 || sp[0] != r {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: sp.clone(),
                });
            }
            total_c += sp[1];
        }
        let mut value = Vec::with_capacity(r * total_c);
        for i in 0..r {
            for p in parts {
                let c = self.nodes[p.0].shape[1];
                value.extend_from_slice(&self.nodes[p.0].value[i * c..(i + 1) * c]);
            }
        }
        let inputs = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Op::ConcatCols, inputs, vec![r, total_c], value))
    }

    /// Numerically stable softmax along `axis`. Rows sum to one.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op: "softmax",
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let d = &self.nodes[x.0].value;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("softmax input contains non-finite values"));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut value = vec![0.0; d.len()];
        for o in 0..outer {
            for inn in 0..inner {
                let base = o * n * inner + inn;
                let mut max = f64::NEG_INFINITY;
                for i in 0..n {
                    max = max.max(d[base + i * inner]);
                }
                let mut sum = 0.0;
                for i in 0..n {
                    let e = (d[base + i * inner] - max).exp();
                    value[base + i * inner] = e;
                    sum += e;
                }
                for i in 0..n {
                    value[base + i * inner] /= sum;
                }
            }
        }
        Ok(self.push(Op::Softmax { axis }, vec![x.0], shape, value))
    }

    /// Per-row normalization over the last axis, then `gain * x_hat + bias`.
    /// `eps` sits inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().ok_or_else(|| Error::contract("layer_norm on empty shape"))?;
        let (sg, sb) = (&self.nodes[gain.0].shape, &self.nodes[bias.0].shape);
        if sg.as_slice() != [d] || sb.as_slice() != [d] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: shape,
                rhs: sg.clone(),
            });
        }
        let rows = self.nodes[x.0].value.len() / d;
        let mut value = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &self.nodes[x.0].value[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                let xhat = (row[j] - mean) * inv_std;
                value[r * d + j] =
                    self.nodes[gain.0].value[j] * xhat + self.nodes[bias.0].value[j];
            }
        }
        Ok(self.push(Op::LayerNorm { eps }, vec![x.0, gain.0, bias.0], shape, value))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let value = self.nodes[x.0].value.iter().map(|&v| gelu_scalar(v)).collect();
        self.push(Op::Gelu, vec![x.0], shape, value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let value = self.nodes[x.0].value.iter().map(|&v| v.max(0.0)).collect();
        self.push(Op::Relu, vec![x.0], shape, value)
    }

    /// Inverted dropout. Identity when the graph is in inference mode or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let keep = 1.0 - p;
        match self.dropout_rng {
            Some(ref mut rng) if p > 0.0 => {
                let mask: Vec<f64> = (0..self.nodes[x.0].value.len())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let shape = self.nodes[x.0].shape.clone();
                let value = self.nodes[x.0]
                    .value
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| v * m)
                    .collect();
                self.push(Op::Dropout { mask }, vec![x.0], shape, value)
            }
            _ => x,
        }
    }

    /// Gather rows of an embedding table: `table[V,d]`, `ids` -> `[len(ids), d]`.
    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = &self.nodes[table.0].shape;
        if st.len() != 2 {
            return Err(Error::Shape {
                op: "embed_rows",
                lhs: st.clone(),
                rhs: vec![],
            });
        }
        let (v, d) = (st[0], st[1]);
        let mut value = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    index: id,
                    bound: v,
                    context: "embed_rows".into(),
                });
            }
            value.extend_from_slice(&self.nodes[table.0].value[id * d..(id + 1) * d]);
        }
        let len = ids.len();
        Ok(self.push(
            Op::EmbedRows { ids: ids.to_vec() },
            vec![table.0],
            vec![len, d],
            value,
        ))
    }

    /// Mean negative log-softmax probability of `targets` under `logits [T,V]`,
    /// skipping positions whose target equals `ignore_id`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        ignore_id: Option<u32>,
    ) -> Result<Var> {
        let sl = self.nodes[logits.0].shape.clone();
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: sl,
                rhs: vec![targets.len()],
            });
        }
        let (t_len, vocab) = (sl[0], sl[1]);
        let data = &self.nodes[logits.0].value;
        let mut probs = vec![0.0; t_len * vocab];
        let mut total = 0.0;
        let mut count = 0usize;
        for t in 0..t_len {
            let row = &data[t * vocab..(t + 1) * vocab];
            let ignored = ignore_id == Some(targets[t]);
            if !ignored && targets[t] as usize >= vocab {
                return Err(Error::Index {
                    index: targets[t] as usize,
                    bound: vocab,
                    context: "cross_entropy target".into(),
                });
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            for j in 0..vocab {
                probs[t * vocab + j] = (row[j] - max).exp() / sum_exp;
            }
            if !ignored {
                let lse = max + sum_exp.ln();
                total += lse - row[targets[t] as usize];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::contract("cross_entropy: no non-ignored targets"));
        }
        let loss = total / count as f64;
        Ok(self.push(
            Op::CrossEntropy {
                targets: targets.to_vec(),
                ignore_id,
                probs,
                count,
            },
            vec![logits.0],
            vec![1],
            vec![loss],
        ))
    }

    /// Sum of every element, as a scalar node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.nodes[x.0].value.iter().sum();
        self.push(Op::SumAll, vec![x.0], vec![1], vec![total])
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Populates gradients for every
    /// node on the path with `requires_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::contract(
                "backward on a node that does not require gradients",
            ));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            self.step_backward(idx);
        }
        Ok(())
    }

    fn add_grad(&mut self, node: usize, delta: &[f64]) {
        if !self.nodes[node].requires_grad {
            return;
        }
        let len = self.nodes[node].value.len();
        debug_assert_eq!(delta.len(), len);
        let grad = self.nodes[node].grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn step_backward(&mut self, idx: usize) {
        let out_grad = self.nodes[idx].grad.clone().expect("seeded above");
        let inputs = self.nodes[idx].inputs.clone();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let n = self.nodes[b].shape[1];
                if self.nodes[a].requires_grad {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = out_grad[i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += g * self.nodes[b].value[p * n + j];
                            }
                        }
                    }
                    self.add_grad(a, &da);
                }
                if self.nodes[b].requires_grad {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = self.nodes[a].value[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += av * out_grad[i * n + j];
                            }
                        }
                    }
                    self.add_grad(b, &db);
                }
            }
            Op::Add => {
                self.add_grad(inputs[0], &out_grad);
                self.add_grad(inputs[1], &out_grad);
            }
            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.nodes[a].requires_grad {
                    let da: Vec<f64> = out_grad
                        .iter()
                        .zip(&self.nodes[b].value)
                        .map(|(&g, &v)| g * v)
                        .collect();
                    self.add_grad(a, &da);
                }
                if self.nodes[b].requires_grad {
                    let db: Vec<f64> = out_grad
                        .iter()
                        .zip(&self.nodes[a].value)
                        .map(|(&g, &v)| g * v)
                        .collect();
                    self.add_grad(b, &db);
                }
            }
            Op::AddBias => {
                let (x, bias) = (inputs[0], inputs[1]);
                let c = self.nodes[bias].value.len();
                self.add_grad(x, &out_grad);
                if self.nodes[bias].requires_grad {
                    let mut db = vec![0.0; c];
                    for (i, &g) in out_grad.iter().enumerate() {
                        db[i % c] += g;
                    }
                    self.add_grad(bias, &db);
                }
            }
            Op::Scale(factor) => {
                let f = *factor;
                let dx: Vec<f64> = out_grad.iter().map(|&g| g * f).collect();
                self.add_grad(inputs[0], &dx);
            }
            Op::Transpose => {
                // out is [c,r]; input is [r,c]
                let (c, r) = (self.nodes[idx].shape[0], self.nodes[idx].shape[1]);
                let mut dx = vec![0.0; r * c];
                for j in 0..c {
                    for i in 0..r {
                        dx[i * c + j] = out_grad[j * r + i];
                    }
                }
                self.add_grad(inputs[0], &dx);
            }
            Op::SliceCols { start, end } => {
                let (start, end) = (*start, *end);
                let x = inputs[0];
                let (r, c) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
                let w = end - start;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..w {
                        dx[i * c + start + j] = out_grad[i * w + j];
                    }
                }
                self.add_grad(x, &dx);
            }
            Op::ConcatCols => {
                let r = self.nodes[idx].shape[0];
                let total_c = self.nodes[idx].shape[1];
                let widths: Vec<usize> = inputs.iter().map(|&p| self.nodes[p].shape[1]).collect();
                let mut offset = 0;
                for (pi, &p) in inputs.iter().enumerate() {
                    let w = widths[pi];
                    if self.nodes[p].requires_grad {
                        let mut dp = vec![0.0; r * w];
                        for i in 0..r {
                            dp[i * w..(i + 1) * w].copy_from_slice(
                                &out_grad[i * total_c + offset..i * total_c + offset + w],
                            );
                        }
                        self.add_grad(p, &dp);
                    }
                    offset += w;
                }
            }
            Op::Softmax { axis } => {
                let axis = *axis;
                let shape = self.nodes[idx].shape.clone();
                let n = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..axis].iter().product();
                let y = &self.nodes[idx].value;
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for inn in 0..inner {
                        let base = o * n * inner + inn;
                        let mut dot = 0.0;
                        for i in 0..n {
                            dot += out_grad[base + i * inner] * y[base + i * inner];
                        }
                        for i in 0..n {
                            let yi = y[base + i * inner];
                            dx[base + i * inner] = yi * (out_grad[base + i * inner] - dot);
                        }
                    }
                }
                self.add_grad(inputs[0], &dx);
            }
            Op::LayerNorm { eps } => {
                let eps = *eps;
                let (x, gain, bias) = (inputs[0], inputs[1], inputs[2]);
                let d = *self.nodes[idx].shape.last().unwrap();
                let rows = self.nodes[idx].value.len() / d;
                let mut dx = vec![0.0; rows * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let xrow = &self.nodes[x].value[r * d..(r + 1) * d];
                    let grow = &out_grad[r * d..(r + 1) * d];
                    let mean = xrow.iter().sum::<f64>() / d as f64;
                    let var =
                        xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    // dxhat, plus parameter grads
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    let mut dxhat = vec![0.0; d];
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * inv_std;
                        dgain[j] += grow[j] * xhat;
                        dbias[j] += grow[j];
                        dxhat[j] = grow[j] * self.nodes[gain].value[j];
                        sum_dxhat += dxhat[j];
                        sum_dxhat_xhat += dxhat[j] * xhat;
                    }
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * inv_std;
                        dx[r * d + j] = inv_std / d as f64
                            * (d as f64 * dxhat[j] - sum_dxhat - xhat * sum_dxhat_xhat);
                    }
                }
                self.add_grad(x, &dx);
                self.add_grad(gain, &dgain);
                self.add_grad(bias, &dbias);
            }
            Op::Gelu => {
                let x = inputs[0];
                let dx: Vec<f64> = self.nodes[x]
                    .value
                    .iter()
                    .zip(&out_grad)
                    .map(|(&v, &g)| g * gelu_grad_scalar(v))
                    .collect();
                self.add_grad(x, &dx);
            }
            Op::Relu => {
                let x = inputs[0];
                let dx: Vec<f64> = self.nodes[x]
                    .value
                    .iter()
                    .zip(&out_grad)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.add_grad(x, &dx);
            }
            Op::Dropout { mask } => {
                let dx: Vec<f64> = mask.iter().zip(&out_grad).map(|(&m, &g)| m * g).collect();
                self.add_grad(inputs[0], &dx);
            }
            Op::EmbedRows { ids } => {
                let ids = ids.clone();
                let table = inputs[0];
                let d = self.nodes[idx].shape[1];
                let numel = self.nodes[table].value.len();
                let mut dt = vec![0.0; numel];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += out_grad[i * d + j];
                    }
                }
                self.add_grad(table, &dt);
            }
            Op::CrossEntropy {
                targets,
                ignore_id,
                probs,
                count,
            } => {
                let targets = targets.clone();
                let probs = probs.clone();
                let ignore = *ignore_id;
                let count = *count;
                let logits = inputs[0];
                let vocab = self.nodes[logits].shape[1];
                let scale = out_grad[0] / count as f64;
                let mut dl = vec![0.0; probs.len()];
                for (t, &target) in targets.iter().enumerate() {
                    if ignore == Some(target) {
                        continue;
                    }
                    for j in 0..vocab {
                        let indicator = if j == target as usize { 1.0 } else { 0.0 };
                        dl[t * vocab + j] = scale * (probs[t * vocab + j] - indicator);
                    }
                }
                self.add_grad(logits, &dl);
            }
            Op::SumAll => {
                let x = inputs[0];
                let dx = vec![out_grad[0]; self.nodes[x].value.len()];
                self.add_grad(x, &dx);
            }
        }
    }

}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

fn gelu_scalar(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
    const C: f64 = 0.044715;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + C * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
    const C: f64 = 0.044715;
    let u = SQRT_2_OVER_PI * (x + C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * C * x * x)
}
