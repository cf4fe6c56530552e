//! Reverse-mode automatic differentiation over a recording tape.
//!
//! The tape is an arena: every tensor produced during a forward pass lives in
//! it, addressed by `TensorId`. Applying a primitive computes the forward
//! value and, when any input requires a gradient, records an analytic
//! backward rule. `backward` replays the rules in reverse execution order and
//! fills the gradient buffers of every reachable tensor that requires one.
//!
//! A tape is confined to one logical thread for the duration of a
//! forward/backward pass and is dropped (or rebuilt) between training steps,
//! so no gradient state leaks across steps.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tensor, TensorError};

/// Handle to a tensor stored on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// A differentiable primitive together with its attributes.
#[derive(Debug, Clone)]
pub enum Primitive {
    /// 2-D matrix product, optionally reading either operand transposed.
    MatMul { transpose_a: bool, transpose_b: bool },
    /// Elementwise sum; the smaller operand may be a shape suffix of the larger.
    Add,
    /// Elementwise (Hadamard) product with the same broadcast rule as `Add`.
    Multiply,
    Relu,
    /// Row softmax over the last axis.
    Softmax,
    /// Normalization over the last axis with learned scale and shift.
    LayerNorm { eps: f64 },
    /// Inverted dropout: kept entries scale by 1/(1-rate) at train time.
    Dropout { rate: f64, seed: u64 },
    /// Row gather from a V x D table.
    EmbeddingLookup { ids: Vec<u32> },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    /// Mean over all elements, producing a scalar.
    Mean,
    Scale { factor: f64 },
    /// Gradient reversal: identity forward, exact negation backward.
    Grl,
    /// Cosine similarity of two flat vectors, producing a scalar.
    CosineSimilarity,
    /// Negative log softmax probability of `label`, producing a scalar.
    CrossEntropy { label: usize },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul { .. } => "matmul",
            Primitive::Add => "add",
            Primitive::Multiply => "multiply",
            Primitive::Relu => "relu",
            Primitive::Softmax => "softmax",
            Primitive::LayerNorm { .. } => "layer_norm",
            Primitive::Dropout { .. } => "dropout",
            Primitive::EmbeddingLookup { .. } => "embedding_lookup",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Mean => "mean",
            Primitive::Scale { .. } => "scale",
            Primitive::Grl => "grl",
            Primitive::CosineSimilarity => "cosine_similarity",
            Primitive::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct RecordedOp {
    prim: Primitive,
    inputs: Vec<TensorId>,
    /// Values saved at forward time for the backward rule (masks, normalized
    /// activations, softmax probabilities, norms).
    saved: Vec<Vec<f64>>,
}

struct Node {
    tensor: Tensor,
    op: Option<RecordedOp>,
}

/// Gradients of the loss with respect to requires-grad leaf tensors.
#[derive(Debug, Default)]
pub struct GradientMap {
    grads: HashMap<TensorId, Vec<f64>>,
}

impl GradientMap {
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(&id).map(|g| g.as_slice())
    }

    pub fn contains(&self, id: TensorId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Largest absolute gradient entry across the map.
    pub fn max_abs(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// Recording tape for one forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    ops_recorded: usize,
    backward_done: bool,
    strict: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), ops_recorded: 0, backward_done: false, strict: false }
    }

    /// Strict mode rejects non-finite inputs at every op. Off by default in
    /// training, on in tests.
    pub fn with_strict(strict: bool) -> Self {
        Tape { strict, ..Tape::new() }
    }

    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    /// Stores a tensor as a leaf and returns its handle.
    pub fn leaf(&mut self, tensor: Tensor) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { tensor, op: None });
        id
    }

    /// Snapshots a parameter tensor onto the tape with gradient tracking.
    pub fn param(&mut self, tensor: &Tensor) -> TensorId {
        self.leaf(tensor.clone().with_requires_grad(true))
    }

    /// A non-differentiable leaf built from raw parts.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<TensorId, TensorError> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn scalar_const(&mut self, value: f64) -> TensorId {
        self.leaf(Tensor::scalar(value))
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].tensor.data()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad()
    }

    pub fn scalar_value(&self, id: TensorId) -> Result<f64, TensorError> {
        let t = &self.nodes[id.0].tensor;
        if !t.is_scalar() {
            return Err(TensorError::NotScalar { numel: t.numel() });
        }
        Ok(t.data()[0])
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_ops(&self) -> usize {
        self.ops_recorded
    }

    // ---- forward -----------------------------------------------------------

    /// Executes a primitive, recording a backward rule when any input
    /// requires a gradient.
    pub fn apply(&mut self, prim: Primitive, inputs: &[TensorId]) -> Result<TensorId, TensorError> {
        if self.strict {
            for &id in inputs {
                if !self.nodes[id.0].tensor.is_finite() {
                    return Err(TensorError::NonFinite { op: prim.name() });
                }
            }
        }
        let (shape, data, saved) = self.forward(&prim, inputs)?;
        let requires_grad = inputs.iter().any(|&id| self.nodes[id.0].tensor.requires_grad());
        let tensor = Tensor::new(shape, data)?.with_requires_grad(requires_grad);
        let op = if requires_grad {
            self.ops_recorded += 1;
            self.backward_done = false;
            Some(RecordedOp { prim, inputs: inputs.to_vec(), saved })
        } else {
            None
        };
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { tensor, op });
        Ok(id)
    }

    fn forward(
        &self,
        prim: &Primitive,
        inputs: &[TensorId],
    ) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
        let arity_err = |expected: usize| TensorError::ShapeMismatch {
            op: prim.name(),
            detail: format!("expected {} inputs, got {}", expected, inputs.len()),
        };
        let t = |id: &TensorId| &self.nodes[id.0].tensor;
        match prim {
            Primitive::MatMul { transpose_a, transpose_b } => {
                let [a, b] = inputs else { return Err(arity_err(2)) };
                forward_matmul(t(a), t(b), *transpose_a, *transpose_b)
            }
            Primitive::Add => {
                let [a, b] = inputs else { return Err(arity_err(2)) };
                forward_broadcast(t(a), t(b), "add", |x, y| x + y)
            }
            Primitive::Multiply => {
                let [a, b] = inputs else { return Err(arity_err(2)) };
                forward_broadcast(t(a), t(b), "multiply", |x, y| x * y)
            }
            Primitive::Relu => {
                let [x] = inputs else { return Err(arity_err(1)) };
                let out = t(x).data().iter().map(|&v| v.max(0.0)).collect();
                Ok((t(x).shape().to_vec(), out, Vec::new()))
            }
            Primitive::Softmax => {
                let [x] = inputs else { return Err(arity_err(1)) };
                forward_softmax(t(x))
            }
            Primitive::LayerNorm { eps } => {
                let [x, scale, shift] = inputs else { return Err(arity_err(3)) };
                forward_layer_norm(t(x), t(scale), t(shift), *eps)
            }
            Primitive::Dropout { rate, seed } => {
                let [x] = inputs else { return Err(arity_err(1)) };
                forward_dropout(t(x), *rate, *seed)
            }
            Primitive::EmbeddingLookup { ids } => {
                let [table] = inputs else { return Err(arity_err(1)) };
                forward_embedding(t(table), ids)
            }
            Primitive::Concat { axis } => {
                let tensors: Vec<&Tensor> = inputs.iter().map(t).collect();
                forward_concat(&tensors, *axis)
            }
            Primitive::Slice { axis, start, len } => {
                let [x] = inputs else { return Err(arity_err(1)) };
                forward_slice(t(x), *axis, *start, *len)
            }
            Primitive::Mean => {
                let [x] = inputs else { return Err(arity_err(1)) };
                let n = t(x).numel();
                if n == 0 {
                    return Err(TensorError::ShapeMismatch {
                        op: "mean",
                        detail: "empty tensor".to_string(),
                    });
                }
                let m = t(x).data().iter().sum::<f64>() / n as f64;
                Ok((vec![1], vec![m], Vec::new()))
            }
            Primitive::Scale { factor } => {
                let [x] = inputs else { return Err(arity_err(1)) };
                let out = t(x).data().iter().map(|&v| factor * v).collect();
                Ok((t(x).shape().to_vec(), out, Vec::new()))
            }
            Primitive::Grl => {
                let [x] = inputs else { return Err(arity_err(1)) };
                Ok((t(x).shape().to_vec(), t(x).data().to_vec(), Vec::new()))
            }
            Primitive::CosineSimilarity => {
                let [a, b] = inputs else { return Err(arity_err(2)) };
                forward_cosine(t(a), t(b))
            }
            Primitive::CrossEntropy { label } => {
                let [logits] = inputs else { return Err(arity_err(1)) };
                forward_cross_entropy(t(logits), *label)
            }
        }
    }

    // ---- backward ----------------------------------------------------------

    /// Fills the gradient buffers of every tensor reachable from `loss` that
    /// requires a gradient, and returns the gradients of requires-grad leaves.
    pub fn backward(&mut self, loss: TensorId) -> Result<GradientMap, TensorError> {
        let loss_tensor = &self.nodes[loss.0].tensor;
        if !loss_tensor.is_scalar() {
            return Err(TensorError::NotScalar { numel: loss_tensor.numel() });
        }
        if self.ops_recorded == 0 {
            return Err(TensorError::EmptyTape);
        }
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(out_grad) = grads[idx].take() else { continue };
            if let Some(op) = &self.nodes[idx].op {
                let input_grads = self.backward_op(op, idx, &out_grad);
                for (&input, grad) in op.inputs.iter().zip(input_grads.into_iter()) {
                    let Some(grad) = grad else { continue };
                    if !self.nodes[input.0].tensor.requires_grad() {
                        continue;
                    }
                    match &mut grads[input.0] {
                        Some(acc) => {
                            for (a, g) in acc.iter_mut().zip(grad.iter()) {
                                *a += g;
                            }
                        }
                        None => grads[input.0] = Some(grad),
                    }
                }
            }
            grads[idx] = Some(out_grad);
        }

        let mut map = GradientMap::default();
        for (idx, grad) in grads.into_iter().enumerate() {
            let Some(grad) = grad else { continue };
            let node = &mut self.nodes[idx];
            if node.tensor.requires_grad() {
                if node.op.is_none() {
                    map.grads.insert(TensorId(idx), grad.clone());
                }
                node.tensor.set_grad(grad);
            }
        }
        Ok(map)
    }

    /// Gradient of one recorded op with respect to each input (None for
    /// inputs that cannot carry a gradient, e.g. the embedding id list).
    fn backward_op(&self, op: &RecordedOp, out_idx: usize, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let t = |id: &TensorId| &self.nodes[id.0].tensor;
        let out = &self.nodes[out_idx].tensor;
        match &op.prim {
            Primitive::MatMul { transpose_a, transpose_b } => {
                let a = t(&op.inputs[0]);
                let b = t(&op.inputs[1]);
                backward_matmul(a, b, *transpose_a, *transpose_b, g)
            }
            Primitive::Add => {
                let a = t(&op.inputs[0]);
                let b = t(&op.inputs[1]);
                backward_add(a, b, g)
            }
            Primitive::Multiply => {
                let a = t(&op.inputs[0]);
                let b = t(&op.inputs[1]);
                backward_multiply(a, b, g)
            }
            Primitive::Relu => {
                let x = t(&op.inputs[0]);
                let d = x
                    .data()
                    .iter()
                    .zip(g.iter())
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![Some(d)]
            }
            Primitive::Softmax => {
                let y = out.data();
                let cols = *out.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for r in 0..y.len() / cols {
                    let base = r * cols;
                    let dot: f64 =
                        (0..cols).map(|c| g[base + c] * y[base + c]).sum();
                    for c in 0..cols {
                        d[base + c] = y[base + c] * (g[base + c] - dot);
                    }
                }
                vec![Some(d)]
            }
            Primitive::LayerNorm { .. } => {
                let scale = t(&op.inputs[1]);
                backward_layer_norm(scale, &op.saved[0], &op.saved[1], g)
            }
            Primitive::Dropout { .. } => {
                let mask = &op.saved[0];
                let d = g.iter().zip(mask.iter()).map(|(gv, m)| gv * m).collect();
                vec![Some(d)]
            }
            Primitive::EmbeddingLookup { ids } => {
                let table = t(&op.inputs[0]);
                let dim = table.shape()[1];
                let mut d = vec![0.0; table.numel()];
                for (row, &id) in ids.iter().enumerate() {
                    let src = row * dim;
                    let dst = id as usize * dim;
                    for j in 0..dim {
                        d[dst + j] += g[src + j];
                    }
                }
                vec![Some(d)]
            }
            Primitive::Concat { axis } => {
                let tensors: Vec<&Tensor> = op.inputs.iter().map(t).collect();
                backward_concat(&tensors, *axis, g)
            }
            Primitive::Slice { axis, start, len } => {
                let x = t(&op.inputs[0]);
                vec![Some(backward_slice(x, *axis, *start, *len, g))]
            }
            Primitive::Mean => {
                let x = t(&op.inputs[0]);
                let scale = g[0] / x.numel() as f64;
                vec![Some(vec![scale; x.numel()])]
            }
            Primitive::Scale { factor } => {
                vec![Some(g.iter().map(|&gv| factor * gv).collect())]
            }
            Primitive::Grl => {
                vec![Some(g.iter().map(|&gv| -gv).collect())]
            }
            Primitive::CosineSimilarity => {
                let a = t(&op.inputs[0]).data();
                let b = t(&op.inputs[1]).data();
                let dot = op.saved[0][0];
                let na = op.saved[0][1];
                let nb = op.saved[0][2];
                let cos = dot / (na * nb);
                let gv = g[0];
                let da: Vec<f64> = a
                    .iter()
                    .zip(b.iter())
                    .map(|(&av, &bv)| gv * (bv / (na * nb) - cos * av / (na * na)))
                    .collect();
                let db: Vec<f64> = a
                    .iter()
                    .zip(b.iter())
                    .map(|(&av, &bv)| gv * (av / (na * nb) - cos * bv / (nb * nb)))
                    .collect();
                vec![Some(da), Some(db)]
            }
            Primitive::CrossEntropy { label } => {
                let probs = &op.saved[0];
                let gv = g[0];
                let d = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| gv * (p - if i == *label { 1.0 } else { 0.0 }))
                    .collect();
                vec![Some(d)]
            }
        }
    }

    // ---- convenience wrappers ----------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.apply(Primitive::MatMul { transpose_a: false, transpose_b: false }, &[a, b])
    }

    /// `a @ b^T`.
    pub fn matmul_bt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.apply(Primitive::MatMul { transpose_a: false, transpose_b: true }, &[a, b])
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.apply(Primitive::Add, &[a, b])
    }

    /// `a - b`, composed from `scale` and `add`.
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let neg = self.scale(b, -1.0)?;
        self.add(a, neg)
    }

    pub fn multiply(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.apply(Primitive::Multiply, &[a, b])
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        self.apply(Primitive::Relu, &[x])
    }

    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        self.apply(Primitive::Softmax, &[x])
    }

    pub fn layer_norm(
        &mut self,
        x: TensorId,
        scale: TensorId,
        shift: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        self.apply(Primitive::LayerNorm { eps }, &[x, scale, shift])
    }

    pub fn dropout(&mut self, x: TensorId, rate: f64, seed: u64) -> Result<TensorId, TensorError> {
        self.apply(Primitive::Dropout { rate, seed }, &[x])
    }

    pub fn embedding_lookup(
        &mut self,
        table: TensorId,
        ids: &[u32],
    ) -> Result<TensorId, TensorError> {
        self.apply(Primitive::EmbeddingLookup { ids: ids.to_vec() }, &[table])
    }

    pub fn concat(&mut self, inputs: &[TensorId], axis: usize) -> Result<TensorId, TensorError> {
        self.apply(Primitive::Concat { axis }, inputs)
    }

    pub fn slice(
        &mut self,
        x: TensorId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<TensorId, TensorError> {
        self.apply(Primitive::Slice { axis, start, len }, &[x])
    }

    pub fn mean(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        self.apply(Primitive::Mean, &[x])
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> Result<TensorId, TensorError> {
        self.apply(Primitive::Scale { factor }, &[x])
    }

    /// Gradient reversal: forward is the identity, backward multiplies the
    /// incoming gradient by -1 exactly.
    pub fn grl(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        self.apply(Primitive::Grl, &[x])
    }

    pub fn cosine_similarity(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.apply(Primitive::CosineSimilarity, &[a, b])
    }

    pub fn cross_entropy(&mut self, logits: TensorId, label: usize) -> Result<TensorId, TensorError> {
        self.apply(Primitive::CrossEntropy { label }, &[logits])
    }
}

// ---- forward kernels --------------------------------------------------------

fn logical_dims(t: &Tensor, transpose: bool, op: &'static str) -> Result<(usize, usize), TensorError> {
    let shape = t.shape();
    if shape.len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected 2-D operand, got shape {:?}", shape),
        });
    }
    Ok(if transpose { (shape[1], shape[0]) } else { (shape[0], shape[1]) })
}

/// `out (m x n) = A (m x k) @ B (k x n)` with either operand optionally read
/// transposed from its stored layout.
fn matmul_kernel(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
    out: &mut [f64],
) {
    match (ta, tb) {
        (false, false) => {
            // stored a: m x k, stored b: k x n
            for i in 0..m {
                let out_row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    let b_row = &b[p * n..(p + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                        *o += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            // stored a: m x k, stored b: n x k
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let b_row = &b[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                        acc += av * bv;
                    }
                    out[i * n + j] += acc;
                }
            }
        }
        (true, false) => {
            // stored a: k x m, stored b: k x n
            for p in 0..k {
                let a_row = &a[p * m..(p + 1) * m];
                let b_row = &b[p * n..(p + 1) * n];
                for (i, &av) in a_row.iter().enumerate() {
                    let out_row = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                        *o += av * bv;
                    }
                }
            }
        }
        (true, true) => {
            // stored a: k x m, stored b: n x k
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a[p * m + i] * b[j * k + p];
                    }
                    out[i * n + j] += acc;
                }
            }
        }
    }
}

fn forward_matmul(
    a: &Tensor,
    b: &Tensor,
    ta: bool,
    tb: bool,
) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
    let (m, k) = logical_dims(a, ta, "matmul")?;
    let (k2, n) = logical_dims(b, tb, "matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            detail: format!(
                "inner dimensions {} vs {} (lhs {:?}{}, rhs {:?}{})",
                k,
                k2,
                a.shape(),
                if ta { " transposed" } else { "" },
                b.shape(),
                if tb { " transposed" } else { "" },
            ),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_kernel(a.data(), b.data(), m, k, n, ta, tb, &mut out);
    Ok((vec![m, n], out, Vec::new()))
}

fn backward_matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (m, k) = logical_dims(a, ta, "matmul").expect("checked at forward");
    let (_, n) = logical_dims(b, tb, "matmul").expect("checked at forward");

    // d(stored A): four cases derived from dL/dA_logical = g @ B_logical^T.
    let mut da = vec![0.0; a.numel()];
    match (ta, tb) {
        (false, false) => matmul_kernel(g, b.data(), m, n, k, false, true, &mut da),
        (false, true) => matmul_kernel(g, b.data(), m, n, k, false, false, &mut da),
        (true, false) => matmul_kernel(b.data(), g, k, n, m, false, true, &mut da),
        (true, true) => matmul_kernel(b.data(), g, k, n, m, true, true, &mut da),
    }

    // d(stored B): from dL/dB_logical = A_logical^T @ g.
    let mut db = vec![0.0; b.numel()];
    match (ta, tb) {
        (false, false) => matmul_kernel(a.data(), g, k, m, n, true, false, &mut db),
        (true, false) => matmul_kernel(a.data(), g, k, m, n, false, false, &mut db),
        (false, true) => matmul_kernel(g, a.data(), n, m, k, true, false, &mut db),
        (true, true) => matmul_kernel(g, a.data(), n, m, k, true, true, &mut db),
    }
    vec![Some(da), Some(db)]
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// Broadcast layout for `Add`/`Multiply`: identical shapes, or the smaller
/// operand's shape is a suffix of the larger's (tiled over leading axes).
fn broadcast_layout(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
) -> Result<(Vec<usize>, bool), TensorError> {
    if a.shape() == b.shape() {
        Ok((a.shape().to_vec(), false))
    } else if is_suffix(b.shape(), a.shape()) {
        Ok((a.shape().to_vec(), false))
    } else if is_suffix(a.shape(), b.shape()) {
        Ok((b.shape().to_vec(), true))
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            detail: format!("operand shapes {:?} vs {:?}", a.shape(), b.shape()),
        })
    }
}

fn forward_broadcast(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
    let (shape, a_is_small) = broadcast_layout(a, b, op)?;
    let (big, small) = if a_is_small { (b, a) } else { (a, b) };
    let ns = small.numel();
    let out: Vec<f64> = big
        .data()
        .iter()
        .enumerate()
        .map(|(i, &bv)| {
            let sv = small.data()[i % ns];
            if a_is_small {
                f(sv, bv)
            } else {
                f(bv, sv)
            }
        })
        .collect();
    Ok((shape, out, Vec::new()))
}

fn backward_add(a: &Tensor, b: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (_, a_is_small) = broadcast_layout(a, b, "add").expect("checked at forward");
    let (big, small) = if a_is_small { (b, a) } else { (a, b) };
    let d_big = g.to_vec();
    let ns = small.numel();
    let mut d_small = vec![0.0; ns];
    for (i, &gv) in g.iter().enumerate() {
        d_small[i % ns] += gv;
    }
    debug_assert_eq!(d_big.len(), big.numel());
    if a_is_small {
        vec![Some(d_small), Some(d_big)]
    } else {
        vec![Some(d_big), Some(d_small)]
    }
}

fn backward_multiply(a: &Tensor, b: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (_, a_is_small) = broadcast_layout(a, b, "multiply").expect("checked at forward");
    let (big, small) = if a_is_small { (b, a) } else { (a, b) };
    let ns = small.numel();
    let mut d_big = vec![0.0; big.numel()];
    let mut d_small = vec![0.0; ns];
    for (i, &gv) in g.iter().enumerate() {
        d_big[i] = gv * small.data()[i % ns];
        d_small[i % ns] += gv * big.data()[i];
    }
    if a_is_small {
        vec![Some(d_small), Some(d_big)]
    } else {
        vec![Some(d_big), Some(d_small)]
    }
}

fn forward_softmax(x: &Tensor) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
    let Some(&cols) = x.shape().last() else {
        return Err(TensorError::ShapeMismatch {
            op: "softmax",
            detail: "zero-dimensional input".to_string(),
        });
    };
    if cols == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "softmax",
            detail: "empty last axis".to_string(),
        });
    }
    let mut out = vec![0.0; x.numel()];
    for r in 0..x.numel() / cols {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out[r * cols + j] = e;
            sum += e;
        }
        for j in 0..cols {
            out[r * cols + j] /= sum;
        }
    }
    Ok((x.shape().to_vec(), out, Vec::new()))
}

fn forward_layer_norm(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    eps: f64,
) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
    let Some(&dim) = x.shape().last() else {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            detail: "zero-dimensional input".to_string(),
        });
    };
    if scale.shape() != [dim] || shift.shape() != [dim] {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            detail: format!(
                "scale {:?} / shift {:?} must both be [{}]",
                scale.shape(),
                shift.shape(),
                dim
            ),
        });
    }
    let rows = x.numel() / dim;
    let mut out = vec![0.0; x.numel()];
    let mut xhat = vec![0.0; x.numel()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x.data()[r * dim..(r + 1) * dim];
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for j in 0..dim {
            let h = (row[j] - mean) * inv;
            xhat[r * dim + j] = h;
            out[r * dim + j] = scale.data()[j] * h + shift.data()[j];
        }
    }
    Ok((x.shape().to_vec(), out, vec![xhat, inv_std]))
}

fn backward_layer_norm(
    scale: &Tensor,
    xhat: &[f64],
    inv_std: &[f64],
    g: &[f64],
) -> Vec<Option<Vec<f64>>> {
    let dim = scale.numel();
    let rows = xhat.len() / dim;
    let mut dx = vec![0.0; xhat.len()];
    let mut d_scale = vec![0.0; dim];
    let mut d_shift = vec![0.0; dim];
    for r in 0..rows {
        let base = r * dim;
        let mut mean_gs = 0.0;
        let mut mean_gs_xhat = 0.0;
        for j in 0..dim {
            let gs = g[base + j] * scale.data()[j];
            mean_gs += gs;
            mean_gs_xhat += gs * xhat[base + j];
        }
        mean_gs /= dim as f64;
        mean_gs_xhat /= dim as f64;
        for j in 0..dim {
            let gs = g[base + j] * scale.data()[j];
            dx[base + j] = inv_std[r] * (gs - mean_gs - xhat[base + j] * mean_gs_xhat);
            d_scale[j] += g[base + j] * xhat[base + j];
            d_shift[j] += g[base + j];
        }
    }
    vec![Some(dx), Some(d_scale), Some(d_shift)]
}

fn forward_dropout(
    x: &Tensor,
    rate: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidAttribute {
            op: "dropout",
            detail: format!("rate {} outside [0, 1)", rate),
        });
    }
    let mask: Vec<f64> = if rate == 0.0 {
        vec![1.0; x.numel()]
    } else {
        let keep_scale = 1.0 / (1.0 - rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..x.numel())
            .map(|_| if rng.random::<f64>() >= rate { keep_scale } else { 0.0 })
            .collect()
    };
    let out = x.data().iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
    Ok((x.shape().to_vec(), out, vec![mask]))
}

fn forward_embedding(
    table: &Tensor,
    ids: &[u32],
) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
    if table.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "embedding_lookup",
            detail: format!("table must be 2-D, got {:?}", table.shape()),
        });
    }
    let vocab = table.shape()[0];
    let dim = table.shape()[1];
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        let id = id as usize;
        if id >= vocab {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding_lookup",
                index: id,
                bound: vocab,
            });
        }
        out.extend_from_slice(&table.data()[id * dim..(id + 1) * dim]);
    }
    Ok((vec![ids.len(), dim], out, Vec::new()))
}

fn concat_layout(
    tensors: &[&Tensor],
    axis: usize,
) -> Result<(Vec<usize>, usize, usize, Vec<usize>), TensorError> {
    let first = tensors.first().ok_or(TensorError::ShapeMismatch {
        op: "concat",
        detail: "no inputs".to_string(),
    })?;
    let ndim = first.shape().len();
    if axis >= ndim {
        return Err(TensorError::IndexOutOfRange { op: "concat", index: axis, bound: ndim });
    }
    let mut axis_total = 0;
    let mut axis_sizes = Vec::with_capacity(tensors.len());
    for t in tensors {
        if t.shape().len() != ndim {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: format!("rank mismatch: {:?} vs {:?}", first.shape(), t.shape()),
            });
        }
        for (d, (&sa, &sb)) in first.shape().iter().zip(t.shape().iter()).enumerate() {
            if d != axis && sa != sb {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!(
                        "dimension {} differs off-axis: {:?} vs {:?}",
                        d,
                        first.shape(),
                        t.shape()
                    ),
                });
            }
        }
        axis_sizes.push(t.shape()[axis]);
        axis_total += t.shape()[axis];
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = axis_total;
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((shape, outer, inner, axis_sizes))
}

fn forward_concat(
    tensors: &[&Tensor],
    axis: usize,
) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
    let (shape, outer, inner, axis_sizes) = concat_layout(tensors, axis)?;
    let numel = shape.iter().product();
    let mut out = vec![0.0; numel];
    let total_axis: usize = axis_sizes.iter().sum();
    for o in 0..outer {
        let mut offset = 0;
        for (t, &len) in tensors.iter().zip(axis_sizes.iter()) {
            let chunk = len * inner;
            let src = &t.data()[o * chunk..(o + 1) * chunk];
            let dst = o * total_axis * inner + offset * inner;
            out[dst..dst + chunk].copy_from_slice(src);
            offset += len;
        }
    }
    Ok((shape, out, Vec::new()))
}

fn backward_concat(tensors: &[&Tensor], axis: usize, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (_, outer, inner, axis_sizes) = concat_layout(tensors, axis).expect("checked at forward");
    let total_axis: usize = axis_sizes.iter().sum();
    let mut grads: Vec<Vec<f64>> = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
    for o in 0..outer {
        let mut offset = 0;
        for (gi, &len) in grads.iter_mut().zip(axis_sizes.iter()) {
            let chunk = len * inner;
            let src = o * total_axis * inner + offset * inner;
            gi[o * chunk..(o + 1) * chunk].copy_from_slice(&g[src..src + chunk]);
            offset += len;
        }
    }
    grads.into_iter().map(Some).collect()
}

fn forward_slice(
    x: &Tensor,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
    let ndim = x.shape().len();
    if axis >= ndim {
        return Err(TensorError::IndexOutOfRange { op: "slice", index: axis, bound: ndim });
    }
    let dim = x.shape()[axis];
    if len == 0 || start + len > dim {
        return Err(TensorError::IndexOutOfRange { op: "slice", index: start + len, bound: dim });
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        let src = (o * dim + start) * inner;
        let dst = o * len * inner;
        out[dst..dst + len * inner].copy_from_slice(&x.data()[src..src + len * inner]);
    }
    Ok((shape, out, Vec::new()))
}

fn backward_slice(x: &Tensor, axis: usize, start: usize, len: usize, g: &[f64]) -> Vec<f64> {
    let dim = x.shape()[axis];
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let mut d = vec![0.0; x.numel()];
    for o in 0..outer {
        let dst = (o * dim + start) * inner;
        let src = o * len * inner;
        d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
    }
    d
}

fn forward_cosine(a: &Tensor, b: &Tensor) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
    if a.numel() != b.numel() || a.numel() == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "cosine_similarity",
            detail: format!("operand shapes {:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let mut dot = 0.0;
    let mut na2 = 0.0;
    let mut nb2 = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        dot += x * y;
        na2 += x * x;
        nb2 += y * y;
    }
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(TensorError::ZeroNorm);
    }
    let na = na2.sqrt();
    let nb = nb2.sqrt();
    // cos(x, x) is exactly 1; don't let rounding say otherwise.
    let value = if a.data() == b.data() { 1.0 } else { dot / (na * nb) };
    Ok((vec![1], vec![value], vec![vec![dot, na, nb]]))
}

fn forward_cross_entropy(
    logits: &Tensor,
    label: usize,
) -> Result<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>), TensorError> {
    let n = logits.numel();
    if n < 2 {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("need at least 2 logits, got {}", n),
        });
    }
    if label >= n {
        return Err(TensorError::LabelOutOfRange { label, classes: n });
    }
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut probs = vec![0.0; n];
    for (p, &v) in probs.iter_mut().zip(logits.data().iter()) {
        *p = (v - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    let loss = max + sum.ln() - logits.data()[label];
    Ok((vec![1], vec![loss], vec![probs]))
}
