//! Tape-based reverse-mode differentiation. Operations append nodes to
//! the tape; `backward` walks the records in exact reverse order,
//! accumulating gradients additively into every leaf that asked for them.

use rayon::prelude::*;

use super::Tensor;
use crate::rng::Rng;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Marker for padding rows that cross-entropy must ignore.
pub const IGNORE_TARGET: usize = usize::MAX;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat {
        axis: usize,
        inputs: Vec<Var>,
    },
    Slice {
        input: Var,
        r0: usize,
        c0: usize,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        label_smoothing: f64,
    },
    SumAll(Var),
    SumAxis {
        input: Var,
        axis: usize,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

const LAYER_NORM_EPS: f64 = 1e-6;
/// Below this many multiply-accumulates a matmul stays single-threaded.
const PAR_MATMUL_THRESHOLD: usize = 1 << 16;

pub struct Tape {
    nodes: Vec<Node>,
    rng: Rng,
    train: bool,
}

impl Tape {
    pub fn new(seed: u64) -> Tape {
        Tape {
            nodes: Vec::new(),
            rng: Rng::new(seed),
            train: true,
        }
    }

    pub fn eval_mode(seed: u64) -> Tape {
        Tape {
            nodes: Vec::new(),
            rng: Rng::new(seed),
            train: false,
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn grad(&self, var: Var) -> Option<&Tensor> {
        self.nodes[var.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(!value.has_nan(), "NaN/Inf out of {op:?}");
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Trainable parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input data; no gradient is accumulated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols(),
            bv.rows(),
            "matmul: {:?} x {:?}",
            av.shape,
            bv.shape
        );
        let value = matmul_raw(av, bv, false, false);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), needs)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.set(j, i, av.at(i, j));
            }
        }
        let needs = self.needs(a);
        self.push(out, Op::Transpose(a), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x + y, "add");
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x * y, "mul");
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let value = Tensor::new(
            av.shape.clone(),
            av.data.iter().map(|x| x * factor).collect(),
        );
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, factor), needs)
    }

    pub fn concat(&mut self, axis: usize, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty());
        assert!(axis < 2, "concat axis must be 0 or 1");
        let first = self.value(inputs[0]);
        let (mut rows, mut cols) = (first.rows(), first.cols());
        for &v in &inputs[1..] {
            let t = self.value(v);
            if axis == 0 {
                assert_eq!(t.cols(), cols, "concat: column mismatch");
                rows += t.rows();
            } else {
                assert_eq!(t.rows(), rows, "concat: row mismatch");
                cols += t.cols();
            }
        }
        if axis == 0 {
            rows = inputs.iter().map(|&v| self.value(v).rows()).sum();
        }
        let mut out = Tensor::zeros(rows, cols);
        if axis == 0 {
            let mut offset = 0;
            for &v in inputs {
                let t = self.value(v);
                out.data[offset..offset + t.numel()].copy_from_slice(&t.data);
                offset += t.numel();
            }
        } else {
            let mut col_offset = 0;
            for &v in inputs {
                let t = self.value(v);
                for r in 0..rows {
                    for c in 0..t.cols() {
                        out.set(r, col_offset + c, t.at(r, c));
                    }
                }
                col_offset += t.cols();
            }
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(
            out,
            Op::Concat {
                axis,
                inputs: inputs.to_vec(),
            },
            needs,
        )
    }

    /// Rectangular region `[r0..r1, c0..c1)` of a rank-2 tensor.
    pub fn slice(&mut self, input: Var, r0: usize, r1: usize, c0: usize, c1: usize) -> Var {
        let t = self.value(input);
        assert!(
            r1 <= t.rows() && c1 <= t.cols() && r0 <= r1 && c0 <= c1,
            "slice [{r0}..{r1}, {c0}..{c1}) of {:?}",
            t.shape
        );
        let mut out = Tensor::zeros(r1 - r0, c1 - c0);
        for r in r0..r1 {
            for c in c0..c1 {
                out.set(r - r0, c - c0, t.at(r, c));
            }
        }
        let needs = self.needs(input);
        self.push(out, Op::Slice { input, r0, c0 }, needs)
    }

    /// Gather rows of `table` by id: output row i is `table[ids[i]]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.cols();
        let mut out = Tensor::zeros(ids.len(), cols);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < t.rows(), "embed id {id} out of {} rows", t.rows());
            out.data[i * cols..(i + 1) * cols].copy_from_slice(t.row_slice(id));
        }
        let needs = self.needs(table);
        self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            needs,
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map_unary(a, |x| x.tanh());
        let needs = self.needs(a);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map_unary(a, |x| 1.0 / (1.0 + (-x).exp()));
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map_unary(a, |x| x.max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    fn map_unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor::new(av.shape.clone(), av.data.iter().map(|&x| f(x)).collect())
    }

    /// Row-wise softmax with the max-subtraction trick.
    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows() {
            softmax_row(&mut out, r);
        }
        let needs = self.needs(a);
        self.push(out, Op::Softmax(a), needs)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            let row = &mut out.data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_z = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            row.iter_mut().for_each(|x| *x -= log_z);
        }
        let needs = self.needs(a);
        self.push(out, Op::LogSoftmax(a), needs)
    }

    /// Row-wise layer normalization with learned gain and bias `[1, C]`.
    pub fn layer_norm(&mut self, input: Var, gain: Var, bias: Var) -> Var {
        let x = self.value(input);
        let g = self.value(gain);
        let b = self.value(bias);
        assert_eq!(g.shape, vec![1, x.cols()], "layer_norm gain shape");
        assert_eq!(b.shape, vec![1, x.cols()], "layer_norm bias shape");
        let cols = x.cols();
        let mut out = Tensor::zeros(x.rows(), cols);
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let denom = (var + LAYER_NORM_EPS).sqrt();
            for c in 0..cols {
                out.set(r, c, (row[c] - mean) / denom * g.data[c] + b.data[c]);
            }
        }
        let needs = self.needs(input) || self.needs(gain) || self.needs(bias);
        self.push(out, Op::LayerNorm { input, gain, bias }, needs)
    }

    /// Inverted dropout: at train time, zero with probability `rate` and
    /// scale survivors by 1/(1-rate); identity in eval mode.
    pub fn dropout(&mut self, input: Var, rate: f64) -> Var {
        if !self.train || rate <= 0.0 {
            return input;
        }
        assert!(rate < 1.0, "dropout rate must be below 1");
        let n = self.value(input).numel();
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.gen_f64() < rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let iv = self.value(input);
        let value = Tensor::new(
            iv.shape.clone(),
            iv.data.iter().zip(&mask).map(|(x, m)| x * m).collect(),
        );
        let needs = self.needs(input);
        self.push(value, Op::Dropout { input, mask }, needs)
    }

    /// Mean label-smoothed cross entropy over rows whose target is not
    /// [`IGNORE_TARGET`]. The smoothed target puts 1-eps on the gold
    /// class and eps/(V-1) on every other class.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], label_smoothing: f64) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "cross_entropy row count");
        let vocab = lv.cols();
        let counted = targets.iter().filter(|&&t| t != IGNORE_TARGET).count();
        let mut total = 0.0;
        if counted > 0 {
            for (r, &t) in targets.iter().enumerate() {
                if t == IGNORE_TARGET {
                    continue;
                }
                assert!(t < vocab, "target {t} out of vocabulary {vocab}");
                let row = lv.row_slice(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let log_z = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
                let off = if vocab > 1 {
                    label_smoothing / (vocab as f64 - 1.0)
                } else {
                    0.0
                };
                let mut loss = 0.0;
                for (c, &x) in row.iter().enumerate() {
                    let q = if c == t { 1.0 - label_smoothing } else { off };
                    if q > 0.0 {
                        loss -= q * (x - log_z);
                    }
                }
                total += loss;
            }
            total /= counted as f64;
        }
        let needs = self.needs(logits);
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                label_smoothing,
            },
            needs,
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data.iter().sum());
        let needs = self.needs(a);
        self.push(value, Op::SumAll(a), needs)
    }

    /// Sum along `axis`: 0 collapses rows into `[1, C]`, 1 collapses
    /// columns into `[R, 1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let av = self.value(a);
        let value = match axis {
            0 => {
                let mut out = Tensor::zeros(1, av.cols());
                for r in 0..av.rows() {
                    for c in 0..av.cols() {
                        out.data[c] += av.at(r, c);
                    }
                }
                out
            }
            1 => {
                let mut out = Tensor::zeros(av.rows(), 1);
                for r in 0..av.rows() {
                    out.data[r] = av.row_slice(r).iter().sum();
                }
                out
            }
            _ => panic!("sum_axis axis must be 0 or 1"),
        };
        let needs = self.needs(a);
        self.push(value, Op::SumAxis { input: a, axis }, needs)
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively
    /// into every node on the path to a `leaf`.
    pub fn backward(&mut self, loss: Var) {
        assert!(
            self.value(loss).is_scalar(),
            "backward needs a scalar loss, got {:?}",
            self.value(loss).shape
        );
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {
                    self.nodes[idx].grad = Some(grad);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let da = matmul_raw(&grad, self.value(b), false, true);
                        self.accumulate(a, da);
                    }
                    if self.needs(b) {
                        let db = matmul_raw(self.value(a), &grad, true, false);
                        self.accumulate(b, db);
                    }
                }
                Op::Transpose(a) => {
                    if self.needs(a) {
                        let (r, c) = (grad.rows(), grad.cols());
                        let mut da = Tensor::zeros(c, r);
                        for i in 0..r {
                            for j in 0..c {
                                da.set(j, i, grad.at(i, j));
                            }
                        }
                        self.accumulate(a, da);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        self.accumulate(a, grad.clone());
                    }
                    if self.needs(b) {
                        let db = reduce_to_shape(&grad, &self.value(b).shape.clone());
                        self.accumulate(b, db);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let da = broadcast_zip(&grad, self.value(b), |g, y| g * y, "mul-bwd");
                        self.accumulate(a, da);
                    }
                    if self.needs(b) {
                        let full = broadcast_zip(&grad, self.value(a), |g, x| g * x, "mul-bwd");
                        let db = reduce_to_shape(&full, &self.value(b).shape.clone());
                        self.accumulate(b, db);
                    }
                }
                Op::Scale(a, factor) => {
                    if self.needs(a) {
                        let da = Tensor::new(
                            grad.shape.clone(),
                            grad.data.iter().map(|g| g * factor).collect(),
                        );
                        self.accumulate(a, da);
                    }
                }
                Op::Concat { axis, inputs } => {
                    let mut offset = 0;
                    for v in inputs {
                        let shape = self.value(v).shape.clone();
                        let (r, c) = (shape[0], shape[1]);
                        if self.needs(v) {
                            let mut dv = Tensor::zeros(r, c);
                            if axis == 0 {
                                dv.data.copy_from_slice(&grad.data[offset..offset + r * c]);
                            } else {
                                for i in 0..r {
                                    for j in 0..c {
                                        dv.set(i, j, grad.at(i, offset + j));
                                    }
                                }
                            }
                            self.accumulate(v, dv);
                        }
                        offset += if axis == 0 { r * c } else { c };
                    }
                }
                Op::Slice { input, r0, c0 } => {
                    if self.needs(input) {
                        let shape = self.value(input).shape.clone();
                        let mut dv = Tensor::zeros(shape[0], shape[1]);
                        for r in 0..grad.rows() {
                            for c in 0..grad.cols() {
                                dv.set(r0 + r, c0 + c, grad.at(r, c));
                            }
                        }
                        self.accumulate(input, dv);
                    }
                }
                Op::Embed { table, ids } => {
                    if self.needs(table) {
                        let shape = self.value(table).shape.clone();
                        let cols = shape[1];
                        let mut dt = Tensor::zeros(shape[0], cols);
                        for (i, &id) in ids.iter().enumerate() {
                            for c in 0..cols {
                                dt.data[id * cols + c] += grad.at(i, c);
                            }
                        }
                        self.accumulate(table, dt);
                    }
                }
                Op::Tanh(a) => {
                    if self.needs(a) {
                        let y = &self.nodes[idx].value;
                        let da = Tensor::new(
                            grad.shape.clone(),
                            grad.data
                                .iter()
                                .zip(&y.data)
                                .map(|(g, y)| g * (1.0 - y * y))
                                .collect(),
                        );
                        self.accumulate(a, da);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(a) {
                        let y = &self.nodes[idx].value;
                        let da = Tensor::new(
                            grad.shape.clone(),
                            grad.data
                                .iter()
                                .zip(&y.data)
                                .map(|(g, y)| g * y * (1.0 - y))
                                .collect(),
                        );
                        self.accumulate(a, da);
                    }
                }
                Op::Relu(a) => {
                    if self.needs(a) {
                        let y = &self.nodes[idx].value;
                        let da = Tensor::new(
                            grad.shape.clone(),
                            grad.data
                                .iter()
                                .zip(&y.data)
                                .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                                .collect(),
                        );
                        self.accumulate(a, da);
                    }
                }
                Op::Softmax(a) => {
                    if self.needs(a) {
                        let y = &self.nodes[idx].value;
                        let cols = y.cols();
                        let mut da = Tensor::zeros(y.rows(), cols);
                        for r in 0..y.rows() {
                            let yr = y.row_slice(r);
                            let gr = grad.row_slice(r);
                            let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                            for c in 0..cols {
                                da.set(r, c, yr[c] * (gr[c] - dot));
                            }
                        }
                        self.accumulate(a, da);
                    }
                }
                Op::LogSoftmax(a) => {
                    if self.needs(a) {
                        let y = &self.nodes[idx].value;
                        let cols = y.cols();
                        let mut da = Tensor::zeros(y.rows(), cols);
                        for r in 0..y.rows() {
                            let yr = y.row_slice(r);
                            let gr = grad.row_slice(r);
                            let gsum: f64 = gr.iter().sum();
                            for c in 0..cols {
                                da.set(r, c, gr[c] - yr[c].exp() * gsum);
                            }
                        }
                        self.accumulate(a, da);
                    }
                }
                Op::LayerNorm { input, gain, bias } => {
                    let x = self.value(input).clone();
                    let g = self.value(gain).clone();
                    let cols = x.cols();
                    let mut dx = Tensor::zeros(x.rows(), cols);
                    let mut dgain = Tensor::zeros(1, cols);
                    let mut dbias = Tensor::zeros(1, cols);
                    for r in 0..x.rows() {
                        let row = x.row_slice(r);
                        let gr = grad.row_slice(r);
                        let mean = row.iter().sum::<f64>() / cols as f64;
                        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                        let denom = (var + LAYER_NORM_EPS).sqrt();
                        // d wrt normalized activations.
                        let dxhat: Vec<f64> = (0..cols).map(|c| gr[c] * g.data[c]).collect();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) / denom).collect();
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            let v = (dxhat[c]
                                - sum_dxhat / cols as f64
                                - xhat[c] * sum_dxhat_xhat / cols as f64)
                                / denom;
                            dx.set(r, c, v);
                            dgain.data[c] += gr[c] * xhat[c];
                            dbias.data[c] += gr[c];
                        }
                    }
                    if self.needs(input) {
                        self.accumulate(input, dx);
                    }
                    if self.needs(gain) {
                        self.accumulate(gain, dgain);
                    }
                    if self.needs(bias) {
                        self.accumulate(bias, dbias);
                    }
                }
                Op::Dropout { input, mask } => {
                    if self.needs(input) {
                        let da = Tensor::new(
                            grad.shape.clone(),
                            grad.data.iter().zip(&mask).map(|(g, m)| g * m).collect(),
                        );
                        self.accumulate(input, da);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    label_smoothing,
                } => {
                    if self.needs(logits) {
                        let lv = self.value(logits).clone();
                        let vocab = lv.cols();
                        let counted = targets.iter().filter(|&&t| t != IGNORE_TARGET).count();
                        let mut dl = Tensor::zeros(lv.rows(), vocab);
                        if counted > 0 {
                            let g = grad.item() / counted as f64;
                            let off = if vocab > 1 {
                                label_smoothing / (vocab as f64 - 1.0)
                            } else {
                                0.0
                            };
                            for (r, &t) in targets.iter().enumerate() {
                                if t == IGNORE_TARGET {
                                    continue;
                                }
                                let row = lv.row_slice(r);
                                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                                let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
                                for c in 0..vocab {
                                    let p = (row[c] - max).exp() / z;
                                    let q = if c == t { 1.0 - label_smoothing } else { off };
                                    dl.set(r, c, g * (p - q));
                                }
                            }
                        }
                        self.accumulate(logits, dl);
                    }
                }
                Op::SumAll(a) => {
                    if self.needs(a) {
                        let shape = self.value(a).shape.clone();
                        self.accumulate(
                            a,
                            Tensor::new(shape.clone(), vec![grad.item(); shape.iter().product()]),
                        );
                    }
                }
                Op::SumAxis { input, axis } => {
                    if self.needs(input) {
                        let shape = self.value(input).shape.clone();
                        let mut da = Tensor::zeros(shape[0], shape[1]);
                        for r in 0..shape[0] {
                            for c in 0..shape[1] {
                                let g = if axis == 0 {
                                    grad.data[c]
                                } else {
                                    grad.data[r]
                                };
                                da.set(r, c, g);
                            }
                        }
                        self.accumulate(input, da);
                    }
                }
            }
            // Interior gradients are dropped once consumed; leaves keep
            // theirs for the optimizer.
        }
    }

    fn accumulate(&mut self, var: Var, grad: Tensor) {
        match &mut self.nodes[var.0].grad {
            Some(existing) => {
                debug_assert_eq!(existing.shape, grad.shape);
                existing
                    .data
                    .iter_mut()
                    .zip(&grad.data)
                    .for_each(|(e, g)| *e += g);
            }
            slot @ None => *slot = Some(grad),
        }
    }
}

fn softmax_row(t: &mut Tensor, r: usize) {
    let cols = t.cols();
    let row = &mut t.data[r * cols..(r + 1) * cols];
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// C = A^ta x B^tb with cache-friendly loops; rows parallelize once the
/// work is large enough (disjoint output rows keep it deterministic).
pub fn matmul_raw(a: &Tensor, b: &Tensor, transpose_a: bool, transpose_b: bool) -> Tensor {
    let (m, k) = if transpose_a {
        (a.cols(), a.rows())
    } else {
        (a.rows(), a.cols())
    };
    let (kb, n) = if transpose_b {
        (b.cols(), b.rows())
    } else {
        (b.rows(), b.cols())
    };
    assert_eq!(k, kb, "matmul_raw inner dims");
    let mut out = Tensor::zeros(m, n);

    let work = m * n * k;
    let a_cols = a.cols();
    let b_cols = b.cols();
    let body = |i: usize, row_out: &mut [f64]| {
        for p in 0..k {
            let av = if transpose_a {
                a.data[p * a_cols + i]
            } else {
                a.data[i * a_cols + p]
            };
            if av == 0.0 {
                continue;
            }
            if transpose_b {
                for (j, out_v) in row_out.iter_mut().enumerate() {
                    *out_v += av * b.data[j * b_cols + p];
                }
            } else {
                let brow = &b.data[p * b_cols..p * b_cols + n];
                for (out_v, bv) in row_out.iter_mut().zip(brow) {
                    *out_v += av * bv;
                }
            }
        }
    };
    if work >= PAR_MATMUL_THRESHOLD {
        out.data
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in out.data.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
    out
}

/// Elementwise op with limited broadcasting: `b` may match `a`, be a row
/// `[1, C]`, a column `[R, 1]`, or a scalar `[1, 1]`.
fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64, op: &str) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(r, c);
    if b.shape == a.shape {
        for i in 0..a.data.len() {
            out.data[i] = f(a.data[i], b.data[i]);
        }
    } else if b.rows() == 1 && b.cols() == c {
        for i in 0..r {
            for j in 0..c {
                out.set(i, j, f(a.at(i, j), b.data[j]));
            }
        }
    } else if b.cols() == 1 && b.rows() == r {
        for i in 0..r {
            for j in 0..c {
                out.set(i, j, f(a.at(i, j), b.data[i]));
            }
        }
    } else if b.is_scalar() {
        let s = b.data[0];
        for i in 0..a.data.len() {
            out.data[i] = f(a.data[i], s);
        }
    } else {
        panic!("{op}: cannot broadcast {:?} with {:?}", a.shape, b.shape);
    }
    out
}

/// Sum `grad` down to `shape` (inverting the broadcast above).
fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape == shape {
        return grad.clone();
    }
    let (r, c) = (grad.rows(), grad.cols());
    if shape == [1, c] {
        let mut out = Tensor::zeros(1, c);
        for i in 0..r {
            for j in 0..c {
                out.data[j] += grad.at(i, j);
            }
        }
        out
    } else if shape == [r, 1] {
        let mut out = Tensor::zeros(r, 1);
        for i in 0..r {
            out.data[i] = grad.row_slice(i).iter().sum();
        }
        out
    } else if shape == [1, 1] {
        Tensor::scalar(grad.data.iter().sum())
    } else {
        panic!("cannot reduce {:?} to {:?}", grad.shape, shape);
    }
}
