//! Operation tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value and enough bookkeeping
//! to run its backward rule. Nodes are only ever appended, so index order is
//! a topological order and the reverse sweep simply walks the node list
//! backwards from the loss.

use super::tensor::Tensor;
use super::AutodiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a batch of per-sample losses is collapsed to a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Deliberately broken backward rules, used to prove the gradient checker
/// actually catches mistakes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    /// ReLU passes the upstream gradient through unmasked.
    ReluPassThrough,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    GlobalAvgPool(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
        reduction: Reduction,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<BackwardFault>,
    /// First node whose forward value went non-finite (debug builds only).
    first_non_finite: Option<usize>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `node`, or `None` when the loss
    /// does not depend on it.
    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but returns an owned zero tensor of the
    /// node's shape when the loss does not depend on it.
    pub fn get_or_zeros(&self, node: NodeId, shape: &[usize]) -> Tensor {
        self.get(node)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: BackwardFault) -> Self {
        Self {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.nodes[node.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        if cfg!(debug_assertions) && self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Cross-correlation with symmetric zero padding so the output length
    /// equals the input length. `input` is `[batch, ch_in, len]`, `kernel`
    /// is `[ch_out, ch_in, k]` with odd `k`, and `bias` is `[ch_out]`.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let (x, w, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geom = ConvGeometry::check(x.shape(), w.shape(), b.shape())?;
        let mut out = vec![0.0; geom.batch * geom.ch_out * geom.len];
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let l = geom.len;
        for bi in 0..geom.batch {
            for co in 0..geom.ch_out {
                let out_row = &mut out[(bi * geom.ch_out + co) * l..][..l];
                out_row.fill(bd[co]);
                for ci in 0..geom.ch_in {
                    let in_row = &xd[(bi * geom.ch_in + ci) * l..][..l];
                    let taps = &wd[(co * geom.ch_in + ci) * geom.k..][..geom.k];
                    for (kk, &tap) in taps.iter().enumerate() {
                        let Some((lo, hi, shift)) = geom.tap_range(kk) else {
                            continue;
                        };
                        let src = &in_row[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                        for (o, &v) in out_row[lo..hi].iter_mut().zip(src) {
                            *o += tap * v;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![geom.batch, geom.ch_out, l], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernel,
                bias,
            },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::Relu(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().fold(0.0, |acc, &v| acc + v);
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Affine map `x · Wᵀ + b` with `x: [batch, in]`, `W: [out, in]`,
    /// `b: [out]`.
    pub fn dense(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (batch, n_in, n_out) = dense_dims(x.shape(), w.shape(), b.shape())?;
        let mut out = vec![0.0; batch * n_out];
        for bi in 0..batch {
            let row = &x.data()[bi * n_in..][..n_in];
            for o in 0..n_out {
                let w_row = &w.data()[o * n_in..][..n_in];
                let dot = row.iter().zip(w_row).fold(0.0, |acc, (a, b)| acc + a * b);
                out[bi * n_out + o] = b.data()[o] + dot;
            }
        }
        let value = Tensor::new(vec![batch, n_out], out)?;
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Mean over the length axis: `[batch, ch, len]` to `[batch, ch]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let src = self.value(x);
        let &[batch, ch, len] = src.shape() else {
            return Err(AutodiffError::Shape(format!(
                "global_avg_pool expects [batch, ch, len], got {:?}",
                src.shape()
            )));
        };
        if len == 0 {
            return Err(AutodiffError::Shape("global_avg_pool over empty axis".into()));
        }
        let data = src
            .data()
            .chunks_exact(len)
            .map(|row| row.iter().fold(0.0, |acc, &v| acc + v) / len as f64)
            .collect();
        let value = Tensor::new(vec![batch, ch], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    /// Cross-entropy of `softmax(logits)` against integer labels, using the
    /// max-shifted log-sum-exp. Returns a one-element tensor.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<NodeId, AutodiffError> {
        let z = self.value(logits);
        let &[batch, classes] = z.shape() else {
            return Err(AutodiffError::Shape(format!(
                "softmax_cross_entropy expects [batch, classes], got {:?}",
                z.shape()
            )));
        };
        if labels.len() != batch {
            return Err(AutodiffError::Shape(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(AutodiffError::Class { label, classes });
        }
        let mut probs = Vec::with_capacity(batch * classes);
        let mut total = 0.0;
        for (row, &label) in z.data().chunks_exact(classes).zip(labels) {
            let (lse, row_probs) = log_softmax_parts(row);
            total += lse - row[label];
            probs.extend(row_probs);
        }
        let loss = match reduction {
            Reduction::Mean => total / batch as f64,
            Reduction::Sum => total,
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                reduction,
            },
        ))
    }

    /// Activation pattern (`input > 0`) of every ReLU on the tape, in
    /// recording order. Two tapes with identical structure produce
    /// comparable patterns.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|node| match node.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).data().iter().map(|&v| v > 0.0))
            .collect()
    }

    /// In debug builds, the first node whose value contains NaN or an
    /// infinity. Always `Ok` in release builds.
    pub fn check_finite(&self) -> Result<(), AutodiffError> {
        match self.first_non_finite {
            Some(node) => Err(AutodiffError::NonFinite { node }),
            None => Ok(()),
        }
    }

    /// Reverse sweep from a scalar `loss`. The tape is left untouched, so
    /// calling this repeatedly yields identical gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        if !loss_value.is_finite() {
            return Err(AutodiffError::NonFinite { node: loss.0 });
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Relu(x) => {
                let input = self.value(*x);
                let data = if self.fault == Some(BackwardFault::ReluPassThrough) {
                    g.data().to_vec()
                } else {
                    g.data()
                        .iter()
                        .zip(input.data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect()
                };
                accumulate(grads, *x, shaped(input, data));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, shaped(av, ga));
                accumulate(grads, *b, shaped(bv, gb));
            }
            Op::Scale(x, factor) => {
                let data = g.data().iter().map(|v| v * factor).collect();
                accumulate(grads, *x, shaped(self.value(*x), data));
            }
            Op::Sum(x) => {
                let src = self.value(*x);
                accumulate(grads, *x, Tensor::filled(src.shape(), g.data()[0]));
            }
            Op::GlobalAvgPool(x) => {
                let src = self.value(*x);
                let len = src.shape()[2];
                let inv = 1.0 / len as f64;
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv * inv, len))
                    .collect();
                accumulate(grads, *x, shaped(src, data));
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => self.dense_backward(g, *input, *weight, *bias, grads),
            Op::Conv1d {
                input,
                kernel,
                bias,
            } => self.conv1d_backward(g, *input, *kernel, *bias, grads),
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
                reduction,
            } => {
                let z = self.value(*logits);
                let classes = z.shape()[1];
                let scale = match reduction {
                    Reduction::Mean => g.data()[0] / labels.len() as f64,
                    Reduction::Sum => g.data()[0],
                };
                let mut data = probs.clone();
                for (row, &label) in data.chunks_exact_mut(classes).zip(labels) {
                    row[label] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                accumulate(grads, *logits, shaped(z, data));
            }
        }
    }

    fn dense_backward(
        &self,
        g: &Tensor,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        grads: &mut [Option<Tensor>],
    ) {
        let (x, w) = (self.value(input), self.value(weight));
        let (batch, n_in) = (x.shape()[0], x.shape()[1]);
        let n_out = w.shape()[0];
        let mut gx = vec![0.0; batch * n_in];
        let mut gw = vec![0.0; n_out * n_in];
        let mut gb = vec![0.0; n_out];
        for bi in 0..batch {
            let x_row = &x.data()[bi * n_in..][..n_in];
            let gx_row = &mut gx[bi * n_in..][..n_in];
            for o in 0..n_out {
                let go = g.data()[bi * n_out + o];
                gb[o] += go;
                let w_row = &w.data()[o * n_in..][..n_in];
                let gw_row = &mut gw[o * n_in..][..n_in];
                for i in 0..n_in {
                    gx_row[i] += go * w_row[i];
                    gw_row[i] += go * x_row[i];
                }
            }
        }
        accumulate(grads, input, shaped(x, gx));
        accumulate(grads, weight, shaped(w, gw));
        accumulate(grads, bias, shaped(self.value(bias), gb));
    }

    fn conv1d_backward(
        &self,
        g: &Tensor,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        grads: &mut [Option<Tensor>],
    ) {
        let (x, w, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geom = ConvGeometry::check(x.shape(), w.shape(), b.shape())
            .expect("validated during forward");
        let l = geom.len;
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; b.len()];
        let (xd, wd, gd) = (x.data(), w.data(), g.data());
        for bi in 0..geom.batch {
            for co in 0..geom.ch_out {
                let g_row = &gd[(bi * geom.ch_out + co) * l..][..l];
                gb[co] += g_row.iter().fold(0.0, |acc, &v| acc + v);
                for ci in 0..geom.ch_in {
                    let x_off = (bi * geom.ch_in + ci) * l;
                    let w_off = (co * geom.ch_in + ci) * geom.k;
                    for kk in 0..geom.k {
                        let Some((lo, hi, shift)) = geom.tap_range(kk) else {
                            continue;
                        };
                        let src_lo = (lo as isize + shift) as usize;
                        let src_hi = (hi as isize + shift) as usize;
                        let tap = wd[w_off + kk];
                        let x_seg = &xd[x_off + src_lo..x_off + src_hi];
                        let g_seg = &g_row[lo..hi];
                        gw[w_off + kk] += g_seg
                            .iter()
                            .zip(x_seg)
                            .fold(0.0, |acc, (a, b)| acc + a * b);
                        for (gxv, &gv) in gx[x_off + src_lo..x_off + src_hi].iter_mut().zip(g_seg) {
                            *gxv += tap * gv;
                        }
                    }
                }
            }
        }
        accumulate(grads, input, shaped(x, gx));
        accumulate(grads, kernel, shaped(w, gw));
        accumulate(grads, bias, shaped(b, gb));
    }

    fn zip_with(
        &self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(AutodiffError::Shape(format!(
                "{name}: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

fn shaped(like: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(like.shape().to_vec(), data).expect("gradient matches node shape")
}

fn accumulate(grads: &mut [Option<Tensor>], node: NodeId, g: Tensor) {
    match &mut grads[node.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Returns `(logsumexp(row), softmax(row))`.
fn log_softmax_parts(row: &[f64]) -> (f64, Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total = exps.iter().fold(0.0, |acc, &v| acc + v);
    let probs = exps.into_iter().map(|e| e / total).collect();
    (max + total.ln(), probs)
}

fn dense_dims(
    x: &[usize],
    w: &[usize],
    b: &[usize],
) -> Result<(usize, usize, usize), AutodiffError> {
    match (x, w, b) {
        (&[batch, n_in], &[n_out, w_in], &[b_out]) if w_in == n_in && b_out == n_out => {
            Ok((batch, n_in, n_out))
        }
        _ => Err(AutodiffError::Shape(format!(
            "dense: input {x:?}, weight {w:?}, bias {b:?}"
        ))),
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    batch: usize,
    ch_in: usize,
    ch_out: usize,
    len: usize,
    k: usize,
}

impl ConvGeometry {
    fn check(x: &[usize], w: &[usize], b: &[usize]) -> Result<Self, AutodiffError> {
        let (&[batch, ch_in, len], &[ch_out, w_in, k], &[b_out]) = (x, w, b) else {
            return Err(AutodiffError::Shape(format!(
                "conv1d: input {x:?}, kernel {w:?}, bias {b:?}"
            )));
        };
        if w_in != ch_in || b_out != ch_out {
            return Err(AutodiffError::Shape(format!(
                "conv1d: input {x:?}, kernel {w:?}, bias {b:?}"
            )));
        }
        if k % 2 == 0 {
            return Err(AutodiffError::Shape(format!(
                "conv1d: same padding needs an odd kernel, got k = {k}"
            )));
        }
        Ok(Self {
            batch,
            ch_in,
            ch_out,
            len,
            k,
        })
    }

    /// Output index range `[lo, hi)` touched by tap `kk`, and the shift from
    /// output index to input index. `None` when the tap never overlaps.
    fn tap_range(&self, kk: usize) -> Option<(usize, usize, isize)> {
        let shift = kk as isize - (self.k / 2) as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (self.len as isize - shift).min(self.len as isize);
        (hi > lo as isize).then_some((lo, hi as usize, shift))
    }
}
