//! Computation record for reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node holding its output
//! value and enough saved state to run its backward rule. Nodes are appended
//! in evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] simply walks it in reverse.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::array::{Array, Scalar};
use crate::error::{Error, Result};

/// Identity of a node within one [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Sine(NodeId),
    Scale(NodeId, T),
    MeanRows(NodeId),
    Stack(Vec<NodeId>),
    SoftmaxPositions(NodeId),
    SumPositions(NodeId),
    BroadcastCols(NodeId),
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        padding: usize,
    },
    Reshape(NodeId),
    GatherRows {
        table: NodeId,
        indices: Vec<usize>,
    },
    SegmentMean {
        src: NodeId,
        offsets: Vec<usize>,
    },
    /// `mask` holds the per-element multiplier; `None` in eval mode.
    Dropout {
        input: NodeId,
        mask: Option<Vec<T>>,
    },
    /// Per-element local derivative (1 on the non-negative side).
    RRelu {
        input: NodeId,
        factors: Vec<T>,
    },
    CrossEntropy {
        scores: NodeId,
        gold: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(NodeId),
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
}

/// A reverse-mode computation record.
///
/// A tape built with [`Tape::new`] is in evaluation mode: dropout is the
/// identity and rrelu uses the fixed slope `(lower + upper) / 2`. A tape built
/// with [`Tape::training`] samples dropout masks and rrelu slopes from a
/// seeded generator.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    rng: Option<ChaCha8Rng>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure_rank(op: &'static str, a: &[usize], rank: usize) -> Result<()> {
    if a.len() != rank {
        return Err(Error::invalid(
            op,
            format!("expected rank {rank}, got shape {a:?}"),
        ));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            rng: None,
        }
    }

    pub fn training(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn data(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.data()
    }

    fn push(&mut self, name: &'static str, op: Op<T>, value: Array<T>) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Registers an input array. Gradients flow to leaves.
    pub fn leaf(&mut self, value: Array<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        ensure_rank("matmul", sa, 2)?;
        ensure_rank("matmul", sb, 2)?;
        if sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let out = matmul_kernel(self.data(a), self.data(b), n, k, m);
        self.push(
            "matmul",
            Op::MatMul(a, b),
            Array::from_parts_unchecked(vec![n, m], out),
        )
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a);
        ensure_rank("transpose", s, 2)?;
        let (n, m) = (s[0], s[1]);
        let src = self.data(a);
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = src[i * m + j];
            }
        }
        self.push(
            "transpose",
            Op::Transpose(a),
            Array::from_parts_unchecked(vec![m, n], out),
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out = zip_with(self.data(a), self.data(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push(
            "add",
            Op::Add(a, b),
            Array::from_parts_unchecked(shape, out),
        )
    }

    /// `a[..., m] + bias[m]`, broadcasting the bias over leading axes.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.len() != 1 || sa.last() != Some(&sb[0]) {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let m = sb[0];
        let b = self.data(bias);
        let out: Vec<T> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[i % m])
            .collect();
        let shape = sa.to_vec();
        self.push(
            "add_bias",
            Op::AddBias(a, bias),
            Array::from_parts_unchecked(shape, out),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let out = zip_with(self.data(a), self.data(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        self.push(
            "mul",
            Op::Mul(a, b),
            Array::from_parts_unchecked(shape, out),
        )
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_last_axis(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::ShapeMismatch {
                op: "concat_last_axis",
                left: sa,
                right: sb,
            });
        }
        let (wa, wb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = self.value(a).len() / wa;
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(rows * (wa + wb));
        for r in 0..rows {
            out.extend_from_slice(&da[r * wa..(r + 1) * wa]);
            out.extend_from_slice(&db[r * wb..(r + 1) * wb]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = wa + wb;
        self.push(
            "concat_last_axis",
            Op::Concat(a, b),
            Array::from_parts_unchecked(shape, out),
        )
    }

    pub fn sine(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.data(a).iter().map(|x| x.sin()).collect();
        let shape = self.shape(a).to_vec();
        self.push("sine", Op::Sine(a), Array::from_parts_unchecked(shape, out))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> Result<NodeId> {
        let out = self.data(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(
            "scale",
            Op::Scale(a, c),
            Array::from_parts_unchecked(shape, out),
        )
    }

    /// Mean over the rows of a `[n, d]` array, giving `[d]`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a);
        ensure_rank("mean_rows", s, 2)?;
        let (n, d) = (s[0], s[1]);
        let src = self.data(a);
        let mut out = vec![T::zero(); d];
        for r in 0..n {
            for (o, &v) in out.iter_mut().zip(&src[r * d..(r + 1) * d]) {
                *o = *o + v;
            }
        }
        let inv = T::one() / T::of(n as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
        self.push(
            "mean_rows",
            Op::MeanRows(a),
            Array::from_parts_unchecked(vec![d], out),
        )
    }

    /// Stacks equally shaped arrays along a new leading "position" axis.
    pub fn stack(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let first = *items
            .first()
            .ok_or_else(|| Error::invalid("stack", "no inputs"))?;
        let base = self.shape(first).to_vec();
        let mut out = Vec::with_capacity(items.len() * self.value(first).len());
        for &id in items {
            same_shape("stack", &base, self.shape(id))?;
            out.extend_from_slice(self.data(id));
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&base);
        self.push(
            "stack",
            Op::Stack(items.to_vec()),
            Array::from_parts_unchecked(shape, out),
        )
    }

    /// Softmax across the leading position axis, independently for every
    /// trailing coordinate.
    pub fn softmax_over_positions(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.is_empty() {
            return Err(Error::invalid(
                "softmax_over_positions",
                "needs a position axis",
            ));
        }
        let p = s[0];
        let src = self.data(a);
        let inner = src.len() / p;
        let mut out = vec![T::zero(); src.len()];
        for c in 0..inner {
            let mut mx = T::neg_infinity();
            for j in 0..p {
                mx = mx.max(src[j * inner + c]);
            }
            let mut total = T::zero();
            for j in 0..p {
                let e = (src[j * inner + c] - mx).exp();
                out[j * inner + c] = e;
                total = total + e;
            }
            for j in 0..p {
                out[j * inner + c] = out[j * inner + c] / total;
            }
        }
        self.push(
            "softmax_over_positions",
            Op::SoftmaxPositions(a),
            Array::from_parts_unchecked(s, out),
        )
    }

    /// Sum across the leading position axis.
    pub fn sum_positions(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.is_empty() {
            return Err(Error::invalid("sum_positions", "needs a position axis"));
        }
        let p = s[0];
        let src = self.data(a);
        let inner = src.len() / p;
        let mut out = src[..inner].to_vec();
        for j in 1..p {
            for (o, &v) in out.iter_mut().zip(&src[j * inner..(j + 1) * inner]) {
                *o = *o + v;
            }
        }
        self.push(
            "sum_positions",
            Op::SumPositions(a),
            Array::from_parts_unchecked(s[1..].to_vec(), out),
        )
    }

    /// Repeats a `[n, 1]` column into `[n, width]`.
    pub fn broadcast_cols(&mut self, a: NodeId, width: usize) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 2 || s[1] != 1 || width == 0 {
            return Err(Error::invalid(
                "broadcast_cols",
                format!("expected [n, 1] and positive width, got {s:?} -> {width}"),
            ));
        }
        let n = s[0];
        let src = self.data(a);
        let out = (0..n * width).map(|i| src[i / width]).collect();
        self.push(
            "broadcast_cols",
            Op::BroadcastCols(a),
            Array::from_parts_unchecked(vec![n, width], out),
        )
    }

    /// One-dimensional cross-correlation.
    ///
    /// `input` is `[batch, in_ch, len]` (or `[in_ch, len]`), `kernel` is
    /// `[out_ch, in_ch, k]`, `bias` is `[out_ch]`. Zero padding of `padding`
    /// on both sides; output length is `len + 2 * padding - k + 1`.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        padding: usize,
    ) -> Result<NodeId> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let (batch, cin, len, batched) = match si.as_slice() {
            [b, c, l] => (*b, *c, *l, true),
            [c, l] => (1, *c, *l, false),
            _ => return Err(Error::invalid("conv1d", format!("bad input shape {si:?}"))),
        };
        ensure_rank("conv1d", &sk, 3)?;
        let (cout, kcin, k) = (sk[0], sk[1], sk[2]);
        if kcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                left: si,
                right: sk,
            });
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d",
                    left: sk,
                    right: self.shape(b).to_vec(),
                });
            }
        }
        if len + 2 * padding < k {
            return Err(Error::invalid("conv1d", "kernel longer than padded signal"));
        }
        let lout = len + 2 * padding - k + 1;
        let x = self.data(input);
        let w = self.data(kernel);
        let mut out = vec![T::zero(); batch * cout * lout];
        for b in 0..batch {
            for o in 0..cout {
                let row = &mut out[(b * cout + o) * lout..(b * cout + o + 1) * lout];
                if let Some(bid) = bias {
                    let bv = self.nodes[bid.0].value.data()[o];
                    row.iter_mut().for_each(|v| *v = bv);
                }
                for c in 0..cin {
                    let sig = &x[(b * cin + c) * len..(b * cin + c + 1) * len];
                    for t in 0..k {
                        let wv = w[(o * cin + c) * k + t];
                        // out[pos] += wv * sig[pos + t - padding]
                        let lo = padding.saturating_sub(t);
                        let hi = (len + padding).saturating_sub(t).min(lout);
                        for pos in lo..hi {
                            row[pos] = row[pos] + wv * sig[pos + t - padding];
                        }
                    }
                }
            }
        }
        let shape = if batched {
            vec![batch, cout, lout]
        } else {
            vec![cout, lout]
        };
        self.push(
            "conv1d",
            Op::Conv1d {
                input,
                kernel,
                bias,
                padding,
            },
            Array::from_parts_unchecked(shape, out),
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape(a).to_vec(),
                right: shape.to_vec(),
            });
        }
        let out = self.data(a).to_vec();
        self.push(
            "reshape",
            Op::Reshape(a),
            Array::from_parts_unchecked(shape.to_vec(), out),
        )
    }

    /// Collapses all axes after the first: `[b, ...] -> [b, prod(...)]`.
    pub fn flatten(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        match s.len() {
            0 => self.reshape(a, &[1]),
            1 => self.reshape(a, &[1, s[0]]),
            _ => self.reshape(a, &[s[0], s[1..].iter().product()]),
        }
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let s = self.shape(table);
        ensure_rank("gather_rows", s, 2)?;
        if indices.is_empty() {
            return Err(Error::invalid("gather_rows", "empty index list"));
        }
        let (n, d) = (s[0], s[1]);
        let src = self.data(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::OutOfRange {
                    what: "gather_rows",
                    index: i,
                    size: n,
                });
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(
            "gather_rows",
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            Array::from_parts_unchecked(vec![indices.len(), d], out),
        )
    }

    /// Row `i` of the output is the mean of the contiguous `src` rows
    /// `offsets[i]..offsets[i + 1]`, summed in order; empty ranges give zero.
    pub fn segment_mean(&mut self, src: NodeId, offsets: Vec<usize>) -> Result<NodeId> {
        let s = self.shape(src);
        ensure_rank("segment_mean", s, 2)?;
        let (m, d) = (s[0], s[1]);
        if offsets.len() < 2
            || offsets[0] != 0
            || offsets.windows(2).any(|w| w[0] > w[1])
            || offsets[offsets.len() - 1] != m
        {
            return Err(Error::invalid(
                "segment_mean",
                format!("offsets must rise from 0 to {m} with at least one segment"),
            ));
        }
        let n = offsets.len() - 1;
        let x = self.data(src);
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            let (lo, hi) = (offsets[i], offsets[i + 1]);
            if lo == hi {
                continue;
            }
            let row = &mut out[i * d..(i + 1) * d];
            for j in lo..hi {
                for (o, &v) in row.iter_mut().zip(&x[j * d..(j + 1) * d]) {
                    *o = *o + v;
                }
            }
            let inv = T::one() / T::of((hi - lo) as f64);
            row.iter_mut().for_each(|v| *v = *v * inv);
        }
        self.push(
            "segment_mean",
            Op::SegmentMean { src, offsets },
            Array::from_parts_unchecked(vec![n, d], out),
        )
    }

    /// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, a: NodeId, rate: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(
                "dropout",
                format!("rate {rate} outside [0, 1)"),
            ));
        }
        let shape = self.shape(a).to_vec();
        let n = self.value(a).len();
        let mask = match self.rng.as_mut() {
            Some(rng) if rate > 0.0 => {
                let keep = T::of(1.0 / (1.0 - rate));
                Some(
                    (0..n)
                        .map(|_| {
                            if rng.gen::<f64>() < rate {
                                T::zero()
                            } else {
                                keep
                            }
                        })
                        .collect::<Vec<T>>(),
                )
            }
            _ => None,
        };
        let out = match &mask {
            Some(m) => zip_with(self.data(a), m, |x, y| x * y),
            None => self.data(a).to_vec(),
        };
        self.push(
            "dropout",
            Op::Dropout { input: a, mask },
            Array::from_parts_unchecked(shape, out),
        )
    }

    /// Randomized leaky ReLU. Negative inputs are multiplied by a slope drawn
    /// uniformly from `[lower, upper]` in training mode, or by
    /// `(lower + upper) / 2` in eval mode.
    pub fn rrelu(&mut self, a: NodeId, lower: f64, upper: f64) -> Result<NodeId> {
        if !(0.0 < lower && lower <= upper && upper < 1.0) {
            return Err(Error::invalid(
                "rrelu",
                format!("bounds must satisfy 0 < lower <= upper < 1, got {lower}, {upper}"),
            ));
        }
        let fixed = T::of((lower + upper) / 2.0);
        let shape = self.shape(a).to_vec();
        let x = self.nodes[a.0].value.data();
        let mut factors = Vec::with_capacity(x.len());
        match self.rng.as_mut() {
            Some(rng) => {
                for &v in x {
                    factors.push(if v >= T::zero() {
                        T::one()
                    } else {
                        T::of(rng.gen_range(lower..=upper))
                    });
                }
            }
            None => {
                for &v in x {
                    factors.push(if v >= T::zero() { T::one() } else { fixed });
                }
            }
        }
        let out = zip_with(x, &factors, |v, f| v * f);
        self.push(
            "rrelu",
            Op::RRelu { input: a, factors },
            Array::from_parts_unchecked(shape, out),
        )
    }

    /// Mean softmax cross-entropy. `scores` is `[classes]` with one gold
    /// index or `[batch, classes]` with one gold index per row.
    pub fn cross_entropy(&mut self, scores: NodeId, gold: &[usize]) -> Result<NodeId> {
        let s = self.shape(scores).to_vec();
        let (rows, classes) = match s.as_slice() {
            [c] => (1, *c),
            [b, c] => (*b, *c),
            _ => {
                return Err(Error::invalid(
                    "cross_entropy",
                    format!("scores must be rank 1 or 2, got {s:?}"),
                ))
            }
        };
        if gold.len() != rows {
            return Err(Error::invalid(
                "cross_entropy",
                format!("{} gold labels for {rows} score rows", gold.len()),
            ));
        }
        let x = self.data(scores);
        let mut probs = vec![T::zero(); x.len()];
        let mut loss = 0.0f64;
        for r in 0..rows {
            let g = gold[r];
            if g >= classes {
                return Err(Error::OutOfRange {
                    what: "cross_entropy gold",
                    index: g,
                    size: classes,
                });
            }
            let row = &x[r * classes..(r + 1) * classes];
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut total = T::zero();
            for (p, &v) in probs[r * classes..].iter_mut().zip(row) {
                *p = (v - mx).exp();
                total = total + *p;
            }
            for p in probs[r * classes..(r + 1) * classes].iter_mut() {
                *p = *p / total;
            }
            loss += (mx + total.ln() - row[g]).as_f64();
        }
        let value = Array::scalar(T::of(loss / rows as f64));
        self.push(
            "cross_entropy",
            Op::CrossEntropy {
                scores,
                gold: gold.to_vec(),
                probs,
            },
            value,
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.data(a).iter().fold(T::zero(), |acc, &v| acc + v);
        self.push("sum", Op::Sum(a), Array::scalar(total))
    }

    /// `sin(2π · c · x)` shortcut used by the seasonal embedding.
    pub fn periodic(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let scaled = self.scale(a, T::of(2.0 * PI * c))?;
        self.sine(scaled)
    }

    /// Runs the backward pass from a scalar node with seed gradient 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            shapes: self.nodes[..=loss.0]
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
            grads,
        })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], id: NodeId) -> &'a mut Vec<T> {
        let n = self.nodes[id.0].value.len();
        grads[id.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (self.data(*a), self.data(*b));
                {
                    let ga = self.slot(grads, *a);
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for p in 0..k {
                            let brow = &bv[p * m..(p + 1) * m];
                            let dot = grow
                                .iter()
                                .zip(brow)
                                .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                            ga[r * k + p] = ga[r * k + p] + dot;
                        }
                    }
                }
                let gb = self.slot(grads, *b);
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for p in 0..k {
                        let av_rp = av[r * k + p];
                        if av_rp == T::zero() {
                            continue;
                        }
                        for (o, &gv) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                            *o = *o + av_rp * gv;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (n, m) = (s[0], s[1]);
                let ga = self.slot(grads, *a);
                for r in 0..n {
                    for c in 0..m {
                        ga[r * m + c] = ga[r * m + c] + g[c * n + r];
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(self.slot(grads, *a), g);
                add_into(self.slot(grads, *b), g);
            }
            Op::AddBias(a, bias) => {
                add_into(self.slot(grads, *a), g);
                let gb = self.slot(grads, *bias);
                let m = gb.len();
                for (idx, &v) in g.iter().enumerate() {
                    gb[idx % m] = gb[idx % m] + v;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                {
                    let ga = self.slot(grads, *a);
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o = *o + gv * y;
                    }
                }
                let gb = self.slot(grads, *b);
                for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(av) {
                    *o = *o + gv * x;
                }
            }
            Op::Concat(a, b) => {
                let wa = *self.shape(*a).last().unwrap();
                let wb = *self.shape(*b).last().unwrap();
                let rows = g.len() / (wa + wb);
                {
                    let ga = self.slot(grads, *a);
                    for r in 0..rows {
                        add_into(
                            &mut ga[r * wa..(r + 1) * wa],
                            &g[r * (wa + wb)..r * (wa + wb) + wa],
                        );
                    }
                }
                let gb = self.slot(grads, *b);
                for r in 0..rows {
                    add_into(
                        &mut gb[r * wb..(r + 1) * wb],
                        &g[r * (wa + wb) + wa..(r + 1) * (wa + wb)],
                    );
                }
            }
            Op::Sine(a) => {
                let x = self.data(*a);
                let ga = self.slot(grads, *a);
                for ((o, &gv), &xv) in ga.iter_mut().zip(g).zip(x) {
                    *o = *o + gv * xv.cos();
                }
            }
            Op::Scale(a, c) => {
                let ga = self.slot(grads, *a);
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o = *o + gv * *c;
                }
            }
            Op::MeanRows(a) => {
                let s = self.shape(*a);
                let (n, d) = (s[0], s[1]);
                let inv = T::one() / T::of(n as f64);
                let ga = self.slot(grads, *a);
                for r in 0..n {
                    for c in 0..d {
                        ga[r * d + c] = ga[r * d + c] + g[c] * inv;
                    }
                }
            }
            Op::Stack(items) => {
                let inner = g.len() / items.len();
                for (j, id) in items.iter().enumerate() {
                    add_into(self.slot(grads, *id), &g[j * inner..(j + 1) * inner]);
                }
            }
            Op::SoftmaxPositions(a) => {
                let y = node.value.data();
                let p = node.value.shape()[0];
                let inner = y.len() / p;
                let ga = self.slot(grads, *a);
                for c in 0..inner {
                    let mut dot = T::zero();
                    for j in 0..p {
                        dot = dot + y[j * inner + c] * g[j * inner + c];
                    }
                    for j in 0..p {
                        let idx = j * inner + c;
                        ga[idx] = ga[idx] + y[idx] * (g[idx] - dot);
                    }
                }
            }
            Op::SumPositions(a) => {
                let ga = self.slot(grads, *a);
                let inner = g.len();
                for chunk in ga.chunks_mut(inner) {
                    add_into(chunk, g);
                }
            }
            Op::BroadcastCols(a) => {
                let width = node.value.shape()[1];
                let ga = self.slot(grads, *a);
                for (r, o) in ga.iter_mut().enumerate() {
                    let s = g[r * width..(r + 1) * width]
                        .iter()
                        .fold(T::zero(), |acc, &v| acc + v);
                    *o = *o + s;
                }
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                padding,
            } => {
                let si = self.shape(*input);
                let (batch, cin, len) = match si {
                    [b, c, l] => (*b, *c, *l),
                    [c, l] => (1, *c, *l),
                    _ => unreachable!(),
                };
                let sk = self.shape(*kernel);
                let (cout, k) = (sk[0], sk[2]);
                let p = *padding;
                let lout = len + 2 * p - k + 1;
                let x = self.data(*input);
                let w = self.data(*kernel);
                if let Some(bid) = bias {
                    let gb = self.slot(grads, *bid);
                    for b in 0..batch {
                        for (o, slot) in gb.iter_mut().enumerate() {
                            let row = &g[(b * cout + o) * lout..(b * cout + o + 1) * lout];
                            *slot = row.iter().fold(*slot, |acc, &v| acc + v);
                        }
                    }
                }
                {
                    let gw = self.slot(grads, *kernel);
                    for b in 0..batch {
                        for o in 0..cout {
                            let row = &g[(b * cout + o) * lout..(b * cout + o + 1) * lout];
                            for c in 0..cin {
                                let sig = &x[(b * cin + c) * len..(b * cin + c + 1) * len];
                                for t in 0..k {
                                    let lo = p.saturating_sub(t);
                                    let hi = (len + p).saturating_sub(t).min(lout);
                                    let mut acc = T::zero();
                                    for pos in lo..hi {
                                        acc = acc + row[pos] * sig[pos + t - p];
                                    }
                                    let wi = (o * cin + c) * k + t;
                                    gw[wi] = gw[wi] + acc;
                                }
                            }
                        }
                    }
                }
                let gi = self.slot(grads, *input);
                for b in 0..batch {
                    for o in 0..cout {
                        let row = &g[(b * cout + o) * lout..(b * cout + o + 1) * lout];
                        for c in 0..cin {
                            let base = (b * cin + c) * len;
                            for t in 0..k {
                                let wv = w[(o * cin + c) * k + t];
                                let lo = p.saturating_sub(t);
                                let hi = (len + p).saturating_sub(t).min(lout);
                                for pos in lo..hi {
                                    let xi = base + pos + t - p;
                                    gi[xi] = gi[xi] + wv * row[pos];
                                }
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => add_into(self.slot(grads, *a), g),
            Op::GatherRows { table, indices } => {
                let d = self.shape(*table)[1];
                let gt = self.slot(grads, *table);
                for (r, &i) in indices.iter().enumerate() {
                    add_into(&mut gt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::SegmentMean { src, offsets } => {
                let d = self.shape(*src)[1];
                let gs = self.slot(grads, *src);
                for (i, w) in offsets.windows(2).enumerate() {
                    let (lo, hi) = (w[0], w[1]);
                    if lo == hi {
                        continue;
                    }
                    let inv = T::one() / T::of((hi - lo) as f64);
                    let grow = &g[i * d..(i + 1) * d];
                    for j in lo..hi {
                        for (o, &gv) in gs[j * d..(j + 1) * d].iter_mut().zip(grow) {
                            *o = *o + gv * inv;
                        }
                    }
                }
            }
            Op::Dropout { input, mask } => {
                let ga = self.slot(grads, *input);
                match mask {
                    Some(m) => {
                        for ((o, &gv), &mv) in ga.iter_mut().zip(g).zip(m) {
                            *o = *o + gv * mv;
                        }
                    }
                    None => add_into(ga, g),
                }
            }
            Op::RRelu { input, factors } => {
                let ga = self.slot(grads, *input);
                for ((o, &gv), &f) in ga.iter_mut().zip(g).zip(factors) {
                    *o = *o + gv * f;
                }
            }
            Op::CrossEntropy {
                scores,
                gold,
                probs,
            } => {
                let rows = gold.len();
                let classes = probs.len() / rows;
                let scale = g[0] / T::of(rows as f64);
                let gs = self.slot(grads, *scores);
                for r in 0..rows {
                    for c in 0..classes {
                        let idx = r * classes + c;
                        let target = if c == gold[r] { T::one() } else { T::zero() };
                        gs[idx] = gs[idx] + scale * (probs[idx] - target);
                    }
                }
            }
            Op::Sum(a) => {
                let ga = self.slot(grads, *a);
                for o in ga.iter_mut() {
                    *o = *o + g[0];
                }
            }
        }
    }
}

/// Gradients of one backward pass, indexed by [`NodeId`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `id`; zero when no path reaches the loss.
    pub fn wrt(&self, id: NodeId) -> Array<T> {
        match self.grads.get(id.0).and_then(|g| g.as_ref()) {
            Some(g) => Array::from_parts_unchecked(self.shapes[id.0].clone(), g.clone()),
            None => match self.shapes.get(id.0) {
                Some(s) => Array::zeros(s),
                None => Array::scalar(T::zero()),
            },
        }
    }

    pub fn reached(&self, id: NodeId) -> bool {
        matches!(self.grads.get(id.0), Some(Some(_)))
    }
}

fn zip_with<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o = *o + v;
    }
}

pub(crate) fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o = *o + av * bv;
            }
        }
    }
    out
}
