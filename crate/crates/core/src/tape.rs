//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive as it is evaluated. Each record keeps
//! the ids of its inputs and whatever activations its backward rule needs;
//! [`Tape::backward`] then walks the records once, in reverse insertion order,
//! which is a valid reverse topological order because a record can only refer
//! to records created before it.
//!
//! ```
//! use nhnn::tape::Tape;
//! use nhnn::tensor::Tensor;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
//! let y = tape.sum_all(tape.mul(x, x).unwrap());
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::cell::{Ref, RefCell};
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::segment::SegmentMap;
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    L2NormalizeRows {
        x: Var,
        norms: Vec<T>,
        eps: T,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        denom: Vec<T>,
        guarded: Vec<bool>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SegmentMean {
        x: Var,
        map: Arc<SegmentMap>,
    },
    SegmentSum {
        x: Var,
        map: Arc<SegmentMap>,
    },
    MulRows {
        x: Var,
        s: Var,
    },
    RecipClamp {
        x: Var,
        eps: T,
    },
    SumCols(Var),
    SumAll(Var),
    LogSoftmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    Reshape(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive applications for one forward pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when unreached.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shape")
}

/// Row-wise vector of length `rows`: a rank-1 tensor or an `rows×1` matrix.
fn is_row_scalars<T: Real>(t: &Tensor<T>, rows: usize) -> bool {
    t.len() == rows && (t.rank() == 1 || (t.rank() == 2 && t.cols() == 1))
}

pub(crate) fn segment_sum_values<T: Real>(x: &Tensor<T>, map: &SegmentMap) -> Tensor<T> {
    let d = x.cols();
    let mut out = Tensor::zeros(&[map.num_segments(), d]);
    for (s, seg) in map.iter().enumerate() {
        let o = out.row_mut(s);
        for &r in seg {
            for (acc, &v) in o.iter_mut().zip(x.row(r)) {
                *acc = *acc + v;
            }
        }
    }
    out
}

pub(crate) fn segment_mean_values<T: Real>(x: &Tensor<T>, map: &SegmentMap) -> Tensor<T> {
    let mut out = segment_sum_values(x, map);
    for s in 0..map.num_segments() {
        let n = map.size(s);
        if n > 1 {
            let inv = T::one() / T::of(n as f64);
            for v in out.row_mut(s) {
                *v = *v * inv;
            }
        }
    }
    out
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of records on the tape.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn record(&self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = self.needs_grad(inputs);
        self.push(value, op, rg)
    }

    /// A differentiable input (parameter).
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(&self.value(b))?;
        Ok(self.record(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Element-wise sum; `b` may also be a row vector broadcast over the rows of `a`.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (out, broadcast) = {
            let (ta, tb) = (self.value(a), self.value(b));
            if ta.shape() == tb.shape() {
                (zip_map(&ta, &tb, |x, y| x + y), false)
            } else if ta.rank() == 2
                && tb.len() == ta.cols()
                && (tb.rank() == 1 || (tb.rank() == 2 && tb.rows() == 1))
            {
                let mut out = ta.clone();
                for i in 0..ta.rows() {
                    for (o, &bias) in out.row_mut(i).iter_mut().zip(tb.data()) {
                        *o = *o + bias;
                    }
                }
                (out, true)
            } else {
                return Err(Error::shape("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
            }
        };
        let op = if broadcast { Op::AddRow(a, b) } else { Op::Add(a, b) };
        Ok(self.record(out, op, &[a, b]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            same_shape("sub", &ta, &tb)?;
            zip_map(&ta, &tb, |x, y| x - y)
        };
        Ok(self.record(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            same_shape("mul", &ta, &tb)?;
            zip_map(&ta, &tb, |x, y| x * y)
        };
        Ok(self.record(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.record(out, Op::Scale(x, c), &[x])
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.record(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        self.record(out, Op::Tanh(x), &[x])
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.record(out, Op::Relu(x), &[x])
    }

    /// Divides every row by `max(‖row‖₂, eps)`.
    pub fn l2_normalize_rows(&self, x: Var, eps: T) -> Var {
        let (out, norms) = {
            let tx = self.value(x);
            let mut out = tx.clone();
            let mut norms = Vec::with_capacity(tx.rows());
            for i in 0..tx.rows() {
                let n = tx.row(i).iter().map(|&v| v * v).sum::<T>().sqrt();
                let denom = n.max(eps);
                for v in out.row_mut(i) {
                    *v = *v / denom;
                }
                norms.push(n);
            }
            (out, norms)
        };
        self.record(out, Op::L2NormalizeRows { x, norms, eps }, &[x])
    }

    /// Row standardisation followed by a per-column affine map.
    ///
    /// Rows are centred and divided by `max(std, eps)` (population variance),
    /// so a constant row maps to zeros before the affine step.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, xhat, denom, guarded) = {
            let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
            let d = tx.cols();
            if tx.rank() != 2 || tg.len() != d || tb.len() != d {
                return Err(Error::shape(
                    "layer_norm",
                    format!("x {:?}, gamma {:?}, beta {:?}", tx.shape(), tg.shape(), tb.shape()),
                ));
            }
            let inv_d = T::one() / T::of(d as f64);
            let mut xhat = Vec::with_capacity(tx.len());
            let mut denom = Vec::with_capacity(tx.rows());
            let mut guarded = Vec::with_capacity(tx.rows());
            let mut out = Tensor::zeros(tx.shape());
            for i in 0..tx.rows() {
                let row = tx.row(i);
                let mean = row.iter().copied().sum::<T>() * inv_d;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                let sd = var.sqrt();
                let g = sd <= eps;
                let den = if g { eps } else { sd };
                for (j, &v) in row.iter().enumerate() {
                    let h = (v - mean) / den;
                    xhat.push(h);
                    out.row_mut(i)[j] = h * tg.data()[j] + tb.data()[j];
                }
                denom.push(den);
                guarded.push(g);
            }
            (out, xhat, denom, guarded)
        };
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            denom,
            guarded,
        };
        Ok(self.record(out, op, &[x, gamma, beta]))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let rows = vals.first().map_or(0, |v| v.rows());
            if vals.iter().any(|v| v.rows() != rows) {
                let shapes: Vec<_> = vals.iter().map(|v| v.shape().to_vec()).collect();
                return Err(Error::shape("concat_cols", format!("row counts differ: {shapes:?}")));
            }
            let total: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(i));
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        Ok(self.record(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = {
            let tx = self.value(x);
            if start > end || end > tx.cols() {
                return Err(Error::shape(
                    "slice_cols",
                    format!("[{start}, {end}) of {:?}", tx.shape()),
                ));
            }
            let w = end - start;
            let mut data = Vec::with_capacity(tx.rows() * w);
            for i in 0..tx.rows() {
                data.extend_from_slice(&tx.row(i)[start..end]);
            }
            Tensor::matrix(tx.rows(), w, data)?
        };
        Ok(self.record(out, Op::SliceCols { x, start }, &[x]))
    }

    /// Splits the columns into `k` equal consecutive blocks.
    pub fn chunk_cols(&self, x: Var, k: usize) -> Result<Vec<Var>> {
        let d = self.value(x).cols();
        if k == 0 || !d.is_multiple_of(k) {
            return Err(Error::shape("chunk_cols", format!("{d} columns into {k} chunks")));
        }
        let w = d / k;
        (0..k).map(|c| self.slice_cols(x, c * w, (c + 1) * w)).collect()
    }

    fn check_map(&self, op: &'static str, x: Var, map: &SegmentMap) -> Result<()> {
        let rows = self.value(x).rows();
        if rows != map.num_rows() {
            return Err(Error::shape(
                op,
                format!("input has {rows} rows, map expects {}", map.num_rows()),
            ));
        }
        Ok(())
    }

    /// Row `s` of the output is the mean of the rows listed in segment `s`;
    /// empty segments give zero rows.
    pub fn segment_mean(&self, x: Var, map: &Arc<SegmentMap>) -> Result<Var> {
        self.check_map("segment_mean", x, map)?;
        let out = segment_mean_values(&self.value(x), map);
        let op = Op::SegmentMean {
            x,
            map: Arc::clone(map),
        };
        Ok(self.record(out, op, &[x]))
    }

    /// Row `s` of the output is the sum of the rows listed in segment `s`.
    pub fn segment_sum(&self, x: Var, map: &Arc<SegmentMap>) -> Result<Var> {
        self.check_map("segment_sum", x, map)?;
        let out = segment_sum_values(&self.value(x), map);
        let op = Op::SegmentSum {
            x,
            map: Arc::clone(map),
        };
        Ok(self.record(out, op, &[x]))
    }

    /// Weighted segment reduction: `(Σ w_r·x_r, Σ w_r)` over each segment.
    ///
    /// `w` holds one weight per row of `x`; the weight sums come back as an
    /// `S×1` column.
    pub fn segment_weighted_sum(&self, x: Var, w: Var, map: &Arc<SegmentMap>) -> Result<(Var, Var)> {
        let num = self.segment_sum(self.mul_rows(x, w)?, map)?;
        let rows = self.value(w).len();
        let w_col = self.reshape(w, vec![rows, 1])?;
        Ok((num, self.segment_sum(w_col, map)?))
    }

    /// Multiplies row `i` of `x` by `s[i]`.
    pub fn mul_rows(&self, x: Var, s: Var) -> Result<Var> {
        let out = {
            let (tx, ts) = (self.value(x), self.value(s));
            if tx.rank() != 2 || !is_row_scalars(&ts, tx.rows()) {
                return Err(Error::shape(
                    "mul_rows",
                    format!("{:?} by {:?}", tx.shape(), ts.shape()),
                ));
            }
            let mut out = tx.clone();
            for i in 0..tx.rows() {
                let f = ts.data()[i];
                for v in out.row_mut(i) {
                    *v = *v * f;
                }
            }
            out
        };
        Ok(self.record(out, Op::MulRows { x, s }, &[x, s]))
    }

    /// `1 / max(x, eps)` element-wise.
    pub fn recip_clamp(&self, x: Var, eps: T) -> Var {
        let out = self.value(x).map(|v| T::one() / v.max(eps));
        self.record(out, Op::RecipClamp { x, eps }, &[x])
    }

    /// Row sums as an `n×1` column.
    pub fn sum_cols(&self, x: Var) -> Var {
        let out = {
            let tx = self.value(x);
            let data = (0..tx.rows()).map(|i| tx.row(i).iter().copied().sum()).collect();
            Tensor::matrix(tx.rows(), 1, data).expect("sum_cols shape")
        };
        self.record(out, Op::SumCols(x), &[x])
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().copied().sum());
        self.record(out, Op::SumAll(x), &[x])
    }

    pub fn log_softmax(&self, x: Var) -> Var {
        let out = {
            let tx = self.value(x);
            let mut out = tx.clone();
            for i in 0..tx.rows() {
                let lse = log_sum_exp(tx.row(i));
                for v in out.row_mut(i) {
                    *v = *v - lse;
                }
            }
            out
        };
        self.record(out, Op::LogSoftmax(x), &[x])
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (loss, probs) = {
            let tl = self.value(logits);
            let (n, c) = (tl.rows(), tl.cols());
            if tl.rank() != 2 || targets.len() != n || n == 0 {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("logits {:?} with {} targets", tl.shape(), targets.len()),
                ));
            }
            if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
                return Err(Error::OutOfRangeIndex {
                    what: "class label",
                    index: bad,
                    bound: c,
                });
            }
            let mut total = T::zero();
            let mut probs = Vec::with_capacity(n * c);
            for (i, &t) in targets.iter().enumerate() {
                let row = tl.row(i);
                total = total + row_cross_entropy(row, t);
                let lse = log_sum_exp(row);
                probs.extend(row.iter().map(|&z| (z - lse).exp()));
            }
            (total / T::of(n as f64), probs)
        };
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.record(Tensor::scalar(loss), op, &[logits]))
    }

    pub fn select_rows(&self, x: Var, rows: &[usize]) -> Result<Var> {
        let out = {
            let tx = self.value(x);
            let mut data = Vec::with_capacity(rows.len() * tx.cols());
            for &r in rows {
                if r >= tx.rows() {
                    return Err(Error::OutOfRangeIndex {
                        what: "row",
                        index: r,
                        bound: tx.rows(),
                    });
                }
                data.extend_from_slice(tx.row(r));
            }
            Tensor::matrix(rows.len(), tx.cols(), data)?
        };
        let op = Op::SelectRows {
            x,
            rows: rows.to_vec(),
        };
        Ok(self.record(out, op, &[x]))
    }

    /// Row-major reinterpretation with a new shape.
    pub fn reshape(&self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.record(out, Op::Reshape(x), &[x]))
    }

    /// Inverted dropout: in training, zero entries with probability `p` and
    /// rescale survivors by `1/(1-p)`; otherwise return `x` untouched.
    pub fn dropout<R: Rng + ?Sized>(&self, x: Var, p: f64, rng: &mut R, training: bool) -> Var {
        if !training || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let scale = T::of(1.0 / keep);
        let (out, mask) = {
            let tx = self.value(x);
            let mask: Vec<T> = (0..tx.len())
                .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
                .collect();
            let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (Tensor::new(tx.shape().to_vec(), data).expect("dropout shape"), mask)
        };
        self.record(out, Op::Dropout { x, mask }, &[x])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(nodes[loss.0].value.shape()));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backward_node(&nodes, node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&z| (z - max).exp()).sum();
    max + s.ln()
}

/// `-log softmax(row)[target]` computed as `(max - z_t) + ln(1 + Σ_{c≠argmax} e^{z_c - max})`
/// so that saturated rows keep their tiny residual loss.
pub(crate) fn row_cross_entropy<T: Real>(row: &[T], target: usize) -> T {
    let (arg, max) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, T::neg_infinity()), |(ai, am), (i, z)| if z > am { (i, z) } else { (ai, am) });
    let rest: T = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &z)| (z - max).exp())
        .sum();
    (max - row[target]) + rest.ln_1p()
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn backward_node<T: Real>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let val = |v: Var| &nodes[v.0].value;
    let wants = |v: Var| nodes[v.0].requires_grad;
    let mut send = |v: Var, t: Tensor<T>| {
        if nodes[v.0].requires_grad {
            accumulate(grads, v, t);
        }
    };

    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::MatMul(a, b) => {
            if wants(*a) {
                send(*a, g.matmul(&val(*b).transpose()).expect("matmul grad"));
            }
            if wants(*b) {
                send(*b, val(*a).transpose().matmul(g).expect("matmul grad"));
            }
        }
        Op::Add(a, b) => {
            send(*a, g.clone());
            send(*b, g.clone());
        }
        Op::AddRow(a, b) => {
            send(*a, g.clone());
            if wants(*b) {
                let cols = g.cols();
                let mut col_sums = vec![T::zero(); cols];
                for i in 0..g.rows() {
                    for (s, &v) in col_sums.iter_mut().zip(g.row(i)) {
                        *s = *s + v;
                    }
                }
                send(*b, Tensor::new(val(*b).shape().to_vec(), col_sums).expect("bias grad"));
            }
        }
        Op::Sub(a, b) => {
            send(*a, g.clone());
            send(*b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                send(*a, zip_map(g, val(*b), |x, y| x * y));
            }
            if wants(*b) {
                send(*b, zip_map(g, val(*a), |x, y| x * y));
            }
        }
        Op::Scale(x, c) => send(*x, g.map(|v| v * *c)),
        Op::Sigmoid(x) => send(*x, zip_map(g, &node.value, |gv, y| gv * y * (T::one() - y))),
        Op::Tanh(x) => send(*x, zip_map(g, &node.value, |gv, y| gv * (T::one() - y * y))),
        Op::Relu(x) => send(
            *x,
            zip_map(g, val(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() }),
        ),
        Op::L2NormalizeRows { x, norms, eps } => {
            let y = &node.value;
            let mut dx = Tensor::zeros(y.shape());
            for (i, &n) in norms.iter().enumerate() {
                let (yr, gr) = (y.row(i), g.row(i));
                if n > *eps {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * dot) / n;
                    }
                } else {
                    for (d, &gv) in dx.row_mut(i).iter_mut().zip(gr) {
                        *d = gv / *eps;
                    }
                }
            }
            send(*x, dx);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            denom,
            guarded,
        } => {
            let d = g.cols();
            let gam = val(*gamma).data();
            if wants(*gamma) || wants(*beta) {
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                for i in 0..g.rows() {
                    for j in 0..d {
                        let gv = g.row(i)[j];
                        dg[j] = dg[j] + gv * xhat[i * d + j];
                        db[j] = db[j] + gv;
                    }
                }
                send(*gamma, Tensor::new(val(*gamma).shape().to_vec(), dg).expect("gamma grad"));
                send(*beta, Tensor::new(val(*beta).shape().to_vec(), db).expect("beta grad"));
            }
            if wants(*x) {
                let inv_d = T::one() / T::of(d as f64);
                let mut dx = Tensor::zeros(g.shape());
                for i in 0..g.rows() {
                    let xh = &xhat[i * d..(i + 1) * d];
                    let dxh: Vec<T> = g.row(i).iter().zip(gam).map(|(&a, &b)| a * b).collect();
                    let mean_dxh = dxh.iter().copied().sum::<T>() * inv_d;
                    let mean_dxh_xh = if guarded[i] {
                        T::zero()
                    } else {
                        dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d
                    };
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh) / denom[i];
                    }
                }
                send(*x, dx);
            }
        }
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for &p in parts {
                let w = val(p).cols();
                if wants(p) {
                    let mut data = Vec::with_capacity(g.rows() * w);
                    for i in 0..g.rows() {
                        data.extend_from_slice(&g.row(i)[start..start + w]);
                    }
                    send(p, Tensor::new(val(p).shape().to_vec(), data).expect("concat grad"));
                }
                start += w;
            }
        }
        Op::SliceCols { x, start } => {
            let mut dx = Tensor::zeros(val(*x).shape());
            let w = g.cols();
            for i in 0..g.rows() {
                dx.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
            }
            send(*x, dx);
        }
        Op::SegmentMean { x, map } | Op::SegmentSum { x, map } => {
            let mean = matches!(node.op, Op::SegmentMean { .. });
            let mut dx = Tensor::zeros(val(*x).shape());
            for (s, seg) in map.iter().enumerate() {
                let f = if mean && !seg.is_empty() {
                    T::one() / T::of(seg.len() as f64)
                } else {
                    T::one()
                };
                for &r in seg {
                    for (d, &gv) in dx.row_mut(r).iter_mut().zip(g.row(s)) {
                        *d = *d + gv * f;
                    }
                }
            }
            send(*x, dx);
        }
        Op::MulRows { x, s } => {
            let (tx, ts) = (val(*x), val(*s));
            if wants(*x) {
                let mut dx = g.clone();
                for i in 0..g.rows() {
                    let f = ts.data()[i];
                    for v in dx.row_mut(i) {
                        *v = *v * f;
                    }
                }
                send(*x, dx);
            }
            if wants(*s) {
                let data = (0..g.rows())
                    .map(|i| g.row(i).iter().zip(tx.row(i)).map(|(&a, &b)| a * b).sum())
                    .collect();
                send(*s, Tensor::new(ts.shape().to_vec(), data).expect("mul_rows grad"));
            }
        }
        Op::RecipClamp { x, eps } => send(
            *x,
            zip_map(g, val(*x), |gv, xv| {
                if xv > *eps {
                    -gv / (xv * xv)
                } else {
                    T::zero()
                }
            }),
        ),
        Op::SumCols(x) => {
            let tx = val(*x);
            let mut dx = Tensor::zeros(tx.shape());
            for i in 0..tx.rows() {
                let gv = g.data()[i];
                dx.row_mut(i).fill(gv);
            }
            send(*x, dx);
        }
        Op::SumAll(x) => send(*x, Tensor::full(val(*x).shape(), g.item())),
        Op::LogSoftmax(x) => {
            let y = &node.value;
            let mut dx = g.clone();
            for i in 0..y.rows() {
                let gsum: T = g.row(i).iter().copied().sum();
                for (d, &yv) in dx.row_mut(i).iter_mut().zip(y.row(i)) {
                    *d = *d - yv.exp() * gsum;
                }
            }
            send(*x, dx);
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let tl = val(*logits);
            let (n, c) = (tl.rows(), tl.cols());
            let f = g.item() / T::of(n as f64);
            let mut data: Vec<T> = probs.iter().map(|&p| p * f).collect();
            for (i, &t) in targets.iter().enumerate() {
                data[i * c + t] = data[i * c + t] - f;
            }
            send(*logits, Tensor::new(tl.shape().to_vec(), data).expect("ce grad"));
        }
        Op::SelectRows { x, rows } => {
            let mut dx = Tensor::zeros(val(*x).shape());
            for (i, &r) in rows.iter().enumerate() {
                for (d, &gv) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                    *d = *d + gv;
                }
            }
            send(*x, dx);
        }
        Op::Reshape(x) => send(*x, g.reshape(val(*x).shape().to_vec()).expect("reshape grad")),
        Op::Dropout { x, mask } => {
            let data = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
            send(*x, Tensor::new(g.shape().to_vec(), data).expect("dropout grad"));
        }
    }
}
