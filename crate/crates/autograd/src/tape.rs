//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends one node holding its output value and whatever it
//! saved for the backward pass. Nodes are only ever appended, so the node
//! list is in topological order and `backward` is a single reverse sweep.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add { a: Var, b: Var },
    AddBroadcast { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    Relu { a: Var },
    MaskedSoftmax { a: Var },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore_index: usize,
        probs: Vec<T>,
        count: usize,
    },
    Embedding { table: Var, indices: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Permute { a: Var, axes: Vec<usize> },
    Reshape { a: Var },
    Dropout { a: Var, keep: Vec<T> },
    Sum { a: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation and differentiates it.
///
/// Single writer: one tape per forward pass. Leaf gradients survive across
/// [`Tape::backward`] calls and accumulate until [`Tape::zero_grad`].
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Accumulated gradient of a leaf, `None` until a backward pass reaches it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone())
                .expect("gradient matches value shape")
        })
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ---------------------------------------------------------------- ops

    /// `[.., k] · [k, n] -> [.., n]`; leading axes of `a` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).len() / k.max(1);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            T::zero(),
            &mut out,
            (n as isize, 1),
        );
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }, rg))
    }

    /// Batched product `[g, m, k] · [g, k, n]`, or `[g, m, k] · [g, n, k]ᵀ`
    /// when `transpose_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "batch_matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch());
        }
        let (groups, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(mismatch());
        }
        let b_strides = if transpose_b {
            (1, k as isize)
        } else {
            (n as isize, 1)
        };
        let mut out = vec![T::zero(); groups * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for g in 0..groups {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &av[g * m * k..(g + 1) * m * k],
                (k as isize, 1),
                &bv[g * k * n..(g + 1) * k * n],
                b_strides,
                T::zero(),
                &mut out[g * m * n..(g + 1) * m * n],
                (n as isize, 1),
            );
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new([groups, m, n], out)?,
            Op::BatchMatMul { a, b, transpose_b },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s (bias rows,
    /// positional tables).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::ShapeMismatch {
                op: "add_broadcast",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let bv = self.value(b).data();
        let width = bv.len();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(width) {
            for (o, &y) in chunk.iter_mut().zip(bv) {
                *o += y;
            }
        }
        let rg = self.needs(a) || self.needs(b);
        let shape = sa.to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBroadcast { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a);
        let out = value.data().iter().map(|&x| x * factor).collect();
        let t = Tensor::new(value.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(a);
        self.push(t, Op::Scale { a, factor }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let out = value
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let t = Tensor::new(value.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(a);
        self.push(t, Op::Relu { a }, rg)
    }

    /// Softmax along the last axis restricted to entries where `valid` is true.
    ///
    /// Masked entries come out as exactly zero and receive no gradient.
    pub fn masked_softmax(&mut self, logits: Var, valid: &[bool]) -> Result<Var> {
        let value = self.value(logits);
        if valid.len() != value.len() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                lhs: value.shape().to_vec(),
                rhs: vec![valid.len()],
            });
        }
        let width = value.last_dim();
        let mut out = vec![T::zero(); value.len()];
        for (row, ((x, m), y)) in value
            .data()
            .chunks(width)
            .zip(valid.chunks(width))
            .zip(out.chunks_mut(width))
            .enumerate()
        {
            let max = x
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or(TensorError::FullyMasked { row })?;
            let mut total = T::zero();
            for ((&xi, &keep), yi) in x.iter().zip(m).zip(y.iter_mut()) {
                if keep {
                    *yi = (xi - max).exp();
                    total += *yi;
                }
            }
            let inv = T::one() / total;
            y.iter_mut().for_each(|v| *v *= inv);
        }
        let t = Tensor::new(value.shape().to_vec(), out)?;
        let rg = self.needs(logits);
        Ok(self.push(t, Op::MaskedSoftmax { a: logits }, rg))
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let valid = vec![true; self.value(logits).len()];
        self.masked_softmax(logits, &valid)
    }

    /// Normalizes each row of the last axis to zero mean and unit variance,
    /// then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let d = self.value(x).last_dim();
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if d < 2 {
            return Err(TensorError::Invalid(
                "layer_norm needs at least two features".into(),
            ));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let rows = xv.len() / d;
        let mut normalized = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        let dn = T::from_usize(d).unwrap();
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rstd = T::one() / (var + eps).sqrt();
            inv_std[r] = rstd;
            for j in 0..d {
                let h = (row[j] - mean) * rstd;
                normalized[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        let shape = self.shape(x).to_vec();
        let (normalized, inv_std) = if rg {
            (normalized, inv_std)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`[T, V]`), skipping positions equal to `ignore_index`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_index: usize,
    ) -> Result<Var> {
        let value = self.value(logits);
        let classes = value.last_dim();
        let rows = value.len() / classes.max(1);
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: value.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![T::zero(); value.len()];
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, &target) in targets.iter().enumerate() {
            if target == ignore_index {
                continue;
            }
            if target >= classes {
                return Err(TensorError::IndexOutOfRange {
                    index: target,
                    bound: classes,
                });
            }
            let row = value.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let p = &mut probs[r * classes..(r + 1) * classes];
            let mut z = T::zero();
            for (pi, &x) in p.iter_mut().zip(row) {
                *pi = (x - max).exp();
                z += *pi;
            }
            p.iter_mut().for_each(|v| *v /= z);
            total += z.ln() + max - row[target];
            count += 1;
        }
        if count == 0 {
            return Err(TensorError::AllIgnored);
        }
        let loss = total / T::from_usize(count).unwrap();
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore_index,
                probs: if rg { probs } else { Vec::new() },
                count,
            },
            rg,
        ))
    }

    /// Gathers rows of a `[rows, d]` table.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.ndim() != 2 {
            return Err(TensorError::Invalid("embedding table must be 2-D".into()));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    index: i,
                    bound: rows,
                });
            }
            out.extend_from_slice(tv.row(i));
        }
        let rg = self.needs(table);
        Ok(self.push(
            Tensor::new([indices.len(), d], out)?,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Invalid(format!("concat axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let block = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::Invalid(format!(
                "slice {start}..{} of axis {axis} out of range for {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::Slice { a, axis, start },
            rg,
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true))
        {
            return Err(TensorError::Invalid(format!(
                "{axes:?} is not a permutation of {} axes",
                shape.len()
            )));
        }
        let out = permute_data(self.value(a).data(), &shape, axes);
        let new_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::Permute {
                a,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(TensorError::Invalid("transpose needs two axes".into()));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape.to_vec())?;
        let rg = self.needs(a);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// Inverted dropout. `p == 0` records nothing and returns `a`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid(format!("dropout rate {p} not in [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let scale = T::from_f64_lossy(1.0 / (1.0 - p));
        let value = self.value(a);
        let keep: Vec<T> = (0..value.len())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let out = value.data().iter().zip(&keep).map(|(&x, &k)| x * k).collect();
        let t = Tensor::new(value.shape().to_vec(), out)?;
        let rg = self.needs(a);
        Ok(self.push(t, Op::Dropout { a, keep }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum { a }, rg)
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // ----------------------------------------------------------- backward

    /// Back-propagates from a scalar `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let nodes = &self.nodes;
        let mut local: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = local[i].take() else {
                continue;
            };
            let mut acc = Accumulator {
                nodes,
                grads: &mut local,
            };
            match &node.op {
                Op::Leaf => match &mut self.grads[i] {
                    Some(existing) => add_into(existing, &g),
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul { a, b } => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let sb = nodes[b.0].value.shape();
                    let (k, n) = (sb[0], sb[1]);
                    let m = av.len() / k.max(1);
                    if let Some(da) = acc.slot(*a) {
                        T::gemm(
                            m,
                            n,
                            k,
                            T::one(),
                            &g,
                            (n as isize, 1),
                            bv,
                            (1, n as isize),
                            T::one(),
                            da,
                            (k as isize, 1),
                        );
                    }
                    if let Some(db) = acc.slot(*b) {
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            av,
                            (1, k as isize),
                            &g,
                            (n as isize, 1),
                            T::one(),
                            db,
                            (n as isize, 1),
                        );
                    }
                }
                Op::BatchMatMul { a, b, transpose_b } => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let sa = nodes[a.0].value.shape();
                    let (groups, m, k) = (sa[0], sa[1], sa[2]);
                    let n = node.value.shape()[2];
                    if let Some(da) = acc.slot(*a) {
                        // dA = G · Bᵀ
                        let bt = if *transpose_b {
                            (k as isize, 1)
                        } else {
                            (1, n as isize)
                        };
                        for gi in 0..groups {
                            T::gemm(
                                m,
                                n,
                                k,
                                T::one(),
                                &g[gi * m * n..(gi + 1) * m * n],
                                (n as isize, 1),
                                &bv[gi * k * n..(gi + 1) * k * n],
                                bt,
                                T::one(),
                                &mut da[gi * m * k..(gi + 1) * m * k],
                                (k as isize, 1),
                            );
                        }
                    }
                    if let Some(db) = acc.slot(*b) {
                        for gi in 0..groups {
                            let ga = &g[gi * m * n..(gi + 1) * m * n];
                            let aa = &av[gi * m * k..(gi + 1) * m * k];
                            let out = &mut db[gi * k * n..(gi + 1) * k * n];
                            if *transpose_b {
                                // stored [n, k]: dBᵀ = Gᵀ · A
                                T::gemm(
                                    n,
                                    m,
                                    k,
                                    T::one(),
                                    ga,
                                    (1, n as isize),
                                    aa,
                                    (k as isize, 1),
                                    T::one(),
                                    out,
                                    (k as isize, 1),
                                );
                            } else {
                                T::gemm(
                                    k,
                                    m,
                                    n,
                                    T::one(),
                                    aa,
                                    (1, k as isize),
                                    ga,
                                    (n as isize, 1),
                                    T::one(),
                                    out,
                                    (n as isize, 1),
                                );
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    if let Some(da) = acc.slot(*a) {
                        add_into(da, &g);
                    }
                    if let Some(db) = acc.slot(*b) {
                        add_into(db, &g);
                    }
                }
                Op::AddBroadcast { a, b } => {
                    if let Some(da) = acc.slot(*a) {
                        add_into(da, &g);
                    }
                    if let Some(db) = acc.slot(*b) {
                        let width = db.len();
                        for chunk in g.chunks(width) {
                            add_into(db, chunk);
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(da) = acc.slot(*a) {
                        for ((d, &gi), &y) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi * y;
                        }
                    }
                    if let Some(db) = acc.slot(*b) {
                        for ((d, &gi), &x) in db.iter_mut().zip(&g).zip(av) {
                            *d += gi * x;
                        }
                    }
                }
                Op::Scale { a, factor } => {
                    if let Some(da) = acc.slot(*a) {
                        for (d, &gi) in da.iter_mut().zip(&g) {
                            *d += gi * *factor;
                        }
                    }
                }
                Op::Relu { a } => {
                    let y = node.value.data();
                    if let Some(da) = acc.slot(*a) {
                        for ((d, &gi), &yi) in da.iter_mut().zip(&g).zip(y) {
                            if yi > T::zero() {
                                *d += gi;
                            }
                        }
                    }
                }
                Op::MaskedSoftmax { a } => {
                    let y = node.value.data();
                    let width = node.value.last_dim();
                    if let Some(da) = acc.slot(*a) {
                        for ((d, gr), yr) in da
                            .chunks_mut(width)
                            .zip(g.chunks(width))
                            .zip(y.chunks(width))
                        {
                            let dot: T = gr.iter().zip(yr).map(|(&gi, &yi)| gi * yi).sum();
                            for ((di, &gi), &yi) in d.iter_mut().zip(gr).zip(yr) {
                                *di += yi * (gi - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let d = node.value.last_dim();
                    let dn = T::from_usize(d).unwrap();
                    let gv = nodes[gain.0].value.data();
                    if let Some(dgain) = acc.slot(*gain) {
                        for (gr, hr) in g.chunks(d).zip(normalized.chunks(d)) {
                            for ((dg, &gi), &h) in dgain.iter_mut().zip(gr).zip(hr) {
                                *dg += gi * h;
                            }
                        }
                    }
                    if let Some(dbias) = acc.slot(*bias) {
                        for gr in g.chunks(d) {
                            add_into(dbias, gr);
                        }
                    }
                    if let Some(dx) = acc.slot(*x) {
                        let mut dh = vec![T::zero(); d];
                        for (r, ((dxr, gr), hr)) in dx
                            .chunks_mut(d)
                            .zip(g.chunks(d))
                            .zip(normalized.chunks(d))
                            .enumerate()
                        {
                            let mut mean_dh = T::zero();
                            let mut mean_dh_h = T::zero();
                            for j in 0..d {
                                dh[j] = gr[j] * gv[j];
                                mean_dh += dh[j];
                                mean_dh_h += dh[j] * hr[j];
                            }
                            mean_dh /= dn;
                            mean_dh_h /= dn;
                            let rstd = inv_std[r];
                            for j in 0..d {
                                dxr[j] += rstd * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore_index,
                    probs,
                    count,
                } => {
                    let classes = nodes[logits.0].value.last_dim();
                    let scale = g[0] / T::from_usize(*count).unwrap();
                    if let Some(dl) = acc.slot(*logits) {
                        for (r, &t) in targets.iter().enumerate() {
                            if t == *ignore_index {
                                continue;
                            }
                            let p = &probs[r * classes..(r + 1) * classes];
                            let d = &mut dl[r * classes..(r + 1) * classes];
                            for (di, &pi) in d.iter_mut().zip(p) {
                                *di += scale * pi;
                            }
                            d[t] -= scale;
                        }
                    }
                }
                Op::Embedding { table, indices } => {
                    let d = nodes[table.0].value.last_dim();
                    if let Some(dt) = acc.slot(*table) {
                        for (row, &i) in indices.iter().enumerate() {
                            add_into(&mut dt[i * d..(i + 1) * d], &g[row * d..(row + 1) * d]);
                        }
                    }
                }
                Op::Concat { inputs, axis } => {
                    let shape = node.value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let row = shape[*axis] * inner;
                    let mut offset = 0;
                    for &v in inputs {
                        let block = nodes[v.0].value.shape()[*axis] * inner;
                        if let Some(dv) = acc.slot(v) {
                            for o in 0..outer {
                                add_into(
                                    &mut dv[o * block..(o + 1) * block],
                                    &g[o * row + offset..o * row + offset + block],
                                );
                            }
                        }
                        offset += block;
                    }
                }
                Op::Slice { a, axis, start } => {
                    let src_shape = nodes[a.0].value.shape();
                    let len = node.value.shape()[*axis];
                    let outer: usize = src_shape[..*axis].iter().product();
                    let inner: usize = src_shape[axis + 1..].iter().product();
                    if let Some(da) = acc.slot(*a) {
                        for o in 0..outer {
                            let base = (o * src_shape[*axis] + start) * inner;
                            add_into(
                                &mut da[base..base + len * inner],
                                &g[o * len * inner..(o + 1) * len * inner],
                            );
                        }
                    }
                }
                Op::Permute { a, axes } => {
                    if let Some(da) = acc.slot(*a) {
                        let mut inverse = vec![0; axes.len()];
                        for (i, &ax) in axes.iter().enumerate() {
                            inverse[ax] = i;
                        }
                        let back = permute_data(&g, node.value.shape(), &inverse);
                        add_into(da, &back);
                    }
                }
                Op::Reshape { a } => {
                    if let Some(da) = acc.slot(*a) {
                        add_into(da, &g);
                    }
                }
                Op::Dropout { a, keep } => {
                    if let Some(da) = acc.slot(*a) {
                        for ((d, &gi), &k) in da.iter_mut().zip(&g).zip(keep) {
                            *d += gi * k;
                        }
                    }
                }
                Op::Sum { a } => {
                    if let Some(da) = acc.slot(*a) {
                        da.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
            }
        }
        Ok(())
    }
}

struct Accumulator<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> Accumulator<'_, T> {
    /// Zero-initialized gradient buffer for `v`, or `None` if `v` needs none.
    fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            self.grads[v.0]
                .get_or_insert_with(|| vec![T::zero(); node.value.len()])
                .as_mut_slice(),
        )
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn permute_data<T: Copy>(src: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let nd = shape.len();
    if nd == 0 {
        return src.to_vec();
    }
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd - 1).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return out;
    }
    let last = nd - 1;
    let (inner_len, inner_stride) = (out_shape[last], strides[last]);
    let mut index = vec![0usize; nd];
    loop {
        let base: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner_len]);
        } else {
            out.extend((0..inner_len).map(|j| src[base + j * inner_stride]));
        }
        // advance the odometer over all but the last axis
        let mut axis = last;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            index[axis] += 1;
            if index[axis] < out_shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
}
