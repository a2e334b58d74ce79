//! Tensor-level Wengert tape for reverse-mode differentiation.
//!
//! Operations record their inputs and the values needed by their adjoint.
//! [`Tape::backward`] walks the record in reverse and accumulates adjoints.
//! The tape is generic over the scalar, so running it over
//! [`Dual`](crate::scalar::Dual) values differentiates the gradient itself
//! (forward-over-reverse).

use crate::error::{Error, Result};
use crate::scalar::{Lift, Scalar};

use super::tensor::DenseTensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Concat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Tanh(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        probs: DenseTensor<S>,
        labels: Vec<usize>,
    },
    SoftCrossEntropy {
        logits: Var,
        probs: DenseTensor<S>,
        targets: DenseTensor<S>,
        temperature: S,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: DenseTensor<S>,
    op: Op<S>,
}

#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Row-wise softmax of `z / temperature` restricted to the leading `k`
/// columns, with max-subtraction. Also returns each row's log-normaliser
/// (`max + ln Σ exp(· − max)`) of the scaled logits.
pub(crate) fn softmax_rows<S: Scalar>(logits: &DenseTensor<S>, k: usize, temperature: S) -> (DenseTensor<S>, Vec<S>) {
    let n = logits.rows();
    let mut probs = Vec::with_capacity(n * k);
    let mut lse = Vec::with_capacity(n);
    for row in logits.iter_rows() {
        let scaled: Vec<S> = row[..k].iter().map(|&v| v / temperature).collect();
        let max = scaled.iter().copied().fold(scaled[0], S::max_by_primal);
        let exps: Vec<S> = scaled.iter().map(|&v| (v - max).exp()).collect();
        let z = exps.iter().fold(S::zero(), |a, &b| a + b);
        probs.extend(exps.iter().map(|&e| e / z));
        lse.push(max + z.ln());
    }
    (DenseTensor::raw(vec![n, k], probs), lse)
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseTensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input node (parameter or constant).
    pub fn leaf(&mut self, value: DenseTensor<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Input node built from data of a base scalar type.
    pub fn constant<T>(&mut self, value: &DenseTensor<T>) -> Var
    where
        T: Scalar,
        S: Lift<T>,
    {
        self.leaf(value.lift())
    }

    pub fn value(&self, v: Var) -> &DenseTensor<S> {
        &self.nodes[v.0].value
    }

    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Result<Var> {
        let y = self.value(x).matmul_nt(self.value(w))?;
        Ok(self.push(y, Op::MatMulNt(x, w)))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let y = self.value(x).add_row(self.value(b))?;
        Ok(self.push(y, Op::AddRow(x, b)))
    }

    pub fn scale_rows(&mut self, w: Var, s: Var) -> Result<Var> {
        let y = self.value(w).scale_rows(self.value(s))?;
        Ok(self.push(y, Op::ScaleRows(w, s)))
    }

    /// Concatenates along the leading axis (vectors end to end, matrices by
    /// rows).
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != vb.rank() || va.shape()[1..] != vb.shape()[1..] || va.rank() == 0 {
            return Err(Error::shape("concat", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let mut shape = va.shape().to_vec();
        shape[0] += vb.shape()[0];
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        Ok(self.push(DenseTensor::raw(shape, data), Op::Concat(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a).add(self.value(b));
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.value(a).sub(self.value(b));
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q);
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let y = self.value(a).scaled(k);
        self.push(y, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).map(Scalar::tanh);
        self.push(y, Op::Tanh(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let y = DenseTensor::scalar(self.value(a).sum());
        self.push(y, Op::Sum(a))
    }

    /// Mean softmax cross-entropy of `logits` (n×C) against integer labels.
    /// An empty batch has loss 0.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let (n, c) = (z.rows(), z.cols());
        if labels.len() != n {
            return Err(Error::shape(
                "cross entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Label {
                label: bad,
                num_classes: c,
            });
        }
        if n == 0 {
            let probs = DenseTensor::zeros(&[0, c]);
            return Ok(self.push(
                DenseTensor::scalar(S::zero()),
                Op::CrossEntropy {
                    logits,
                    probs,
                    labels: vec![],
                },
            ));
        }
        let (probs, lse) = softmax_rows(z, c, S::one());
        let mut total = S::zero();
        for (i, &y) in labels.iter().enumerate() {
            total += lse[i] - z.row(i)[y];
        }
        let loss = total / S::from_count(n);
        Ok(self.push(
            DenseTensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Mean over rows of `−Σ_k targets[i,k] · log softmax(logits[i, :K] / τ)_k`
    /// where `K = targets.cols()`. Columns of `logits` beyond `K` receive no
    /// gradient.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: DenseTensor<S>, temperature: S) -> Result<Var> {
        let z = self.value(logits);
        let (n, k) = (targets.rows(), targets.cols());
        if z.rows() != n || z.cols() < k {
            return Err(Error::shape(
                "distillation",
                format!(
                    "logits {:?} cannot be matched with targets {:?}",
                    z.shape(),
                    targets.shape()
                ),
            ));
        }
        if n == 0 || k == 0 {
            return Ok(self.push(
                DenseTensor::scalar(S::zero()),
                Op::SoftCrossEntropy {
                    logits,
                    probs: DenseTensor::zeros(&[n, k]),
                    targets,
                    temperature,
                },
            ));
        }
        let (probs, lse) = softmax_rows(z, k, temperature);
        let mut total = S::zero();
        for i in 0..n {
            let zr = z.row(i);
            for (j, &t) in targets.row(i).iter().enumerate() {
                // log π_j = z_j/τ − lse
                total -= t * (zr[j] / temperature - lse[i]);
            }
        }
        let loss = total / S::from_count(n);
        Ok(self.push(
            DenseTensor::scalar(loss),
            Op::SoftCrossEntropy {
                logits,
                probs,
                targets,
                temperature,
            },
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients<S>> {
        if self.value(out).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.value(out).shape()),
            ));
        }
        let mut grads: Vec<Option<DenseTensor<S>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(DenseTensor::filled(self.value(out).shape(), S::one()));

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            // Leaves keep their adjoint; interior adjoints are consumed.
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMulNt(x, w) => {
                    let gx = g.matmul_nn(self.value(*w))?;
                    let gw = g.matmul_tn(self.value(*x))?;
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::AddRow(x, b) => {
                    accumulate(&mut grads, *b, g.sum_rows());
                    accumulate(&mut grads, *x, g);
                }
                Op::ScaleRows(w, s) => {
                    let gs = g.zip_map(self.value(*w), |a, b| a * b).sum_cols();
                    let gw = g.scale_rows(self.value(*s))?;
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *s, gs);
                }
                Op::Concat(a, b) => {
                    let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                    let cut = self.value(*a).len();
                    let ga = DenseTensor::raw(sa.to_vec(), g.data()[..cut].to_vec());
                    let gb = DenseTensor::raw(sb.to_vec(), g.data()[cut..].to_vec());
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |p, q| p * q);
                    let gb = g.zip_map(self.value(*a), |p, q| p * q);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads, *a, g.scaled(*k));
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |p, y| p * (S::one() - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = DenseTensor::filled(self.value(*a).shape(), g.item());
                    accumulate(&mut grads, *a, ga);
                }
                Op::CrossEntropy { logits, probs, labels } => {
                    let n = labels.len();
                    let mut gz = DenseTensor::zeros(self.value(*logits).shape());
                    if n > 0 {
                        let k = g.item() / S::from_count(n);
                        for (i, &y) in labels.iter().enumerate() {
                            let row = gz.row_mut(i);
                            for (o, &p) in row.iter_mut().zip(probs.row(i)) {
                                *o = p * k;
                            }
                            row[y] -= k;
                        }
                    }
                    accumulate(&mut grads, *logits, gz);
                }
                Op::SoftCrossEntropy {
                    logits,
                    probs,
                    targets,
                    temperature,
                } => {
                    let (n, kk) = (targets.rows(), targets.cols());
                    let mut gz = DenseTensor::zeros(self.value(*logits).shape());
                    if n > 0 && kk > 0 {
                        let k = g.item() / (S::from_count(n) * *temperature);
                        for i in 0..n {
                            let t = targets.row(i);
                            let mass = t.iter().fold(S::zero(), |a, &b| a + b);
                            let p = probs.row(i);
                            let row = gz.row_mut(i);
                            for j in 0..kk {
                                row[j] = (mass * p[j] - t[j]) * k;
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, gz);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<DenseTensor<S>>], v: Var, g: DenseTensor<S>) {
    match &mut grads[v.0] {
        Some(acc) => acc.axpy(S::one(), &g),
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<DenseTensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Adjoint of `v`; `None` when the output does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&DenseTensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, zero-filled with `v`'s shape if absent.
    pub fn get_or_zeros(&self, tape: &Tape<S>, v: Var) -> DenseTensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| DenseTensor::zeros(tape.value(v).shape()))
    }
}
