//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order and may only reference earlier
//! nodes, so the tape is a topological order of an acyclic graph and the
//! backward pass is a single reverse sweep.

use super::kernels::{self, ConvGeom};
use super::{lit, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable single-input operation implemented outside this module.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &str;
    /// Maps the adjoint of the output to the adjoint of the input.
    fn backward(&self, grad_out: &Tensor<T>) -> Tensor<T>;
}

enum Op<T: Real> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    AvgPool2(Var),
    Reshape(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Custom(Var, Box<dyn CustomOp<T>>),
}

impl<T: Real> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            }
            | Op::Dense {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::Relu(v) | Op::AvgPool2(v) | Op::Reshape(v) | Op::Sum(v) | Op::Scale(v, _) => {
                vec![*v]
            }
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Custom(v, _) => vec![*v],
        }
    }

    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::AvgPool2(_) => "avg_pool2",
            Op::Reshape(_) => "reshape",
            Op::Dense { .. } => "dense",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Custom(_, op) => op.name(),
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
}

#[derive(Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient, or `None` if no backward pass has reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    ) -> Result<Var> {
        let batch = self.value(input).shape()[0];
        let shape = [batch, geom.out_ch, geom.out_h(), geom.out_w()];
        let mut out = Tensor::zeros(shape);
        kernels::conv2d_forward(
            &geom,
            batch,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            out.data_mut(),
        );
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = self.value(input).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(input))
    }

    pub(crate) fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).shape();
        let mut out = Tensor::zeros([n, c, h / 2, w / 2]);
        kernels::avg_pool2_forward(n * c, h, w, self.value(input).data(), out.data_mut());
        self.push(out, Op::AvgPool2(input))
    }

    pub fn reshape(&mut self, input: Var, shape: super::Shape) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        self.push(out, Op::Reshape(input))
    }

    pub(crate) fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, fan_in, _, _] = self.value(input).shape();
        let fan_out = self.value(weight).shape()[0];
        let mut out = Tensor::zeros([n, fan_out, 1, 1]);
        kernels::dense_forward(
            n,
            fan_in,
            fan_out,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            out.data_mut(),
        );
        self.push(
            out,
            Op::Dense {
                input,
                weight,
                bias,
            },
        )
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    ///
    /// `logits` must be `(N, K, 1, 1)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let [n, k, h, w] = t.shape();
        if h != 1 || w != 1 || labels.len() != n {
            return Err(Error::shape("cross_entropy", [labels.len(), k, 1, 1], t.shape()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut total = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = t.item(i);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            total += log_z - row[label];
            probs.extend(row.iter().map(|&v| (v - log_z).exp()));
        }
        let loss = total / lit::<T>(n as f64);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::Sum(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let out = self.value(input).scale(factor);
        self.push(out, Op::Scale(input, factor))
    }

    /// Records an externally computed `output = f(input)` with its adjoint rule.
    pub fn custom(&mut self, input: Var, output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Result<Var> {
        self.push(output, Op::Custom(input, op))
    }

    /// Propagates adjoints from a scalar `loss`, adding into every reachable
    /// node's stored gradient. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != [1, 1, 1, 1] {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::ones(shape));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g)?,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, adj: &mut [Option<Tensor<T>>]) {
        fn slot<'a, T: Real>(
            adj: &'a mut [Option<Tensor<T>>],
            v: Var,
            like: &Tensor<T>,
        ) -> &'a mut Tensor<T> {
            adj[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
        }

        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let mut gx = Tensor::zeros(x.shape());
                let mut gw = Tensor::zeros(w.shape());
                let mut gb = Tensor::zeros(self.value(*bias).shape());
                kernels::conv2d_backward(
                    geom,
                    x.shape()[0],
                    x.data(),
                    w.data(),
                    g.data(),
                    gx.data_mut(),
                    gw.data_mut(),
                    gb.data_mut(),
                );
                accumulate(slot(adj, *input, x), &gx);
                accumulate(slot(adj, *weight, w), &gw);
                accumulate(slot(adj, *bias, &gb), &gb);
            }
            Op::Relu(input) => {
                let x = self.value(*input);
                let dst = slot(adj, *input, x);
                for ((d, &xv), &gv) in dst.data_mut().iter_mut().zip(x.data()).zip(g.data()) {
                    if xv > T::zero() {
                        *d += gv;
                    }
                }
            }
            Op::AvgPool2(input) => {
                let x = self.value(*input);
                let [n, c, h, w] = x.shape();
                let dst = slot(adj, *input, x);
                kernels::avg_pool2_backward(n * c, h, w, g.data(), dst.data_mut());
            }
            Op::Reshape(input) => {
                let x = self.value(*input);
                let dst = slot(adj, *input, x);
                for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                    *d += gv;
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let [n, fan_in, _, _] = x.shape();
                let fan_out = w.shape()[0];
                let mut gx = Tensor::zeros(x.shape());
                let mut gw = Tensor::zeros(w.shape());
                let mut gb = Tensor::zeros(self.value(*bias).shape());
                kernels::dense_backward(
                    n,
                    fan_in,
                    fan_out,
                    x.data(),
                    w.data(),
                    g.data(),
                    gx.data_mut(),
                    gw.data_mut(),
                    gb.data_mut(),
                );
                accumulate(slot(adj, *input, x), &gx);
                accumulate(slot(adj, *weight, w), &gw);
                accumulate(slot(adj, *bias, &gb), &gb);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let x = self.value(*logits);
                let [n, k, _, _] = x.shape();
                let scale = g.data()[0] / lit::<T>(n as f64);
                let dst = slot(adj, *logits, x).data_mut();
                for (row, &label) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == label { T::one() } else { T::zero() };
                        dst[row * k + j] += (probs[row * k + j] - onehot) * scale;
                    }
                }
            }
            Op::Sum(input) => {
                let x = self.value(*input);
                let gv = g.data()[0];
                for d in slot(adj, *input, x).data_mut() {
                    *d += gv;
                }
            }
            Op::Add(a, b) => {
                accumulate(slot(adj, *a, g), g);
                accumulate(slot(adj, *b, g), g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = g.zip_map(vb, |x, y| x * y).expect("shapes checked at record time");
                let gb = g.zip_map(va, |x, y| x * y).expect("shapes checked at record time");
                accumulate(slot(adj, *a, g), &ga);
                accumulate(slot(adj, *b, g), &gb);
            }
            Op::Scale(input, factor) => {
                let f = *factor;
                let dst = slot(adj, *input, g);
                for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                    *d += gv * f;
                }
            }
            Op::Custom(input, op) => {
                let gi = op.backward(g);
                accumulate(slot(adj, *input, &gi), &gi);
            }
        }
    }
}

fn accumulate<T: Real>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: super::super::Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t([1, 1, 2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
        assert_eq!(g.grad(s).unwrap().data(), &[1.0]);
    }

    #[test]
    fn half_square_gives_identity() {
        let mut g = Graph::new();
        let vals = [0.3, -1.5, 2.0, 7.0, -0.25, 0.0];
        let x = g.leaf(t([1, 2, 3, 1], &vals));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let loss = g.scale(s, 0.5).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &vals);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(t([1, 1, 1, 3], &[1.0, 2.0, 3.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0; 3]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::<f64>::ones([2, 1, 1, 1]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn parents_precede_children() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::<f64>::ones([1, 1, 2, 2]));
        let r = g.relu(x).unwrap();
        let m = g.mul(r, x).unwrap();
        let s = g.sum(m).unwrap();
        for v in [r, m, s] {
            assert!(g.parents(v).iter().all(|p| p.index() < v.index()));
        }
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::<f64>::zeros([3, 7, 1, 1]));
        let loss = g.cross_entropy(logits, &[0, 3, 6]).unwrap();
        assert!((g.value(loss).data()[0] - 7f64.ln()).abs() < 1e-12);

        let mut sat = Tensor::<f64>::zeros([1, 4, 1, 1]);
        sat.data_mut()[2] = 1000.0;
        let logits = g.leaf(sat);
        let loss = g.cross_entropy(logits, &[2]).unwrap();
        assert!(g.value(loss).data()[0].abs() < 1e-12);

        let err = g.cross_entropy(logits, &[4]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 4, classes: 4 }));
    }
}
