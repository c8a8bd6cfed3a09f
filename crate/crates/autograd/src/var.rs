use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::kernels::{self, ConvGeom};
use crate::{Float, Tensor};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

fn next_id() -> usize {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// A node in a dynamically built computation graph.
///
/// Cloning a `Var` is cheap and refers to the same node.
#[derive(Clone)]
pub struct Var<T: Float> {
    node: Rc<Node<T>>,
}

struct Node<T: Float> {
    id: usize,
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

enum Op<T: Float> {
    Leaf,
    Add(Var<T>, Var<T>),
    Sub(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    Affine(Var<T>, T),
    Relu(Var<T>),
    LeakyRelu(Var<T>, T),
    Sigmoid(Var<T>),
    Exp(Var<T>),
    GuardedLn(Var<T>, T),
    Abs(Var<T>),
    Sum(Var<T>),
    Conv2d { x: Var<T>, w: Var<T>, b: Option<Var<T>>, geom: ConvGeom },
    ConvTranspose2d { x: Var<T>, w: Var<T>, b: Option<Var<T>>, geom: ConvGeom },
    Linear { x: Var<T>, w: Var<T>, b: Option<Var<T>> },
    GlobalAvgPool(Var<T>),
    AvgPool2(Var<T>),
    ConcatChannels(Vec<Var<T>>),
    BroadcastSpatial(Var<T>),
    Resample { x: Var<T>, rows: Rc<Tensor<T>>, cols: Rc<Tensor<T>> },
    Reshape(Var<T>),
}

impl<T: Float> Op<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Affine(a, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::GuardedLn(a, _)
            | Op::Abs(a)
            | Op::Sum(a)
            | Op::GlobalAvgPool(a)
            | Op::AvgPool2(a)
            | Op::BroadcastSpatial(a)
            | Op::Reshape(a) => vec![a],
            Op::Resample { x, .. } => vec![x],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![x, w];
                v.extend(b.as_ref());
                v
            }
            Op::ConcatChannels(parts) => parts.iter().collect(),
        }
    }
}

impl<T: Float> Var<T> {
    /// A trainable leaf whose gradient is reported by [`Var::backward`].
    pub fn parameter(value: Tensor<T>) -> Self {
        Self::from_node(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::from_node(value, Op::Leaf, false)
    }

    fn from_node(value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Self {
        Self { node: Rc::new(Node { id: next_id(), value, op, requires_grad }) }
    }

    fn derive(value: Tensor<T>, op: Op<T>) -> Self {
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::from_node(value, op, true)
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.node.value
    }

    pub fn shape(&self) -> &[usize] {
        self.node.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// The same value cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.node.value.clone())
    }

    pub fn add(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a + b);
        Self::derive(v, Op::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a - b);
        Self::derive(v, Op::Sub(self.clone(), other.clone()))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let v = self.value().zip_map(other.value(), |a, b| a * b);
        Self::derive(v, Op::Mul(self.clone(), other.clone()))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        let (s, t) = (T::from_f64(scale), T::from_f64(shift));
        let v = self.value().map(|a| s * a + t);
        Self::derive(v, Op::Affine(self.clone(), s))
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.affine(factor, 0.0)
    }

    pub fn relu(&self) -> Self {
        let v = self.value().map(|a| if a > T::zero() { a } else { T::zero() });
        Self::derive(v, Op::Relu(self.clone()))
    }

    pub fn leaky_relu(&self, slope: f64) -> Self {
        let s = T::from_f64(slope);
        let v = self.value().map(|a| if a > T::zero() { a } else { s * a });
        Self::derive(v, Op::LeakyRelu(self.clone(), s))
    }

    pub fn sigmoid(&self) -> Self {
        let v = self.value().map(|a| T::one() / (T::one() + (-a).exp()));
        Self::derive(v, Op::Sigmoid(self.clone()))
    }

    pub fn exp(&self) -> Self {
        let v = self.value().map(|a| a.exp());
        Self::derive(v, Op::Exp(self.clone()))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn guarded_ln(&self, floor: f64) -> Self {
        let f = T::from_f64(floor);
        let v = self.value().map(|a| a.max(f).ln());
        Self::derive(v, Op::GuardedLn(self.clone(), f))
    }

    pub fn abs(&self) -> Self {
        let v = self.value().map(|a| a.abs());
        Self::derive(v, Op::Abs(self.clone()))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&self) -> Self {
        let v = Tensor::scalar(self.value().sum());
        Self::derive(v, Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Self {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn conv2d(&self, weight: &Self, bias: Option<&Self>, kernel: usize, stride: usize, padding: usize) -> Self {
        let geom = ConvGeom::new(kernel, stride, padding);
        let v = kernels::conv2d(self.value(), weight.value(), bias.map(|b| b.value()), geom);
        Self::derive(v, Op::Conv2d { x: self.clone(), w: weight.clone(), b: bias.cloned(), geom })
    }

    /// Weight layout `(cin, cout, k, k)`.
    pub fn conv_transpose2d(
        &self,
        weight: &Self,
        bias: Option<&Self>,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let geom = ConvGeom::new(kernel, stride, padding);
        let v = kernels::conv_transpose2d(self.value(), weight.value(), bias.map(|b| b.value()), geom);
        Self::derive(v, Op::ConvTranspose2d { x: self.clone(), w: weight.clone(), b: bias.cloned(), geom })
    }

    /// `(n, in) -> (n, out)` with weight `(out, in)`.
    pub fn linear(&self, weight: &Self, bias: Option<&Self>) -> Self {
        let v = kernels::linear(self.value(), weight.value(), bias.map(|b| b.value()));
        Self::derive(v, Op::Linear { x: self.clone(), w: weight.clone(), b: bias.cloned() })
    }

    /// `(n, c, h, w) -> (n, c)`.
    pub fn global_avg_pool(&self) -> Self {
        let (n, c, h, w) = self.value().dims4();
        let inv = T::from_f64(1.0 / (h * w) as f64);
        let data = self.value().data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        Self::derive(Tensor::new([n, c], data), Op::GlobalAvgPool(self.clone()))
    }

    pub fn avg_pool2(&self) -> Self {
        Self::derive(kernels::avg_pool2(self.value()), Op::AvgPool2(self.clone()))
    }

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let (n, _, h, w) = parts[0].value().dims4();
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.value().dims4();
            assert!(pn == n && ph == h && pw == w, "concat_channels shape mismatch");
            total_c += pc;
        }
        let mut data = Vec::with_capacity(n * total_c * h * w);
        for b in 0..n {
            for p in parts {
                data.extend_from_slice(p.value().batch_slice(b));
            }
        }
        let v = Tensor::new([n, total_c, h, w], data);
        Self::derive(v, Op::ConcatChannels(parts.iter().map(|p| (*p).clone()).collect()))
    }

    /// `(n, c) -> (n, c, h, w)` by repeating each value over the plane.
    pub fn broadcast_spatial(&self, h: usize, w: usize) -> Self {
        let (n, c) = self.value().dims2();
        let mut data = Vec::with_capacity(n * c * h * w);
        for &v in self.value().data() {
            data.extend(std::iter::repeat(v).take(h * w));
        }
        Self::derive(Tensor::new([n, c, h, w], data), Op::BroadcastSpatial(self.clone()))
    }

    /// Separable linear resampling with fixed matrices `rows: (oh, h)` and `cols: (ow, w)`.
    pub fn resample(&self, rows: Rc<Tensor<T>>, cols: Rc<Tensor<T>>) -> Self {
        let v = kernels::resample(self.value(), &rows, &cols);
        Self::derive(v, Op::Resample { x: self.clone(), rows, cols })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Self {
        let v = self.value().clone().reshape(shape);
        Self::derive(v, Op::Reshape(self.clone()))
    }

    /// Reverse-mode gradients of this scalar with respect to every
    /// upstream parameter.
    ///
    /// # Panics
    /// If `self` holds more than one element.
    pub fn backward(&self) -> Gradients<T> {
        assert_eq!(self.value().len(), 1, "backward() requires a scalar output");
        let mut grads = Gradients { map: HashMap::new() };
        if !self.requires_grad() {
            return grads;
        }
        let order = self.topological_order();
        grads.map.insert(self.node.id, Tensor::full(self.shape().to_vec(), T::one()));
        for var in order.iter().rev() {
            let node = &var.node;
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = grads.map.remove(&node.id) else {
                continue;
            };
            var.propagate(&grad, &mut grads);
        }
        grads
    }

    /// Post-order over the nodes that require gradients.
    fn topological_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Var<T>, bool)> = vec![(self.clone(), false)];
        while let Some((var, expanded)) = stack.pop() {
            if expanded {
                order.push(var);
                continue;
            }
            if !visited.insert(var.node.id) {
                continue;
            }
            stack.push((var.clone(), true));
            for p in var.node.op.parents() {
                if p.requires_grad() && !visited.contains(&p.node.id) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    fn propagate(&self, grad: &Tensor<T>, grads: &mut Gradients<T>) {
        let out = &self.node.value;
        match &self.node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                grads.accumulate(a, grad.clone());
                grads.accumulate(b, grad.clone());
            }
            Op::Sub(a, b) => {
                grads.accumulate(a, grad.clone());
                grads.accumulate(b, grad.map(|g| -g));
            }
            Op::Mul(a, b) => {
                if a.requires_grad() {
                    grads.accumulate(a, grad.zip_map(b.value(), |g, y| g * y));
                }
                if b.requires_grad() {
                    grads.accumulate(b, grad.zip_map(a.value(), |g, x| g * x));
                }
            }
            Op::Affine(a, s) => grads.accumulate(a, grad.map(|g| g * *s)),
            Op::Relu(a) => {
                grads.accumulate(a, grad.zip_map(a.value(), |g, x| if x > T::zero() { g } else { T::zero() }))
            }
            Op::LeakyRelu(a, s) => {
                grads.accumulate(a, grad.zip_map(a.value(), |g, x| if x > T::zero() { g } else { g * *s }))
            }
            Op::Sigmoid(a) => grads.accumulate(a, grad.zip_map(out, |g, y| g * y * (T::one() - y))),
            Op::Exp(a) => grads.accumulate(a, grad.zip_map(out, |g, y| g * y)),
            Op::GuardedLn(a, f) => {
                grads.accumulate(a, grad.zip_map(a.value(), |g, x| if x > *f { g / x } else { T::zero() }))
            }
            Op::Abs(a) => grads.accumulate(
                a,
                grad.zip_map(a.value(), |g, x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::Sum(a) => grads.accumulate(a, Tensor::full(a.shape().to_vec(), grad.item())),
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) =
                    kernels::conv2d_backward(x.value(), w.value(), grad, *geom, x.requires_grad());
                if let Some(gx) = gx {
                    grads.accumulate(x, gx);
                }
                grads.accumulate(w, gw);
                if let Some(b) = b {
                    grads.accumulate(b, gb);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (gx, gw, gb) =
                    kernels::conv_transpose2d_backward(x.value(), w.value(), grad, *geom, x.requires_grad());
                if let Some(gx) = gx {
                    grads.accumulate(x, gx);
                }
                grads.accumulate(w, gw);
                if let Some(b) = b {
                    grads.accumulate(b, gb);
                }
            }
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = kernels::linear_backward(x.value(), w.value(), grad);
                grads.accumulate(x, gx);
                grads.accumulate(w, gw);
                if let Some(b) = b {
                    grads.accumulate(b, gb);
                }
            }
            Op::GlobalAvgPool(a) => {
                let (_, _, h, w) = a.value().dims4();
                let inv = T::from_f64(1.0 / (h * w) as f64);
                let mut data = Vec::with_capacity(a.value().len());
                for &g in grad.data() {
                    data.extend(std::iter::repeat(g * inv).take(h * w));
                }
                grads.accumulate(a, Tensor::new(a.shape().to_vec(), data));
            }
            Op::AvgPool2(a) => grads.accumulate(a, kernels::avg_pool2_backward(grad, a.shape())),
            Op::ConcatChannels(parts) => {
                let (n, total_c, h, w) = grad.dims4();
                let plane = h * w;
                let mut offset = 0;
                for p in parts {
                    let (_, pc, _, _) = p.value().dims4();
                    if p.requires_grad() {
                        let mut data = Vec::with_capacity(n * pc * plane);
                        for b in 0..n {
                            let start = (b * total_c + offset) * plane;
                            data.extend_from_slice(&grad.data()[start..start + pc * plane]);
                        }
                        grads.accumulate(p, Tensor::new([n, pc, h, w], data));
                    }
                    offset += pc;
                }
            }
            Op::BroadcastSpatial(a) => {
                let (_, _, h, w) = grad.dims4();
                let data = grad.data().chunks(h * w).map(|p| p.iter().copied().sum()).collect();
                grads.accumulate(a, Tensor::new(a.shape().to_vec(), data));
            }
            Op::Resample { x, rows, cols } => grads.accumulate(x, kernels::resample_backward(grad, rows, cols)),
            Op::Reshape(a) => grads.accumulate(a, grad.clone().reshape(a.shape().to_vec())),
        }
    }
}

impl<T: Float> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.node.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

/// Gradients produced by [`Var::backward`], keyed by leaf.
pub struct Gradients<T: Float> {
    map: HashMap<usize, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.map.get(&var.node.id)
    }

    pub fn remove(&mut self, var: &Var<T>) -> Option<Tensor<T>> {
        self.map.remove(&var.node.id)
    }

    fn accumulate(&mut self, var: &Var<T>, grad: Tensor<T>) {
        if !var.requires_grad() {
            return;
        }
        match self.map.get_mut(&var.node.id) {
            Some(acc) => acc.add_assign(&grad),
            None => {
                self.map.insert(var.node.id, grad);
            }
        }
    }
}
