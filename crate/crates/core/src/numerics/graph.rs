use super::kernels::{self, ConvGeom, MatmulGeom, NormStats};
use super::{r, ParamId, ParamStore, Real, Tensor};
use crate::error::{contract_err, dim_err, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    ScaleBy(Var, Var),
    ScaleAxis(Var, Var, usize),
    Recip(Var),
    Abs(Var),
    Relu(Var),
    Gelu(Var),
    Powf(Var, T),
    ClampMin(Var, T),
    SmoothL1(Var, T),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    MatMul(Var, Var, MatmulGeom),
    Linear(Var, Var, Option<Var>),
    Conv(Var, Var, Option<Var>, ConvGeom),
    MaxPool(Var, Vec<u32>),
    AvgPool2(Var),
    GlobalAvgPool(Var),
    Resize(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        axis: usize,
        stats: NormStats<T>,
    },
    BatchNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
        batch_stats: bool,
    },
    L2Normalize(Var, usize, T),
    Filter(Var, Vec<T>),
    Narrow(Var, usize, usize),
    CrossEntropy(Var, Vec<usize>, Tensor<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(_) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::ScaleBy(..) => "scale_by",
            Op::ScaleAxis(..) => "scale_axis",
            Op::Recip(_) => "recip",
            Op::Abs(_) => "abs",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Powf(..) => "powf",
            Op::ClampMin(..) => "clamp_min",
            Op::SmoothL1(..) => "smooth_l1",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::MatMul(..) => "matmul",
            Op::Linear(..) => "linear",
            Op::Conv(..) => "conv2d",
            Op::MaxPool(..) => "maxpool2d",
            Op::AvgPool2(_) => "avgpool2",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Resize(_) => "bilinear_resize",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::BatchNorm { .. } => "batch_norm",
            Op::L2Normalize(..) => "l2_normalize",
            Op::Filter(..) => "separable_filter",
            Op::Narrow(..) => "narrow",
            Op::CrossEntropy(..) => "cross_entropy",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Dynamically recorded computation for reverse-mode differentiation.
///
/// Build one graph per forward pass; values live until the graph is dropped.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to the leaves and parameters of a graph.
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a leaf created by [`Graph::input`] or [`Graph::param`].
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for (id, g) in &self.params {
            store.accumulate_grad(*id, g);
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A graph that records values only; nothing requires gradients.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(crate::error::Error::NonFinite(op.name()));
        }
        let requires_grad = requires_grad && self.grad_enabled;
        let op = if requires_grad || matches!(op, Op::Param(_)) {
            op
        } else {
            Op::Leaf
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable leaf (e.g. an image whose gradient is inspected).
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter; trainable parameters receive gradients.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        Tensor::new(
            x.shape(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect(),
        )
        .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip(a, b, |p, q| p + q);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip(a, b, |p, q| p - q);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip(a, b, |p, q| p * q);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let v = self.zip(a, b, |p, q| p / q);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Div(a, b), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(v, Op::MulScalar(a, c), rg)
    }

    /// `x * s` where `s` holds a single element.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(dim_err!("scale_by expects a one-element scale, got {:?}", self.shape(s)));
        }
        let c = self.value(s).item();
        let v = self.value(x).map(|e| e * c);
        let rg = self.rg(&[x, s]);
        self.push(v, Op::ScaleBy(x, s), rg)
    }

    /// Multiplies every slice `j` along `axis` by `s[j]`.
    pub fn scale_axis(&mut self, x: Var, s: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.value(s).numel() != shape[axis] {
            return Err(dim_err!(
                "scale_axis: {:?} cannot scale axis {axis} of {:?}",
                self.shape(s),
                shape
            ));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let sv = self.value(s).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e *= sv[(i / inner) % len];
        }
        let rg = self.rg(&[x, s]);
        self.push(v, Op::ScaleAxis(x, s, axis), rg)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| T::one() / x);
        let rg = self.rg(&[a]);
        self.push(v, Op::Recip(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.abs());
        let rg = self.rg(&[a]);
        self.push(v, Op::Abs(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(kernels::gelu);
        let rg = self.rg(&[a]);
        self.push(v, Op::Gelu(a), rg)
    }

    /// Elementwise `x^p`; inputs must be positive.
    pub fn powf(&mut self, a: Var, p: T) -> Result<Var> {
        let v = self.value(a).map(|x| x.powf(p));
        let rg = self.rg(&[a]);
        self.push(v, Op::Powf(a, p), rg)
    }

    pub fn clamp_min(&mut self, a: Var, lo: T) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(lo));
        let rg = self.rg(&[a]);
        self.push(v, Op::ClampMin(a, lo), rg)
    }

    /// Elementwise smooth-L1 (Huber with threshold `beta`, scaled by `1/beta`).
    pub fn smooth_l1(&mut self, a: Var, beta: T) -> Result<Var> {
        let v = self.value(a).map(|d| kernels::smooth_l1_elem(d, beta));
        let rg = self.rg(&[a]);
        self.push(v, Op::SmoothL1(a, beta), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / r::<T>(t.numel() as f64));
        let rg = self.rg(&[a]);
        self.push(v, Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push(v, Op::Reshape(a), rg)
    }

    /// Batched `op(a) · op(b)`; see [`kernels::matmul`].
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (geom, _) = MatmulGeom::resolve(self.shape(a), self.shape(b), ta, tb)?;
        let v = kernels::matmul(self.value(a), self.value(b), ta, tb)?;
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b, geom), rg)
    }

    /// `x · wᵀ + b` over the last axis of `x`, with `w` shaped `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let fan_in = *xs.last().ok_or_else(|| dim_err!("linear on a scalar"))?;
        if ws.len() != 2 || ws[1] != fan_in {
            return Err(dim_err!("linear weight {:?} does not accept input {:?}", ws, xs));
        }
        let out = ws[0];
        if let Some(b) = b {
            if self.value(b).numel() != out {
                return Err(dim_err!("linear bias needs {out} values"));
            }
        }
        let rows = self.value(x).numel() / fan_in;
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = out;
        let mut v = Tensor::zeros(&shape);
        kernels::gemm(
            rows,
            fan_in,
            out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            v.data_mut(),
            false,
        );
        if let Some(b) = b {
            let bv = self.value(b).data().to_vec();
            for row in v.data_mut().chunks_mut(out) {
                row.iter_mut().zip(&bv).for_each(|(o, &c)| *o += c);
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(v, Op::Linear(x, w, b), rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let v = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(v, Op::Conv(x, w, b, geom), rg)
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (v, arg) = kernels::maxpool2d(self.value(x), k, stride)?;
        let rg = self.rg(&[x]);
        self.push(v, Op::MaxPool(x, arg), rg)
    }

    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        let v = kernels::avgpool2(self.value(x))?;
        let rg = self.rg(&[x]);
        self.push(v, Op::AvgPool2(x), rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let v = kernels::global_avg_pool(self.value(x))?;
        let rg = self.rg(&[x]);
        self.push(v, Op::GlobalAvgPool(x), rg)
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let v = kernels::bilinear_resize(self.value(x), out_h, out_w)?;
        let rg = self.rg(&[x]);
        self.push(v, Op::Resize(x), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = kernels::softmax(self.value(x), axis)?;
        let rg = self.rg(&[x]);
        self.push(v, Op::Softmax(x, axis), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, axis: usize, eps: T) -> Result<Var> {
        let (v, stats) =
            kernels::layer_norm(self.value(x), axis, self.value(gain), self.value(bias), eps)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                axis,
                stats,
            },
            rg,
        )
    }

    /// Batch normalization over `N,H,W` using the batch's own statistics.
    /// Returns the output together with the batch mean and biased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (mean, var) = kernels::channel_moments(self.value(x))?;
        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let out = self.batch_norm_with(x, gain, bias, mean.clone(), rstd, true)?;
        Ok((out, mean, var))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.batch_norm_with(x, gain, bias, mean.to_vec(), rstd, false)
    }

    fn batch_norm_with(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
        batch_stats: bool,
    ) -> Result<Var> {
        let v = kernels::channel_affine(
            self.value(x),
            &mean,
            &rstd,
            self.value(gain).data(),
            self.value(bias).data(),
        )?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            v,
            Op::BatchNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
                batch_stats,
            },
            rg,
        )
    }

    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: T) -> Result<Var> {
        let v = kernels::l2_normalize(self.value(x), axis, eps)?;
        let rg = self.rg(&[x]);
        self.push(v, Op::L2Normalize(x, axis, eps), rg)
    }

    /// Separable valid-mode filtering with a fixed kernel.
    pub fn filter(&mut self, x: Var, kernel: &[T]) -> Result<Var> {
        let v = kernels::separable_filter_valid(self.value(x), kernel)?;
        let rg = self.rg(&[x]);
        self.push(v, Op::Filter(x, kernel.to_vec()), rg)
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = kernels::narrow(self.value(x), axis, start, len)?;
        let rg = self.rg(&[x]);
        self.push(v, Op::Narrow(x, axis, start), rg)
    }

    /// Mean cross-entropy of softmax over `[N,K]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = kernels::cross_entropy(self.value(logits), labels)?;
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, labels.to_vec(), probs),
            rg,
        )
    }

    /// Reverse-mode sweep from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let mut params = Vec::new();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for i in (0..n).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaves[i] = Some(gy),
                Op::Param(id) => {
                    params.push((*id, gy.clone()));
                    leaves[i] = Some(gy);
                }
                op => self.propagate(op, &node.value, gy, &mut grads)?,
            }
        }
        Ok(Gradients { leaves, params })
    }

    /// [`Graph::backward`] followed by accumulation into the store.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let g = self.backward(loss)?;
        g.accumulate_into(store);
        Ok(g)
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        op: &Op<T>,
        y: &Tensor<T>,
        gy: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let val = |v: &Var| self.value(*v);
        let ew = |x: &Tensor<T>, f: &dyn Fn(T, T) -> T| -> Tensor<T> {
            Tensor::new(
                x.shape(),
                x.data().iter().zip(gy.data()).map(|(&a, &g)| f(a, g)).collect(),
            )
            .expect("same shape")
        };
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Add(a, b) => {
                self.send(grads, *b, gy.clone());
                self.send(grads, *a, gy);
            }
            Op::Sub(a, b) => {
                self.send(grads, *b, gy.map(|g| -g));
                self.send(grads, *a, gy);
            }
            Op::Mul(a, b) => {
                let da = ew(val(b), &|q, g| q * g);
                let db = ew(val(a), &|p, g| p * g);
                self.send(grads, *a, da);
                self.send(grads, *b, db);
            }
            Op::Div(a, b) => {
                let da = ew(val(b), &|q, g| g / q);
                let db = Tensor::new(
                    y.shape(),
                    y.data()
                        .iter()
                        .zip(val(b).data())
                        .zip(gy.data())
                        .map(|((&yv, &q), &g)| -g * yv / q)
                        .collect(),
                )?;
                self.send(grads, *a, da);
                self.send(grads, *b, db);
            }
            Op::AddScalar(a) => self.send(grads, *a, gy),
            Op::MulScalar(a, c) => {
                let c = *c;
                self.send(grads, *a, gy.map(|g| g * c));
            }
            Op::ScaleBy(x, s) => {
                let c = val(s).item();
                let ds: T = val(x).data().iter().zip(gy.data()).map(|(&a, &g)| a * g).sum();
                self.send(grads, *s, Tensor::new(val(s).shape(), vec![ds])?);
                self.send(grads, *x, gy.map(|g| g * c));
            }
            Op::ScaleAxis(x, s, axis) => {
                let shape = val(x).shape();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = shape[*axis];
                let sv = val(s).data();
                let mut ds = vec![T::zero(); len];
                let mut dx = gy.clone();
                for (i, (d, &xv)) in dx.data_mut().iter_mut().zip(val(x).data()).enumerate() {
                    let j = (i / inner) % len;
                    ds[j] += *d * xv;
                    *d *= sv[j];
                }
                self.send(grads, *s, Tensor::new(val(s).shape(), ds)?);
                self.send(grads, *x, dx);
            }
            Op::Recip(a) => {
                let d = ew(y, &|yv, g| -g * yv * yv);
                self.send(grads, *a, d);
            }
            Op::Abs(a) => {
                let d = ew(val(a), &|x, g| if x == T::zero() { T::zero() } else { g * x.signum() });
                self.send(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = ew(val(a), &|x, g| if x > T::zero() { g } else { T::zero() });
                self.send(grads, *a, d);
            }
            Op::Gelu(a) => {
                let d = ew(val(a), &|x, g| g * kernels::gelu_grad(x));
                self.send(grads, *a, d);
            }
            Op::Powf(a, p) => {
                let p = *p;
                let d = ew(val(a), &|x, g| g * p * x.powf(p - T::one()));
                self.send(grads, *a, d);
            }
            Op::ClampMin(a, lo) => {
                let lo = *lo;
                let d = ew(val(a), &|x, g| if x > lo { g } else { T::zero() });
                self.send(grads, *a, d);
            }
            Op::SmoothL1(a, beta) => {
                let beta = *beta;
                let d = ew(val(a), &|x, g| g * kernels::smooth_l1_grad(x, beta));
                self.send(grads, *a, d);
            }
            Op::Sum(a) => {
                let g = gy.item();
                self.send(grads, *a, Tensor::full(val(a).shape(), g));
            }
            Op::Mean(a) => {
                let g = gy.item() / r::<T>(val(a).numel() as f64);
                self.send(grads, *a, Tensor::full(val(a).shape(), g));
            }
            Op::Reshape(a) => {
                let d = gy.reshape(val(a).shape())?;
                self.send(grads, *a, d);
            }
            Op::MatMul(a, b, geom) => {
                let (da, db) = kernels::matmul_backward(val(a), val(b), &gy, geom);
                self.send(grads, *a, da);
                self.send(grads, *b, db);
            }
            Op::Linear(x, w, b) => {
                let (xv, wv) = (val(x), val(w));
                let (out, fan_in) = (wv.dim(0), wv.dim(1));
                let rows = xv.numel() / fan_in;
                if self.nodes[x.0].requires_grad {
                    let mut dx = Tensor::zeros(xv.shape());
                    kernels::gemm(rows, out, fan_in, gy.data(), false, wv.data(), false, dx.data_mut(), false);
                    self.send(grads, *x, dx);
                }
                let mut dw = Tensor::zeros(wv.shape());
                kernels::gemm(out, rows, fan_in, gy.data(), true, xv.data(), false, dw.data_mut(), false);
                self.send(grads, *w, dw);
                if let Some(b) = b {
                    let mut db = vec![T::zero(); out];
                    for row in gy.data().chunks(out) {
                        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                    self.send(grads, *b, Tensor::new(&[out], db)?);
                }
            }
            Op::Conv(x, w, b, geom) => {
                let need_dx = self.nodes[x.0].requires_grad;
                let (dx, dw, db) = kernels::conv2d_backward(val(x), val(w), &gy, *geom, need_dx)?;
                if let Some(dx) = dx {
                    self.send(grads, *x, dx);
                }
                self.send(grads, *w, dw);
                if let Some(b) = b {
                    self.send(grads, *b, db);
                }
            }
            Op::MaxPool(x, arg) => {
                let d = kernels::maxpool2d_backward(val(x).shape(), arg, &gy);
                self.send(grads, *x, d);
            }
            Op::AvgPool2(x) => {
                let d = kernels::avgpool2_backward(val(x).shape(), &gy);
                self.send(grads, *x, d);
            }
            Op::GlobalAvgPool(x) => {
                let shape = val(x).shape();
                let hw = shape[2] * shape[3];
                let inv = T::one() / r::<T>(hw as f64);
                let d = Tensor::from_fn(shape, |i| gy.data()[i / hw] * inv);
                self.send(grads, *x, d);
            }
            Op::Resize(x) => {
                let d = kernels::bilinear_resize_backward(val(x).shape(), &gy);
                self.send(grads, *x, d);
            }
            Op::Softmax(x, axis) => {
                let d = kernels::softmax_backward(y, &gy, *axis);
                self.send(grads, *x, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                axis,
                stats,
            } => {
                let (dx, dg, db) = kernels::layer_norm_backward(val(x), *axis, val(gain), stats, &gy);
                self.send(grads, *x, dx);
                self.send(grads, *gain, dg);
                self.send(grads, *bias, db);
            }
            Op::BatchNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
                batch_stats,
            } => {
                let (dx, dg, db) = kernels::batch_norm_backward(
                    val(x),
                    mean,
                    rstd,
                    val(gain).data(),
                    &gy,
                    *batch_stats,
                );
                self.send(grads, *x, dx);
                self.send(grads, *gain, dg);
                self.send(grads, *bias, db);
            }
            Op::L2Normalize(x, axis, eps) => {
                let d = kernels::l2_normalize_backward(val(x), *axis, *eps, &gy);
                self.send(grads, *x, d);
            }
            Op::Filter(x, kernel) => {
                let d = kernels::separable_filter_valid_backward(val(x).shape(), kernel, &gy);
                self.send(grads, *x, d);
            }
            Op::Narrow(x, axis, start) => {
                let d = kernels::narrow_backward(val(x).shape(), *axis, *start, &gy);
                self.send(grads, *x, d);
            }
            Op::CrossEntropy(logits, labels, probs) => {
                let k = probs.dim(1);
                let scale = gy.item() / r::<T>(labels.len() as f64);
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d.data_mut()[i * k + l] -= T::one();
                }
                d.data_mut().iter_mut().for_each(|v| *v *= scale);
                self.send(grads, *logits, d);
            }
        }
        Ok(())
    }
}
