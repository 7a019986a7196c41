use std::cell::{Ref, RefCell};

use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{self, ConvDims, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        dims: ConvDims,
    },
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Concat {
        a: Var,
        b: Var,
    },
    CcAffinity {
        q: Var,
        k: Var,
    },
    CcAggregate {
        attn: Var,
        v: Var,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
    Bce {
        logits: Var,
        target: Vec<T>,
        weights: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        target: Vec<usize>,
        probs: Vec<T>,
        classes: usize,
        inner: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics computed by a train-mode batch normalization, returned
/// so the caller can update its running estimates.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance (n-1 denominator).
    pub var: Vec<T>,
}

pub enum BnMode<'a, T> {
    Train { eps: T },
    Eval { mean: &'a [T], var: &'a [T], eps: T },
}

/// Records operations for one forward pass and replays them backward.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one backward pass, retained for leaves only.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    fn push_unchecked(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn push(&self, name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn dims4(&self, v: Var) -> Result<(usize, usize, usize, usize)> {
        self.nodes.borrow()[v.0].value.dims4()
    }

    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (n, cin, h, wd) = self.dims4(x)?;
        let (cout, wcin, kh, kw) = self.dims4(w)?;
        if wcin != cin {
            return shape_err("conv2d", format!("input has {cin} channels, weight expects {wcin}"));
        }
        if geom.dilation == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                detail: "dilation must be >= 1".into(),
            });
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return shape_err("conv2d", format!("bias shape {:?} for {cout} outputs", self.shape(b)));
            }
        }
        let (Some(ho), Some(wo)) = (geom.out_len(h, kh), geom.out_len(wd, kw)) else {
            return shape_err("conv2d", format!("kernel {kh}x{kw} {geom:?} does not fit {h}x{wd}"));
        };
        let dims = ConvDims {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            ho,
            wo,
        };
        let out = {
            let nodes = self.nodes.borrow();
            kernels::conv2d_forward(
                nodes[x.0].value.data(),
                nodes[w.0].value.data(),
                b.map(|b| nodes[b.0].value.data()),
                &dims,
                geom,
            )
        };
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            "conv2d",
            Tensor::new(&[n, cout, ho, wo], out)?,
            Op::Conv2d { x, w, b, geom, dims },
            &parents,
        )
    }

    fn map(&self, name: &'static str, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[x.0].value;
            Tensor::new(v.shape(), v.data().iter().map(|&a| f(a)).collect())?
        };
        self.push(name, value, op, &[x])
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.map("relu", x, Op::Relu(x), |a| a.max(T::zero()))
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, Op::Sigmoid(x), kernels::sigmoid)
    }

    pub fn abs(&self, x: Var) -> Result<Var> {
        self.map("abs", x, Op::Abs(x), |a| a.abs())
    }

    pub fn scale(&self, x: Var, c: T) -> Result<Var> {
        self.map("scale", x, Op::Scale(x, c), |a| a * c)
    }

    fn zip(&self, name: &'static str, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            if va.shape() != vb.shape() {
                return shape_err(name, format!("{:?} vs {:?}", va.shape(), vb.shape()));
            }
            let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| f(p, q)).collect();
            Tensor::new(va.shape(), data)?
        };
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |p, q| p - q)
    }

    /// Softmax along `axis`, stabilized by subtracting each slice's maximum.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(TensorError::Invalid {
                op: "softmax",
                detail: format!("axis {axis} for rank {}", shape.len()),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let y = {
            let nodes = self.nodes.borrow();
            kernels::softmax_forward(nodes[x.0].value.data(), outer, len, inner)
        };
        self.push(
            "softmax",
            Tensor::new(&shape, y)?,
            Op::Softmax { x, outer, len, inner },
            &[x],
        )
    }

    pub fn maxpool2d(&self, x: Var, k: usize, s: usize) -> Result<Var> {
        let dims = self.dims4(x)?;
        if k == 0 || s == 0 || dims.2 < k || dims.3 < k {
            return shape_err("maxpool2d", format!("window {k}/{s} on {dims:?}"));
        }
        let (out, argmax, ho, wo) = {
            let nodes = self.nodes.borrow();
            kernels::maxpool_forward(nodes[x.0].value.data(), dims, k, s)
        };
        self.push(
            "maxpool2d",
            Tensor::new(&[dims.0, dims.1, ho, wo], out)?,
            Op::MaxPool { x, argmax },
            &[x],
        )
    }

    /// Per-channel batch normalization over (N, H, W).
    pub fn batchnorm2d(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (n, c, h, w) = self.dims4(x)?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return shape_err("batchnorm2d", format!("affine params must have shape [{c}]"));
        }
        let hw = h * w;
        let m = n * hw;
        let (out, xhat, inv_std, stats, train) = {
            let nodes = self.nodes.borrow();
            let xv = nodes[x.0].value.data();
            let g = nodes[gamma.0].value.data();
            let bv = nodes[beta.0].value.data();
            let (mean, var, eps, train) = match mode {
                BnMode::Train { eps } => {
                    let mut mean = vec![T::zero(); c];
                    let mut var = vec![T::zero(); c];
                    for ch in 0..c {
                        let mut s = 0.0f64;
                        for b in 0..n {
                            s += xv[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                                .iter()
                                .map(|v| v.as_f64())
                                .sum::<f64>();
                        }
                        let mu = s / m as f64;
                        let mut ss = 0.0f64;
                        for b in 0..n {
                            ss += xv[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                                .iter()
                                .map(|v| (v.as_f64() - mu).powi(2))
                                .sum::<f64>();
                        }
                        mean[ch] = T::from_f64(mu);
                        var[ch] = T::from_f64(ss / m as f64);
                    }
                    (mean, var, eps, true)
                }
                BnMode::Eval { mean, var, eps } => {
                    if mean.len() != c || var.len() != c {
                        return shape_err("batchnorm2d", "running stats length");
                    }
                    (mean.to_vec(), var.to_vec(), eps, false)
                }
            };
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = vec![T::zero(); xv.len()];
            let mut out = vec![T::zero(); xv.len()];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    for i in base..base + hw {
                        xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                        out[i] = g[ch] * xhat[i] + bv[ch];
                    }
                }
            }
            let stats = train.then(|| {
                let unbias = if m > 1 {
                    T::from_f64(m as f64 / (m as f64 - 1.0))
                } else {
                    T::one()
                };
                BatchStats {
                    mean: mean.clone(),
                    var: var.iter().map(|&v| v * unbias).collect(),
                }
            });
            (out, xhat, inv_std, stats, train)
        };
        let var = self.push(
            "batchnorm2d",
            Tensor::new(&[n, c, h, w], out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        )?;
        Ok((var, stats))
    }

    pub fn upsample_bilinear(&self, x: Var, factor: usize) -> Result<Var> {
        let dims = self.dims4(x)?;
        if factor == 0 {
            return Err(TensorError::Invalid {
                op: "upsample_bilinear",
                detail: "factor must be >= 1".into(),
            });
        }
        let out = {
            let nodes = self.nodes.borrow();
            kernels::upsample_forward(nodes[x.0].value.data(), dims, factor)
        };
        self.push(
            "upsample_bilinear",
            Tensor::new(&[dims.0, dims.1, dims.2 * factor, dims.3 * factor], out)?,
            Op::Upsample { x, factor },
            &[x],
        )
    }

    /// Channel concatenation of two rank-4 tensors.
    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, ha, wa) = self.dims4(a)?;
        let (nb, cb, hb, wb) = self.dims4(b)?;
        if (na, ha, wa) != (nb, hb, wb) {
            return shape_err("concat_channels", format!("{:?} vs {:?}", (na, ha, wa), (nb, hb, wb)));
        }
        let hw = ha * wa;
        let out = {
            let nodes = self.nodes.borrow();
            let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            let mut out = Vec::with_capacity(na * (ca + cb) * hw);
            for n in 0..na {
                out.extend_from_slice(&va[n * ca * hw..(n + 1) * ca * hw]);
                out.extend_from_slice(&vb[n * cb * hw..(n + 1) * cb * hw]);
            }
            out
        };
        self.push(
            "concat_channels",
            Tensor::new(&[na, ca + cb, ha, wa], out)?,
            Op::Concat { a, b },
            &[a, b],
        )
    }

    /// Criss-cross energies: `N×(H+W-1)×H×W`, slot `j < H` pairs query
    /// `(h, w)` with `(j, w)`, the remaining slots with row positions `(h, i)`,
    /// `i != w`, in increasing `i`.
    pub fn cc_affinity(&self, q: Var, k: Var) -> Result<Var> {
        let dq = self.dims4(q)?;
        if dq != self.dims4(k)? {
            return shape_err("cc_affinity", "query and key shapes differ");
        }
        let (n, _, h, w) = dq;
        let e = {
            let nodes = self.nodes.borrow();
            kernels::cc_affinity_forward(nodes[q.0].value.data(), nodes[k.0].value.data(), dq)
        };
        self.push(
            "cc_affinity",
            Tensor::new(&[n, h + w - 1, h, w], e)?,
            Op::CcAffinity { q, k },
            &[q, k],
        )
    }

    /// Weighted sum of values over each position's criss-cross set.
    pub fn cc_aggregate(&self, attn: Var, v: Var) -> Result<Var> {
        let (n, c, h, w) = self.dims4(v)?;
        if self.dims4(attn)? != (n, h + w - 1, h, w) {
            return shape_err("cc_aggregate", format!("attention {:?} for values {:?}", self.shape(attn), (n, c, h, w)));
        }
        let out = {
            let nodes = self.nodes.borrow();
            kernels::cc_aggregate_forward(nodes[attn.0].value.data(), nodes[v.0].value.data(), (n, c, h, w))
        };
        self.push(
            "cc_aggregate",
            Tensor::new(&[n, c, h, w], out)?,
            Op::CcAggregate { attn, v },
            &[attn, v],
        )
    }

    /// `Σ x_i · weights_i` as a one-element tensor.
    pub fn weighted_sum(&self, x: Var, weights: Vec<T>) -> Result<Var> {
        let s = {
            let nodes = self.nodes.borrow();
            let xv = nodes[x.0].value.data();
            if xv.len() != weights.len() {
                return shape_err("weighted_sum", format!("{} values, {} weights", xv.len(), weights.len()));
            }
            xv.iter().zip(&weights).map(|(&a, &b)| a * b).sum::<T>()
        };
        self.push("weighted_sum", Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x])
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let len = self.nodes.borrow()[x.0].value.len();
        self.weighted_sum(x, vec![T::one(); len])
    }

    /// Mean over all elements of per-element weighted binary cross-entropy
    /// on logits.
    pub fn bce_with_logits(&self, logits: Var, target: &[T], weights: &[T]) -> Result<Var> {
        let loss = {
            let nodes = self.nodes.borrow();
            let z = nodes[logits.0].value.data();
            if z.len() != target.len() || z.len() != weights.len() {
                return shape_err("bce_with_logits", format!("{} logits, {} targets, {} weights", z.len(), target.len(), weights.len()));
            }
            let total: T = z
                .iter()
                .zip(target)
                .zip(weights)
                .map(|((&z, &y), &w)| w * kernels::bce_term(z, y))
                .sum();
            total / T::from_f64(z.len() as f64)
        };
        self.push(
            "bce_with_logits",
            Tensor::scalar(loss),
            Op::Bce {
                logits,
                target: target.to_vec(),
                weights: weights.to_vec(),
            },
            &[logits],
        )
    }

    /// Mean per-pixel categorical cross-entropy. `logits` is `N×C×H×W`,
    /// `target` holds `N·H·W` class ids.
    pub fn cross_entropy(&self, logits: Var, target: &[usize]) -> Result<Var> {
        let (n, c, h, w) = self.dims4(logits)?;
        let inner = h * w;
        if target.len() != n * inner {
            return shape_err("cross_entropy", format!("{} targets for {n}x{h}x{w}", target.len()));
        }
        if let Some(bad) = target.iter().find(|&&t| t >= c) {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                detail: format!("class id {bad} out of range for {c} classes"),
            });
        }
        let (loss, probs) = {
            let nodes = self.nodes.borrow();
            let z = nodes[logits.0].value.data();
            let probs = kernels::softmax_forward(z, n, c, inner);
            let mut total = T::zero();
            for b in 0..n {
                for i in 0..inner {
                    let t = target[b * inner + i];
                    let zi = |k: usize| z[(b * c + k) * inner + i];
                    let max = (0..c).map(zi).fold(T::neg_infinity(), T::max);
                    let lse = max + (0..c).map(|k| (zi(k) - max).exp()).sum::<T>().ln();
                    total += lse - zi(t);
                }
            }
            (total / T::from_f64((n * inner) as f64), probs)
        };
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target: target.to_vec(),
                probs,
                classes: c,
                inner,
            },
            &[logits],
        )
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return shape_err("backward", format!("loss must be scalar, got {:?}", nodes[loss.0].value.shape()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            backprop(&nodes, node, &g, &mut grads);
            if !g.iter().all(|v| v.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradient buffer for `v`, allocated on first use; `None` when `v` does not
/// need a gradient.
fn slot<'g, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'g mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'g mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

fn backprop<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, geom, dims } => {
            // Grad buffers are distinct nodes, so take them out to borrow together.
            let mut dx = slot(nodes, grads, *x).map(std::mem::take);
            let mut dw = slot(nodes, grads, *w).map(std::mem::take);
            let mut db = b.and_then(|b| slot(nodes, grads, b).map(std::mem::take));
            kernels::conv2d_backward(
                val(*x),
                val(*w),
                g,
                dims,
                *geom,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            if let Some(dx) = dx {
                grads[x.0] = Some(dx);
            }
            if let Some(dw) = dw {
                grads[w.0] = Some(dw);
            }
            if let (Some(b), Some(db)) = (b, db) {
                grads[b.0] = Some(db);
            }
        }
        Op::Relu(x) => {
            let xv = val(*x);
            if let Some(dx) = slot(nodes, grads, *x) {
                for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                    if xi > T::zero() {
                        *d += gi;
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            if let Some(dx) = slot(nodes, grads, *x) {
                for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (T::one() - yi);
                }
            }
        }
        Op::Abs(x) => {
            let xv = val(*x);
            if let Some(dx) = slot(nodes, grads, *x) {
                for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                    if xi > T::zero() {
                        *d += gi;
                    } else if xi < T::zero() {
                        *d -= gi;
                    }
                }
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
            if let Some(da) = slot(nodes, grads, *a) {
                da.iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                db.iter_mut().zip(g).for_each(|(d, &gi)| *d += sign * gi);
            }
        }
        Op::Scale(x, c) => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().zip(g).for_each(|(d, &gi)| *d += *c * gi);
            }
        }
        Op::Softmax { x, outer, len, inner } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                kernels::softmax_backward(node.value.data(), g, *outer, *len, *inner, dx);
            }
        }
        Op::MaxPool { x, argmax } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                for (&idx, &gi) in argmax.iter().zip(g) {
                    dx[idx] += gi;
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => {
            let (n, c, h, w) = node.value.dims4().expect("rank-4 batchnorm");
            let hw = h * w;
            let m = T::from_f64((n * hw) as f64);
            let gv = val(*gamma);
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    for i in base..base + hw {
                        sum_g[ch] += g[i];
                        sum_gx[ch] += g[i] * xhat[i];
                    }
                }
            }
            if let Some(dg) = slot(nodes, grads, *gamma) {
                dg.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s);
            }
            if let Some(db) = slot(nodes, grads, *beta) {
                db.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s);
            }
            if let Some(dx) = slot(nodes, grads, *x) {
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        let k = gv[ch] * inv_std[ch];
                        for i in base..base + hw {
                            dx[i] += if *train {
                                k * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
            }
        }
        Op::Upsample { x, factor } => {
            let dims = nodes[x.0].value.dims4().expect("rank-4 upsample");
            if let Some(dx) = slot(nodes, grads, *x) {
                kernels::upsample_backward(g, dims, *factor, dx);
            }
        }
        Op::Concat { a, b } => {
            let (n, ca, h, w) = nodes[a.0].value.dims4().expect("rank-4 concat");
            let cb = nodes[b.0].value.dims4().expect("rank-4 concat").1;
            let hw = h * w;
            let ct = ca + cb;
            if let Some(da) = slot(nodes, grads, *a) {
                for i in 0..n {
                    let src = &g[i * ct * hw..i * ct * hw + ca * hw];
                    da[i * ca * hw..(i + 1) * ca * hw]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, &s)| *d += s);
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                for i in 0..n {
                    let src = &g[i * ct * hw + ca * hw..(i + 1) * ct * hw];
                    db[i * cb * hw..(i + 1) * cb * hw]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, &s)| *d += s);
                }
            }
        }
        Op::CcAffinity { q, k } => {
            let dims = nodes[q.0].value.dims4().expect("rank-4 affinity");
            let mut dq = slot(nodes, grads, *q).map(std::mem::take);
            let mut dk = slot(nodes, grads, *k).map(std::mem::take);
            kernels::cc_affinity_backward(val(*q), val(*k), g, dims, dq.as_deref_mut(), dk.as_deref_mut());
            if let Some(dq) = dq {
                grads[q.0] = Some(dq);
            }
            if let Some(dk) = dk {
                grads[k.0] = Some(dk);
            }
        }
        Op::CcAggregate { attn, v } => {
            let dims = nodes[v.0].value.dims4().expect("rank-4 aggregate");
            let mut da = slot(nodes, grads, *attn).map(std::mem::take);
            let mut dv = slot(nodes, grads, *v).map(std::mem::take);
            kernels::cc_aggregate_backward(val(*attn), val(*v), g, dims, da.as_deref_mut(), dv.as_deref_mut());
            if let Some(da) = da {
                grads[attn.0] = Some(da);
            }
            if let Some(dv) = dv {
                grads[v.0] = Some(dv);
            }
        }
        Op::WeightedSum { x, weights } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().zip(weights).for_each(|(d, &w)| *d += g[0] * w);
            }
        }
        Op::Bce { logits, target, weights } => {
            let z = val(*logits);
            let scale = g[0] / T::from_f64(z.len() as f64);
            if let Some(dz) = slot(nodes, grads, *logits) {
                for (((d, &zi), &yi), &wi) in dz.iter_mut().zip(z).zip(target).zip(weights) {
                    *d += scale * wi * (kernels::sigmoid(zi) - yi);
                }
            }
        }
        Op::CrossEntropy {
            logits,
            target,
            probs,
            classes,
            inner,
        } => {
            let scale = g[0] / T::from_f64(target.len() as f64);
            if let Some(dz) = slot(nodes, grads, *logits) {
                for (b_i, &t) in target.iter().enumerate() {
                    let (b, i) = (b_i / inner, b_i % inner);
                    for k in 0..*classes {
                        let idx = (b * classes + k) * inner + i;
                        let onehot = if k == t { T::one() } else { T::zero() };
                        dz[idx] += scale * (probs[idx] - onehot);
                    }
                }
            }
        }
    }
}
