//! Slice-level forward/backward kernels behind the tape operations.
//!
//! All rank-4 buffers are NCHW. Kernels never allocate the output of the
//! backward pass themselves; they accumulate into caller-provided buffers so
//! the tape can sum contributions from several consumers.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Output extent along one axis, `None` if the kernel does not fit.
    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

impl Default for ConvGeom {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self, g: ConvGeom) -> bool {
        self.kh == 1 && self.kw == 1 && g.stride == 1 && g.padding == 0
    }
}

fn im2col<T: Scalar>(x: &[T], d: &ConvDims, g: ConvGeom, cols: &mut [T]) {
    let p = d.p();
    for ci in 0..d.cin {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    let out_row = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        *o = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], d: &ConvDims, g: ConvGeom, dx: &mut [T]) {
    let p = d.p();
    for ci in 0..d.cin {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    d: &ConvDims,
    g: ConvGeom,
) -> Vec<T> {
    let (k, p) = (d.k(), d.p());
    let mut out = vec![T::zero(); d.n * d.cout * p];
    let mut cols = if d.is_pointwise(g) {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for n in 0..d.n {
        let xn = &x[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w];
        let src: &[T] = if d.is_pointwise(g) {
            xn
        } else {
            im2col(xn, d, g, &mut cols);
            &cols
        };
        let on = &mut out[n * d.cout * p..(n + 1) * d.cout * p];
        T::gemm(
            d.cout,
            k,
            p,
            T::one(),
            weight,
            (k as isize, 1),
            src,
            (p as isize, 1),
            T::zero(),
            on,
            (p as isize, 1),
        );
        if let Some(b) = bias {
            for (co, chunk) in on.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    out
}

/// Accumulates gradients for input, weight and bias (each optional).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    d: &ConvDims,
    g: ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let (k, p) = (d.k(), d.p());
    let pointwise = d.is_pointwise(g);
    let mut cols = vec![T::zero(); if pointwise { 0 } else { k * p }];
    let mut dcols = vec![T::zero(); k * p];
    let plane = d.cin * d.h * d.w;
    for n in 0..d.n {
        let dyn_ = &dy[n * d.cout * p..(n + 1) * d.cout * p];
        if let Some(db) = db.as_deref_mut() {
            for (co, chunk) in dyn_.chunks(p).enumerate() {
                db[co] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let xn = &x[n * plane..(n + 1) * plane];
            let src: &[T] = if pointwise {
                xn
            } else {
                im2col(xn, d, g, &mut cols);
                &cols
            };
            // dW (cout×k) += dY (cout×p) · colsᵀ (p×k)
            T::gemm(
                d.cout,
                p,
                k,
                T::one(),
                dyn_,
                (p as isize, 1),
                src,
                (1, p as isize),
                T::one(),
                dw,
                (k as isize, 1),
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * plane..(n + 1) * plane];
            if pointwise {
                // dX (k×p) += Wᵀ (k×cout) · dY (cout×p)
                T::gemm(
                    k,
                    d.cout,
                    p,
                    T::one(),
                    weight,
                    (1, k as isize),
                    dyn_,
                    (p as isize, 1),
                    T::one(),
                    dxn,
                    (p as isize, 1),
                );
            } else {
                T::gemm(
                    k,
                    d.cout,
                    p,
                    T::one(),
                    weight,
                    (1, k as isize),
                    dyn_,
                    (p as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (p as isize, 1),
                );
                col2im_add(&dcols, d, g, dxn);
            }
        }
    }
}

pub(crate) fn softmax_forward<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (x[base + j * inner] - max).exp();
                y[base + j * inner] = e;
                sum += e;
            }
            for j in 0..len {
                y[base + j * inner] = y[base + j * inner] / sum;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward<T: Scalar>(
    y: &[T],
    dy: &[T],
    outer: usize,
    len: usize,
    inner: usize,
    dx: &mut [T],
) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                dot += dy[base + j * inner] * y[base + j * inner];
            }
            for j in 0..len {
                let idx = base + j * inner;
                dx[idx] += y[idx] * (dy[idx] - dot);
            }
        }
    }
}

/// Max pooling without padding. Returns output and the flat input index of
/// each output's maximum (first maximum in scan order on ties).
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    k: usize,
    s: usize,
) -> (Vec<T>, Vec<usize>, usize, usize) {
    let ho = (h - k) / s + 1;
    let wo = (w - k) / s + 1;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * s * w + ox * s;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * s + ky) * w + ox * s + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg, ho, wo)
}

/// Source taps for bilinear upsampling (half-pixel centers, edge clamped).
pub(crate) fn bilinear_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample_forward<T: Scalar>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    factor: usize,
) -> Vec<T> {
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let (ho, wo) = (h * factor, w * factor);
    let mut out = vec![T::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::from_f64(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::from_f64(lx);
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                dst[oy * wo + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Scalar>(
    dy: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    factor: usize,
    dx: &mut [T],
) {
    let ty = bilinear_taps(h, factor);
    let tx = bilinear_taps(w, factor);
    let (ho, wo) = (h * factor, w * factor);
    for plane in 0..n * c {
        let src = &dy[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::from_f64(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::from_f64(lx);
                let g = src[oy * wo + ox];
                dst[y0 * w + x0] += g * (T::one() - ly) * (T::one() - lx);
                dst[y0 * w + x1] += g * (T::one() - ly) * lx;
                dst[y1 * w + x0] += g * ly * (T::one() - lx);
                dst[y1 * w + x1] += g * ly * lx;
            }
        }
    }
}

/// Position of `(row h, col i)` inside the criss-cross set of query `(h, w)`:
/// indices `0..H` walk the column (self included), `H..H+W-1` the row
/// without the query itself.
#[inline]
pub(crate) fn row_slot(height: usize, i: usize, w: usize) -> usize {
    debug_assert_ne!(i, w);
    height + if i < w { i } else { i - 1 }
}

pub(crate) fn cc_affinity_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
) -> Vec<T> {
    let span = h + w - 1;
    let hw = h * w;
    let mut e = vec![T::zero(); n * span * hw];
    for b in 0..n {
        let qb = &q[b * c * hw..(b + 1) * c * hw];
        let kb = &k[b * c * hw..(b + 1) * c * hw];
        let eb = &mut e[b * span * hw..(b + 1) * span * hw];
        for y in 0..h {
            for x in 0..w {
                let u = y * w + x;
                for j in 0..h {
                    let v = j * w + x;
                    let mut acc = T::zero();
                    for ch in 0..c {
                        acc += qb[ch * hw + u] * kb[ch * hw + v];
                    }
                    eb[j * hw + u] = acc;
                }
                for i in (0..w).filter(|&i| i != x) {
                    let v = y * w + i;
                    let mut acc = T::zero();
                    for ch in 0..c {
                        acc += qb[ch * hw + u] * kb[ch * hw + v];
                    }
                    eb[row_slot(h, i, x) * hw + u] = acc;
                }
            }
        }
    }
    e
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn cc_affinity_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    de: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    mut dq: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
) {
    let span = h + w - 1;
    let hw = h * w;
    for b in 0..n {
        let qb = &q[b * c * hw..(b + 1) * c * hw];
        let kb = &k[b * c * hw..(b + 1) * c * hw];
        let deb = &de[b * span * hw..(b + 1) * span * hw];
        for y in 0..h {
            for x in 0..w {
                let u = y * w + x;
                let taps = (0..h)
                    .map(|j| (j, j * w + x))
                    .chain((0..w).filter(|&i| i != x).map(|i| (row_slot(h, i, x), y * w + i)));
                for (slot, v) in taps {
                    let g = deb[slot * hw + u];
                    if g == T::zero() {
                        continue;
                    }
                    for ch in 0..c {
                        if let Some(dq) = dq.as_deref_mut() {
                            dq[b * c * hw + ch * hw + u] += g * kb[ch * hw + v];
                        }
                        if let Some(dk) = dk.as_deref_mut() {
                            dk[b * c * hw + ch * hw + v] += g * qb[ch * hw + u];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn cc_aggregate_forward<T: Scalar>(
    a: &[T],
    v: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
) -> Vec<T> {
    let span = h + w - 1;
    let hw = h * w;
    let mut out = vec![T::zero(); n * c * hw];
    for b in 0..n {
        let ab = &a[b * span * hw..(b + 1) * span * hw];
        let vb = &v[b * c * hw..(b + 1) * c * hw];
        let ob = &mut out[b * c * hw..(b + 1) * c * hw];
        for y in 0..h {
            for x in 0..w {
                let u = y * w + x;
                for ch in 0..c {
                    let vc = &vb[ch * hw..(ch + 1) * hw];
                    let mut acc = T::zero();
                    for j in 0..h {
                        acc += ab[j * hw + u] * vc[j * w + x];
                    }
                    for i in (0..w).filter(|&i| i != x) {
                        acc += ab[row_slot(h, i, x) * hw + u] * vc[y * w + i];
                    }
                    ob[ch * hw + u] = acc;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn cc_aggregate_backward<T: Scalar>(
    a: &[T],
    v: &[T],
    dout: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    mut da: Option<&mut [T]>,
    mut dv: Option<&mut [T]>,
) {
    let span = h + w - 1;
    let hw = h * w;
    for b in 0..n {
        let ab = &a[b * span * hw..(b + 1) * span * hw];
        let vb = &v[b * c * hw..(b + 1) * c * hw];
        let db = &dout[b * c * hw..(b + 1) * c * hw];
        for y in 0..h {
            for x in 0..w {
                let u = y * w + x;
                let taps = (0..h)
                    .map(|j| (j, j * w + x))
                    .chain((0..w).filter(|&i| i != x).map(|i| (row_slot(h, i, x), y * w + i)));
                for (slot, src) in taps {
                    let weight = ab[slot * hw + u];
                    let mut acc = T::zero();
                    for ch in 0..c {
                        let g = db[ch * hw + u];
                        acc += g * vb[ch * hw + src];
                        if let Some(dv) = dv.as_deref_mut() {
                            dv[b * c * hw + ch * hw + src] += weight * g;
                        }
                    }
                    if let Some(da) = da.as_deref_mut() {
                        da[b * span * hw + slot * hw + u] += acc;
                    }
                }
            }
        }
    }
}

/// Numerically stable `-[y ln σ(z) + (1-y) ln(1-σ(z))]`.
#[inline]
pub(crate) fn bce_term<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
