//! Pure forward kernels and their adjoints.
//!
//! These functions never record anything; [`super::Graph`] wraps them. They
//! are public so inference code and tests can call them directly.

use super::{r, Real, Tensor};
use crate::error::{dim_err, Result};

/// `c = op(a) · op(b)` (or `c += ...` when `accumulate`), with `a` stored as
/// `m×k` (`k×m` when `ta`) and `b` as `k×n` (`n×k` when `tb`), all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the debug assertion above documents the extents; every caller
    // passes buffers sized exactly for the stated m, k, n.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

// ---------------------------------------------------------------- matmul

/// Resolved geometry of a (batched) matrix product.
#[derive(Clone, Copy, Debug)]
pub struct MatmulGeom {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub ta: bool,
    pub tb: bool,
    /// `b` is a single 2-D matrix shared across the batch.
    pub b_shared: bool,
}

impl MatmulGeom {
    pub fn resolve(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<(Self, Vec<usize>)> {
        if a.len() < 2 || b.len() < 2 {
            return Err(dim_err!("matmul needs >=2-D operands, got {:?} and {:?}", a, b));
        }
        let (ar, ac) = (a[a.len() - 2], a[a.len() - 1]);
        let (br, bc) = (b[b.len() - 2], b[b.len() - 1]);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(dim_err!(
                "matmul inner dimensions disagree: {:?}{} x {:?}{}",
                a,
                if ta { "^T" } else { "" },
                b,
                if tb { "^T" } else { "" }
            ));
        }
        let a_batch = &a[..a.len() - 2];
        let b_batch = &b[..b.len() - 2];
        let b_shared = b_batch.is_empty() && !a_batch.is_empty();
        if !b_shared && a_batch != b_batch {
            return Err(dim_err!("matmul batch dims disagree: {:?} vs {:?}", a, b));
        }
        let batch = a_batch.iter().product();
        let mut out = a_batch.to_vec();
        out.push(m);
        out.push(n);
        Ok((
            Self {
                batch,
                m,
                k,
                n,
                ta,
                tb,
                b_shared,
            },
            out,
        ))
    }
}

/// Matrix product with optional transposes, broadcasting a 2-D `b` over the
/// leading dimensions of `a`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let (g, shape) = MatmulGeom::resolve(a.shape(), b.shape(), ta, tb)?;
    let mut out = Tensor::zeros(&shape);
    let (sa, sb, sc) = (g.m * g.k, g.k * g.n, g.m * g.n);
    for i in 0..g.batch {
        let bo = if g.b_shared { 0 } else { i * sb };
        gemm(
            g.m,
            g.k,
            g.n,
            &a.data()[i * sa..],
            ta,
            &b.data()[bo..],
            tb,
            &mut out.data_mut()[i * sc..(i + 1) * sc],
            false,
        );
    }
    Ok(out)
}

/// Adjoints of [`matmul`] in the stored layouts of `a` and `b`.
pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dc: &Tensor<T>,
    g: &MatmulGeom,
) -> (Tensor<T>, Tensor<T>) {
    let mut da = Tensor::zeros(a.shape());
    let mut db = Tensor::zeros(b.shape());
    let (sa, sb, sc) = (g.m * g.k, g.k * g.n, g.m * g.n);
    for i in 0..g.batch {
        let bo = if g.b_shared { 0 } else { i * sb };
        let dci = &dc.data()[i * sc..(i + 1) * sc];
        let bi = &b.data()[bo..bo + sb];
        let ai = &a.data()[i * sa..(i + 1) * sa];
        let dai = &mut da.data_mut()[i * sa..(i + 1) * sa];
        if !g.ta {
            gemm(g.m, g.n, g.k, dci, false, bi, !g.tb, dai, false);
        } else {
            gemm(g.k, g.n, g.m, bi, g.tb, dci, true, dai, false);
        }
        let dbi = &mut db.data_mut()[bo..bo + sb];
        let acc = g.b_shared && i > 0;
        if !g.tb {
            gemm(g.k, g.m, g.n, ai, !g.ta, dci, false, dbi, acc);
        } else {
            gemm(g.n, g.m, g.k, dci, true, ai, g.ta, dbi, acc);
        }
    }
    (da, db)
}

// ---------------------------------------------------------------- conv2d

/// Stride, zero padding and channel grouping of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, pad: usize, groups: usize) -> Self {
        Self {
            stride,
            pad,
            groups,
        }
    }
}

pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < k {
        return Err(dim_err!(
            "convolution produces no output: input {input}, kernel {k}, stride {stride}, pad {pad}"
        ));
    }
    Ok((padded - k) / stride + 1)
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>, geom: ConvGeom) -> Result<ConvDims> {
    if x.ndim() != 4 || w.ndim() != 4 {
        return Err(dim_err!(
            "conv2d expects NCHW input and OIkk weight, got {:?} and {:?}",
            x.shape(),
            w.shape()
        ));
    }
    let (n, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, cin_g, k, k2) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    let g = geom.groups;
    if k != k2 {
        return Err(dim_err!("conv2d needs a square kernel, got {k}x{k2}"));
    }
    if g == 0 || cin % g != 0 || cout % g != 0 || cin / g != cin_g {
        return Err(dim_err!(
            "conv2d channel grouping mismatch: input channels {cin}, weight {:?}, groups {g}",
            w.shape()
        ));
    }
    let ho = conv_out_dim(h, k, geom.stride, geom.pad)?;
    let wo = conv_out_dim(wd, k, geom.stride, geom.pad)?;
    Ok(ConvDims {
        n,
        cin,
        h,
        w: wd,
        cout,
        cin_g,
        cout_g: cout / g,
        k,
        ho,
        wo,
    })
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let channels = x.len() / (h * w);
    let plane = ho * wo;
    for c in 0..channels {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let rows = span(ho, h, stride, ky as isize - pad as isize);
            for kx in 0..k {
                let off = kx as isize - pad as isize;
                let cols_ok = span(wo, w, stride, off);
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if !rows.contains(&oy) {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = (oy * stride + ky) - pad;
                    let src = &xc[iy * w..(iy + 1) * w];
                    line[..cols_ok.start].fill(T::zero());
                    line[cols_ok.end..].fill(T::zero());
                    for ox in cols_ok.clone() {
                        line[ox] = src[at(ox, stride, off)];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dx: &mut [T],
) {
    let channels = dx.len() / (h * w);
    let plane = ho * wo;
    for c in 0..channels {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let rows = span(ho, h, stride, ky as isize - pad as isize);
            for kx in 0..k {
                let off = kx as isize - pad as isize;
                let cols_ok = span(wo, w, stride, off);
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in rows.clone() {
                    let iy = (oy * stride + ky) - pad;
                    let dst = &mut dxc[iy * w..(iy + 1) * w];
                    let s = &src[oy * wo..(oy + 1) * wo];
                    for ox in cols_ok.clone() {
                        dst[at(ox, stride, off)] += s[ox];
                    }
                }
            }
        }
    }
}

/// Output positions `o < out_len` whose input index `o*stride + off` lies in
/// `0..in_len`.
fn span(out_len: usize, in_len: usize, stride: usize, off: isize) -> std::ops::Range<usize> {
    let lo = if off >= 0 { 0 } else { (off.unsigned_abs()).div_ceil(stride) };
    let lim = in_len as isize - off;
    let hi = if lim <= 0 { 0 } else { ((lim as usize - 1) / stride + 1).min(out_len) };
    lo.min(hi)..hi
}

#[inline(always)]
fn at(o: usize, stride: usize, off: isize) -> usize {
    ((o * stride) as isize + off) as usize
}

fn is_pointwise(d: &ConvDims, geom: ConvGeom) -> bool {
    d.k == 1 && geom.stride == 1 && geom.pad == 0
}

fn is_depthwise(d: &ConvDims, geom: ConvGeom) -> bool {
    d.cin_g == 1 && d.cout_g == 1 && geom.groups == d.cin
}

/// Cross-correlation of an NCHW batch with zero padding.
///
/// `groups == channels` with a `[C,1,k,k]` weight is a depthwise convolution.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let d = conv_dims(x, w, geom)?;
    if let Some(b) = bias {
        if b.numel() != d.cout {
            return Err(dim_err!("conv2d bias has {} values for {} channels", b.numel(), d.cout));
        }
    }
    let plane = d.ho * d.wo;
    let mut out = Tensor::zeros(&[d.n, d.cout, d.ho, d.wo]);
    let xs = x.data();
    let ws = w.data();
    if is_depthwise(&d, geom) {
        depthwise_forward(xs, ws, &d, geom, out.data_mut());
    } else {
        let ckk = d.cin_g * d.k * d.k;
        let pointwise = is_pointwise(&d, geom);
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); ckk * plane]
        };
        for n in 0..d.n {
            for g in 0..geom.groups {
                let xg = &xs[(n * d.cin + g * d.cin_g) * d.h * d.w..][..d.cin_g * d.h * d.w];
                let src: &[T] = if pointwise {
                    xg
                } else {
                    im2col(xg, d.h, d.w, d.k, geom.stride, geom.pad, d.ho, d.wo, &mut cols);
                    &cols
                };
                let wg = &ws[g * d.cout_g * ckk..(g + 1) * d.cout_g * ckk];
                let o = &mut out.data_mut()[(n * d.cout + g * d.cout_g) * plane..][..d.cout_g * plane];
                gemm(d.cout_g, ckk, plane, wg, false, src, false, o, false);
            }
        }
    }
    if let Some(b) = bias {
        let od = out.data_mut();
        for n in 0..d.n {
            for c in 0..d.cout {
                let bv = b.data()[c];
                od[(n * d.cout + c) * plane..][..plane]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

fn depthwise_forward<T: Real>(xs: &[T], ws: &[T], d: &ConvDims, geom: ConvGeom, out: &mut [T]) {
    let (k, s, p) = (d.k, geom.stride, geom.pad as isize);
    for n in 0..d.n {
        for c in 0..d.cin {
            let xc = &xs[(n * d.cin + c) * d.h * d.w..][..d.h * d.w];
            let wc = &ws[c * k * k..(c + 1) * k * k];
            let oc = &mut out[(n * d.cin + c) * d.ho * d.wo..][..d.ho * d.wo];
            for ky in 0..k {
                let oyoff = ky as isize - p;
                for kx in 0..k {
                    let off = kx as isize - p;
                    let cols = span(d.wo, d.w, s, off);
                    let wv = wc[ky * k + kx];
                    for oy in span(d.ho, d.h, s, oyoff) {
                        let row = &xc[at(oy, s, oyoff) * d.w..][..d.w];
                        let orow = &mut oc[oy * d.wo..(oy + 1) * d.wo];
                        if s == 1 {
                            let src = &row[at(cols.start, 1, off)..at(cols.end, 1, off)];
                            for (o, &x) in orow[cols.clone()].iter_mut().zip(src) {
                                *o += wv * x;
                            }
                        } else {
                            for ox in cols.clone() {
                                orow[ox] += wv * row[at(ox, s, off)];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d`]: `(dx, dw, dbias)`. `dx` is skipped when not needed.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    geom: ConvGeom,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let d = conv_dims(x, w, geom)?;
    let plane = d.ho * d.wo;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[d.cout]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let dys = dy.data();
    for n in 0..d.n {
        for c in 0..d.cout {
            db.data_mut()[c] += dys[(n * d.cout + c) * plane..][..plane].iter().copied().sum();
        }
    }
    let xs = x.data();
    let ws = w.data();
    if is_depthwise(&d, geom) {
        let (k, s, p) = (d.k, geom.stride, geom.pad as isize);
        for n in 0..d.n {
            for c in 0..d.cin {
                let base = (n * d.cin + c) * d.h * d.w;
                let xc = &xs[base..base + d.h * d.w];
                let dyc = &dys[(n * d.cin + c) * plane..][..plane];
                for ky in 0..k {
                    let oyoff = ky as isize - p;
                    for kx in 0..k {
                        let off = kx as isize - p;
                        let cols = span(d.wo, d.w, s, off);
                        let wv = ws[c * k * k + ky * k + kx];
                        let mut acc = T::zero();
                        for oy in span(d.ho, d.h, s, oyoff) {
                            let iy = at(oy, s, oyoff);
                            let grow = &dyc[oy * d.wo..(oy + 1) * d.wo];
                            let xrow = &xc[iy * d.w..(iy + 1) * d.w];
                            for ox in cols.clone() {
                                acc += grow[ox] * xrow[at(ox, s, off)];
                            }
                            if let Some(dx) = dx.as_mut() {
                                let dxrow = &mut dx.data_mut()[base + iy * d.w..base + (iy + 1) * d.w];
                                for ox in cols.clone() {
                                    dxrow[at(ox, s, off)] += grow[ox] * wv;
                                }
                            }
                        }
                        dw.data_mut()[c * k * k + ky * k + kx] += acc;
                    }
                }
            }
        }
        return Ok((dx, dw, db));
    }
    let ckk = d.cin_g * d.k * d.k;
    let pointwise = is_pointwise(&d, geom);
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); ckk * plane]
    };
    let mut dcols = vec![T::zero(); ckk * plane];
    for n in 0..d.n {
        for g in 0..geom.groups {
            let xoff = (n * d.cin + g * d.cin_g) * d.h * d.w;
            let xg = &xs[xoff..xoff + d.cin_g * d.h * d.w];
            let src: &[T] = if pointwise {
                xg
            } else {
                im2col(xg, d.h, d.w, d.k, geom.stride, geom.pad, d.ho, d.wo, &mut cols);
                &cols
            };
            let dyg = &dys[(n * d.cout + g * d.cout_g) * plane..][..d.cout_g * plane];
            let wrange = g * d.cout_g * ckk..(g + 1) * d.cout_g * ckk;
            gemm(
                d.cout_g,
                plane,
                ckk,
                dyg,
                false,
                src,
                true,
                &mut dw.data_mut()[wrange.clone()],
                true,
            );
            if let Some(dx) = dx.as_mut() {
                let dxg = &mut dx.data_mut()[xoff..xoff + d.cin_g * d.h * d.w];
                if pointwise {
                    gemm(ckk, d.cout_g, plane, &ws[wrange], true, dyg, false, dxg, true);
                } else {
                    gemm(ckk, d.cout_g, plane, &ws[wrange], true, dyg, false, &mut dcols, false);
                    col2im(&dcols, d.h, d.w, d.k, geom.stride, geom.pad, d.ho, d.wo, dxg);
                }
            }
        }
    }
    Ok((dx, dw, db))
}

// ---------------------------------------------------------------- pooling

/// Max pooling with "same"-style padding `(k-1)/2` filled with -inf, so a
/// stride-2 window halves each spatial dimension (rounding up).
///
/// Returns the pooled tensor and, per output element, the flat index of the
/// winning input element.
pub fn maxpool2d<T: Real>(x: &Tensor<T>, k: usize, stride: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    if x.ndim() != 4 {
        return Err(dim_err!("maxpool2d expects NCHW, got {:?}", x.shape()));
    }
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if k == 0 || k > h || k > w {
        return Err(dim_err!("maxpool2d kernel {k} does not fit {h}x{w}"));
    }
    let pad = (k - 1) / 2;
    let ho = conv_out_dim(h, k, stride, pad)?;
    let wo = conv_out_dim(w, k, stride, pad)?;
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let xs = x.data();
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut bi = 0usize;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if xs[idx] > best {
                            best = xs[idx];
                            bi = idx;
                        }
                    }
                }
                let o = (p * ho + oy) * wo + ox;
                out.data_mut()[o] = best;
                arg[o] = bi as u32;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2d_backward<T: Real>(input_shape: &[usize], arg: &[u32], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in arg.iter().zip(dy.data()) {
        dx.data_mut()[i as usize] += g;
    }
    dx
}

/// 2×2 average pooling, stride 2, zero-padding odd dimensions by one on each
/// side and always dividing by four.
pub fn avgpool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw(x)?;
    let (ph, pw) = (h % 2, w % 2);
    let ho = (h + 2 * ph - 2) / 2 + 1;
    let wo = (w + 2 * pw - 2) / 2 + 1;
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let q = r::<T>(0.25);
    let xs = x.data();
    for p in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for dy in 0..2 {
                    for dx in 0..2 {
                        let iy = (2 * oy + dy) as isize - ph as isize;
                        let ix = (2 * ox + dx) as isize - pw as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            acc += xs[p * h * w + iy as usize * w + ix as usize];
                        }
                    }
                }
                out.data_mut()[(p * ho + oy) * wo + ox] = acc * q;
            }
        }
    }
    Ok(out)
}

pub fn avgpool2_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (ph, pw) = (h % 2, w % 2);
    let (ho, wo) = (dy.dim(2), dy.dim(3));
    let planes = input_shape[0] * input_shape[1];
    let mut dx = Tensor::zeros(input_shape);
    let q = r::<T>(0.25);
    for p in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = dy.data()[(p * ho + oy) * wo + ox] * q;
                for a in 0..2 {
                    for b in 0..2 {
                        let iy = (2 * oy + a) as isize - ph as isize;
                        let ix = (2 * ox + b) as isize - pw as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            dx.data_mut()[p * h * w + iy as usize * w + ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Mean over the spatial axes: `[N,C,H,W] -> [N,C]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw(x)?;
    let hw = h * w;
    let inv = T::one() / r::<T>(hw as f64);
    Ok(Tensor::from_fn(&[n, c], |i| {
        x.data()[i * hw..(i + 1) * hw].iter().copied().sum::<T>() * inv
    }))
}

fn nchw<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    if x.ndim() != 4 {
        return Err(dim_err!("expected an NCHW tensor, got {:?}", x.shape()));
    }
    Ok((x.dim(0), x.dim(1), x.dim(2), x.dim(3)))
}

// ---------------------------------------------------------------- resize

/// Per output index: (low source index, high source index, weight of high).
pub fn linear_coeffs(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize with the half-pixel (align-corners-false) convention.
pub fn bilinear_resize<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw(x)?;
    if out_h == 0 || out_w == 0 {
        return Err(dim_err!("bilinear_resize target must be at least 1x1"));
    }
    let ys = linear_coeffs(h, out_h);
    let xs = linear_coeffs(w, out_w);
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let src = x.data();
    for p in 0..n * c {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let ly = r::<T>(ly);
            let ly0 = T::one() - ly;
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let lx = r::<T>(lx);
                let lx0 = T::one() - lx;
                let top = lx0 * plane[y0 * w + x0] + lx * plane[y0 * w + x1];
                let bot = lx0 * plane[y1 * w + x0] + lx * plane[y1 * w + x1];
                out.data_mut()[(p * out_h + oy) * out_w + ox] = ly0 * top + ly * bot;
            }
        }
    }
    Ok(out)
}

pub fn bilinear_resize_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (out_h, out_w) = (dy.dim(2), dy.dim(3));
    let ys = linear_coeffs(h, out_h);
    let xs = linear_coeffs(w, out_w);
    let planes = input_shape[0] * input_shape[1];
    let mut dx = Tensor::zeros(input_shape);
    for p in 0..planes {
        let d = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let ly = r::<T>(ly);
            let ly0 = T::one() - ly;
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let lx = r::<T>(lx);
                let lx0 = T::one() - lx;
                let g = dy.data()[(p * out_h + oy) * out_w + ox];
                d[y0 * w + x0] += g * ly0 * lx0;
                d[y0 * w + x1] += g * ly0 * lx;
                d[y1 * w + x0] += g * ly * lx0;
                d[y1 * w + x1] += g * ly * lx;
            }
        }
    }
    dx
}

// ---------------------------------------------------------------- softmax

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.ndim() {
        return Err(dim_err!("softmax axis {axis} out of range for {:?}", x.shape()));
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut y = x.clone();
    let d = y.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut m = T::neg_infinity();
            for j in 0..len {
                m = m.max(d[at(j)]);
            }
            let mut s = T::zero();
            for j in 0..len {
                let e = (d[at(j)] - m).exp();
                d[at(j)] = e;
                s += e;
            }
            for j in 0..len {
                d[at(j)] /= s;
            }
        }
    }
    Ok(y)
}

pub fn softmax_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = split_axis(y.shape(), axis);
    let mut dx = Tensor::zeros(y.shape());
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot: T = (0..len).map(|j| y.data()[at(j)] * dy.data()[at(j)]).sum();
            for j in 0..len {
                dx.data_mut()[at(j)] = y.data()[at(j)] * (dy.data()[at(j)] - dot);
            }
        }
    }
    dx
}

// ---------------------------------------------------------------- normalization

/// Per-group statistics saved by [`layer_norm`] for the backward pass.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Normalizes to zero mean / unit variance along `axis`, then applies the
/// per-position `gain` and `bias` (both of length `shape[axis]`).
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    axis: usize,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormStats<T>)> {
    if axis >= x.ndim() {
        return Err(dim_err!("layer_norm axis {axis} out of range for {:?}", x.shape()));
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    if gain.numel() != len || bias.numel() != len {
        return Err(dim_err!(
            "layer_norm gain/bias need {len} values, got {}/{}",
            gain.numel(),
            bias.numel()
        ));
    }
    let mut y = Tensor::zeros(x.shape());
    let mut stats = NormStats {
        mean: Vec::with_capacity(outer * inner),
        rstd: Vec::with_capacity(outer * inner),
    };
    let inv_len = T::one() / r::<T>(len as f64);
    let (xs, gs, bs) = (x.data(), gain.data(), bias.data());
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mean = (0..len).map(|j| xs[at(j)]).sum::<T>() * inv_len;
            let var = (0..len).map(|j| (xs[at(j)] - mean).powi(2)).sum::<T>() * inv_len;
            let rstd = T::one() / (var + eps).sqrt();
            for j in 0..len {
                y.data_mut()[at(j)] = (xs[at(j)] - mean) * rstd * gs[j] + bs[j];
            }
            stats.mean.push(mean);
            stats.rstd.push(rstd);
        }
    }
    Ok((y, stats))
}

/// Gradients of [`layer_norm`]: `(dx, dgain, dbias)`.
pub fn layer_norm_backward<T: Real>(
    x: &Tensor<T>,
    axis: usize,
    gain: &Tensor<T>,
    stats: &NormStats<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut dx = Tensor::zeros(x.shape());
    let mut dg = Tensor::zeros(&[len]);
    let mut db = Tensor::zeros(&[len]);
    let inv_len = T::one() / r::<T>(len as f64);
    let (xs, gs, dys) = (x.data(), gain.data(), dy.data());
    let mut xhat = vec![T::zero(); len];
    let mut dxhat = vec![T::zero(); len];
    for o in 0..outer {
        for i in 0..inner {
            let s = o * inner + i;
            let (mean, rstd) = (stats.mean[s], stats.rstd[s]);
            let at = |j: usize| (o * len + j) * inner + i;
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for j in 0..len {
                xhat[j] = (xs[at(j)] - mean) * rstd;
                dxhat[j] = dys[at(j)] * gs[j];
                sum_d += dxhat[j];
                sum_dx += dxhat[j] * xhat[j];
                dg.data_mut()[j] += dys[at(j)] * xhat[j];
                db.data_mut()[j] += dys[at(j)];
            }
            for j in 0..len {
                dx.data_mut()[at(j)] =
                    rstd * (dxhat[j] - sum_d * inv_len - xhat[j] * sum_dx * inv_len);
            }
        }
    }
    (dx, dg, db)
}

/// Batch statistics of an NCHW tensor per channel: (mean, biased variance).
pub fn channel_moments<T: Real>(x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let (n, c, h, w) = nchw(x)?;
    let hw = h * w;
    let count = r::<T>((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += x.data()[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut v = T::zero();
        for b in 0..n {
            v += x.data()[(b * c + ch) * hw..][..hw]
                .iter()
                .map(|&e| (e - m) * (e - m))
                .sum::<T>();
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    Ok((mean, var))
}

/// Per-channel affine normalization `gain * (x - mean) * rstd + bias`.
pub fn channel_affine<T: Real>(
    x: &Tensor<T>,
    mean: &[T],
    rstd: &[T],
    gain: &[T],
    bias: &[T],
) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw(x)?;
    if mean.len() != c || gain.len() != c || bias.len() != c {
        return Err(dim_err!("channel normalization expects {c} channels"));
    }
    let hw = h * w;
    let mut y = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let scale = gain[ch] * rstd[ch];
            let shift = bias[ch] - mean[ch] * scale;
            y.data_mut()[(b * c + ch) * hw..][..hw]
                .iter_mut()
                .for_each(|v| *v = *v * scale + shift);
        }
    }
    Ok(y)
}

/// Gradients of batch normalization. With `batch_stats` the mean and
/// variance are functions of `x`; otherwise they are constants.
pub fn batch_norm_backward<T: Real>(
    x: &Tensor<T>,
    mean: &[T],
    rstd: &[T],
    gain: &[T],
    dy: &Tensor<T>,
    batch_stats: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, hw) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
    let mut dx = Tensor::zeros(x.shape());
    let mut dg = Tensor::zeros(&[c]);
    let mut db = Tensor::zeros(&[c]);
    let m = r::<T>((n * hw) as f64);
    for ch in 0..c {
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in 0..hw {
                let xhat = (x.data()[off + i] - mean[ch]) * rstd[ch];
                let g = dy.data()[off + i];
                dg.data_mut()[ch] += g * xhat;
                db.data_mut()[ch] += g;
                sum_d += g * gain[ch];
                sum_dx += g * gain[ch] * xhat;
            }
        }
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in 0..hw {
                let dxhat = dy.data()[off + i] * gain[ch];
                dx.data_mut()[off + i] = if batch_stats {
                    let xhat = (x.data()[off + i] - mean[ch]) * rstd[ch];
                    rstd[ch] * (dxhat - sum_d / m - xhat * sum_dx / m)
                } else {
                    rstd[ch] * dxhat
                };
            }
        }
    }
    (dx, dg, db)
}

/// `x / sqrt(sum(x^2) + eps)` along `axis`.
pub fn l2_normalize<T: Real>(x: &Tensor<T>, axis: usize, eps: T) -> Result<Tensor<T>> {
    if axis >= x.ndim() {
        return Err(dim_err!("l2_normalize axis {axis} out of range for {:?}", x.shape()));
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut y = x.clone();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let ss: T = (0..len).map(|j| x.data()[at(j)].powi(2)).sum();
            let inv = T::one() / (ss + eps).sqrt();
            for j in 0..len {
                y.data_mut()[at(j)] = x.data()[at(j)] * inv;
            }
        }
    }
    Ok(y)
}

pub fn l2_normalize_backward<T: Real>(x: &Tensor<T>, axis: usize, eps: T, dy: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut dx = Tensor::zeros(x.shape());
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let ss: T = (0..len).map(|j| x.data()[at(j)].powi(2)).sum();
            let inv = T::one() / (ss + eps).sqrt();
            let inv3 = inv * inv * inv;
            let dot: T = (0..len).map(|j| x.data()[at(j)] * dy.data()[at(j)]).sum();
            for j in 0..len {
                dx.data_mut()[at(j)] = dy.data()[at(j)] * inv - x.data()[at(j)] * dot * inv3;
            }
        }
    }
    dx
}

// ---------------------------------------------------------------- filtering

/// Normalized 1-D Gaussian kernel.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of every plane of an NCHW tensor with the
/// same 1-D kernel along rows and columns.
pub fn separable_filter_valid<T: Real>(x: &Tensor<T>, kernel: &[T]) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw(x)?;
    let k = kernel.len();
    if k > h || k > w {
        return Err(dim_err!("filter of size {k} larger than {h}x{w}"));
    }
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut tmp = vec![T::zero(); h * wo];
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    for p in 0..n * c {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for ox in 0..wo {
                tmp[y * wo + ox] = (0..k).map(|t| kernel[t] * plane[y * w + ox + t]).sum();
            }
        }
        let o = &mut out.data_mut()[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                o[oy * wo + ox] = (0..k).map(|t| kernel[t] * tmp[(oy + t) * wo + ox]).sum();
            }
        }
    }
    Ok(out)
}

pub fn separable_filter_valid_backward<T: Real>(
    input_shape: &[usize],
    kernel: &[T],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let k = kernel.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let planes = input_shape[0] * input_shape[1];
    let mut dx = Tensor::zeros(input_shape);
    let mut dtmp = vec![T::zero(); h * wo];
    for p in 0..planes {
        dtmp.iter_mut().for_each(|v| *v = T::zero());
        let g = &dy.data()[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = g[oy * wo + ox];
                for t in 0..k {
                    dtmp[(oy + t) * wo + ox] += kernel[t] * gv;
                }
            }
        }
        let d = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for ox in 0..wo {
                let gv = dtmp[y * wo + ox];
                for t in 0..k {
                    d[y * w + ox + t] += kernel[t] * gv;
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------- misc

/// Copy of `len` entries starting at `start` along `axis`.
pub fn narrow<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    if axis >= x.ndim() || start + len > x.dim(axis) {
        return Err(dim_err!(
            "narrow [{start}, {}) out of range on axis {axis} of {:?}",
            start + len,
            x.shape()
        ));
    }
    let (outer, full, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        data.extend_from_slice(&x.data()[(o * full + start) * inner..(o * full + start + len) * inner]);
    }
    Tensor::new(&shape, data)
}

pub fn narrow_backward<T: Real>(input_shape: &[usize], axis: usize, start: usize, dy: &Tensor<T>) -> Tensor<T> {
    let (outer, full, inner) = split_axis(input_shape, axis);
    let len = dy.dim(axis);
    let mut dx = Tensor::zeros(input_shape);
    for o in 0..outer {
        dx.data_mut()[(o * full + start) * inner..(o * full + start + len) * inner]
            .copy_from_slice(&dy.data()[o * len * inner..(o + 1) * len * inner]);
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let u = r::<T>(GELU_C) * (x + r::<T>(GELU_A) * x * x * x);
    r::<T>(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let u = r::<T>(GELU_C) * (x + r::<T>(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = r::<T>(GELU_C) * (T::one() + r::<T>(3.0 * GELU_A) * x * x);
    r::<T>(0.5) * (T::one() + t) + r::<T>(0.5) * x * (T::one() - t * t) * du
}

/// Mean cross-entropy of row-wise softmax(logits) against class indices,
/// returning the loss and the probabilities.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.ndim() != 2 || logits.dim(0) != labels.len() {
        return Err(dim_err!(
            "cross_entropy expects [N,K] logits for {} labels, got {:?}",
            labels.len(),
            logits.shape()
        ));
    }
    let k = logits.dim(1);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(dim_err!("label {bad} out of range for {k} classes"));
    }
    let probs = softmax(logits, 1)?;
    let n = labels.len();
    let loss = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs.data()[i * k + l].max(T::min_positive_value()).ln())
        .sum::<T>()
        / r::<T>(n as f64);
    Ok((loss, probs))
}

pub fn smooth_l1_elem<T: Real>(d: T, beta: T) -> T {
    let a = d.abs();
    if a < beta {
        r::<T>(0.5) * d * d / beta
    } else {
        a - r::<T>(0.5) * beta
    }
}

pub fn smooth_l1_grad<T: Real>(d: T, beta: T) -> T {
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}
