//! Forward kernels and their analytic adjoints.
//!
//! Every function here is pure. The tape in [`crate::tape`] strings them
//! together; tests and oracles may call them directly.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stride, zero padding and dilation shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding, dilation: 1 }
    }

    pub const fn dilated(dilation: usize) -> Self {
        Self { stride: 1, padding: dilation, dilation }
    }

    /// Stride 1 with padding that preserves spatial size for an odd kernel.
    pub const fn same(kernel: usize) -> Self {
        Self { stride: 1, padding: kernel / 2, dilation: 1 }
    }

    fn check(&self) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::shape("stride and dilation must be positive"));
        }
        Ok(())
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, spec: ConvSpec) -> Result<usize> {
    spec.check()?;
    let span = spec.dilation * (kernel - 1) + 1;
    let padded = input + 2 * spec.padding;
    if kernel == 0 || padded < span {
        return Err(Error::shape(format!("window of span {span} larger than padded extent {padded}")));
    }
    Ok((padded - span) / spec.stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn deconv_out_extent(input: usize, kernel: usize, spec: ConvSpec) -> Result<usize> {
    spec.check()?;
    let span = spec.dilation * (kernel - 1) + 1;
    let full = (input.saturating_sub(1)) * spec.stride + span;
    if input == 0 || kernel == 0 || full <= 2 * spec.padding {
        return Err(Error::shape(format!(
            "transposed convolution of extent {input} with padding {} is empty",
            spec.padding
        )));
    }
    Ok(full - 2 * spec.padding)
}

fn conv_dims(x: &Tensor, k: &Tensor, op: &str) -> Result<((usize, usize, usize), [usize; 4])> {
    let xd = x.dims3(op)?;
    let kd = k.dims4(op)?;
    if kd[2] != xd.2 {
        return Err(Error::shape(format!("{op}: kernel expects {} input channels, input has {}", kd[2], xd.2)));
    }
    Ok((xd, kd))
}

/// Input coordinate read by output coordinate `o` at kernel tap `t`, if inside.
#[inline]
fn tap(o: usize, t: usize, spec: ConvSpec, extent: usize) -> Option<usize> {
    let pos = (o * spec.stride + t * spec.dilation) as isize - spec.padding as isize;
    (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
}

/// Cross-correlation `H×W×Cin` ⋆ `kh×kw×Cin×Cout` → `H'×W'×Cout`.
pub fn conv2d(x: &Tensor, k: &Tensor, spec: ConvSpec) -> Result<Tensor> {
    let ((h, w, ci), [kh, kw, _, co]) = conv_dims(x, k, "conv2d")?;
    let oh = conv_out_extent(h, kh, spec)?;
    let ow = conv_out_extent(w, kw, spec)?;
    let xs = x.data();
    let ks = k.data();
    let mut out = vec![0.0; oh * ow * co];
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * co..][..co];
            for ky in 0..kh {
                let Some(iy) = tap(oy, ky, spec, h) else { continue };
                for kx in 0..kw {
                    let Some(ix) = tap(ox, kx, spec, w) else { continue };
                    let xrow = &xs[(iy * w + ix) * ci..][..ci];
                    let kbase = (ky * kw + kx) * ci * co;
                    for (c, &xv) in xrow.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let krow = &ks[kbase + c * co..][..co];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[oh, ow, co], out)
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub fn conv2d_backward(x: &Tensor, k: &Tensor, dy: &Tensor, spec: ConvSpec) -> Result<(Tensor, Tensor)> {
    let ((h, w, ci), [kh, kw, _, co]) = conv_dims(x, k, "conv2d_backward")?;
    let (oh, ow, dco) = dy.dims3("conv2d_backward")?;
    if dco != co || oh != conv_out_extent(h, kh, spec)? || ow != conv_out_extent(w, kw, spec)? {
        return Err(Error::shape("conv2d_backward: upstream gradient shape mismatch"));
    }
    let xs = x.data();
    let ks = k.data();
    let gs = dy.data();
    let mut dx = vec![0.0; h * w * ci];
    let mut dk = vec![0.0; kh * kw * ci * co];
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &gs[(oy * ow + ox) * co..][..co];
            for ky in 0..kh {
                let Some(iy) = tap(oy, ky, spec, h) else { continue };
                for kx in 0..kw {
                    let Some(ix) = tap(ox, kx, spec, w) else { continue };
                    let xoff = (iy * w + ix) * ci;
                    let kbase = (ky * kw + kx) * ci * co;
                    for c in 0..ci {
                        let krow = &ks[kbase + c * co..][..co];
                        dx[xoff + c] += krow.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                        let xv = xs[xoff + c];
                        for (d, &gv) in dk[kbase + c * co..][..co].iter_mut().zip(g) {
                            *d += xv * gv;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(&[h, w, ci], dx)?, Tensor::new(&[kh, kw, ci, co], dk)?))
}

/// Transposed convolution: every input pixel scatters `kernel[.., .., cin, ..]`
/// into the output. With the kernel's channel axes swapped this is the adjoint
/// of [`conv2d`] (see [`Tensor::swap_kernel_channels`]).
pub fn deconv2d(x: &Tensor, k: &Tensor, spec: ConvSpec) -> Result<Tensor> {
    let ((h, w, ci), [kh, kw, _, co]) = conv_dims(x, k, "deconv2d")?;
    let oh = deconv_out_extent(h, kh, spec)?;
    let ow = deconv_out_extent(w, kw, spec)?;
    let xs = x.data();
    let ks = k.data();
    let mut out = vec![0.0; oh * ow * co];
    for iy in 0..h {
        for ix in 0..w {
            let xrow = &xs[(iy * w + ix) * ci..][..ci];
            for ky in 0..kh {
                let Some(oy) = tap(iy, ky, spec, oh) else { continue };
                for kx in 0..kw {
                    let Some(ox) = tap(ix, kx, spec, ow) else { continue };
                    let acc = &mut out[(oy * ow + ox) * co..][..co];
                    let kbase = (ky * kw + kx) * ci * co;
                    for (c, &xv) in xrow.iter().enumerate() {
                        let krow = &ks[kbase + c * co..][..co];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[oh, ow, co], out)
}

pub fn deconv2d_backward(x: &Tensor, k: &Tensor, dy: &Tensor, spec: ConvSpec) -> Result<(Tensor, Tensor)> {
    let ((h, w, ci), [kh, kw, _, co]) = conv_dims(x, k, "deconv2d_backward")?;
    let (oh, ow, dco) = dy.dims3("deconv2d_backward")?;
    if dco != co || oh != deconv_out_extent(h, kh, spec)? || ow != deconv_out_extent(w, kw, spec)? {
        return Err(Error::shape("deconv2d_backward: upstream gradient shape mismatch"));
    }
    let xs = x.data();
    let ks = k.data();
    let gs = dy.data();
    let mut dx = vec![0.0; h * w * ci];
    let mut dk = vec![0.0; kh * kw * ci * co];
    for iy in 0..h {
        for ix in 0..w {
            let xoff = (iy * w + ix) * ci;
            for ky in 0..kh {
                let Some(oy) = tap(iy, ky, spec, oh) else { continue };
                for kx in 0..kw {
                    let Some(ox) = tap(ix, kx, spec, ow) else { continue };
                    let g = &gs[(oy * ow + ox) * co..][..co];
                    let kbase = (ky * kw + kx) * ci * co;
                    for c in 0..ci {
                        let krow = &ks[kbase + c * co..][..co];
                        dx[xoff + c] += krow.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                        let xv = xs[xoff + c];
                        for (d, &gv) in dk[kbase + c * co..][..co].iter_mut().zip(g) {
                            *d += xv * gv;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(&[h, w, ci], dx)?, Tensor::new(&[kh, kw, ci, co], dk)?))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = a.dims2("matmul")?;
    let (kb, n) = b.dims2("matmul")?;
    if ka != kb {
        return Err(Error::shape(format!("matmul: inner extents {ka} and {kb} differ")));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..][..n];
        for (k, &av) in ad[i * ka..][..ka].iter().enumerate() {
            for (o, &bv) in row.iter_mut().zip(&bd[k * n..][..n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// `dA = dY·Bᵀ`, `dB = Aᵀ·dY`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((matmul_nt(dy, b)?, matmul_tn(a, dy)?))
}

/// `A·Bᵀ` without materialising the transpose.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (n, kb) = b.dims2("matmul")?;
    if k != kb {
        return Err(Error::shape(format!("matmul: inner extents {k} and {kb} differ")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for (i, row) in out.chunks_mut(n.max(1)).enumerate().take(m) {
        let ar = &ad[i * k..][..k];
        for (j, o) in row.iter_mut().enumerate() {
            *o = ar.iter().zip(&bd[j * k..][..k]).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(&[m, n], out)
}

/// `Aᵀ·B` without materialising the transpose.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2("matmul")?;
    let (kb, n) = b.dims2("matmul")?;
    if k != kb {
        return Err(Error::shape(format!("matmul: inner extents {k} and {kb} differ")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for kk in 0..k {
        let br = &bd[kk * n..][..n];
        for (i, &av) in ad[kk * m..][..m].iter().enumerate() {
            for (o, &bv) in out[i * n..][..n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// Softmax over each column of an `M×N` matrix, max-shifted for stability.
pub fn softmax_columns(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.dims2("softmax_columns")?;
    let xd = x.data();
    let mut max = vec![f64::NEG_INFINITY; n];
    for row in xd.chunks(n.max(1)).take(m) {
        for (mx, &v) in max.iter_mut().zip(row) {
            *mx = mx.max(v);
        }
    }
    let mut out = vec![0.0; m * n];
    let mut total = vec![0.0; n];
    for (orow, row) in out.chunks_mut(n.max(1)).zip(xd.chunks(n.max(1))) {
        for (((o, &v), mx), t) in orow.iter_mut().zip(row).zip(&max).zip(total.iter_mut()) {
            *o = (v - mx).exp();
            *t += *o;
        }
    }
    let inv: Vec<f64> = total.iter().map(|t| 1.0 / t).collect();
    for orow in out.chunks_mut(n.max(1)) {
        for (o, s) in orow.iter_mut().zip(&inv) {
            *o *= s;
        }
    }
    Tensor::new(&[m, n], out)
}

/// Column-softmax adjoint from its output `y`: `dx = y ⊙ (dy − Σ y·dy)` per column.
pub fn softmax_columns_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    y.expect_same_shape(dy, "softmax_columns_backward")?;
    let (m, n) = y.dims2("softmax_columns_backward")?;
    let (yd, gd) = (y.data(), dy.data());
    let mut inner = vec![0.0; n];
    for (yr, gr) in yd.chunks(n.max(1)).zip(gd.chunks(n.max(1))).take(m) {
        for ((s, &yv), &gv) in inner.iter_mut().zip(yr).zip(gr) {
            *s += yv * gv;
        }
    }
    let dx = yd.iter().zip(gd).enumerate().map(|(idx, (&yv, &gv))| yv * (gv - inner[idx % n])).collect();
    Tensor::new(&[m, n], dx)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// `H×W×C` → `C×HW` with `out[c, h·W + w] = x[h, w, c]`.
pub fn flatten(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = x.dims3("flatten")?;
    let xd = x.data();
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for p in 0..hw {
        for ch in 0..c {
            out[ch * hw + p] = xd[p * c + ch];
        }
    }
    Tensor::new(&[c, hw], out)
}

/// Inverse of [`flatten`]: `C×HW` → `H×W×C`.
pub fn reshape3d(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, hw) = x.dims2("reshape3d")?;
    if hw != h * w {
        return Err(Error::shape(format!("reshape3d: {hw} positions cannot form {h}×{w}")));
    }
    let xd = x.data();
    let mut out = vec![0.0; c * hw];
    for p in 0..hw {
        for ch in 0..c {
            out[p * c + ch] = xd[ch * hw + p];
        }
    }
    Tensor::new(&[h, w, c], out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (h, w, ca) = a.dims3("concat_channels")?;
    let (hb, wb, cb) = b.dims3("concat_channels")?;
    if (h, w) != (hb, wb) {
        return Err(Error::shape(format!("concat_channels: spatial extents {h}×{w} and {hb}×{wb} differ")));
    }
    let c = ca + cb;
    let mut out = Vec::with_capacity(h * w * c);
    for p in 0..h * w {
        out.extend_from_slice(&a.data()[p * ca..][..ca]);
        out.extend_from_slice(&b.data()[p * cb..][..cb]);
    }
    Tensor::new(&[h, w, c], out)
}

/// Split a channel-concatenated gradient back into its two parts.
pub fn split_channels(dy: &Tensor, ca: usize) -> Result<(Tensor, Tensor)> {
    let (h, w, c) = dy.dims3("split_channels")?;
    if ca > c {
        return Err(Error::shape("split_channels: split point beyond channel count"));
    }
    let cb = c - ca;
    let mut a = Vec::with_capacity(h * w * ca);
    let mut b = Vec::with_capacity(h * w * cb);
    for p in 0..h * w {
        let row = &dy.data()[p * c..][..c];
        a.extend_from_slice(&row[..ca]);
        b.extend_from_slice(&row[ca..]);
    }
    Ok((Tensor::new(&[h, w, ca], a)?, Tensor::new(&[h, w, cb], b)?))
}

/// Per-axis source taps for align-corners=false bilinear resampling.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
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

/// Bilinear resize of an `H×W×C` map to `oh×ow×C` (align-corners=false).
pub fn upsample_bilinear(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (h, w, c) = x.dims3("upsample_bilinear")?;
    if oh == 0 || ow == 0 || h == 0 || w == 0 {
        return Err(Error::shape("upsample_bilinear: empty extent"));
    }
    if (h, w) == (oh, ow) {
        return Ok(x.clone());
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let xd = x.data();
    let mut out = vec![0.0; oh * ow * c];
    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
            let weights = [
                (y0, x0, (1.0 - ly) * (1.0 - lx)),
                (y0, x1, (1.0 - ly) * lx),
                (y1, x0, ly * (1.0 - lx)),
                (y1, x1, ly * lx),
            ];
            let dst = &mut out[(oy * ow + ox) * c..][..c];
            for (iy, ix, wt) in weights {
                let src = &xd[(iy * w + ix) * c..][..c];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
    }
    Tensor::new(&[oh, ow, c], out)
}

pub fn upsample_bilinear_backward(dy: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (oh, ow, c) = dy.dims3("upsample_bilinear_backward")?;
    if (h, w) == (oh, ow) {
        return Ok(dy.clone());
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let gd = dy.data();
    let mut dx = vec![0.0; h * w * c];
    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
            let weights = [
                (y0, x0, (1.0 - ly) * (1.0 - lx)),
                (y0, x1, (1.0 - ly) * lx),
                (y1, x0, ly * (1.0 - lx)),
                (y1, x1, ly * lx),
            ];
            let src = &gd[(oy * ow + ox) * c..][..c];
            for (iy, ix, wt) in weights {
                let dst = &mut dx[(iy * w + ix) * c..][..c];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
    }
    Tensor::new(&[h, w, c], dx)
}

/// Adds a per-channel bias (length = last extent) to every position.
pub fn add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let c = *x.shape().last().ok_or_else(|| Error::shape("add_bias: rank-0 input"))?;
    if b.shape() != [c] {
        return Err(Error::shape(format!("add_bias: bias {:?} vs {c} channels", b.shape())));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        for (v, bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    Ok(out)
}

pub fn bias_backward(dy: &Tensor, c: usize) -> Tensor {
    let mut db = vec![0.0; c];
    for row in dy.data().chunks(c) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Tensor::new(&[c], db).expect("bias length")
}
