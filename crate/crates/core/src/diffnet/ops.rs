//! Forward and backward kernels over [`Tensor`] buffers.
//!
//! Convolutions are lowered to a single batched GEMM through an im2col
//! buffer laid out as `[C*k*k, N*Ho*Wo]`.

use super::{Real, Tensor};

pub fn conv_out_size(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(shape: &[usize], k: usize, stride: usize, pad: usize) -> Self {
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        ConvGeom {
            n,
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: conv_out_size(h, k, stride, pad),
            wo: conv_out_size(w, k, stride, pad),
        }
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let hw_out = g.ho * g.wo;
    let ncols = g.cols();
    let mut cols = vec![T::zero(); g.c * g.k * g.k * ncols];
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.n {
                    let src = &x[(b * g.c + ci) * g.h * g.w..(b * g.c + ci + 1) * g.h * g.w];
                    let dst = &mut dst_row[b * hw_out..(b + 1) * hw_out];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[oy * g.wo + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let hw_out = g.ho * g.wo;
    let ncols = g.cols();
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.n {
                    let dst = &mut x[(b * g.c + ci) * g.h * g.w..(b * g.c + ci + 1) * g.h * g.w];
                    let src = &src_row[b * hw_out..(b + 1) * hw_out];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[iy as usize * g.w + ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[O, N*HW]` GEMM layout to NCHW.
fn cm_to_nchw<T: Real>(buf: &[T], o: usize, n: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); o * n * hw];
    for oc in 0..o {
        for b in 0..n {
            out[(b * o + oc) * hw..(b * o + oc + 1) * hw]
                .copy_from_slice(&buf[oc * n * hw + b * hw..oc * n * hw + (b + 1) * hw]);
        }
    }
    out
}

fn nchw_to_cm<T: Real>(x: &[T], o: usize, n: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); o * n * hw];
    for b in 0..n {
        for oc in 0..o {
            out[oc * n * hw + b * hw..oc * n * hw + (b + 1) * hw]
                .copy_from_slice(&x[(b * o + oc) * hw..(b * o + oc + 1) * hw]);
        }
    }
    out
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let k = weight.shape()[2];
    let out_c = weight.shape()[0];
    let g = ConvGeom::new(x.shape(), k, stride, pad);
    let cols = if k == 1 && stride == 1 && pad == 0 {
        nchw_to_cm(x.data(), g.c, g.n, g.h * g.w)
    } else {
        im2col(x.data(), &g)
    };
    let ncols = g.cols();
    let kdim = g.c * k * k;
    let mut out = vec![T::zero(); out_c * ncols];
    for (oc, &b) in bias.data().iter().enumerate() {
        out[oc * ncols..(oc + 1) * ncols].fill(b);
    }
    T::gemm(
        out_c,
        kdim,
        ncols,
        T::one(),
        weight.data(),
        kdim as isize,
        1,
        &cols,
        ncols as isize,
        1,
        T::one(),
        &mut out,
        ncols as isize,
        1,
    );
    let data = cm_to_nchw(&out, out_c, g.n, g.ho * g.wo);
    Tensor::new(&[g.n, out_c, g.ho, g.wo], data).expect("conv output shape")
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let k = weight.shape()[2];
    let out_c = weight.shape()[0];
    let g = ConvGeom::new(x.shape(), k, stride, pad);
    let pointwise = k == 1 && stride == 1 && pad == 0;
    let cols = if pointwise {
        nchw_to_cm(x.data(), g.c, g.n, g.h * g.w)
    } else {
        im2col(x.data(), &g)
    };
    let ncols = g.cols();
    let kdim = g.c * k * k;
    let dy_cm = nchw_to_cm(dy.data(), out_c, g.n, g.ho * g.wo);

    let mut db = vec![T::zero(); out_c];
    for (oc, d) in db.iter_mut().enumerate() {
        *d = dy_cm[oc * ncols..(oc + 1) * ncols].iter().copied().sum();
    }

    let mut dw = vec![T::zero(); out_c * kdim];
    T::gemm(
        out_c,
        ncols,
        kdim,
        T::one(),
        &dy_cm,
        ncols as isize,
        1,
        &cols,
        1,
        ncols as isize,
        T::zero(),
        &mut dw,
        kdim as isize,
        1,
    );

    let mut dcols = vec![T::zero(); kdim * ncols];
    T::gemm(
        kdim,
        out_c,
        ncols,
        T::one(),
        weight.data(),
        1,
        kdim as isize,
        &dy_cm,
        ncols as isize,
        1,
        T::zero(),
        &mut dcols,
        ncols as isize,
        1,
    );
    let dx = if pointwise {
        cm_to_nchw(&dcols, g.c, g.n, g.h * g.w)
    } else {
        col2im(&dcols, &g)
    };
    (
        Tensor::new(x.shape(), dx).expect("dx shape"),
        Tensor::new(weight.shape(), dw).expect("dw shape"),
        Tensor::new(&[out_c], db).expect("db shape"),
    )
}

/// `y = x Wᵀ + b` with `x` flattened to `[N, in]` and `W` stored `[out, in]`.
pub fn dense_forward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let n = x.batch();
    let fin = x.sample_len();
    let fout = weight.shape()[0];
    let mut out = Vec::with_capacity(n * fout);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        n,
        fin,
        fout,
        T::one(),
        x.data(),
        fin as isize,
        1,
        weight.data(),
        1,
        fin as isize,
        T::one(),
        &mut out,
        fout as isize,
        1,
    );
    Tensor::new(&[n, fout], out).expect("dense output shape")
}

pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let n = x.batch();
    let fin = x.sample_len();
    let fout = weight.shape()[0];
    let mut dw = vec![T::zero(); fout * fin];
    T::gemm(
        fout,
        n,
        fin,
        T::one(),
        dy.data(),
        1,
        fout as isize,
        x.data(),
        fin as isize,
        1,
        T::zero(),
        &mut dw,
        fin as isize,
        1,
    );
    let mut dx = vec![T::zero(); n * fin];
    T::gemm(
        n,
        fout,
        fin,
        T::one(),
        dy.data(),
        fout as isize,
        1,
        weight.data(),
        fin as isize,
        1,
        T::zero(),
        &mut dx,
        fin as isize,
        1,
    );
    let mut db = vec![T::zero(); fout];
    for row in dy.data().chunks(fout) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    (
        Tensor::new(x.shape(), dx).expect("dx shape"),
        Tensor::new(weight.shape(), dw).expect("dw shape"),
        Tensor::new(&[fout], db).expect("db shape"),
    )
}

/// Source taps for half-pixel-centred bilinear sampling along one axis.
fn bilinear_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of every `(n, c)` plane to `out_h × out_w`.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().expect("resize expects NCHW");
    let ty = bilinear_taps(out_h, h);
    let tx = bilinear_taps(out_w, w);
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(out_h * out_w)) {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (ly, lx) = (T::lit(ly), T::lit(lx));
                let top = plane[y0 * w + x0] * (T::one() - lx) + plane[y0 * w + x1] * lx;
                let bot = plane[y1 * w + x0] * (T::one() - lx) + plane[y1 * w + x1] * lx;
                dst[oy * out_w + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out).expect("resize shape")
}

pub fn resize_bilinear_backward<T: Real>(in_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (_, _, out_h, out_w) = dy.dims4().expect("resize grad expects NCHW");
    let ty = bilinear_taps(out_h, h);
    let tx = bilinear_taps(out_w, w);
    let mut dx = Tensor::zeros(in_shape);
    for (dst, g) in dx.data_mut().chunks_mut(h * w).zip(dy.data().chunks(out_h * out_w)) {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (ly, lx) = (T::lit(ly), T::lit(lx));
                let v = g[oy * out_w + ox];
                let top = v * (T::one() - ly);
                let bot = v * ly;
                dst[y0 * w + x0] += top * (T::one() - lx);
                dst[y0 * w + x1] += top * lx;
                dst[y1 * w + x0] += bot * (T::one() - lx);
                dst[y1 * w + x1] += bot * lx;
            }
        }
    }
    dx
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().expect("pool expects NCHW");
    let inv = T::lit(1.0 / (h * w) as f64);
    let data = x
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(&[n, c], data).expect("pool shape")
}

pub fn global_avg_pool_backward<T: Real>(in_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let hw = in_shape[2] * in_shape[3];
    let inv = T::lit(1.0 / hw as f64);
    let mut dx = Tensor::zeros(in_shape);
    for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(dy.data()) {
        plane.fill(g * inv);
    }
    dx
}

/// Softmax over each batch item's flattened features.
pub fn softmax<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let len = x.sample_len();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(len) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

pub fn softmax_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let len = y.sample_len();
    let mut dx = dy.clone();
    for (d, s) in dx.data_mut().chunks_mut(len).zip(y.data().chunks(len)) {
        let dot: T = d.iter().zip(s).map(|(&g, &p)| g * p).sum();
        for (g, &p) in d.iter_mut().zip(s) {
            *g = p * (*g - dot);
        }
    }
    dx
}

/// Channel concatenation of NCHW (or feature concatenation of `(N,F)`) tensors.
pub fn concat<T: Real>(xs: &[&Tensor<T>]) -> Tensor<T> {
    let n = xs[0].batch();
    let total: usize = xs.iter().map(|t| t.sample_len()).sum();
    let mut data = Vec::with_capacity(n * total);
    for b in 0..n {
        for t in xs {
            let l = t.sample_len();
            data.extend_from_slice(&t.data()[b * l..(b + 1) * l]);
        }
    }
    let mut shape = xs[0].shape().to_vec();
    shape[1] = xs.iter().map(|t| t.shape()[1]).sum();
    Tensor::new(&shape, data).expect("concat shape")
}

pub fn concat_backward<T: Real>(shapes: &[&[usize]], dy: &Tensor<T>) -> Vec<Tensor<T>> {
    let n = dy.batch();
    let total = dy.sample_len();
    let mut offset = 0;
    shapes
        .iter()
        .map(|s| {
            let l: usize = s[1..].iter().product();
            let mut g = Vec::with_capacity(n * l);
            for b in 0..n {
                g.extend_from_slice(&dy.data()[b * total + offset..b * total + offset + l]);
            }
            offset += l;
            Tensor::new(s, g).expect("concat grad shape")
        })
        .collect()
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
