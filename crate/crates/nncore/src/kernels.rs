//! Graph-free numeric kernels. The tape records these; attribution code
//! reuses them directly.

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() != 2 || b.ndim() != 2 {
        return Err(shape_err!("matmul needs 2-d operands, got {:?} x {:?}", a.shape(), b.shape()));
    }
    let (p, q) = (a.shape()[0], a.shape()[1]);
    let (q2, r) = (b.shape()[0], b.shape()[1]);
    if q != q2 {
        return Err(shape_err!("matmul inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); p * r];
    T::gemm(false, false, p, r, q, T::one(), a.data(), b.data(), T::zero(), &mut out);
    Tensor::new(&[p, r], out)
}

/// `x W + b` over the rows of `x` (`[.. x d_in]`).
pub fn affine<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if w.ndim() != 2 || b.ndim() != 1 {
        return Err(shape_err!("affine weights {:?}, bias {:?}", w.shape(), b.shape()));
    }
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    if x.last_dim() != d_in || b.shape()[0] != d_out || x.ndim() == 0 {
        return Err(shape_err!(
            "affine input {:?} incompatible with weights {:?} / bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        ));
    }
    let rows = x.rows();
    let mut out = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    T::gemm(false, false, rows, d_out, d_in, T::one(), x.data(), w.data(), T::one(), &mut out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::new(&shape, out)
}

/// Normalises a 3-d `[C, H, W]` or 4-d `[B, C, H, W]` shape to 4-d.
pub fn as_nchw(shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [c, h, w] => Ok([1, c, h, w]),
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(shape_err!("expected [C,H,W] or [B,C,H,W], got {:?}", shape)),
    }
}

fn im2col<T: Real>(x: &[T], [b, c, h, w]: [usize; 4]) -> Vec<T> {
    let hw = h * w;
    let cols_w = b * hw;
    let mut cols = vec![T::zero(); c * KERNEL * KERNEL * cols_w];
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let dst_row = &mut cols[row * cols_w..(row + 1) * cols_w];
                for bi in 0..b {
                    let src = &x[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                    let dst = &mut dst_row[bi * hw..(bi + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        // output x reads input x + kx - 1
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w.saturating_sub(1)),
                        };
                        for xo in x0..x1 {
                            dst[y * w + xo] = src[sy * w + xo + kx - 1];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], [b, c, h, w]: [usize; 4]) -> Vec<T> {
    let hw = h * w;
    let cols_w = b * hw;
    let mut x = vec![T::zero(); b * c * hw];
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let src_row = &cols[row * cols_w..(row + 1) * cols_w];
                for bi in 0..b {
                    let src = &src_row[bi * hw..(bi + 1) * hw];
                    let dst = &mut x[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w.saturating_sub(1)),
                        };
                        for xo in x0..x1 {
                            let d = &mut dst[sy * w + xo + kx - 1];
                            *d = *d + src[y * w + xo];
                        }
                    }
                }
            }
        }
    }
    x
}

fn check_conv<T: Real>(x_shape: &[usize], kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<[usize; 4]> {
    let dims = as_nchw(x_shape)?;
    let ks = kernels.shape();
    if ks.len() != 4 || ks[2] != KERNEL || ks[3] != KERNEL {
        return Err(shape_err!("conv kernels must be [C_out, C_in, 3, 3], got {:?}", ks));
    }
    if ks[1] != dims[1] {
        return Err(shape_err!("conv expects {} input channels, got {}", ks[1], dims[1]));
    }
    if bias.shape() != [ks[0]] {
        return Err(shape_err!("conv bias must be [{}], got {:?}", ks[0], bias.shape()));
    }
    Ok(dims)
}

/// Same-padded (padding 1, stride 1) 3x3 cross-correlation. Returns the
/// output and the unfolded input needed for the backward pass.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let dims @ [b, c, h, w] = check_conv(x.shape(), kernels, bias)?;
    let c_out = kernels.shape()[0];
    let hw = h * w;
    let cols = im2col(x.data(), dims);
    let k = c * KERNEL * KERNEL;
    let mut out_mat = vec![T::zero(); c_out * b * hw];
    T::gemm(false, false, c_out, b * hw, k, T::one(), kernels.data(), &cols, T::zero(), &mut out_mat);
    let mut out = vec![T::zero(); b * c_out * hw];
    for co in 0..c_out {
        let bias_v = bias.data()[co];
        for bi in 0..b {
            let src = &out_mat[co * b * hw + bi * hw..co * b * hw + (bi + 1) * hw];
            let dst = &mut out[(bi * c_out + co) * hw..(bi * c_out + co + 1) * hw];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bias_v;
            }
        }
    }
    let shape = if x.ndim() == 3 { vec![c_out, h, w] } else { vec![b, c_out, h, w] };
    Ok((Tensor::new(&shape, out)?, cols))
}

fn dout_matrix<T: Real>(dout: &[T], b: usize, c_out: usize, hw: usize) -> Vec<T> {
    let mut m = vec![T::zero(); c_out * b * hw];
    for bi in 0..b {
        for co in 0..c_out {
            let src = &dout[(bi * c_out + co) * hw..(bi * c_out + co + 1) * hw];
            m[co * b * hw + bi * hw..co * b * hw + (bi + 1) * hw].copy_from_slice(src);
        }
    }
    m
}

/// Gradient of a same-padded conv w.r.t. its input only.
pub fn conv2d_backward_input<T: Real>(dout: &[T], kernels: &Tensor<T>, x_shape: &[usize]) -> Result<Vec<T>> {
    let dims @ [b, c, h, w] = as_nchw(x_shape)?;
    let c_out = kernels.shape()[0];
    let hw = h * w;
    let dm = dout_matrix(dout, b, c_out, hw);
    let k = c * KERNEL * KERNEL;
    let mut dcols = vec![T::zero(); k * b * hw];
    T::gemm(true, false, k, b * hw, c_out, T::one(), kernels.data(), &dm, T::zero(), &mut dcols);
    Ok(col2im(&dcols, dims))
}

/// Returns `(dx, dkernels, dbias)`.
pub fn conv2d_backward<T: Real>(
    dout: &[T],
    cols: &[T],
    kernels: &Tensor<T>,
    x_shape: &[usize],
    need_input: bool,
) -> Result<(Option<Vec<T>>, Vec<T>, Vec<T>)> {
    let dims @ [b, c, h, w] = as_nchw(x_shape)?;
    let c_out = kernels.shape()[0];
    let hw = h * w;
    let k = c * KERNEL * KERNEL;
    let dm = dout_matrix(dout, b, c_out, hw);
    let mut dk = vec![T::zero(); c_out * k];
    T::gemm(false, true, c_out, k, b * hw, T::one(), &dm, cols, T::zero(), &mut dk);
    let db = (0..c_out)
        .map(|co| T::of(dm[co * b * hw..(co + 1) * b * hw].iter().map(|v| v.f64()).sum::<f64>()))
        .collect();
    let dx = if need_input {
        let mut dcols = vec![T::zero(); k * b * hw];
        T::gemm(true, false, k, b * hw, c_out, T::one(), kernels.data(), &dm, T::zero(), &mut dcols);
        Some(col2im(&dcols, dims))
    } else {
        None
    };
    Ok((dx, dk, db))
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per
/// output element, the flat input index of the (first) maximum.
pub fn maxpool2d_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, c, h, w] = as_nchw(x.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("max pooling needs even spatial size, got {}x{}", h, w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    let data = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xo + dx;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                arg.push(best);
            }
        }
    }
    let shape = if x.ndim() == 3 { vec![c, oh, ow] } else { vec![b, c, oh, ow] };
    Ok((Tensor::new(&shape, out)?, arg))
}

pub fn maxpool2d_backward<T: Real>(dout: &[T], argmax: &[usize], input_numel: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_numel];
    for (&g, &i) in dout.iter().zip(argmax) {
        dx[i] = dx[i] + g;
    }
    dx
}

/// Row-wise softmax over the last dimension, max-shifted.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let d = x.last_dim();
    let mut out = x.data().to_vec();
    if d > 0 {
        for row in out.chunks_mut(d) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
            let mut sum = 0.0f64;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += v.f64();
            }
            let inv = T::of(1.0 / sum);
            row.iter_mut().for_each(|v| *v = *v * inv);
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^v)` without overflow.
#[inline]
pub fn softplus<T: Real>(v: T) -> T {
    if v > T::of(20.0) {
        v
    } else if v < T::of(-20.0) {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

#[inline]
pub fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}
