//! 2-d convolution kernels (im2col + GEMM) and their differentiable wrappers.
//!
//! The three operations `conv`, `conv_input_grad` and `conv_weight_grad`
//! are the partial derivatives of one trilinear form `<conv(x, w), g>`, so
//! each one's backward pass is expressed with the other two.

use crate::autograd::Op;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, input: usize, k: usize) -> usize {
        assert!(input + 2 * self.pad >= k, "kernel {k} larger than padded input {input}");
        (input + 2 * self.pad - k) / self.stride + 1
    }
}

/// Row-major GEMM: `c = alpha * a(m×k) · b(k×n) + beta * c`, with explicit
/// row/column strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    alpha: f64,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut().take(m * n) {
            *v *= beta;
        }
        return;
    }
    // SAFETY: callers pass slices sized for the given dimensions and strides;
    // checked by the debug assertions below.
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct Dims {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

impl Dims {
    fn new(x: &[usize], w: &[usize], geom: ConvGeom) -> Dims {
        let (n, ci, h, wi) = match x {
            &[n, c, h, w] => (n, c, h, w),
            s => panic!("conv input must be NCHW, got {s:?}"),
        };
        let (co, k) = match w {
            &[co, c2, kh, kw] if c2 == ci && kh == kw => (co, kh),
            s => panic!("conv weight {s:?} incompatible with input {x:?}"),
        };
        Dims {
            n,
            ci,
            h,
            w: wi,
            co,
            k,
            ho: geom.out_size(h, k),
            wo: geom.out_size(wi, k),
        }
    }

    fn is_pointwise(&self, geom: ConvGeom) -> bool {
        self.k == 1 && geom.stride == 1 && geom.pad == 0
    }

    fn cols(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.co, self.ho, self.wo]
    }
}

fn im2col(x: &[f64], d: &Dims, geom: ConvGeom, col: &mut [f64]) {
    let hw = d.ho * d.wo;
    let (s, p) = (geom.stride as isize, geom.pad as isize);
    for c in 0..d.ci {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (c * d.k + ky) * d.k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = oy as isize * s - p + ky as isize;
                    let drow = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in drow.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        *v = if ix < 0 || ix >= d.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], d: &Dims, geom: ConvGeom, x: &mut [f64]) {
    let hw = d.ho * d.wo;
    let (s, p) = (geom.stride as isize, geom.pad as isize);
    for c in 0..d.ci {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (c * d.k + ky) * d.k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn forward_data(x: &Tensor, w: &Tensor, geom: ConvGeom) -> (Vec<f64>, Vec<usize>) {
    let d = Dims::new(x.shape(), w.shape(), geom);
    let hw = d.ho * d.wo;
    let mut out = vec![0.0; d.n * d.co * hw];
    let pointwise = d.is_pointwise(geom);
    let mut col = if pointwise { Vec::new() } else { vec![0.0; d.cols() * hw] };
    for b in 0..d.n {
        let xs = &x.data()[b * d.ci * d.h * d.w..(b + 1) * d.ci * d.h * d.w];
        let cols: &[f64] = if pointwise {
            xs
        } else {
            im2col(xs, &d, geom, &mut col);
            &col
        };
        let ys = &mut out[b * d.co * hw..(b + 1) * d.co * hw];
        gemm(d.co, d.cols(), hw, w.data(), d.cols(), 1, cols, hw, 1, ys, 1.0, 0.0);
    }
    (out, d.out_shape())
}

fn input_grad_data(g: &Tensor, w: &Tensor, x_shape: &[usize], geom: ConvGeom) -> Vec<f64> {
    let d = Dims::new(x_shape, w.shape(), geom);
    assert_eq!(g.shape(), &d.out_shape()[..], "conv grad shape mismatch");
    let hw = d.ho * d.wo;
    let xsize = d.ci * d.h * d.w;
    let mut out = vec![0.0; d.n * xsize];
    let pointwise = d.is_pointwise(geom);
    let mut col = vec![0.0; d.cols() * hw];
    for b in 0..d.n {
        let gs = &g.data()[b * d.co * hw..(b + 1) * d.co * hw];
        let xs = &mut out[b * xsize..(b + 1) * xsize];
        if pointwise {
            gemm(d.cols(), d.co, hw, w.data(), 1, d.cols(), gs, hw, 1, xs, 1.0, 0.0);
        } else {
            gemm(d.cols(), d.co, hw, w.data(), 1, d.cols(), gs, hw, 1, &mut col, 1.0, 0.0);
            col2im(&col, &d, geom, xs);
        }
    }
    out
}

fn weight_grad_data(x: &Tensor, g: &Tensor, w_shape: &[usize], geom: ConvGeom) -> Vec<f64> {
    let d = Dims::new(x.shape(), w_shape, geom);
    assert_eq!(g.shape(), &d.out_shape()[..], "conv grad shape mismatch");
    let hw = d.ho * d.wo;
    let mut out = vec![0.0; d.co * d.cols()];
    let pointwise = d.is_pointwise(geom);
    let mut col = if pointwise { Vec::new() } else { vec![0.0; d.cols() * hw] };
    for b in 0..d.n {
        let xs = &x.data()[b * d.ci * d.h * d.w..(b + 1) * d.ci * d.h * d.w];
        let cols: &[f64] = if pointwise {
            xs
        } else {
            im2col(xs, &d, geom, &mut col);
            &col
        };
        let gs = &g.data()[b * d.co * hw..(b + 1) * d.co * hw];
        gemm(d.co, hw, d.cols(), gs, hw, 1, cols, 1, hw, &mut out, 1.0, 1.0);
    }
    out
}

impl Tensor {
    /// Cross-correlation of an NCHW input with `[Co, Ci, k, k]` weights and
    /// zero padding.
    pub fn conv2d(&self, w: &Tensor, geom: ConvGeom) -> Tensor {
        let (data, shape) = forward_data(self, w, geom);
        Tensor::from_op(data, shape, Op::Conv(self.clone(), w.clone(), geom))
    }

    /// Gradient of `<conv2d(x, w), self>` with respect to `x`.
    pub fn conv2d_input_grad(&self, w: &Tensor, x_shape: &[usize], geom: ConvGeom) -> Tensor {
        let data = input_grad_data(self, w, x_shape, geom);
        Tensor::from_op(data, x_shape.to_vec(), Op::ConvInputGrad(self.clone(), w.clone(), geom))
    }

    /// Gradient of `<conv2d(x, w), g>` with respect to `w`, where `self` is `x`.
    pub fn conv2d_weight_grad(&self, g: &Tensor, w_shape: &[usize], geom: ConvGeom) -> Tensor {
        let data = weight_grad_data(self, g, w_shape, geom);
        Tensor::from_op(data, w_shape.to_vec(), Op::ConvWeightGrad(self.clone(), g.clone(), geom))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], g: ConvGeom) -> Vec<f64> {
        let [n, ci, h, wi] = xs;
        let [co, _, k, _] = ws;
        let ho = g.out_size(h, k);
        let wo = g.out_size(wi, k);
        let mut out = vec![0.0; n * co * ho * wo];
        for b in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wi as isize {
                                        continue;
                                    }
                                    acc += x[((b * ci + c) * h + iy as usize) * wi + ix as usize]
                                        * w[((o * ci + c) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((b * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 97) as f64 * scale - 0.5).collect()
    }

    #[test]
    fn conv_matches_naive_loop() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3), (1, 2, 5)] {
            let geom = ConvGeom { stride, pad };
            let xs = [2, 3, 7, 6];
            let ws = [4, 3, k, k];
            let x = seq(xs.iter().product(), 0.01);
            let w = seq(ws.iter().product(), 0.013);
            let got = Tensor::from_vec(x.clone(), &xs).conv2d(&Tensor::from_vec(w.clone(), &ws), geom);
            let want = naive_conv(&x, xs, &w, ws, geom);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad} k {k}");
            }
        }
    }

    #[test]
    fn input_and_weight_grads_are_adjoint() {
        // <conv(x, w), g> == <x, conv_input_grad(g, w)> == <w, conv_weight_grad(x, g)>
        let geom = ConvGeom { stride: 2, pad: 1 };
        let xs = [2, 3, 8, 7];
        let ws = [5, 3, 3, 3];
        let x = Tensor::from_vec(seq(xs.iter().product(), 0.01), &xs);
        let w = Tensor::from_vec(seq(ws.iter().product(), 0.02), &ws);
        let y = x.conv2d(&w, geom);
        let g = Tensor::from_vec(seq(y.numel(), 0.03), y.shape());
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let gx = g.conv2d_input_grad(&w, &xs, geom);
        let mid: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        let gw = x.conv2d_weight_grad(&g, &ws, geom);
        let rhs: f64 = w.data().iter().zip(gw.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - mid).abs() < 1e-9 * lhs.abs().max(1.0));
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
