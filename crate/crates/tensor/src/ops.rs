//! Differentiable tensor operations.
//!
//! Binary elementwise operations broadcast with numpy semantics (shapes are
//! right-aligned, size-1 axes stretch). Every backward rule is written in
//! terms of these same operations, so gradients of gradients work.

use std::rc::Rc;

use crate::autograd::Op;
use crate::tensor::{contiguous_strides, numel, Tensor};

pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Vec<usize> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
        };
    }
    out
}

/// Strides that read `src` as if it had shape `out`; broadcast axes get 0.
pub(crate) fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    assert!(src.len() <= out.len(), "cannot broadcast {src:?} to {out:?}");
    let base = contiguous_strides(src);
    let off = out.len() - src.len();
    (0..out.len())
        .map(|i| {
            if i < off {
                0
            } else {
                let d = src[i - off];
                assert!(
                    d == out[i] || d == 1,
                    "cannot broadcast {src:?} to {out:?}"
                );
                if d == 1 {
                    0
                } else {
                    base[i - off]
                }
            }
        })
        .collect()
}

/// Visits every multi-index of `out` in row-major order, passing the flat
/// output offset and the offsets into two strided operands.
pub(crate) fn walk(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let r = out.len();
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    if numel(out) == 0 {
        return;
    }
    let inner = out[r - 1];
    let (ia, ib) = (sa[r - 1], sb[r - 1]);
    let mut idx = vec![0usize; r - 1];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    loop {
        for j in 0..inner {
            f(o + j, oa + j * ia, ob + j * ib);
        }
        o += inner;
        let mut d = r - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn binary_data(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> (Vec<f64>, Vec<usize>) {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return (data, a.shape().to_vec());
    }
    let shape = broadcast_shapes(a.shape(), b.shape());
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let mut data = vec![0.0; numel(&shape)];
    let (ad, bd) = (a.data(), b.data());
    walk(&shape, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
    (data, shape)
}

fn unary(a: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::from_op(data, a.shape().to_vec(), op)
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        let (d, s) = binary_data(self, other, |x, y| x + y);
        Tensor::from_op(d, s, Op::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let (d, s) = binary_data(self, other, |x, y| x - y);
        Tensor::from_op(d, s, Op::Sub(self.clone(), other.clone()))
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        let (d, s) = binary_data(self, other, |x, y| x * y);
        Tensor::from_op(d, s, Op::Mul(self.clone(), other.clone()))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, Op::Scale(self.clone(), c), |x| x * c)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, Op::AddScalar(self.clone()), |x| x + c)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, Op::Exp(self.clone()), f64::exp)
    }

    pub fn square(&self) -> Tensor {
        unary(self, Op::Square(self.clone()), |x| x * x)
    }

    /// Square root whose derivative is taken as 0 where the input is 0.
    pub fn sqrt(&self) -> Tensor {
        unary(self, Op::Sqrt(self.clone()), |x| x.max(0.0).sqrt())
    }

    /// `1/x`, with 0 mapped to 0.
    pub fn recip_safe(&self) -> Tensor {
        unary(self, Op::RecipSafe(self.clone()), |x| if x == 0.0 { 0.0 } else { 1.0 / x })
    }

    pub fn powf(&self, p: f64) -> Tensor {
        unary(self, Op::PowScalar(self.clone(), p), |x| x.powf(p))
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary(self, Op::LeakyRelu(self.clone(), slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        unary(self, Op::Clamp(self.clone(), lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        Tensor::from_op(vec![total], vec![], Op::SumTo(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over broadcast axes so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let st = broadcast_strides(shape, self.shape());
        let src = contiguous_strides(self.shape());
        let mut out = vec![0.0; numel(shape)];
        let d = self.data();
        walk(self.shape(), &src, &st, |_, i, j| out[j] += d[i]);
        Tensor::from_op(out, shape.to_vec(), Op::SumTo(self.clone()))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let st = broadcast_strides(self.shape(), shape);
        let mut out = vec![0.0; numel(shape)];
        let d = self.data();
        walk(shape, &st, &st, |o, i, _| out[o] = d[i]);
        Tensor::from_op(out, shape.to_vec(), Op::BroadcastTo(self.clone()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(numel(shape), self.numel(), "reshape {:?} -> {shape:?}", self.shape());
        Tensor::from_op(self.to_vec(), shape.to_vec(), Op::Reshape(self.clone()))
    }

    /// Transpose of a 2-d tensor.
    pub fn t(&self) -> Tensor {
        let (r, c) = match self.shape() {
            &[r, c] => (r, c),
            s => panic!("t() needs a 2-d tensor, got {s:?}"),
        };
        let d = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        Tensor::from_op(out, vec![c, r], Op::Transpose(self.clone()))
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = match self.shape() {
            &[m, k] => (m, k),
            s => panic!("matmul lhs must be 2-d, got {s:?}"),
        };
        let n = match other.shape() {
            &[k2, n] if k2 == k => n,
            s => panic!("matmul rhs {s:?} incompatible with lhs {:?}", self.shape()),
        };
        let mut out = vec![0.0; m * n];
        crate::conv::gemm(m, k, n, self.data(), k, 1, other.data(), n, 1, &mut out, 1.0, 0.0);
        Tensor::from_op(out, vec![m, n], Op::MatMul(self.clone(), other.clone()))
    }

    /// `out[i] = self[index[i]]`, reshaped to `shape`.
    pub fn gather(&self, index: Rc<[usize]>, shape: &[usize]) -> Tensor {
        assert_eq!(index.len(), numel(shape));
        let d = self.data();
        let out = index.iter().map(|&i| d[i]).collect();
        Tensor::from_op(out, shape.to_vec(), Op::Gather(self.clone(), index))
    }

    /// Adjoint of [`Tensor::gather`]: `out[index[i]] += self[i]`.
    pub fn scatter_add(&self, index: Rc<[usize]>, shape: &[usize]) -> Tensor {
        assert_eq!(index.len(), self.numel());
        let mut out = vec![0.0; numel(shape)];
        for (&i, &v) in index.iter().zip(self.data()) {
            out[i] += v;
        }
        Tensor::from_op(out, shape.to_vec(), Op::ScatterAdd(self.clone(), index))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let shape = self.shape();
        assert!(start + len <= shape[axis]);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            for a in start..start + len {
                index.extend((0..inner).map(|i| base + a * inner + i));
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        self.gather(index.into(), &out_shape)
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty());
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.shape().len(), first.len());
            for (i, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
                assert!(i == axis || a == b, "concat shape mismatch {:?} vs {first:?}", p.shape());
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        Tensor::from_op(out, shape, Op::Concat(parts.to_vec(), axis))
    }

    /// Reflect-pads the two spatial axes of an NCHW tensor.
    pub fn pad_reflect(&self, top: usize, bottom: usize, left: usize, right: usize) -> Tensor {
        let (n, c, h, w) = self.dims4();
        assert!(top < h && bottom < h && left < w && right < w, "reflect pad larger than input");
        let (ho, wo) = (h + top + bottom, w + left + right);
        let reflect = |i: isize, len: usize| -> usize {
            let len = len as isize;
            let mut i = i;
            if i < 0 {
                i = -i;
            }
            if i >= len {
                i = 2 * (len - 1) - i;
            }
            i as usize
        };
        let mut index = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            for y in 0..ho {
                let sy = reflect(y as isize - top as isize, h);
                for x in 0..wo {
                    let sx = reflect(x as isize - left as isize, w);
                    index.push(plane * h * w + sy * w + sx);
                }
            }
        }
        self.gather(index.into(), &[n, c, ho, wo])
    }

    /// Spatial crop of an NCHW tensor.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Tensor {
        let (n, c, hi, wi) = self.dims4();
        assert!(y0 + h <= hi && x0 + w <= wi);
        if (y0, x0, h, w) == (0, 0, hi, wi) {
            return self.clone();
        }
        let mut index = Vec::with_capacity(n * c * h * w);
        for plane in 0..n * c {
            for y in 0..h {
                let row = plane * hi * wi + (y0 + y) * wi + x0;
                index.extend(row..row + w);
            }
        }
        self.gather(index.into(), &[n, c, h, w])
    }

    /// Nearest-neighbour spatial upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Tensor {
        let (n, c, h, w) = self.dims4();
        let (ho, wo) = (h * factor, w * factor);
        let mut index = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            for y in 0..ho {
                for x in 0..wo {
                    index.push(plane * h * w + (y / factor) * w + x / factor);
                }
            }
        }
        self.gather(index.into(), &[n, c, ho, wo])
    }

    /// Mean over the spatial axes, `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&self) -> Tensor {
        let (n, c, h, w) = self.dims4();
        self.sum_to(&[n, c, 1, 1]).reshape(&[n, c]).scale(1.0 / (h * w) as f64)
    }
}

impl std::ops::Add for &Tensor {
    type Output = Tensor;
    fn add(self, rhs: &Tensor) -> Tensor {
        Tensor::add(self, rhs)
    }
}

impl std::ops::Sub for &Tensor {
    type Output = Tensor;
    fn sub(self, rhs: &Tensor) -> Tensor {
        Tensor::sub(self, rhs)
    }
}

impl std::ops::Mul for &Tensor {
    type Output = Tensor;
    fn mul(self, rhs: &Tensor) -> Tensor {
        Tensor::mul(self, rhs)
    }
}

impl std::ops::Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        Tensor::neg(self)
    }
}
