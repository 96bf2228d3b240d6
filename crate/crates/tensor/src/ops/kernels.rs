//! Strided loops over standard-layout buffers.
//!
//! `ndarray` iterates dynamic-rank arrays one index at a time, which is slow
//! for broadcasting and permuted copies. These helpers coalesce axes first and
//! then run plain inner loops over the last remaining axis.

use std::borrow::Cow;

use ndarray::IxDyn;

use crate::Tensor;

/// Row-major contents of `t`, borrowed when already in standard layout.
pub(crate) fn standard(t: &Tensor) -> Cow<'_, [f64]> {
    match t.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(permuted_copy(t)),
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

/// Element strides of `shape` broadcast to `out` (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut s = row_major_strides(shape);
    for i in 0..shape.len() {
        if shape[i] != out[i] {
            debug_assert_eq!(shape[i], 1);
            s[i] = 0;
        }
    }
    s
}

/// Loop nest over up to three operands with per-axis strides.
struct Walk<const N: usize> {
    dims: Vec<usize>,
    strides: Vec<[usize; N]>,
}

impl<const N: usize> Walk<N> {
    fn new(dims: &[usize], per_operand: [&[usize]; N]) -> Self {
        let mut out_dims: Vec<usize> = Vec::new();
        let mut out_strides: Vec<[usize; N]> = Vec::new();
        for (ax, &d) in dims.iter().enumerate() {
            if d == 1 {
                continue;
            }
            let st: [usize; N] = std::array::from_fn(|k| per_operand[k][ax]);
            if let (Some(pd), Some(ps)) = (out_dims.last_mut(), out_strides.last()) {
                if (0..N).all(|k| ps[k] == st[k] * d) {
                    *pd *= d;
                    *out_strides.last_mut().expect("stride") = st;
                    continue;
                }
            }
            out_dims.push(d);
            out_strides.push(st);
        }
        Self { dims: out_dims, strides: out_strides }
    }

    /// Calls `f(base offsets, run length, inner strides)` for every inner run.
    fn run(&self, mut f: impl FnMut([usize; N], usize, [usize; N])) {
        let n = self.dims.len();
        if n == 0 {
            f([0; N], 1, [0; N]);
            return;
        }
        let inner = self.dims[n - 1];
        let inner_st = self.strides[n - 1];
        let outer = &self.dims[..n - 1];
        let mut idx = vec![0usize; outer.len()];
        let mut off = [0usize; N];
        loop {
            f(off, inner, inner_st);
            let mut ax = outer.len();
            loop {
                if ax == 0 {
                    return;
                }
                ax -= 1;
                idx[ax] += 1;
                for k in 0..N {
                    off[k] += self.strides[ax][k];
                }
                if idx[ax] < outer[ax] {
                    break;
                }
                for k in 0..N {
                    off[k] -= self.strides[ax][k] * outer[ax];
                }
                idx[ax] = 0;
            }
        }
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().zip(b).map(|(&x, &y)| x.max(y)).collect()
}

/// `f(a, b)` elementwise with size-1 broadcasting of equal-rank operands.
pub(crate) fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let out_shape = broadcast_shape(a.shape(), b.shape());
    let ad = standard(a);
    let bd = standard(b);
    if a.shape() == b.shape() {
        let out: Vec<f64> = ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_shape_vec(IxDyn(&out_shape), out).expect("binary shape");
    }
    let total: usize = out_shape.iter().product();
    let mut out = vec![0.0; total];
    let so = row_major_strides(&out_shape);
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    Walk::new(&out_shape, [&so, &sa, &sb]).run(|[o, x, y], len, [io, ix, iy]| {
        let dst = &mut out[o..];
        match (ix, iy) {
            (1, 0) => {
                let yv = bd[y];
                for (d, &xv) in dst[..len].iter_mut().zip(&ad[x..x + len]) {
                    *d = f(xv, yv);
                }
            }
            (0, 1) => {
                let xv = ad[x];
                for (d, &yv) in dst[..len].iter_mut().zip(&bd[y..y + len]) {
                    *d = f(xv, yv);
                }
            }
            _ => {
                for i in 0..len {
                    dst[i * io] = f(ad[x + i * ix], bd[y + i * iy]);
                }
            }
        }
    });
    Tensor::from_shape_vec(IxDyn(&out_shape), out).expect("binary shape")
}

/// `f(a)` elementwise.
pub(crate) fn unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let ad = standard(a);
    Tensor::from_shape_vec(a.raw_dim(), ad.iter().map(|&x| f(x)).collect()).expect("unary shape")
}

/// Sums `x` down to `shape` (size-1 axes of `shape` are reduced).
pub(crate) fn reduce_to(x: &Tensor, shape: &[usize]) -> Tensor {
    assert_eq!(x.ndim(), shape.len(), "reduce_to: rank mismatch {:?} -> {shape:?}", x.shape());
    for (&s, &t) in x.shape().iter().zip(shape) {
        assert!(s == t || t == 1, "reduce_to: incompatible shapes {:?} -> {shape:?}", x.shape());
    }
    let xd = standard(x);
    if x.shape() == shape {
        return Tensor::from_shape_vec(IxDyn(shape), xd.into_owned()).expect("reduce shape");
    }
    let mut out = vec![0.0; shape.iter().product()];
    let sx = row_major_strides(x.shape());
    let so = broadcast_strides(shape, x.shape());
    Walk::new(x.shape(), [&sx, &so]).run(|[xo, o], len, [ix, io]| {
        if io == 0 {
            let mut acc = 0.0;
            for i in 0..len {
                acc += xd[xo + i * ix];
            }
            out[o] += acc;
        } else if ix == 1 && io == 1 {
            for (d, &v) in out[o..o + len].iter_mut().zip(&xd[xo..xo + len]) {
                *d += v;
            }
        } else {
            for i in 0..len {
                out[o + i * io] += xd[xo + i * ix];
            }
        }
    });
    Tensor::from_shape_vec(IxDyn(shape), out).expect("reduce shape")
}

/// Broadcasts `x` to `shape` as an owned standard-layout tensor.
pub(crate) fn expand(x: &Tensor, shape: &[usize]) -> Tensor {
    let xd = standard(x);
    if x.shape() == shape {
        return Tensor::from_shape_vec(IxDyn(shape), xd.into_owned()).expect("expand shape");
    }
    let mut out = vec![0.0; shape.iter().product()];
    let so = row_major_strides(shape);
    let sx = broadcast_strides(x.shape(), shape);
    Walk::new(shape, [&so, &sx]).run(|[o, xo], len, [io, ix]| {
        for i in 0..len {
            out[o + i * io] = xd[xo + i * ix];
        }
    });
    Tensor::from_shape_vec(IxDyn(shape), out).expect("expand shape")
}

/// Row-major copy of an arbitrarily strided tensor with non-negative strides.
fn permuted_copy(t: &Tensor) -> Vec<f64> {
    let shape = t.shape();
    if t.strides().iter().any(|&s| s < 0) || t.is_empty() {
        return t.iter().cloned().collect();
    }
    let src: Vec<usize> = t.strides().iter().map(|&s| s as usize).collect();
    let so = row_major_strides(shape);
    let mut out = vec![0.0; t.len()];
    let base = t.as_ptr();
    Walk::new(shape, [&so, &src]).run(|[o, s], len, [io, is]| {
        for i in 0..len {
            // SAFETY: offsets stay within the array described by `t`'s shape
            // and non-negative strides.
            out[o + i * io] = unsafe { *base.add(s + i * is) };
        }
    });
    out
}

/// Standard-layout copy of `x` with axes permuted.
pub(crate) fn permute(x: &Tensor, axes: &[usize]) -> Tensor {
    let v = x.view().permuted_axes(IxDyn(axes));
    let shape = v.shape().to_vec();
    let data = if v.is_standard_layout() {
        v.iter().cloned().collect()
    } else {
        let strides: Vec<usize> = axes.iter().map(|&a| row_major_strides(x.shape())[a]).collect();
        let xd = standard(x);
        let so = row_major_strides(&shape);
        let mut out = vec![0.0; v.len()];
        Walk::new(&shape, [&so, &strides]).run(|[o, s], len, [io, is]| {
            for i in 0..len {
                out[o + i * io] = xd[s + i * is];
            }
        });
        out
    };
    Tensor::from_shape_vec(IxDyn(&shape), data).expect("permute shape")
}

/// `(outer, n, inner)` view of `shape` around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor;

    fn naive_binary(a: &Tensor, b: &Tensor) -> Tensor {
        let shape = broadcast_shape(a.shape(), b.shape());
        let ab = a.broadcast(IxDyn(&shape)).unwrap();
        let bb = b.broadcast(IxDyn(&shape)).unwrap();
        ndarray::Zip::from(&ab).and(&bb).map_collect(|&x, &y| x * 10.0 + y)
    }

    #[test]
    fn broadcasting_matches_ndarray() {
        let a = Tensor::from_shape_fn(IxDyn(&[2, 3, 4, 5]), |i| (i[0] * 60 + i[1] * 20 + i[2] * 5 + i[3]) as f64);
        for bs in [[1, 3, 1, 1], [2, 1, 4, 1], [1, 1, 1, 5], [2, 3, 4, 5], [1, 1, 1, 1], [2, 1, 1, 5]] {
            let b = Tensor::from_shape_fn(IxDyn(&bs), |i| (i[0] + 7 * i[1] + 3 * i[2] + 11 * i[3]) as f64);
            assert_eq!(binary(&a, &b, |x, y| x * 10.0 + y), naive_binary(&a, &b));
            assert_eq!(binary(&b, &a, |x, y| x * 10.0 + y), naive_binary(&b, &a));
            let mut r = a.clone();
            for (ax, &t) in bs.iter().enumerate() {
                if t == 1 {
                    r = r.sum_axis(ndarray::Axis(ax)).insert_axis(ndarray::Axis(ax));
                }
            }
            assert_eq!(reduce_to(&a, &bs), r);
            assert_eq!(expand(&b, a.shape()), b.broadcast(a.raw_dim()).unwrap().to_owned());
        }
    }

    #[test]
    fn permute_and_strided_views() {
        let a = Tensor::from_shape_fn(IxDyn(&[2, 3, 4]), |i| (i[0] * 12 + i[1] * 4 + i[2]) as f64);
        for axes in [[0, 1, 2], [2, 1, 0], [1, 2, 0], [0, 2, 1]] {
            let p = permute(&a, &axes);
            assert_eq!(p, a.view().permuted_axes(IxDyn(&axes)).as_standard_layout().into_owned());
        }
        let t = a.clone().reversed_axes();
        assert_eq!(standard(&t).into_owned(), t.iter().cloned().collect::<Vec<_>>());
        let s = tensor(&[1], vec![4.0]);
        assert_eq!(unary(&s, |x| x * 2.0)[[0]], 8.0);
    }
}
