use std::sync::Arc;

use ndarray::IxDyn;

use super::kernels::{expand, reduce_to, split_at_axis, standard};
use crate::{Tensor, Var};

impl<'g> Var<'g> {
    /// Sum of all elements as a 0-d tensor.
    pub fn sum(&self) -> Var<'g> {
        let s = self.value().sum();
        let shape = self.value().raw_dim();
        self.graph().record(Tensor::from_elem(IxDyn(&[]), s), &[self], move |g, _| {
            vec![Some(Tensor::from_elem(shape, g[IxDyn(&[])]))]
        })
    }

    pub fn mean(&self) -> Var<'g> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axes`, keeping them as size-1 axes.
    pub fn sum_axes(&self, axes: &[usize]) -> Var<'g> {
        let mut target = self.shape().to_vec();
        for &ax in axes {
            assert!(ax < target.len(), "sum_axes: axis {ax} out of range for {:?}", self.shape());
            target[ax] = 1;
        }
        let out = reduce_to(self.value(), &target);
        let shape = self.shape().to_vec();
        self.graph().record(out, &[self], move |g, _| vec![Some(expand(g, &shape))])
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Var<'g> {
        let n: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes).scale(1.0 / n.max(1) as f64)
    }

    /// Softmax along `axis`, computed with the max-shift for stability.
    pub fn softmax(&self, axis: usize) -> Var<'g> {
        assert!(axis < self.ndim(), "softmax: axis {axis} out of range for {:?}", self.shape());
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let mut y = standard(self.value()).into_owned();
        let mut m = vec![0.0; inner];
        let mut s = vec![0.0; inner];
        for o in 0..outer {
            let block = &mut y[o * n * inner..(o + 1) * n * inner];
            m.fill(f64::NEG_INFINITY);
            for row in block.chunks_exact(inner) {
                for (m, &v) in m.iter_mut().zip(row) {
                    *m = m.max(v);
                }
            }
            s.fill(0.0);
            for row in block.chunks_exact_mut(inner) {
                for ((v, &m), s) in row.iter_mut().zip(&m).zip(s.iter_mut()) {
                    *v = (*v - m).exp();
                    *s += *v;
                }
            }
            for row in block.chunks_exact_mut(inner) {
                for (v, &s) in row.iter_mut().zip(&s) {
                    *v /= s;
                }
            }
        }
        let y = Arc::new(Tensor::from_shape_vec(self.value().raw_dim(), y).expect("softmax shape"));
        let yb = Arc::clone(&y);
        self.graph().record_shared(y, &[self], move |g, _| {
            let gd = standard(g);
            let yd = yb.as_slice().expect("standard layout");
            let mut gx = vec![0.0; yd.len()];
            let mut dot = vec![0.0; inner];
            for o in 0..outer {
                let r = o * n * inner..(o + 1) * n * inner;
                let (gb, yb, xb) = (&gd[r.clone()], &yd[r.clone()], &mut gx[r]);
                dot.fill(0.0);
                for (gr, yr) in gb.chunks_exact(inner).zip(yb.chunks_exact(inner)) {
                    for ((d, &g), &y) in dot.iter_mut().zip(gr).zip(yr) {
                        *d += g * y;
                    }
                }
                for ((xr, gr), yr) in xb.chunks_exact_mut(inner).zip(gb.chunks_exact(inner)).zip(yb.chunks_exact(inner)) {
                    for (((x, &g), &y), &d) in xr.iter_mut().zip(gr).zip(yr).zip(&dot) {
                        *x = y * (g - d);
                    }
                }
            }
            vec![Some(Tensor::from_shape_vec(yb.raw_dim(), gx).expect("softmax grad"))]
        })
    }
}
