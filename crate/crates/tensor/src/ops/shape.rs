use ndarray::{Axis, IxDyn, Slice};

use super::kernels::{permute, standard};
use crate::{Tensor, Var};

impl<'g> Var<'g> {
    /// Row-major reshape. Panics if the element count changes.
    pub fn reshape(&self, shape: &[usize]) -> Var<'g> {
        let out = Tensor::from_shape_vec(IxDyn(shape), standard(self.value()).into_owned())
            .unwrap_or_else(|_| panic!("reshape: {:?} -> {shape:?}", self.shape()));
        let orig = self.shape().to_vec();
        self.graph().record(out, &[self], move |g, _| {
            let back = Tensor::from_shape_vec(IxDyn(&orig), standard(g).into_owned()).expect("reshape back");
            vec![Some(back)]
        })
    }

    /// Axis permutation; the result is stored in standard layout.
    pub fn permute(&self, axes: &[usize]) -> Var<'g> {
        assert_eq!(axes.len(), self.ndim(), "permute: wrong number of axes");
        let out = permute(self.value(), axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.graph().record(out, &[self], move |g, _| {
            vec![Some(permute(g, &inverse))]
        })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Var<'g> {
        let n = self.ndim();
        assert!(n >= 2, "transpose_last: needs rank >= 2");
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 1, n - 2);
        self.permute(&axes)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'g>], axis: usize) -> Var<'g> {
        assert!(!parts.is_empty(), "concat: no inputs");
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views)
            .unwrap_or_else(|e| panic!("concat: {e}; shapes {:?}", parts.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>()));
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let refs: Vec<&Var<'g>> = parts.iter().collect();
        parts[0].graph().record(out, &refs, move |g, needs| {
            let mut start = 0;
            sizes
                .iter()
                .zip(needs)
                .map(|(&len, &need)| {
                    let s = start;
                    start += len;
                    need.then(|| g.slice_axis(Axis(axis), Slice::from(s..s + len)).to_owned())
                })
                .collect()
        })
    }

    /// Contiguous range `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<'g> {
        let out = self.value().slice_axis(Axis(axis), Slice::from(start..start + len)).to_owned();
        let shape = self.value().raw_dim();
        self.graph().record(out, &[self], move |g, _| {
            let mut full = Tensor::zeros(shape);
            full.slice_axis_mut(Axis(axis), Slice::from(start..start + len)).assign(g);
            vec![Some(full)]
        })
    }
}
