use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, IxDyn};

use super::kernels::standard;
use crate::{flops, par, Tensor, Var};

/// `c = a · b` on row-major buffers.
pub(crate) fn gemm(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, c: &mut ArrayViewMut2<'_, f64>) {
    general_mat_mul(1.0, &a, &b, 0.0, c);
}

/// Batched product of `(nb, m, k)` and `(nb, k, n)` buffers, optionally
/// transposing either operand per batch.
fn batched(a: &[f64], b: &[f64], nb: usize, m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<f64> {
    let blocks = par::map_range(nb, |i| {
        let a_blk = &a[i * m * k..(i + 1) * m * k];
        let b_blk = &b[i * k * n..(i + 1) * k * n];
        let av = if ta {
            ArrayView2::from_shape((k, m), a_blk).expect("a").reversed_axes()
        } else {
            ArrayView2::from_shape((m, k), a_blk).expect("a")
        };
        let bv = if tb {
            ArrayView2::from_shape((n, k), b_blk).expect("b").reversed_axes()
        } else {
            ArrayView2::from_shape((k, n), b_blk).expect("b")
        };
        let mut out = vec![0.0; m * n];
        gemm(av, bv, &mut ArrayViewMut2::from_shape((m, n), &mut out).expect("c"));
        out
    });
    flops::add(2 * (nb * m * n * k) as u64);
    blocks.concat()
}

impl<'g> Var<'g> {
    /// Matrix product over the last two axes.
    ///
    /// `other` is either a plain `(k, n)` matrix shared by every leading
    /// index of `self`, or has the same leading axes as `self`.
    pub fn matmul(&self, other: &Var<'g>) -> Var<'g> {
        let sa = self.shape().to_vec();
        let sb = other.shape().to_vec();
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul: operands must have rank >= 2");
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        assert_eq!(k, sb[sb.len() - 2], "matmul: inner dimensions {sa:?} x {sb:?}");
        let n = sb[sb.len() - 1];
        let lead = &sa[..sa.len() - 2];
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);

        let a = self.shared();
        let b = other.shared();
        if sb.len() == 2 {
            let rows = lead.iter().product::<usize>() * m;
            let ad = standard(&a);
            let bd = standard(&b);
            let av = ArrayView2::from_shape((rows, k), &ad).expect("a");
            let bv = ArrayView2::from_shape((k, n), &bd).expect("b");
            let mut out = vec![0.0; rows * n];
            gemm(av, bv, &mut ArrayViewMut2::from_shape((rows, n), &mut out).expect("c"));
            flops::add(2 * (rows * n * k) as u64);
            drop((ad, bd));
            let value = Tensor::from_shape_vec(IxDyn(&out_shape), out).expect("matmul shape");
            return self.graph().record(value, &[self, other], move |g, needs| {
                let gd = standard(g);
                let gv = ArrayView2::from_shape((rows, n), &gd).expect("g");
                let ga = needs[0].then(|| {
                    let bd = standard(&b);
                    let bv = ArrayView2::from_shape((k, n), &bd).expect("b");
                    let mut out = vec![0.0; rows * k];
                    gemm(gv, bv.t(), &mut ArrayViewMut2::from_shape((rows, k), &mut out).expect("ga"));
                    Tensor::from_shape_vec(IxDyn(&sa), out).expect("ga shape")
                });
                let gb = needs[1].then(|| {
                    let ad = standard(&a);
                    let av = ArrayView2::from_shape((rows, k), &ad).expect("a");
                    let mut out = vec![0.0; k * n];
                    gemm(av.t(), gv, &mut ArrayViewMut2::from_shape((k, n), &mut out).expect("gb"));
                    Tensor::from_shape_vec(IxDyn(&sb), out).expect("gb shape")
                });
                vec![ga, gb]
            });
        }

        assert_eq!(&sb[..sb.len() - 2], lead, "matmul: batch dimensions {sa:?} x {sb:?}");
        let nb: usize = lead.iter().product();
        let out = {
            let ad = standard(&a);
            let bd = standard(&b);
            batched(&ad, &bd, nb, m, k, n, false, false)
        };
        let value = Tensor::from_shape_vec(IxDyn(&out_shape), out).expect("matmul shape");
        self.graph().record(value, &[self, other], move |g, needs| {
            let gd = standard(g);
            let ga = needs[0].then(|| {
                let bd = standard(&b);
                // (m,n) x (k,n)^T
                let out = batched(&gd, &bd, nb, m, n, k, false, true);
                Tensor::from_shape_vec(IxDyn(&sa), out).expect("ga shape")
            });
            let gb = needs[1].then(|| {
                let ad = standard(&a);
                // (m,k)^T x (m,n)
                let out = batched(&ad, &gd, nb, k, m, n, true, false);
                Tensor::from_shape_vec(IxDyn(&sb), out).expect("gb shape")
            });
            vec![ga, gb]
        })
    }
}
