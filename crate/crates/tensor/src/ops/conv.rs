use ndarray::linalg::general_mat_mul;
use ndarray::{s, ArrayView2, ArrayViewMut2, Axis, IxDyn};

use super::linalg::gemm;
use super::kernels::standard;
use crate::{flops, par, Tensor, Var};

/// Spatial layout of a stride-1, "same"-padded square convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    fn of(x: &[usize], w: &[usize]) -> Self {
        assert_eq!(x.len(), 4, "conv2d: input must be (batch, channels, height, width), got {x:?}");
        assert_eq!(w.len(), 4, "conv2d: weight must be (out, in, k, k), got {w:?}");
        assert_eq!(x[1], w[1], "conv2d: input has {} channels, weight expects {}", x[1], w[1]);
        assert_eq!(w[2], w[3], "conv2d: kernel must be square");
        assert!(w[2] % 2 == 1, "conv2d: kernel size must be odd");
        Self { batch: x[0], in_channels: x[1], out_channels: w[0], height: x[2], width: x[3], kernel: w[2] }
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Target size in elements of one column tile; keeps tiles cache resident.
const TILE_ELEMS: usize = 1 << 17;

/// Output rows per tile for this geometry.
fn tile_rows(g: &ConvGeometry) -> usize {
    (TILE_ELEMS / (g.patch() * g.width).max(1)).clamp(1, g.height)
}

/// Column matrix `(patch, (y1 - y0) * w)` for output rows `y0..y1`.
fn im2col(src: &[f64], g: &ConvGeometry, y0: usize, y1: usize, col: &mut [f64]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let n = (y1 - y0) * w;
    for c in 0..g.in_channels {
        let plane = &src[c * hw..(c + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &mut col[((c * k + ky) * k + kx) * n..][..n];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
                for y in y0..y1 {
                    let dst = &mut row[(y - y0) * w..(y - y0 + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        dst.fill(0.0);
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    let s0 = (x0 as isize + dx) as usize;
                    dst[x0..x1].copy_from_slice(&srow[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a column tile back onto `dst`.
fn col2im(col: &[f64], g: &ConvGeometry, y0: usize, y1: usize, dst: &mut [f64]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let pad = (k / 2) as isize;
    let hw = h * w;
    let n = (y1 - y0) * w;
    for c in 0..g.in_channels {
        let plane = &mut dst[c * hw..(c + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = &col[((c * k + ky) * k + kx) * n..][..n];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in y0..y1 {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let s0 = (x0 as isize + dx) as usize;
                    let r = (y - y0) * w;
                    for (d, s) in drow[s0..s0 + (x1 - x0)].iter_mut().zip(&row[r + x0..r + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Forward convolution on raw tensors: stride 1, zero "same" padding.
///
/// `x` is `(batch, in, h, w)`, `weight` is `(out, in, k, k)` with odd `k`,
/// `bias` is `(out)`.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let g = ConvGeometry::of(x.shape(), weight.shape());
    let xd = standard(x);
    let wd = standard(weight);
    let bd = bias.map(standard);
    let wm = ArrayView2::from_shape((g.out_channels, g.patch()), &wd).expect("weight");
    let per_image = g.in_channels * g.plane();
    let blocks = par::map_range(g.batch, |b| {
        let src = &xd[b * per_image..(b + 1) * per_image];
        let mut out = vec![0.0; g.out_channels * g.plane()];
        let mut ov = ArrayViewMut2::from_shape((g.out_channels, g.plane()), &mut out).expect("out");
        if g.kernel == 1 {
            let cv = ArrayView2::from_shape((g.in_channels, g.plane()), src).expect("col");
            gemm(wm, cv, &mut ov);
        } else {
            let rows = tile_rows(&g);
            let mut col = vec![0.0; g.patch() * rows * g.width];
            for y0 in (0..g.height).step_by(rows) {
                let y1 = (y0 + rows).min(g.height);
                let n = (y1 - y0) * g.width;
                im2col(src, &g, y0, y1, &mut col);
                let cv = ArrayView2::from_shape((g.patch(), n), &col[..g.patch() * n]).expect("col");
                gemm(wm, cv, &mut ov.slice_mut(s![.., y0 * g.width..y1 * g.width]));
            }
        }
        if let Some(bd) = &bd {
            for (row, &bv) in ov.axis_iter_mut(Axis(0)).zip(bd.iter()) {
                let mut row = row;
                row += bv;
            }
        }
        out
    });
    flops::add(2 * (g.batch * g.out_channels * g.plane() * g.patch()) as u64);
    Tensor::from_shape_vec(IxDyn(&[g.batch, g.out_channels, g.height, g.width]), blocks.concat()).expect("conv out")
}

impl<'g> Var<'g> {
    /// 2-D convolution, stride 1, zero padding `k / 2` so spatial size is kept.
    pub fn conv2d(&self, weight: &Var<'g>, bias: Option<&Var<'g>>) -> Var<'g> {
        let out = conv2d_forward(self.value(), weight.value(), bias.map(|b| b.value()));
        let geo = ConvGeometry::of(self.shape(), weight.shape());
        let x = self.shared();
        let w = weight.shared();
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            assert_eq!(b.shape(), [geo.out_channels], "conv2d: bias shape");
            parents.push(b);
        }
        self.graph().record(out, &parents, move |g, needs| conv2d_backward(&geo, &x, &w, g, needs))
    }
}

fn conv2d_backward(geo: &ConvGeometry, x: &Tensor, w: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
    let need_x = needs[0];
    let need_w = needs[1];
    let xd = standard(x);
    let wd = standard(w);
    let gd = standard(g);
    let wm = ArrayView2::from_shape((geo.out_channels, geo.patch()), &wd).expect("weight");
    let per_in = geo.in_channels * geo.plane();
    let per_out = geo.out_channels * geo.plane();

    let parts = par::map_range(geo.batch, |b| {
        let gb = ArrayView2::from_shape((geo.out_channels, geo.plane()), &gd[b * per_out..(b + 1) * per_out]).expect("g");
        let src = &xd[b * per_in..(b + 1) * per_in];
        if geo.kernel == 1 {
            let cv = ArrayView2::from_shape((geo.in_channels, geo.plane()), src).expect("col");
            let gw = need_w.then(|| {
                let mut gw = vec![0.0; geo.out_channels * geo.patch()];
                gemm(gb, cv.t(), &mut ArrayViewMut2::from_shape((geo.out_channels, geo.patch()), &mut gw).expect("gw"));
                gw
            });
            let gx = need_x.then(|| {
                let mut gx = vec![0.0; per_in];
                gemm(wm.t(), gb, &mut ArrayViewMut2::from_shape((geo.in_channels, geo.plane()), &mut gx).expect("gx"));
                gx
            });
            return (gw, gx);
        }
        let mut gw = need_w.then(|| vec![0.0; geo.out_channels * geo.patch()]);
        let mut gx = need_x.then(|| vec![0.0; per_in]);
        let rows = tile_rows(geo);
        let mut col = vec![0.0; geo.patch() * rows * geo.width];
        for y0 in (0..geo.height).step_by(rows) {
            let y1 = (y0 + rows).min(geo.height);
            let n = (y1 - y0) * geo.width;
            let g_tile = gb.slice(s![.., y0 * geo.width..y1 * geo.width]);
            if let Some(gw) = &mut gw {
                im2col(src, geo, y0, y1, &mut col);
                let cv = ArrayView2::from_shape((geo.patch(), n), &col[..geo.patch() * n]).expect("col");
                let mut gwv = ArrayViewMut2::from_shape((geo.out_channels, geo.patch()), gw).expect("gw");
                general_mat_mul(1.0, &g_tile, &cv.t(), 1.0, &mut gwv);
            }
            if let Some(gx) = &mut gx {
                let mut gcol = ArrayViewMut2::from_shape((geo.patch(), n), &mut col[..geo.patch() * n]).expect("gcol");
                gemm(wm.t(), g_tile, &mut gcol);
                col2im(&col[..geo.patch() * n], geo, y0, y1, gx);
            }
        }
        (gw, gx)
    });
    let work = (geo.batch * geo.out_channels * geo.plane() * geo.patch()) as u64;
    flops::add(2 * work * (need_w as u64 + need_x as u64));

    let mut gw_total: Option<Vec<f64>> = None;
    let mut gx_all = need_x.then(|| Vec::with_capacity(geo.batch * per_in));
    for (gw, gx) in parts {
        if let Some(gw) = gw {
            match &mut gw_total {
                Some(acc) => acc.iter_mut().zip(&gw).for_each(|(a, b)| *a += b),
                None => gw_total = Some(gw),
            }
        }
        if let (Some(all), Some(gx)) = (&mut gx_all, gx) {
            all.extend_from_slice(&gx);
        }
    }
    let gx = gx_all.map(|v| Tensor::from_shape_vec(x.raw_dim(), v).expect("gx shape"));
    let gw = gw_total.map(|v| Tensor::from_shape_vec(w.raw_dim(), v).expect("gw shape"));
    let mut out = vec![gx, gw];
    if needs.len() == 3 {
        out.push(needs[2].then(|| g.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0))));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;
    use rand::SeedableRng;

    /// Direct loops: out[b,o,y,x] = Σ w[o,c,ky,kx] x[b,c,y+ky-p,x+kx-p].
    fn naive(x: &Tensor, w: &Tensor) -> Tensor {
        let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let p = (k / 2) as isize;
        Tensor::from_shape_fn(IxDyn(&[b, o, h, wd]), |i| {
            let mut acc = 0.0;
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let (sy, sx) = (i[2] as isize + ky as isize - p, i[3] as isize + kx as isize - p);
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                            acc += w[[i[1], ci, ky, kx]] * x[[i[0], ci, sy as usize, sx as usize]];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn tiled_conv_matches_direct_loops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = crate::init::normal(&[2, 16, 40, 64], 1.0, &mut rng);
        let w = crate::init::normal(&[3, 16, 3, 3], 1.0, &mut rng);
        let g = ConvGeometry::of(x.shape(), w.shape());
        assert!(tile_rows(&g) < 40, "test must span several tiles");
        let y = conv2d_forward(&x, &w, None);
        let r = naive(&x, &w);
        assert!(y.iter().zip(r.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn tiled_gradients_match_adjoint() {
        // For a linear map y = W * x: <y, u> = <x, dx> = <w, dw> with upstream u.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x0 = crate::init::normal(&[1, 16, 36, 64], 1.0, &mut rng);
        let w0 = crate::init::normal(&[2, 16, 3, 3], 1.0, &mut rng);
        let u = crate::init::normal(&[1, 2, 36, 64], 1.0, &mut rng);
        let graph = Graph::train();
        let x = graph.leaf(x0.clone());
        let w = graph.leaf(w0.clone());
        let loss = x.conv2d(&w, None).mul(&graph.constant(u.clone())).sum();
        let grads = graph.backward(&loss);
        let dot = |a: &Tensor, b: &Tensor| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>();
        let yu = dot(&naive(&x0, &w0), &u);
        assert!((dot(grads.get(&x).unwrap(), &x0) - yu).abs() < 1e-7 * yu.abs().max(1.0));
        assert!((dot(grads.get(&w).unwrap(), &w0) - yu).abs() < 1e-7 * yu.abs().max(1.0));
    }
}
