//! Bilinear resampling.
//!
//! Coordinates follow the half-pixel (align-corners = false) mapping:
//! a target index `t` samples source position `(t + 0.5) * src / dst - 0.5`,
//! clamped below at 0. The two taps along each axis are `floor(pos)` and the
//! next index, clamped to the last row/column. Each output value is the
//! four-tap weighted sum `(1-a)(1-b) p1 + a(1-b) p2 + (1-a) b p3 + a b p4`
//! where `a` and `b` are the horizontal and vertical fractional offsets.

use ndarray::IxDyn;

use crate::{par, Tensor, Var};

/// Precomputed taps along one axis.
#[derive(Debug, Clone)]
pub struct ResizeAxis {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl ResizeAxis {
    pub fn new(src: usize, dst: usize) -> Self {
        assert!(src >= 1 && dst >= 1, "resize: empty axis ({src} -> {dst})");
        let scale = src as f64 / dst as f64;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for t in 0..dst {
            let pos = ((t as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(if i1 == i0 { 0.0 } else { pos - i0 as f64 });
        }
        Self { lo, hi, frac }
    }
}

fn resize_plane_with(src: &[f64], w: usize, rows: &ResizeAxis, cols: &ResizeAxis, dst: &mut [f64]) {
    let ow = cols.lo.len();
    for (y, ((&y0, &y1), &b)) in rows.lo.iter().zip(&rows.hi).zip(&rows.frac).enumerate() {
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        let out = &mut dst[y * ow..(y + 1) * ow];
        for (x, o) in out.iter_mut().enumerate() {
            let (x0, x1, a) = (cols.lo[x], cols.hi[x], cols.frac[x]);
            *o = (1.0 - a) * (1.0 - b) * r0[x0] + a * (1.0 - b) * r0[x1] + (1.0 - a) * b * r1[x0] + a * b * r1[x1];
        }
    }
}

fn resize_plane_backward(g: &[f64], w: usize, rows: &ResizeAxis, cols: &ResizeAxis, dst: &mut [f64]) {
    let ow = cols.lo.len();
    for (y, ((&y0, &y1), &b)) in rows.lo.iter().zip(&rows.hi).zip(&rows.frac).enumerate() {
        let gr = &g[y * ow..(y + 1) * ow];
        for (x, &gv) in gr.iter().enumerate() {
            let (x0, x1, a) = (cols.lo[x], cols.hi[x], cols.frac[x]);
            dst[y0 * w + x0] += (1.0 - a) * (1.0 - b) * gv;
            dst[y0 * w + x1] += a * (1.0 - b) * gv;
            dst[y1 * w + x0] += (1.0 - a) * b * gv;
            dst[y1 * w + x1] += a * b * gv;
        }
    }
}

/// Resizes one row-major `h`×`w` plane to `oh`×`ow`.
///
/// Same-size requests return an exact copy.
pub fn resize_bilinear_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w, "resize: plane length");
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let rows = ResizeAxis::new(h, oh);
    let cols = ResizeAxis::new(w, ow);
    let mut out = vec![0.0; oh * ow];
    resize_plane_with(src, w, &rows, &cols, &mut out);
    out
}

impl<'g> Var<'g> {
    /// Bilinear resize of the two trailing axes of a `(batch, channels, h, w)` tensor.
    pub fn resize_bilinear(&self, oh: usize, ow: usize) -> Var<'g> {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "resize_bilinear: expected rank 4, got {s:?}");
        assert!(oh >= 1 && ow >= 1, "resize_bilinear: empty target {oh}x{ow}");
        let (h, w) = (s[2], s[3]);
        if (h, w) == (oh, ow) {
            return self.clone();
        }
        let np = s[0] * s[1];
        let rows = ResizeAxis::new(h, oh);
        let cols = ResizeAxis::new(w, ow);
        let x = self.value().as_standard_layout();
        let xd = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; np * oh * ow];
        par::for_each_chunk_mut(&mut out, oh * ow, |p, dst| {
            resize_plane_with(&xd[p * h * w..(p + 1) * h * w], w, &rows, &cols, dst);
        });
        let out = Tensor::from_shape_vec(IxDyn(&[s[0], s[1], oh, ow]), out).expect("resize out");
        self.graph().record(out, &[self], move |g, _| {
            let g = g.as_standard_layout();
            let gd = g.as_slice().expect("standard layout");
            let mut gx = vec![0.0; np * h * w];
            par::for_each_chunk_mut(&mut gx, h * w, |p, dst| {
                resize_plane_backward(&gd[p * oh * ow..(p + 1) * oh * ow], w, &rows, &cols, dst);
            });
            vec![Some(Tensor::from_shape_vec(IxDyn(&s), gx).expect("resize grad"))]
        })
    }
}
