use ndarray::IxDyn;

use crate::{par, Tensor, Var};

fn planes(shape: &[usize], op: &str) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 4, "{op}: expected (batch, channels, height, width), got {shape:?}");
    (shape[0] * shape[1], shape[2], shape[3])
}

impl<'g> Var<'g> {
    /// 2×2 max pooling with stride 2. Height and width must be even.
    pub fn max_pool2(&self) -> Var<'g> {
        let s = self.shape().to_vec();
        let (np, h, w) = planes(&s, "max_pool2");
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2: odd spatial size {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value().as_standard_layout();
        let xd = x.as_slice().expect("standard layout");
        let results = par::map_range(np, |p| {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let mut vals = Vec::with_capacity(oh * ow);
            let mut idx = Vec::with_capacity(oh * ow);
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = (2 * y) * w + 2 * xx;
                    for cand in [(2 * y) * w + 2 * xx + 1, (2 * y + 1) * w + 2 * xx, (2 * y + 1) * w + 2 * xx + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    vals.push(src[best]);
                    idx.push(best as u32);
                }
            }
            (vals, idx)
        });
        let mut vals = Vec::with_capacity(np * oh * ow);
        let mut arg = Vec::with_capacity(np * oh * ow);
        for (v, i) in results {
            vals.extend(v);
            arg.extend(i);
        }
        let out = Tensor::from_shape_vec(IxDyn(&[s[0], s[1], oh, ow]), vals).expect("pool out");
        self.graph().record(out, &[self], move |g, _| {
            let g = g.as_standard_layout();
            let gd = g.as_slice().expect("standard layout");
            let mut gx = vec![0.0; np * h * w];
            par::for_each_chunk_mut(&mut gx, h * w, |p, dst| {
                for o in 0..oh * ow {
                    dst[arg[p * oh * ow + o] as usize] += gd[p * oh * ow + o];
                }
            });
            vec![Some(Tensor::from_shape_vec(IxDyn(&s), gx).expect("pool grad"))]
        })
    }

    /// Non-overlapping `k`×`k` average pooling. Spatial size must divide by `k`.
    pub fn avg_pool(&self, k: usize) -> Var<'g> {
        let s = self.shape().to_vec();
        let (np, h, w) = planes(&s, "avg_pool");
        assert!(k >= 1 && h % k == 0 && w % k == 0, "avg_pool: {h}x{w} not divisible by {k}");
        if k == 1 {
            return self.clone();
        }
        let (oh, ow) = (h / k, w / k);
        let norm = 1.0 / (k * k) as f64;
        let x = self.value().as_standard_layout();
        let xd = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; np * oh * ow];
        par::for_each_chunk_mut(&mut out, oh * ow, |p, dst| {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    dst[(y / k) * ow + xx / k] += src[y * w + xx] * norm;
                }
            }
        });
        let out = Tensor::from_shape_vec(IxDyn(&[s[0], s[1], oh, ow]), out).expect("avg out");
        self.graph().record(out, &[self], move |g, _| {
            let g = g.as_standard_layout();
            let gd = g.as_slice().expect("standard layout");
            let mut gx = vec![0.0; np * h * w];
            par::for_each_chunk_mut(&mut gx, h * w, |p, dst| {
                let src = &gd[p * oh * ow..(p + 1) * oh * ow];
                for y in 0..h {
                    for xx in 0..w {
                        dst[y * w + xx] = src[(y / k) * ow + xx / k] * norm;
                    }
                }
            });
            vec![Some(Tensor::from_shape_vec(IxDyn(&s), gx).expect("avg grad"))]
        })
    }
}
