use std::sync::Arc;

use ndarray::IxDyn;

use super::kernels::standard;
use crate::{Mode, ParamId, ParamStore, Tensor, Var};

/// Running-statistics handles for [`Var::batch_norm`].
#[derive(Debug, Clone, Copy)]
pub struct BatchNormStats {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl<'g> Var<'g> {
    /// Batch normalization over `(batch, h, w)` per channel of a rank-4 input.
    ///
    /// In [`Mode::Train`] the batch statistics are used and the running
    /// statistics update is queued on the graph; in [`Mode::Eval`] the stored
    /// running statistics are used.
    pub fn batch_norm(&self, gamma: &Var<'g>, beta: &Var<'g>, store: &ParamStore, stats: BatchNormStats) -> Var<'g> {
        let s = self.shape().to_vec();
        assert_eq!(s.len(), 4, "batch_norm: expected rank 4, got {s:?}");
        let (nb, c, hw) = (s[0], s[1], s[2] * s[3]);
        assert_eq!(gamma.shape(), [c], "batch_norm: gamma shape");
        assert_eq!(beta.shape(), [c], "batch_norm: beta shape");
        let n = nb * hw;
        let xd = standard(self.value());
        let train = self.graph().mode() == Mode::Train;

        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut sum = 0.0;
                for b in 0..nb {
                    sum += xd[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
                }
                let m = sum / n as f64;
                let mut sq = 0.0;
                for b in 0..nb {
                    sq += xd[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = sq / n as f64;
            }
            let rm = store.get(stats.running_mean);
            let rv = store.get(stats.running_var);
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            let mom = stats.momentum;
            let new_mean = Tensor::from_shape_fn(IxDyn(&[c]), |i| (1.0 - mom) * rm[i[0]] + mom * mean[i[0]]);
            let new_var = Tensor::from_shape_fn(IxDyn(&[c]), |i| (1.0 - mom) * rv[i[0]] + mom * var[i[0]] * unbias);
            self.graph().push_buffer_update(stats.running_mean, new_mean);
            self.graph().push_buffer_update(stats.running_var, new_var);
            (mean, var)
        } else {
            let rm = store.get(stats.running_mean);
            let rv = store.get(stats.running_var);
            (rm.iter().cloned().collect(), rv.iter().cloned().collect())
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let gd = gamma.value();
        let bd = beta.value();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..nb {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                let (m, is, gm, bt) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
                for i in off..off + hw {
                    let xh = (xd[i] - m) * is;
                    xhat[i] = xh;
                    out[i] = gm * xh + bt;
                }
            }
        }
        drop(xd);
        let out = Tensor::from_shape_vec(IxDyn(&s), out).expect("bn out");
        let gamma_v = gamma.shared();
        self.graph().record(out, &[self, gamma, beta], move |g, needs| {
            let gd = standard(g);
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            let mut mean_g = vec![0.0; c];
            let mut mean_gx = vec![0.0; c];
            for b in 0..nb {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    for i in off..off + hw {
                        dgamma[ch] += gd[i] * xhat[i];
                        dbeta[ch] += gd[i];
                    }
                }
            }
            for ch in 0..c {
                mean_g[ch] = gamma_v[ch] * dbeta[ch] / n as f64;
                mean_gx[ch] = gamma_v[ch] * dgamma[ch] / n as f64;
            }
            let dx = needs[0].then(|| {
                let mut dx = vec![0.0; gd.len()];
                for b in 0..nb {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        let (gm, is) = (gamma_v[ch], inv_std[ch]);
                        for i in off..off + hw {
                            dx[i] = if train {
                                is * (gm * gd[i] - mean_g[ch] - xhat[i] * mean_gx[ch])
                            } else {
                                is * gm * gd[i]
                            };
                        }
                    }
                }
                Tensor::from_shape_vec(IxDyn(&s), dx).expect("bn dx")
            });
            vec![
                dx,
                needs[1].then(|| Tensor::from_shape_vec(IxDyn(&[c]), dgamma.clone()).expect("dgamma")),
                needs[2].then(|| Tensor::from_shape_vec(IxDyn(&[c]), dbeta.clone()).expect("dbeta")),
            ]
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Var<'g>, beta: &Var<'g>, eps: f64) -> Var<'g> {
        let s = self.shape().to_vec();
        let d = *s.last().expect("layer_norm: rank 0 input");
        assert_eq!(gamma.shape(), [d], "layer_norm: gamma shape");
        assert_eq!(beta.shape(), [d], "layer_norm: beta shape");
        let xd = standard(self.value());
        let rows = xd.len() / d.max(1);
        let gm = gamma.value();
        let bt = beta.value();
        let mut xhat = vec![0.0; xd.len()];
        let mut inv = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let m = row.iter().sum::<f64>() / d as f64;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d as f64;
            let is = 1.0 / (v + eps).sqrt();
            inv[r] = is;
            for j in 0..d {
                let xh = (row[j] - m) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = gm[j] * xh + bt[j];
            }
        }
        drop(xd);
        let out = Tensor::from_shape_vec(IxDyn(&s), out).expect("ln out");
        let gamma_v: Arc<Tensor> = gamma.shared();
        self.graph().record(out, &[self, gamma, beta], move |g, needs| {
            let gd = standard(g);
            let mut dgamma = vec![0.0; d];
            let mut dbeta = vec![0.0; d];
            let mut dx = needs[0].then(|| vec![0.0; gd.len()]);
            for r in 0..rows {
                let gr = &gd[r * d..(r + 1) * d];
                let xr = &xhat[r * d..(r + 1) * d];
                let mut mg = 0.0;
                let mut mgx = 0.0;
                for j in 0..d {
                    dgamma[j] += gr[j] * xr[j];
                    dbeta[j] += gr[j];
                    let gh = gr[j] * gamma_v[j];
                    mg += gh;
                    mgx += gh * xr[j];
                }
                if let Some(dx) = &mut dx {
                    mg /= d as f64;
                    mgx /= d as f64;
                    for j in 0..d {
                        dx[r * d + j] = inv[r] * (gr[j] * gamma_v[j] - mg - xr[j] * mgx);
                    }
                }
            }
            vec![
                dx.map(|v| Tensor::from_shape_vec(IxDyn(&s), v).expect("ln dx")),
                needs[1].then(|| Tensor::from_shape_vec(IxDyn(&[d]), dgamma.clone()).expect("dgamma")),
                needs[2].then(|| Tensor::from_shape_vec(IxDyn(&[d]), dbeta.clone()).expect("dbeta")),
            ]
        })
    }
}
