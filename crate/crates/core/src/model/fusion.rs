//! Cascaded skip-connection module: LAT blocks on FCB skips, the CAB bridge
//! at the bottleneck, and additive merging of projected SEB features.

use mcfnet_tensor::{ParamStore, Tensor, Var};
use ndarray::IxDyn;
use rand::Rng;

use crate::nn::{from_tokens, merge_heads, split_heads, to_tokens, Conv2d, Ctx, LayerNorm, Linear};
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-6;

/// Parallel spatial/channel attention over a token sequence.
///
/// The spatial branch is kernelized linear attention with `φ(x) = elu(x) + 1`,
/// so its cost is linear in the token count. The channel branch attends
/// between feature channels using token-normalized queries and keys and a
/// learnable per-head temperature. The two branches are summed.
#[derive(Debug, Clone)]
pub struct Scca {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub temperature: mcfnet_tensor::ParamId,
    pub heads: usize,
}

impl Scca {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("{dim} channels cannot be split into {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim),
            k: Linear::new(store, rng, &format!("{name}.k"), dim, dim),
            v: Linear::new(store, rng, &format!("{name}.v"), dim, dim),
            out: Linear::new(store, rng, &format!("{name}.out"), dim, dim),
            temperature: store.trainable(format!("{name}.temperature"), Tensor::ones(IxDyn(&[1, heads, 1, 1]))),
            heads,
        })
    }

    /// `(b, l, c)` tokens to `(b, l, c)` tokens.
    pub fn forward<'g>(&self, ctx: Ctx<'g>, x: &Var<'g>) -> Var<'g> {
        let q = split_heads(&self.q.forward(ctx, x), self.heads);
        let k = split_heads(&self.k.forward(ctx, x), self.heads);
        let v = split_heads(&self.v.forward(ctx, x), self.heads);

        let spatial = linear_attention(&q, &k, &v);

        let qn = l2_normalize_tokens(&q);
        let kn = l2_normalize_tokens(&k);
        let logits = qn.transpose_last().matmul(&kn).mul(&ctx.param(self.temperature));
        let attn = logits.softmax(3);
        let channel = v.matmul(&attn.transpose_last());

        self.out.forward(ctx, &merge_heads(&spatial.add(&channel)))
    }
}

/// `φ(q) (φ(k)ᵀ v) / (φ(q) Σ φ(k))` on `(b, h, l, d)` inputs.
pub fn linear_attention<'g>(q: &Var<'g>, k: &Var<'g>, v: &Var<'g>) -> Var<'g> {
    let fq = q.elu_plus_one();
    let fk = k.elu_plus_one();
    let kv = fk.transpose_last().matmul(v);
    let num = fq.matmul(&kv);
    let ksum = fk.sum_axes(&[2]);
    let den = fq.mul(&ksum).sum_axes(&[3]);
    num.div(&den)
}

fn l2_normalize_tokens<'g>(x: &Var<'g>) -> Var<'g> {
    let norm = x.square().sum_axes(&[2]).add_scalar(NORM_EPS).sqrt();
    x.div(&norm)
}

/// Linear attention transformer block applied to one skip connection.
#[derive(Debug, Clone)]
pub struct Lat {
    pub down: Linear,
    pub norm1: LayerNorm,
    pub attn: Scca,
    pub norm2: LayerNorm,
    pub up: Linear,
}

impl Lat {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, channels: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            down: Linear::new(store, rng, &format!("{name}.down"), channels, channels),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), channels),
            attn: Scca::new(store, rng, &format!("{name}.attn"), channels, heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), channels),
            up: Linear::new(store, rng, &format!("{name}.up"), channels, channels),
        })
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, skip: &Var<'g>) -> Var<'g> {
        let (h, w) = (skip.shape()[2], skip.shape()[3]);
        let t = to_tokens(skip);
        let y = self.down.forward(ctx, &t);
        let y = self.norm1.forward(ctx, &y);
        let y = self.attn.forward(ctx, &y);
        let y = self.norm2.forward(ctx, &y);
        let y = self.up.forward(ctx, &y);
        from_tokens(&t.add(&y), h, w)
    }

    /// Zeroes the up-projection so the block reduces to its residual path.
    pub fn zero_output(&self, store: &mut ParamStore) {
        self.up.zero(store);
    }
}

/// Cross-attention bridge: bottleneck tokens attend to pooled, projected
/// tokens from every encoder level.
#[derive(Debug, Clone)]
pub struct Cab {
    pub norm_q: LayerNorm,
    pub level_proj: Vec<Linear>,
    pub norm_kv: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub channels: usize,
}

impl Cab {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
        skip_channels: &[usize],
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("{channels} channels cannot be split into {heads} heads")));
        }
        Ok(Self {
            norm_q: LayerNorm::new(store, &format!("{name}.norm_q"), channels),
            level_proj: skip_channels
                .iter()
                .enumerate()
                .map(|(l, &c)| Linear::new(store, rng, &format!("{name}.proj{l}"), c, channels))
                .collect(),
            norm_kv: LayerNorm::new(store, &format!("{name}.norm_kv"), channels),
            q: Linear::new(store, rng, &format!("{name}.q"), channels, channels),
            k: Linear::new(store, rng, &format!("{name}.k"), channels, channels),
            v: Linear::new(store, rng, &format!("{name}.v"), channels, channels),
            out: Linear::new(store, rng, &format!("{name}.out"), channels, channels),
            heads,
            channels,
        })
    }

    pub fn forward<'g>(&self, ctx: Ctx<'g>, bottleneck: &Var<'g>, skips: &[Var<'g>]) -> Result<Var<'g>> {
        let bs = bottleneck.shape().to_vec();
        if bs.len() != 4 || bs[1] != self.channels {
            return Err(Error::Shape(format!("CAB bottleneck shape {bs:?}, expected {} channels", self.channels)));
        }
        if skips.len() != self.level_proj.len() {
            return Err(Error::Shape(format!("CAB expects {} skips, got {}", self.level_proj.len(), skips.len())));
        }
        let (b, h, w) = (bs[0], bs[2], bs[3]);
        let mut kv_tokens = Vec::with_capacity(skips.len());
        for (skip, proj) in skips.iter().zip(&self.level_proj) {
            let ss = skip.shape();
            if ss[0] != b {
                return Err(Error::Shape(format!("CAB batch mismatch: bottleneck {b}, skip {}", ss[0])));
            }
            if ss[1] != proj.in_features || ss[2] % h != 0 || ss[3] % w != 0 || ss[2] / h != ss[3] / w {
                return Err(Error::Shape(format!("CAB skip {ss:?} does not pool onto {h}x{w}")));
            }
            let pooled = skip.avg_pool(ss[2] / h);
            kv_tokens.push(proj.forward(ctx, &to_tokens(&pooled)));
        }
        let t = to_tokens(bottleneck);
        let kv = self.norm_kv.forward(ctx, &Var::concat(&kv_tokens, 1));
        let q = split_heads(&self.q.forward(ctx, &self.norm_q.forward(ctx, &t)), self.heads);
        let k = split_heads(&self.k.forward(ctx, &kv), self.heads);
        let v = split_heads(&self.v.forward(ctx, &kv), self.heads);
        let d = (self.channels / self.heads) as f64;
        let attn = q.matmul(&k.transpose_last()).scale(1.0 / d.sqrt()).softmax(3);
        let y = self.out.forward(ctx, &merge_heads(&attn.matmul(&v)));
        Ok(from_tokens(&t.add(&y), h, w))
    }

    pub fn zero_output(&self, store: &mut ParamStore) {
        self.out.zero(store);
    }
}

/// 1×1 projection taking SEB features of one pyramid level onto the
/// matching FCB level.
#[derive(Debug, Clone)]
pub struct SkipFusion {
    pub level: usize,
    pub proj: Conv2d,
}

impl SkipFusion {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, level: usize, seb: usize, fcb: usize) -> Self {
        Self { level, proj: Conv2d::new(store, rng, name, seb, fcb, 1, true) }
    }

    /// Zeroes the projection weight, leaving only its bias.
    pub fn zero_weight(&self, store: &mut ParamStore) {
        store.get_mut(self.proj.weight).fill(0.0);
    }
}

fn project_and_add<'g>(ctx: Ctx<'g>, fusion: &SkipFusion, fcb: &Var<'g>, seb: &Var<'g>) -> Result<Var<'g>> {
    let (fs, ss) = (fcb.shape(), seb.shape());
    if fs.len() != 4 || ss.len() != 4 || fs[0] != ss[0] {
        return Err(Error::Shape(format!("fusion batch mismatch: FCB {fs:?}, SEB {ss:?}")));
    }
    if ss[1] != fusion.proj.in_channels || fs[1] != fusion.proj.out_channels {
        return Err(Error::Shape(format!(
            "level {} fusion maps {} -> {} channels, got SEB {ss:?} and FCB {fs:?}",
            fusion.level, fusion.proj.in_channels, fusion.proj.out_channels
        )));
    }
    let resized = seb.resize_bilinear(fs[2], fs[3]);
    Ok(fcb.add(&fusion.proj.forward(ctx, &resized)))
}

/// `lat_out + proj(resize(seb_skip))`; errors when the pair is from different levels.
pub fn fuse_skip<'g>(ctx: Ctx<'g>, fusion: &SkipFusion, lat_out: &Var<'g>, seb_skip: &Var<'g>) -> Result<Var<'g>> {
    project_and_add(ctx, fusion, lat_out, seb_skip)
}

/// `cab_out + proj(resize(seb_level4))`.
pub fn fuse_bottleneck<'g>(ctx: Ctx<'g>, fusion: &SkipFusion, cab_out: &Var<'g>, seb: &Var<'g>) -> Result<Var<'g>> {
    project_and_add(ctx, fusion, cab_out, seb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcfnet_tensor::{flops, init, Graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn lat_with_zero_output_is_identity_and_preserves_shape() {
        let mut store = ParamStore::new();
        let lat = Lat::new(&mut store, &mut rng(), "lat", 8, 4).unwrap();
        let x = init::normal(&[2, 8, 6, 5], 1.0, &mut rng());
        let g = Graph::inference();
        let y = lat.forward(Ctx::new(&g, &store), &g.constant(x.clone()));
        assert_eq!(y.shape(), x.shape());
        assert!(y.value().iter().any(|v| !v.is_nan()));
        lat.zero_output(&mut store);
        let y = lat.forward(Ctx::new(&g, &store), &g.constant(x.clone())).to_tensor();
        assert!((&y - &x).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn single_token_attention_is_finite() {
        let mut store = ParamStore::new();
        let lat = Lat::new(&mut store, &mut rng(), "lat", 8, 2).unwrap();
        let x = init::normal(&[1, 8, 1, 1], 1.0, &mut rng());
        let g = Graph::inference();
        let y = lat.forward(Ctx::new(&g, &store), &g.constant(x));
        assert!(y.value().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn linear_attention_matches_quadratic_form() {
        let g = Graph::inference();
        let mut r = rng();
        let q = init::normal(&[1, 1, 5, 3], 1.0, &mut r);
        let k = init::normal(&[1, 1, 5, 3], 1.0, &mut r);
        let v = init::normal(&[1, 1, 5, 3], 1.0, &mut r);
        let out = linear_attention(&g.constant(q.clone()), &g.constant(k.clone()), &g.constant(v.clone())).to_tensor();
        let phi = |x: f64| if x > 0.0 { x + 1.0 } else { x.exp() };
        for i in 0..5 {
            let weights: Vec<f64> = (0..5)
                .map(|j| (0..3).map(|d| phi(q[[0, 0, i, d]]) * phi(k[[0, 0, j, d]])).sum())
                .collect();
            let total: f64 = weights.iter().sum();
            for d in 0..3 {
                let expect: f64 = (0..5).map(|j| weights[j] * v[[0, 0, j, d]]).sum::<f64>() / total;
                assert!((out[[0, 0, i, d]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scca_cost_is_linear_in_tokens() {
        let mut store = ParamStore::new();
        let scca = Scca::new(&mut store, &mut rng(), "scca", 16, 4).unwrap();
        let g = Graph::inference();
        let ctx = Ctx::new(&g, &store);
        let cost = |l: usize| {
            let x = g.constant(init::normal(&[1, l, 16], 1.0, &mut rng()));
            flops::measure(|| scca.forward(ctx, &x)).1
        };
        let ratio = cost(2048) as f64 / cost(1024) as f64;
        assert!(ratio < 3.0, "ratio {ratio}");
    }

    #[test]
    fn cab_shapes_identity_and_batch_check() {
        let mut store = ParamStore::new();
        let cab = Cab::new(&mut store, &mut rng(), "cab", 16, &[2, 4, 8, 16], 4).unwrap();
        let mut r = rng();
        let skips: Vec<Tensor> = (0..4).map(|l| init::normal(&[2, 2 << l, 32 >> l, 32 >> l], 1.0, &mut r)).collect();
        let bott = init::normal(&[2, 16, 2, 2], 1.0, &mut r);
        let g = Graph::inference();
        let sv: Vec<Var> = skips.iter().map(|s| g.constant(s.clone())).collect();
        let y = cab.forward(Ctx::new(&g, &store), &g.constant(bott.clone()), &sv).unwrap();
        assert_eq!(y.shape(), bott.shape());
        cab.zero_output(&mut store);
        let y = cab.forward(Ctx::new(&g, &store), &g.constant(bott.clone()), &sv).unwrap().to_tensor();
        assert!((&y - &bott).iter().all(|d| d.abs() < 1e-12));

        let one = g.constant(init::normal(&[1, 16, 2, 2], 1.0, &mut r));
        assert!(matches!(cab.forward(Ctx::new(&g, &store), &one, &sv), Err(Error::Shape(_))));
    }

    #[test]
    fn fusion_adds_bias_for_zero_seb_and_checks_level() {
        let mut store = ParamStore::new();
        let f0 = SkipFusion::new(&mut store, &mut rng(), "f0", 0, 2, 8);
        let f1 = SkipFusion::new(&mut store, &mut rng(), "f1", 1, 4, 16);
        let g = Graph::inference();
        let ctx = Ctx::new(&g, &store);
        let lat = init::normal(&[2, 8, 6, 6], 1.0, &mut rng());
        let seb = g.constant(Tensor::zeros(IxDyn(&[2, 2, 8, 8])));
        let y = fuse_skip(ctx, &f0, &g.constant(lat.clone()), &seb).unwrap().to_tensor();
        let bias = store.get(f0.proj.bias.unwrap());
        for ((b, c, i, j), v) in y.clone().into_dimensionality::<ndarray::Ix4>().unwrap().indexed_iter() {
            assert!((v - lat[[b, c, i, j]] - bias[c]).abs() < 1e-12);
        }
        assert!(fuse_skip(ctx, &f1, &g.constant(lat), &seb).is_err());
    }
}
