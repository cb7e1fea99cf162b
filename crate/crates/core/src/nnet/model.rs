use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::ops::{
    bn_backward, bn_forward, conv_backward, conv_forward, dense_backward, dense_forward, global_avg_pool,
    global_avg_pool_backward, relu_backward_in_place, relu_in_place, se_backward, se_forward, BnCache, ConvGeom,
    SeCache, SeWeights,
};
use super::{Matrix, ModelConfig, ParamStore, Real, Tensor3};
use crate::error::{invalid, shape, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Running normalization statistics, stored as "{layer}.running_mean" and
/// "{layer}.running_var".
pub type NormStats<T> = ParamStore<T>;

/// Parameter count of one convolution.
pub fn conv_param_count(cin: usize, cout: usize, kernel: usize, groups: usize, bias: bool) -> usize {
    cout * (cin / groups) * kernel + if bias { cout } else { 0 }
}

pub fn dense_param_count(inputs: usize, outputs: usize, bias: bool) -> usize {
    inputs * outputs + if bias { outputs } else { 0 }
}

#[derive(Debug, Clone)]
struct ConvBn {
    name: String,
    geom: ConvGeom,
}

impl ConvBn {
    fn new(name: String, cin: usize, cout: usize, kernel: usize, stride: usize, groups: usize) -> Self {
        Self { name, geom: ConvGeom { cin, cout, kernel, stride, groups } }
    }

    fn weight(&self) -> String {
        format!("{}.conv.weight", self.name)
    }

    fn gamma(&self) -> String {
        format!("{}.bn.gamma", self.name)
    }

    fn beta(&self) -> String {
        format!("{}.bn.beta", self.name)
    }

    fn count(&self) -> usize {
        let g = &self.geom;
        conv_param_count(g.cin, g.cout, g.kernel, g.groups, false) + 2 * g.cout
    }
}

#[derive(Debug, Clone)]
struct BlockPlan {
    prefix: String,
    a: ConvBn,
    b: ConvBn,
    c: ConvBn,
    proj: Option<ConvBn>,
    width: usize,
    se_units: usize,
}

impl BlockPlan {
    fn se_name(&self, part: &str, what: &str) -> String {
        format!("{}.se.{part}.{what}", self.prefix)
    }

    fn count(&self) -> usize {
        self.a.count()
            + self.b.count()
            + self.c.count()
            + self.proj.as_ref().map_or(0, ConvBn::count)
            + dense_param_count(self.width, self.se_units, true)
            + dense_param_count(self.se_units, self.width, true)
    }
}

#[derive(Debug, Clone)]
struct Plan {
    stem: ConvBn,
    blocks: Vec<BlockPlan>,
    features: usize,
    n_classes: usize,
    tau: bool,
}

impl Plan {
    fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let s = &config.stem;
        let stem = ConvBn::new("stem".into(), config.in_channels, s.out_channels, s.kernel, s.stride, 1);
        let mut blocks = Vec::new();
        let mut cin = s.out_channels;
        for (si, st) in config.stages.iter().enumerate() {
            for bi in 0..st.depth {
                let prefix = format!("s{si}.b{bi}");
                let stride = if bi == 0 { st.stride } else { 1 };
                let w = st.width;
                let groups = w / config.group_width;
                let proj = (cin != w || stride != 1).then(|| ConvBn::new(format!("{prefix}.proj"), cin, w, 1, stride, 1));
                blocks.push(BlockPlan {
                    a: ConvBn::new(format!("{prefix}.a"), cin, w, 1, 1, 1),
                    b: ConvBn::new(format!("{prefix}.b"), w, w, st.kernel, stride, groups),
                    c: ConvBn::new(format!("{prefix}.c"), w, w, 1, 1, 1),
                    proj,
                    width: w,
                    se_units: config.se_units(w),
                    prefix,
                });
                cin = w;
            }
        }
        Ok(Self { stem, blocks, features: cin, n_classes: config.n_classes, tau: config.temperature_enabled })
    }

    fn conv_layers(&self) -> impl Iterator<Item = &ConvBn> {
        std::iter::once(&self.stem).chain(self.blocks.iter().flat_map(|b| {
            [Some(&b.a), Some(&b.b), Some(&b.c), b.proj.as_ref()].into_iter().flatten()
        }))
    }
}

/// Closed-form number of learnable scalars.
pub fn count_params(config: &ModelConfig) -> Result<usize> {
    let plan = Plan::new(config)?;
    Ok(plan.stem.count()
        + plan.blocks.iter().map(BlockPlan::count).sum::<usize>()
        + dense_param_count(plan.features, plan.n_classes, true)
        + usize::from(plan.tau))
}

/// Randomly initialized parameters: normal(0, sqrt(2 / fan_in)) for
/// convolutions, uniform(+-1/sqrt(fan_in)) for dense weights, zero biases,
/// unit normalization scales and τ = 0.
pub fn build_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    let plan = Plan::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamStore::new();
    let conv = |ps: &mut ParamStore<T>, l: &ConvBn, rng: &mut ChaCha8Rng| -> Result<()> {
        let g = &l.geom;
        let fan_in = g.cin_g() * g.kernel;
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let w = (0..g.weight_len()).map(|_| T::of(dist.sample(rng))).collect();
        ps.push(l.weight(), vec![g.cout, g.cin_g(), g.kernel], w)?;
        ps.push(l.gamma(), vec![g.cout], vec![T::one(); g.cout])?;
        ps.push(l.beta(), vec![g.cout], vec![T::zero(); g.cout])?;
        Ok(())
    };
    let dense = |ps: &mut ParamStore<T>, w: String, b: String, din: usize, dout: usize, rng: &mut ChaCha8Rng| -> Result<()> {
        let a = 1.0 / (din as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a);
        ps.push(w, vec![dout, din], (0..din * dout).map(|_| T::of(dist.sample(rng))).collect())?;
        ps.push(b, vec![dout], vec![T::zero(); dout])?;
        Ok(())
    };
    conv(&mut ps, &plan.stem, &mut rng)?;
    for blk in &plan.blocks {
        conv(&mut ps, &blk.a, &mut rng)?;
        conv(&mut ps, &blk.b, &mut rng)?;
        dense(&mut ps, blk.se_name("reduce", "weight"), blk.se_name("reduce", "bias"), blk.width, blk.se_units, &mut rng)?;
        dense(&mut ps, blk.se_name("expand", "weight"), blk.se_name("expand", "bias"), blk.se_units, blk.width, &mut rng)?;
        conv(&mut ps, &blk.c, &mut rng)?;
        if let Some(p) = &blk.proj {
            conv(&mut ps, p, &mut rng)?;
        }
    }
    dense(&mut ps, "head.weight".into(), "head.bias".into(), plan.features, plan.n_classes, &mut rng)?;
    if plan.tau {
        ps.push("tau", vec![1], vec![T::zero()])?;
    }
    Ok(ps)
}

/// Running statistics initialized to mean 0, variance 1.
pub fn init_norm_stats<T: Real>(config: &ModelConfig) -> Result<NormStats<T>> {
    let plan = Plan::new(config)?;
    let mut st = ParamStore::new();
    for l in plan.conv_layers() {
        st.push(format!("{}.running_mean", l.name), vec![l.geom.cout], vec![T::zero(); l.geom.cout])?;
        st.push(format!("{}.running_var", l.name), vec![l.geom.cout], vec![T::one(); l.geom.cout])?;
    }
    Ok(st)
}

struct ConvBnCache<T> {
    input: Tensor3<T>,
    bn: BnCache<T>,
}

struct BlockCache<T> {
    input: Tensor3<T>,
    a_out: Tensor3<T>,
    b_out: Tensor3<T>,
    se_out: Tensor3<T>,
    out: Tensor3<T>,
    a: BnCache<T>,
    b: BnCache<T>,
    se: SeCache<T>,
    c: BnCache<T>,
    proj: Option<BnCache<T>>,
}

/// Intermediates retained by [`forward`] for [`backward`].
pub struct Cache<T> {
    mode: Mode,
    config: ModelConfig,
    batch_shape: [usize; 3],
    params_checksum: u64,
    stem: Option<ConvBnCache<T>>,
    stem_out: Tensor3<T>,
    blocks: Vec<BlockCache<T>>,
    last_len: usize,
    features: Matrix<T>,
    pre_temperature: Matrix<T>,
}

impl<T> Cache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }
}

fn conv_bn_forward<T: Real>(
    l: &ConvBn,
    params: &ParamStore<T>,
    stats: &mut NormStats<T>,
    x: &Tensor3<T>,
    mode: Mode,
) -> Result<(Tensor3<T>, BnCache<T>)> {
    let y = conv_forward(x, params.require(&l.weight())?, None, l.geom)?;
    let (gamma, beta) = (params.require(&l.gamma())?, params.require(&l.beta())?);
    let mut rm = stats.require(&format!("{}.running_mean", l.name))?.to_vec();
    let mut rv = stats.require(&format!("{}.running_var", l.name))?.to_vec();
    let out = bn_forward(&y, gamma, beta, &mut rm, &mut rv, mode == Mode::Train)?;
    if mode == Mode::Train {
        stats.require_mut(&format!("{}.running_mean", l.name))?.copy_from_slice(&rm);
        stats.require_mut(&format!("{}.running_var", l.name))?.copy_from_slice(&rv);
    }
    Ok(out)
}

fn add_in_place<T: Real>(a: &mut Tensor3<T>, b: &Tensor3<T>) {
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
}

fn se_weights<'a, T: Real>(blk: &BlockPlan, p: &'a ParamStore<T>) -> Result<SeWeights<'a, T>> {
    Ok(SeWeights {
        reduce_w: p.require(&blk.se_name("reduce", "weight"))?,
        reduce_b: p.require(&blk.se_name("reduce", "bias"))?,
        expand_w: p.require(&blk.se_name("expand", "weight"))?,
        expand_b: p.require(&blk.se_name("expand", "bias"))?,
    })
}

fn block_forward<T: Real>(
    blk: &BlockPlan,
    params: &ParamStore<T>,
    stats: &mut NormStats<T>,
    x: Tensor3<T>,
    mode: Mode,
) -> Result<(Tensor3<T>, BlockCache<T>)> {
    let (mut a_out, a) = conv_bn_forward(&blk.a, params, stats, &x, mode)?;
    relu_in_place(&mut a_out);
    let (mut b_out, b) = conv_bn_forward(&blk.b, params, stats, &a_out, mode)?;
    relu_in_place(&mut b_out);
    let (se_out, se) = se_forward(&b_out, &se_weights(blk, params)?)?;
    let (mut out, c) = conv_bn_forward(&blk.c, params, stats, &se_out, mode)?;
    let proj = match &blk.proj {
        Some(p) => {
            let (sc, cache) = conv_bn_forward(p, params, stats, &x, mode)?;
            add_in_place(&mut out, &sc);
            Some(cache)
        }
        None => {
            add_in_place(&mut out, &x);
            None
        }
    };
    relu_in_place(&mut out);
    let cache = BlockCache { input: x, a_out, b_out, se_out, out: out.clone(), a, b, se, c, proj };
    Ok((out, cache))
}

fn head<T: Real>(params: &ParamStore<T>, plan: &Plan, features: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let z = dense_forward(features, params.require("head.weight")?, params.require("head.bias")?, plan.n_classes)?;
    let logits = if plan.tau { z.scale(params.require("tau")?[0].exp()) } else { z.clone() };
    Ok((logits, z))
}

/// Logits from pooled features (the dense head and temperature only).
pub fn head_logits<T: Real>(params: &ParamStore<T>, config: &ModelConfig, features: &Matrix<T>) -> Result<Matrix<T>> {
    let plan = Plan::new(config)?;
    if features.cols != plan.features {
        return Err(shape(format!("features have {} columns, head expects {}", features.cols, plan.features)));
    }
    head(params, &plan, features).map(|(l, _)| l)
}

/// Gradient of the head parameters (weight, bias, τ) given pooled
/// features; every other entry of the returned store is zero.
pub fn head_backward<T: Real>(
    params: &ParamStore<T>,
    config: &ModelConfig,
    features: &Matrix<T>,
    dlogits: &Matrix<T>,
) -> Result<ParamStore<T>> {
    let plan = Plan::new(config)?;
    let (_, z) = head(params, &plan, features)?;
    let mut grads = params.zeros_like();
    head_grads(params, &plan, features, &z, dlogits, &mut grads)?;
    Ok(grads)
}

fn head_grads<T: Real>(
    params: &ParamStore<T>,
    plan: &Plan,
    features: &Matrix<T>,
    z: &Matrix<T>,
    dlogits: &Matrix<T>,
    grads: &mut ParamStore<T>,
) -> Result<Matrix<T>> {
    if dlogits.rows != z.rows || dlogits.cols != z.cols {
        return Err(shape(format!("dLogits {}x{} vs logits {}x{}", dlogits.rows, dlogits.cols, z.rows, z.cols)));
    }
    let dz = if plan.tau {
        let e = params.require("tau")?[0].exp();
        let mut dtau = T::zero();
        for (d, &zv) in dlogits.data.iter().zip(&z.data) {
            dtau += *d * zv;
        }
        grads.require_mut("tau")?[0] = dtau * e;
        dlogits.scale(e)
    } else {
        dlogits.clone()
    };
    let (dfeat, dw, db) = dense_backward(features, params.require("head.weight")?, &dz);
    grads.require_mut("head.weight")?.copy_from_slice(&dw);
    grads.require_mut("head.bias")?.copy_from_slice(&db);
    Ok(dfeat)
}

fn check_batch<T: Real>(config: &ModelConfig, batch: &Tensor3<T>) -> Result<()> {
    if batch.channels() != config.in_channels {
        return Err(shape(format!("batch has {} channels, model expects {}", batch.channels(), config.in_channels)));
    }
    if batch.batch() == 0 || batch.length() == 0 {
        return Err(shape("empty batch"));
    }
    Ok(())
}

/// Full forward pass. Train mode normalizes with batch statistics and
/// updates `stats`; eval mode reads `stats` and leaves it untouched.
pub fn forward<T: Real>(
    params: &ParamStore<T>,
    stats: &mut NormStats<T>,
    config: &ModelConfig,
    batch: &Tensor3<T>,
    mode: Mode,
) -> Result<(Matrix<T>, Cache<T>)> {
    let plan = Plan::new(config)?;
    check_batch(config, batch)?;
    let (mut x, stem_cache) = conv_bn_forward(&plan.stem, params, stats, batch, mode)?;
    relu_in_place(&mut x);
    let stem_out = x.clone();
    let mut blocks = Vec::with_capacity(plan.blocks.len());
    for blk in &plan.blocks {
        let (y, c) = block_forward(blk, params, stats, x, mode)?;
        blocks.push(c);
        x = y;
    }
    let last_len = x.length();
    let features = global_avg_pool(&x);
    let (logits, z) = head(params, &plan, &features)?;
    if !logits.data.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite logits".into()));
    }
    let cache = Cache {
        mode,
        config: config.clone(),
        batch_shape: batch.shape(),
        params_checksum: params.checksum(),
        stem: Some(ConvBnCache { input: batch.clone(), bn: stem_cache }),
        stem_out,
        blocks,
        last_len,
        features,
        pre_temperature: z,
    };
    Ok((logits, cache))
}

/// Inference without keeping intermediates beyond the current layer.
pub fn predict<T: Real>(params: &ParamStore<T>, stats: &NormStats<T>, config: &ModelConfig, batch: &Tensor3<T>) -> Result<Matrix<T>> {
    let features = forward_features(params, stats, config, batch)?;
    head_logits(params, config, &features)
}

/// Pooled backbone features in eval mode.
pub fn forward_features<T: Real>(
    params: &ParamStore<T>,
    stats: &NormStats<T>,
    config: &ModelConfig,
    batch: &Tensor3<T>,
) -> Result<Matrix<T>> {
    let plan = Plan::new(config)?;
    check_batch(config, batch)?;
    // eval mode never writes to the statistics; the clone keeps the
    // signature immutable
    let mut st = stats.clone();
    let (mut x, _) = conv_bn_forward(&plan.stem, params, &mut st, batch, Mode::Eval)?;
    relu_in_place(&mut x);
    for blk in &plan.blocks {
        x = block_forward(blk, params, &mut st, x, Mode::Eval)?.0;
    }
    Ok(global_avg_pool(&x))
}

fn conv_bn_backward<T: Real>(
    l: &ConvBn,
    params: &ParamStore<T>,
    input: &Tensor3<T>,
    bn: &BnCache<T>,
    dy: &Tensor3<T>,
    grads: &mut ParamStore<T>,
    need_dx: bool,
) -> Result<Tensor3<T>> {
    let (dconv, dgamma, dbeta) = bn_backward(dy, bn, params.require(&l.gamma())?);
    grads.require_mut(&l.gamma())?.copy_from_slice(&dgamma);
    grads.require_mut(&l.beta())?.copy_from_slice(&dbeta);
    let g = conv_backward(input, params.require(&l.weight())?, &dconv, l.geom, need_dx)?;
    grads.require_mut(&l.weight())?.copy_from_slice(&g.dw);
    Ok(g.dx)
}

fn block_backward<T: Real>(
    blk: &BlockPlan,
    params: &ParamStore<T>,
    c: &BlockCache<T>,
    mut dout: Tensor3<T>,
    grads: &mut ParamStore<T>,
) -> Result<Tensor3<T>> {
    relu_backward_in_place(&mut dout, &c.out);
    let dse = conv_bn_backward(&blk.c, params, &c.se_out, &c.c, &dout, grads, true)?;
    let sw = se_weights(blk, params)?;
    let sg = se_backward(&c.b_out, &sw, &c.se, &dse);
    grads.require_mut(&blk.se_name("reduce", "weight"))?.copy_from_slice(&sg.reduce_w);
    grads.require_mut(&blk.se_name("reduce", "bias"))?.copy_from_slice(&sg.reduce_b);
    grads.require_mut(&blk.se_name("expand", "weight"))?.copy_from_slice(&sg.expand_w);
    grads.require_mut(&blk.se_name("expand", "bias"))?.copy_from_slice(&sg.expand_b);
    let mut db = sg.dx;
    relu_backward_in_place(&mut db, &c.b_out);
    let mut da = conv_bn_backward(&blk.b, params, &c.a_out, &c.b, &db, grads, true)?;
    relu_backward_in_place(&mut da, &c.a_out);
    let mut dx = conv_bn_backward(&blk.a, params, &c.input, &c.a, &da, grads, true)?;
    match (&blk.proj, &c.proj) {
        (Some(p), Some(pc)) => {
            let dsc = conv_bn_backward(p, params, &c.input, pc, &dout, grads, true)?;
            add_in_place(&mut dx, &dsc);
        }
        (None, None) => add_in_place(&mut dx, &dout),
        _ => return Err(invalid("cache does not match block layout")),
    }
    Ok(dx)
}

/// Reverse-mode gradient of sum(dLogits * logits) with respect to every
/// parameter. The cache must come from a train-mode [`forward`] with the
/// same configuration and unchanged parameters.
pub fn backward<T: Real>(
    params: &ParamStore<T>,
    config: &ModelConfig,
    cache: &Cache<T>,
    dlogits: &Matrix<T>,
) -> Result<ParamStore<T>> {
    if cache.mode != Mode::Train {
        return Err(invalid("backward needs a cache from a train-mode forward pass"));
    }
    if &cache.config != config {
        return Err(invalid("cache was produced under a different model configuration"));
    }
    if cache.params_checksum != params.checksum() {
        return Err(invalid("stale cache: parameters changed since the forward pass"));
    }
    if dlogits.rows != cache.batch_shape[0] || dlogits.cols != config.n_classes {
        return Err(shape(format!(
            "dLogits {}x{} for batch {} and {} classes",
            dlogits.rows, dlogits.cols, cache.batch_shape[0], config.n_classes
        )));
    }
    let plan = Plan::new(config)?;
    let mut grads = params.zeros_like();
    let dfeat = head_grads(params, &plan, &cache.features, &cache.pre_temperature, dlogits, &mut grads)?;
    let mut dx = global_avg_pool_backward(&dfeat, cache.last_len);
    for (blk, bc) in plan.blocks.iter().zip(&cache.blocks).rev() {
        dx = block_backward(blk, params, bc, dx, &mut grads)?;
    }
    relu_backward_in_place(&mut dx, &cache.stem_out);
    let stem = cache.stem.as_ref().ok_or_else(|| invalid("cache has no stem"))?;
    conv_bn_backward(&plan.stem, params, &stem.input, &stem.bn, &dx, &mut grads, false)?;
    if !grads.all_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok(grads)
}
