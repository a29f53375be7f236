//! Residual shrinkage network: RSBU-CW blocks, the ResNet-34 style trunk,
//! attentive pooling heads and the 512-dim embedding model.
//!
//! An RSBU-CW block is a residual unit whose main-path output is soft
//! thresholded before the shortcut add. Each channel's threshold is
//! learned per sample: the absolute feature map is globally average
//! pooled, squashed through a two-layer bottleneck ending in a sigmoid,
//! and multiplied back onto the pooled magnitude, so
//! `tau_c = sigmoid(...)_c * mean(|feature_c|)` is always non-negative
//! and never exceeds the channel magnitude.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::LogMelFeature;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, VarId};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const EMBED_DIM: usize = 512;
pub const ATTENTION_DIM: usize = 128;
/// Per-stage strides of the four RSBU stages.
pub const STAGE_STRIDES: [usize; 4] = [1, 2, 2, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-pass bookkeeping: which store parameter landed on which graph
/// leaf, and the running-statistics updates produced by batch norm in
/// training mode (applied by the trainer after the step).
pub struct ForwardCtx<F: Scalar> {
    pub mode: Mode,
    pub bindings: Vec<(ParamId, VarId)>,
    pub stat_updates: Vec<(ParamId, Vec<F>)>,
}

impl<F: Scalar> ForwardCtx<F> {
    pub fn new(mode: Mode) -> Self {
        Self { mode, bindings: Vec::new(), stat_updates: Vec::new() }
    }

    /// Insert a store parameter as a graph leaf and record the binding.
    pub fn bind(&mut self, g: &mut Graph<F>, store: &ParamStore<F>, id: ParamId) -> Result<VarId> {
        let e = store.entry(id);
        let var = g.leaf(&e.shape, e.data.clone())?;
        self.bindings.push((id, var));
        Ok(var)
    }
}

fn draw_normal<F: Scalar>(n: usize, std: f64, rng: &mut impl Rng) -> Vec<F> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            F::from_f64(z * std)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub kernel: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    fn register<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        out_c: usize,
        in_c: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = in_c * ksize * ksize;
        let std = (2.0 / fan_in as f64).sqrt();
        let kernel = store.add_param(
            &format!("{name}.kernel"),
            vec![out_c, in_c, ksize, ksize],
            draw_normal(out_c * fan_in, std, rng),
        )?;
        Ok(Self { kernel, stride, pad })
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        x: VarId,
        ctx: &mut ForwardCtx<F>,
    ) -> Result<VarId> {
        let k = ctx.bind(g, store, self.kernel)?;
        g.conv2d(x, k, self.stride, self.pad)
    }

    fn num_params<F: Scalar>(&self, store: &ParamStore<F>) -> usize {
        store.entry(self.kernel).data.len()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormLayer {
    fn register<F: Scalar>(store: &mut ParamStore<F>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_param(&format!("{name}.gamma"), vec![c], vec![F::one(); c])?,
            beta: store.add_param(&format!("{name}.beta"), vec![c], vec![F::zero(); c])?,
            running_mean: store.add_buffer(
                &format!("{name}.running_mean"),
                vec![c],
                vec![F::zero(); c],
            )?,
            running_var: store.add_buffer(
                &format!("{name}.running_var"),
                vec![c],
                vec![F::one(); c],
            )?,
        })
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        x: VarId,
        ctx: &mut ForwardCtx<F>,
    ) -> Result<VarId> {
        let gamma = ctx.bind(g, store, self.gamma)?;
        let beta = ctx.bind(g, store, self.beta)?;
        let eps = F::from_f64(BN_EPS);
        match ctx.mode {
            Mode::Train => {
                let (y, mean, var_unbiased) = g.batch_norm_train(x, gamma, beta, eps)?;
                let mom = F::from_f64(BN_MOMENTUM);
                let keep = F::one() - mom;
                let new_mean: Vec<F> = store
                    .entry(self.running_mean)
                    .data
                    .iter()
                    .zip(mean.iter())
                    .map(|(&old, &new)| keep * old + mom * new)
                    .collect();
                let new_var: Vec<F> = store
                    .entry(self.running_var)
                    .data
                    .iter()
                    .zip(var_unbiased.iter())
                    .map(|(&old, &new)| keep * old + mom * new)
                    .collect();
                ctx.stat_updates.push((self.running_mean, new_mean));
                ctx.stat_updates.push((self.running_var, new_var));
                Ok(y)
            }
            Mode::Eval => g.batch_norm_eval(
                x,
                gamma,
                beta,
                &store.entry(self.running_mean).data,
                &store.entry(self.running_var).data,
                eps,
            ),
        }
    }

    fn num_params<F: Scalar>(&self, store: &ParamStore<F>) -> usize {
        store.entry(self.gamma).data.len() + store.entry(self.beta).data.len()
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearLayer {
    fn register<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        out_d: usize,
        in_d: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add_param(
                &format!("{name}.weight"),
                vec![out_d, in_d],
                draw_normal(out_d * in_d, std, rng),
            )?,
            bias: store.add_param(&format!("{name}.bias"), vec![out_d], vec![F::zero(); out_d])?,
        })
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        x: VarId,
        ctx: &mut ForwardCtx<F>,
    ) -> Result<VarId> {
        let w = ctx.bind(g, store, self.weight)?;
        let b = ctx.bind(g, store, self.bias)?;
        g.linear(x, w, b)
    }

    fn num_params<F: Scalar>(&self, store: &ParamStore<F>) -> usize {
        store.entry(self.weight).data.len() + store.entry(self.bias).data.len()
    }
}

/// Per-channel thresholds: `tau = sigmoid(fc2(relu(bn(fc1(gap(|x|))))))
/// * gap(|x|)`. The sigmoid keeps every threshold inside `[0, gap)`.
pub fn channel_thresholds<F: Scalar>(
    store: &ParamStore<F>,
    g: &mut Graph<F>,
    feature: VarId,
    fc1: &LinearLayer,
    fc_bn: &BatchNormLayer,
    fc2: &LinearLayer,
    ctx: &mut ForwardCtx<F>,
) -> Result<VarId> {
    let absed = g.abs(feature);
    let gap = g.global_avg_pool(absed)?; // n x c
    let h = fc1.forward(store, g, gap, ctx)?;
    let h = fc_bn.forward(store, g, h, ctx)?;
    let h = g.relu(h);
    let h = fc2.forward(store, g, h, ctx)?;
    let y = g.sigmoid(h);
    g.mul(y, gap)
}

/// Residual shrinkage building unit with channel-wise thresholds.
#[derive(Debug, Clone)]
pub struct RsbuCwBlock {
    pub conv1: Conv2dLayer,
    pub bn1: BatchNormLayer,
    pub conv2: Conv2dLayer,
    pub bn2: BatchNormLayer,
    pub fc1: LinearLayer,
    pub fc_bn: BatchNormLayer,
    pub fc2: LinearLayer,
    pub shortcut: Option<(Conv2dLayer, BatchNormLayer)>,
}

impl RsbuCwBlock {
    pub fn register<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv1 = Conv2dLayer::register(store, &format!("{name}.conv1"), out_c, in_c, 3, stride, 1, rng)?;
        let bn1 = BatchNormLayer::register(store, &format!("{name}.bn1"), out_c)?;
        let conv2 = Conv2dLayer::register(store, &format!("{name}.conv2"), out_c, out_c, 3, 1, 1, rng)?;
        let bn2 = BatchNormLayer::register(store, &format!("{name}.bn2"), out_c)?;
        // threshold sub-network, bottleneck width = out_c (no reduction)
        let fc1 = LinearLayer::register(store, &format!("{name}.fc1"), out_c, out_c, (2.0 / out_c as f64).sqrt(), rng)?;
        let fc_bn = BatchNormLayer::register(store, &format!("{name}.fc_bn"), out_c)?;
        let fc2 = LinearLayer::register(store, &format!("{name}.fc2"), out_c, out_c, (1.0 / out_c as f64).sqrt(), rng)?;
        let shortcut = if stride != 1 || in_c != out_c {
            let sc_conv =
                Conv2dLayer::register(store, &format!("{name}.shortcut.conv"), out_c, in_c, 1, stride, 0, rng)?;
            let sc_bn = BatchNormLayer::register(store, &format!("{name}.shortcut.bn"), out_c)?;
            Some((sc_conv, sc_bn))
        } else {
            None
        };
        Ok(Self { conv1, bn1, conv2, bn2, fc1, fc_bn, fc2, shortcut })
    }

    /// conv1 -> bn1 -> relu -> conv2 -> bn2 -> soft threshold -> add
    /// shortcut -> relu.
    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        x: VarId,
        ctx: &mut ForwardCtx<F>,
    ) -> Result<VarId> {
        let main = self.conv1.forward(store, g, x, ctx)?;
        let main = self.bn1.forward(store, g, main, ctx)?;
        let main = g.relu(main);
        let main = self.conv2.forward(store, g, main, ctx)?;
        let main = self.bn2.forward(store, g, main, ctx)?;
        let tau = channel_thresholds(store, g, main, &self.fc1, &self.fc_bn, &self.fc2, ctx)?;
        let shrunk = g.soft_threshold(main, tau)?;
        let sc = match &self.shortcut {
            None => x,
            Some((conv, bn)) => {
                let s = conv.forward(store, g, x, ctx)?;
                bn.forward(store, g, s, ctx)?
            }
        };
        let sum = g.add(shrunk, sc)?;
        Ok(g.relu(sum))
    }

    pub fn num_params<F: Scalar>(&self, store: &ParamStore<F>) -> usize {
        let mut n = self.conv1.num_params(store)
            + self.bn1.num_params(store)
            + self.conv2.num_params(store)
            + self.bn2.num_params(store)
            + self.fc1.num_params(store)
            + self.fc_bn.num_params(store)
            + self.fc2.num_params(store);
        if let Some((conv, bn)) = &self.shortcut {
            n += conv.num_params(store) + bn.num_params(store);
        }
        n
    }
}

/// Width/depth settings of the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrunkConfig {
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
    pub first_conv_stride: usize,
}

impl TrunkConfig {
    /// Quarter-width ResNet-34.
    pub fn q() -> Self {
        Self { stage_channels: [16, 32, 64, 128], blocks_per_stage: [3, 4, 6, 3], first_conv_stride: 1 }
    }

    /// Half-width ResNet-34.
    pub fn h() -> Self {
        Self { stage_channels: [32, 64, 128, 256], blocks_per_stage: [3, 4, 6, 3], first_conv_stride: 1 }
    }

    /// Desk-scale trunk for smoke tests and demos.
    pub fn tiny() -> Self {
        Self { stage_channels: [8, 8, 16, 16], blocks_per_stage: [1, 1, 1, 1], first_conv_stride: 1 }
    }

    pub fn name(&self) -> &'static str {
        if *self == Self::q() {
            "Q"
        } else if *self == Self::h() {
            "H"
        } else if *self == Self::tiny() {
            "tiny"
        } else {
            "custom"
        }
    }
}

/// Stem conv plus the four RSBU stages, ending in per-time-step frame
/// vectors of width `stage_channels[3] * n_mels / 8`.
#[derive(Debug, Clone)]
pub struct Trunk {
    pub config: TrunkConfig,
    pub n_mels: usize,
    stem_conv: Conv2dLayer,
    stem_bn: BatchNormLayer,
    stages: Vec<Vec<RsbuCwBlock>>,
}

impl Trunk {
    pub fn register<F: Scalar>(
        store: &mut ParamStore<F>,
        config: TrunkConfig,
        n_mels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_mels % 8 != 0 {
            return Err(Error::Config(format!("n_mels must be divisible by 8, got {n_mels}")));
        }
        let stem_conv = Conv2dLayer::register(
            store,
            "trunk.stem.conv",
            config.stage_channels[0],
            1,
            3,
            config.first_conv_stride,
            1,
            rng,
        )?;
        let stem_bn = BatchNormLayer::register(store, "trunk.stem.bn", config.stage_channels[0])?;
        let mut stages = Vec::with_capacity(4);
        let mut in_c = config.stage_channels[0];
        for (si, (&out_c, &blocks)) in config
            .stage_channels
            .iter()
            .zip(config.blocks_per_stage.iter())
            .enumerate()
        {
            let mut stage = Vec::with_capacity(blocks);
            for bi in 0..blocks {
                let stride = if bi == 0 { STAGE_STRIDES[si] } else { 1 };
                stage.push(RsbuCwBlock::register(
                    store,
                    &format!("trunk.stage{}.block{bi}", si + 1),
                    in_c,
                    out_c,
                    stride,
                    rng,
                )?);
                in_c = out_c;
            }
            stages.push(stage);
        }
        Ok(Self { config, n_mels, stem_conv, stem_bn, stages })
    }

    /// Frame vector width after flattening (channels x mel).
    pub fn frame_dim(&self) -> usize {
        self.config.stage_channels[3] * (self.n_mels / 8)
    }

    /// Forward returning the frame matrix plus the stem and per-stage
    /// outputs (for shape tracing).
    pub fn forward_traced<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        x: VarId,
        ctx: &mut ForwardCtx<F>,
    ) -> Result<(VarId, Vec<VarId>)> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[3] != self.n_mels {
            return Err(Error::Shape(format!(
                "trunk expects n x 1 x L x {} input, got {shape:?}",
                self.n_mels
            )));
        }
        if shape[2] < 8 {
            return Err(Error::Argument(format!(
                "trunk needs at least 8 time frames, got {}",
                shape[2]
            )));
        }
        let mut trace = Vec::with_capacity(5);
        let mut h = self.stem_conv.forward(store, g, x, ctx)?;
        h = self.stem_bn.forward(store, g, h, ctx)?;
        h = g.relu(h);
        trace.push(h);
        for stage in &self.stages {
            for block in stage {
                h = block.forward(store, g, h, ctx)?;
            }
            trace.push(h);
        }
        let frames = g.flatten_frames(h)?;
        Ok((frames, trace))
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        x: VarId,
        ctx: &mut ForwardCtx<F>,
    ) -> Result<VarId> {
        Ok(self.forward_traced(store, g, x, ctx)?.0)
    }

    pub fn num_params<F: Scalar>(&self, store: &ParamStore<F>) -> usize {
        let mut n = self.stem_conv.num_params(store) + self.stem_bn.num_params(store);
        for stage in &self.stages {
            for block in stage {
                n += block.num_params(store);
            }
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingMode {
    /// Self-attentive pooling: attention-weighted mean, `frame_dim` wide.
    Sap,
    /// Attentive statistics pooling: weighted mean and standard
    /// deviation concatenated, `2 * frame_dim` wide.
    Asp,
}

impl PoolingMode {
    pub fn name(self) -> &'static str {
        match self {
            PoolingMode::Sap => "sap",
            PoolingMode::Asp => "asp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sap" => Ok(PoolingMode::Sap),
            "asp" => Ok(PoolingMode::Asp),
            other => Err(Error::Config(format!("unknown pooling mode {other:?}"))),
        }
    }

    pub fn out_dim(self, frame_dim: usize) -> usize {
        match self {
            PoolingMode::Sap => frame_dim,
            PoolingMode::Asp => 2 * frame_dim,
        }
    }
}

/// Attention MLP shared by both pooling modes:
/// `e_t = v . tanh(W h_t + b)`, weights softmaxed over frames.
#[derive(Debug, Clone)]
pub struct PoolingHead {
    pub mode: PoolingMode,
    pub attn_dim: usize,
    pub attn: LinearLayer,
    pub attn_v: LinearLayer,
}

/// Variance floor inside the ASP standard deviation.
pub const ASP_VAR_FLOOR: f64 = 1e-9;

impl PoolingHead {
    pub fn register<F: Scalar>(
        store: &mut ParamStore<F>,
        mode: PoolingMode,
        frame_dim: usize,
        attn_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let attn = LinearLayer::register(
            store,
            "head.attn",
            attn_dim,
            frame_dim,
            (1.0 / frame_dim as f64).sqrt(),
            rng,
        )?;
        let attn_v = LinearLayer::register(
            store,
            "head.attn_v",
            1,
            attn_dim,
            (1.0 / attn_dim as f64).sqrt(),
            rng,
        )?;
        Ok(Self { mode, attn_dim, attn, attn_v })
    }

    /// Attention weights over frames: `n x t`, rows sum to one.
    pub fn attention_weights<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        frames: VarId,
        ctx: &mut ForwardCtx<F>,
    ) -> Result<VarId> {
        let shape = g.shape(frames).to_vec();
        if shape.len() != 3 {
            return Err(Error::Shape(format!("pooling expects n x t x d frames, got {shape:?}")));
        }
        let (n, t, d) = (shape[0], shape[1], shape[2]);
        let flat = g.reshape(frames, &[n * t, d])?;
        let h = self.attn.forward(store, g, flat, ctx)?;
        let h = g.tanh(h);
        let logits = self.attn_v.forward(store, g, h, ctx)?; // (n*t) x 1
        let logits = g.reshape(logits, &[n, t])?;
        g.softmax_rows(logits)
    }

    pub fn forward<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        g: &mut Graph<F>,
        frames: VarId,
        ctx: &mut ForwardCtx<F>,
    ) -> Result<VarId> {
        let alpha = self.attention_weights(store, g, frames, ctx)?;
        let mu = g.weighted_sum(frames, alpha)?;
        match self.mode {
            PoolingMode::Sap => Ok(mu),
            PoolingMode::Asp => {
                let sq = g.mul(frames, frames)?;
                let m2 = g.weighted_sum(sq, alpha)?;
                let mu_sq = g.mul(mu, mu)?;
                let var = g.sub(m2, mu_sq)?;
                let var = g.clamp_min(var, F::from_f64(ASP_VAR_FLOOR));
                let sigma = g.sqrt(var);
                g.concat_cols(mu, sigma)
            }
        }
    }

    pub fn num_params<F: Scalar>(&self, store: &ParamStore<F>) -> usize {
        self.attn.num_params(store) + self.attn_v.num_params(store)
    }
}

/// Everything needed to rebuild a model from a checkpoint manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub trunk: TrunkConfig,
    pub pooling: PoolingMode,
    pub n_mels: usize,
    pub embed_dim: usize,
    pub attn_dim: usize,
}

impl ModelConfig {
    pub fn new(trunk: TrunkConfig, pooling: PoolingMode) -> Self {
        Self {
            trunk,
            pooling,
            n_mels: crate::dsp::N_MELS,
            embed_dim: EMBED_DIM,
            attn_dim: ATTENTION_DIM,
        }
    }

    pub fn manifest_line(&self) -> String {
        let ch = self.trunk.stage_channels;
        let bl = self.trunk.blocks_per_stage;
        format!(
            "variant={} channels={},{},{},{} blocks={},{},{},{} first_conv_stride={} pooling={} n_mels={} embed_dim={} attn_dim={}",
            self.trunk.name(),
            ch[0], ch[1], ch[2], ch[3],
            bl[0], bl[1], bl[2], bl[3],
            self.trunk.first_conv_stride,
            self.pooling.name(),
            self.n_mels,
            self.embed_dim,
            self.attn_dim,
        )
    }

    pub fn from_manifest_line(line: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("manifest field {field:?} is not key=value"),
            })?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String> {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("manifest is missing {k:?}")))
        };
        let quad = |k: &str| -> Result<[usize; 4]> {
            let raw = get(k)?;
            let parts: Vec<usize> = raw
                .split(',')
                .map(|p| p.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad manifest value for {k:?}: {raw}")))?;
            parts
                .try_into()
                .map_err(|_| Error::Config(format!("{k:?} needs 4 values")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("bad manifest value for {k:?}")))
        };
        Ok(Self {
            trunk: TrunkConfig {
                stage_channels: quad("channels")?,
                blocks_per_stage: quad("blocks")?,
                first_conv_stride: num("first_conv_stride")?,
            },
            pooling: PoolingMode::parse(&get("pooling")?)?,
            n_mels: num("n_mels")?,
            embed_dim: num("embed_dim")?,
            attn_dim: num("attn_dim")?,
        })
    }
}

/// Trunk + pooling + final linear projection to the 512-dim speaker
/// embedding. Owns its parameter store.
pub struct EmbeddingModel<F: Scalar> {
    store: ParamStore<F>,
    pub trunk: Trunk,
    pub head: PoolingHead,
    embed: LinearLayer,
    pub config: ModelConfig,
}

impl<F: Scalar> EmbeddingModel<F> {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let trunk = Trunk::register(&mut store, config.trunk, config.n_mels, rng)?;
        let head = PoolingHead::register(&mut store, config.pooling, trunk.frame_dim(), config.attn_dim, rng)?;
        let pooled_dim = config.pooling.out_dim(trunk.frame_dim());
        let embed = LinearLayer::register(
            &mut store,
            "embed",
            config.embed_dim,
            pooled_dim,
            (1.0 / pooled_dim as f64).sqrt(),
            rng,
        )?;
        Ok(Self { store, trunk, head, embed, config })
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    /// The final pooled-to-embedding projection.
    pub fn embed_layer(&self) -> &LinearLayer {
        &self.embed
    }

    /// Stack equal-length feature maps into an `n x 1 x L x n_mels` leaf.
    pub fn features_leaf(&self, g: &mut Graph<F>, feats: &[&LogMelFeature]) -> Result<VarId> {
        if feats.is_empty() {
            return Err(Error::Argument("no features to embed".into()));
        }
        let frames = feats[0].frames;
        if feats.iter().any(|f| f.frames != frames) {
            return Err(Error::Argument("features in one batch must share a frame count".into()));
        }
        let mut data = Vec::with_capacity(feats.len() * frames * self.config.n_mels);
        for f in feats {
            data.extend(f.data.iter().map(|&v| F::from_f64(v)));
        }
        g.leaf(&[feats.len(), 1, frames, self.config.n_mels], data)
    }

    /// Full forward to `n x embed_dim` (no final nonlinearity).
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        x: VarId,
        ctx: &mut ForwardCtx<F>,
    ) -> Result<VarId> {
        let frames = self.trunk.forward(&self.store, g, x, ctx)?;
        let pooled = self.head.forward(&self.store, g, frames, ctx)?;
        self.embed.forward(&self.store, g, pooled, ctx)
    }

    /// Eval-mode embeddings for a batch of equal-length features.
    pub fn embed_batch(&self, feats: &[&LogMelFeature]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::new(Mode::Eval);
        let x = self.features_leaf(&mut g, feats)?;
        let emb = self.forward(&mut g, x, &mut ctx)?;
        let d = self.config.embed_dim;
        Ok(g.data(emb)
            .chunks_exact(d)
            .map(|row| row.iter().map(|v| v.as_f64()).collect())
            .collect())
    }

    /// Stem + stage output shapes for a given input length (batch of 1).
    pub fn trunk_stage_shapes(&self, l: usize) -> Result<Vec<Vec<usize>>> {
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::new(Mode::Eval);
        let x = g.leaf(
            &[1, 1, l, self.config.n_mels],
            vec![F::zero(); l * self.config.n_mels],
        )?;
        let (frames, trace) = self.trunk.forward_traced(&self.store, &mut g, x, &mut ctx)?;
        let mut shapes: Vec<Vec<usize>> = trace.iter().map(|&v| g.shape(v).to_vec()).collect();
        shapes.push(g.shape(frames).to_vec());
        Ok(shapes)
    }

    /// Trainable parameters in the trunk alone.
    pub fn trunk_num_params(&self) -> usize {
        self.trunk.num_params(&self.store)
    }

    /// Trainable parameters in the full embedding model (trunk, pooling
    /// head, final projection).
    pub fn num_params(&self) -> usize {
        self.trunk.num_params(&self.store)
            + self.head.num_params(&self.store)
            + self.embed.num_params(&self.store)
    }
}
