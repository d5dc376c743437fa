//! Network building blocks. Each forward returns a cache (only when training)
//! that its backward consumes; parameter gradients accumulate in the store.

use rand::Rng;

use super::config::AttentionKind;
use super::params::{BufferId, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::batchnorm::{batchnorm_parts, RunningStats};
use crate::tensor::{
    activation, activation_backward, batchnorm_backward, channel_scale, channel_scale_backward,
    concat_channels, conv2d, conv2d_backward, global_avg_pool, global_avg_pool_backward, linear,
    linear_backward, split_channels, Activation, BatchNormCache, ConvSpec, Mode, Tensor,
    BN_EPSILON, BN_MOMENTUM,
};

/// Read-only store for inference, mutable store for training. `EvalCached`
/// runs inference arithmetic but keeps the caches a backward pass needs.
pub(crate) enum Pass<'a> {
    Eval(&'a ParamStore),
    EvalCached(&'a ParamStore),
    Train(&'a mut ParamStore),
}

impl Pass<'_> {
    pub(crate) fn store(&self) -> &ParamStore {
        match self {
            Pass::Eval(s) | Pass::EvalCached(s) => s,
            Pass::Train(s) => s,
        }
    }

    pub(crate) fn caches(&self) -> bool {
        !matches!(self, Pass::Eval(_))
    }
}

/// One row of the per-layer efficiency breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerReport {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub out_hw: (usize, usize),
    pub params: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Dense,
    BatchNorm,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Dense => "dense",
            LayerKind::BatchNorm => "bn",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl ConvLayer {
    pub fn new(
        store: &mut ParamStore,
        name: String,
        spec: ConvSpec,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let weight = store.add_he(
            format!("{name}.weight"),
            spec.weight_shape().to_vec(),
            fan_in,
            rng,
        );
        let bias = bias.then(|| store.add_const(format!("{name}.bias"), spec.out_channels, 0.0));
        ConvLayer {
            name,
            spec,
            weight,
            bias,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let bias = self.bias.map(|b| store.value(b).data());
        conv2d(x, store.value(self.weight), bias, &self.spec)
    }

    pub fn backward(&self, store: &mut ParamStore, x: &Tensor, grad: &Tensor) -> Result<Tensor> {
        let g = conv2d_backward(
            x,
            store.value(self.weight),
            &self.spec,
            grad,
            self.bias.is_some(),
        )?;
        store.accumulate(self.weight, g.weight.data());
        if let (Some(id), Some(db)) = (self.bias, g.bias.as_ref()) {
            store.accumulate(id, db);
        }
        Ok(g.input)
    }

    pub fn report(&self, h: usize, w: usize, out: &mut Vec<LayerReport>) -> (usize, usize) {
        let (oh, ow) = self
            .spec
            .output_hw(h, w)
            .expect("layer geometry valid for analyzed size");
        let s = &self.spec;
        let k2 = s.kernel * s.kernel;
        out.push(LayerReport {
            name: self.name.clone(),
            kind: LayerKind::Conv,
            in_channels: s.in_channels,
            out_channels: s.out_channels,
            kernel: s.kernel,
            stride: s.stride,
            dilation: s.dilation,
            out_hw: (oh, ow),
            params: s.weight_len()
                + if self.bias.is_some() {
                    s.out_channels
                } else {
                    0
                },
            macs: (s.in_channels * s.out_channels * k2) as u64 * (oh * ow) as u64,
        });
        (oh, ow)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNormLayer {
    pub name: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNormLayer {
    pub fn new(store: &mut ParamStore, name: String, channels: usize) -> Self {
        BatchNormLayer {
            gamma: store.add_const(format!("{name}.gamma"), channels, 1.0),
            beta: store.add_const(format!("{name}.beta"), channels, 0.0),
            running_mean: store.add_buffer(format!("{name}.running_mean"), channels, 0.0),
            running_var: store.add_buffer(format!("{name}.running_var"), channels, 1.0),
            name,
            channels,
        }
    }

    pub fn forward(&self, pass: &mut Pass<'_>, x: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        match pass {
            Pass::Eval(store) | Pass::EvalCached(store) => {
                let mut mean = store.buffer(self.running_mean).to_vec();
                let mut var = store.buffer(self.running_var).to_vec();
                batchnorm_parts(
                    x,
                    store.value(self.gamma).data(),
                    store.value(self.beta).data(),
                    RunningStats {
                        mean: &mut mean,
                        var: &mut var,
                    },
                    BN_EPSILON,
                    BN_MOMENTUM,
                    Mode::Eval,
                )
            }
            Pass::Train(store) => {
                let gamma = store.value(self.gamma).data().to_vec();
                let beta = store.value(self.beta).data().to_vec();
                let (mean, var) = store.buffer_pair_mut(self.running_mean, self.running_var);
                batchnorm_parts(
                    x,
                    &gamma,
                    &beta,
                    RunningStats { mean, var },
                    BN_EPSILON,
                    BN_MOMENTUM,
                    Mode::Train,
                )
            }
        }
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &BatchNormCache,
        grad: &Tensor,
    ) -> Result<Tensor> {
        let g = batchnorm_backward(cache, store.value(self.gamma).data(), grad)?;
        store.accumulate(self.gamma, &g.gamma);
        store.accumulate(self.beta, &g.beta);
        Ok(g.input)
    }

    pub fn report(&self, hw: (usize, usize), out: &mut Vec<LayerReport>) {
        out.push(LayerReport {
            name: self.name.clone(),
            kind: LayerKind::BatchNorm,
            in_channels: self.channels,
            out_channels: self.channels,
            kernel: 0,
            stride: 0,
            dilation: 0,
            out_hw: hw,
            params: 2 * self.channels,
            macs: 0,
        });
    }
}

/// Convolution, batchnorm, ReLU.
#[derive(Debug, Clone)]
pub(crate) struct ConvBnRelu {
    pub conv: ConvLayer,
    pub bn: BatchNormLayer,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvBnReluCache {
    input: Tensor,
    bn: BatchNormCache,
    output: Tensor,
}

impl ConvBnReluCache {
    pub fn relu_mask(&self, out: &mut Vec<bool>) {
        out.extend(self.output.data().iter().map(|&v| v > 0.0));
    }
}

impl ConvBnRelu {
    /// `conv_name`/`bn_name` are full hierarchical prefixes.
    pub fn new(
        store: &mut ParamStore,
        conv_name: String,
        bn_name: String,
        spec: ConvSpec,
        rng: &mut impl Rng,
    ) -> Self {
        // bias is redundant in front of batchnorm
        let conv = ConvLayer::new(store, conv_name, spec, false, rng);
        let bn = BatchNormLayer::new(store, bn_name, spec.out_channels);
        ConvBnRelu { conv, bn }
    }

    pub fn forward(
        &self,
        pass: &mut Pass<'_>,
        x: &Tensor,
    ) -> Result<(Tensor, Option<ConvBnReluCache>)> {
        let z = self.conv.forward(pass.store(), x)?;
        let (n, bn) = self.bn.forward(pass, &z)?;
        drop(z);
        let y = activation(&n, Activation::Relu);
        let cache = pass.caches().then(|| ConvBnReluCache {
            input: x.clone(),
            bn,
            output: y.clone(),
        });
        Ok((y, cache))
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &ConvBnReluCache,
        grad: &Tensor,
    ) -> Result<Tensor> {
        let g = activation_backward(&cache.output, grad, Activation::Relu)?;
        let g = self.bn.backward(store, &cache.bn, &g)?;
        self.conv.backward(store, &cache.input, &g)
    }

    pub fn report(&self, h: usize, w: usize, out: &mut Vec<LayerReport>) -> (usize, usize) {
        let hw = self.conv.report(h, w, out);
        self.bn.report(hw, out);
        hw
    }
}

/// Stride-2 3x3 conv followed by two stride-1 3x3 convs, each with bn + relu.
#[derive(Debug, Clone)]
pub(crate) struct BasicBlock {
    pub layers: [ConvBnRelu; 3],
}

impl BasicBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let specs = [
            ConvSpec {
                in_channels: in_c,
                out_channels: out_c,
                kernel: 3,
                stride: 2,
                dilation: 1,
                padding: 1,
            },
            ConvSpec::same(out_c, out_c, 3, 1, 1),
            ConvSpec::same(out_c, out_c, 3, 1, 1),
        ];
        let layers = [0, 1, 2].map(|i| {
            ConvBnRelu::new(
                store,
                format!("{name}.conv{}", i + 1),
                format!("{name}.bn{}", i + 1),
                specs[i],
                rng,
            )
        });
        BasicBlock { layers }
    }

    pub fn forward(
        &self,
        pass: &mut Pass<'_>,
        x: &Tensor,
    ) -> Result<(Tensor, Vec<ConvBnReluCache>)> {
        let mut caches = Vec::new();
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(pass, &h)?;
            caches.extend(c);
            h = y;
        }
        Ok((h, caches))
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        caches: &[ConvBnReluCache],
        grad: &Tensor,
    ) -> Result<Tensor> {
        let mut g = grad.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            g = layer.backward(store, cache, &g)?;
        }
        Ok(g)
    }

    pub fn report(&self, h: usize, w: usize, out: &mut Vec<LayerReport>) -> (usize, usize) {
        self.layers
            .iter()
            .fold((h, w), |(h, w), l| l.report(h, w, out))
    }
}

/// Channel attention: pool, reduce by `r`, relu, expand, sigmoid, rescale.
/// The `Cam` variant uses 1x1 convolutions, `Se` uses dense maps; with equal
/// weights the two compute the same function.
#[derive(Debug, Clone)]
pub(crate) struct ChannelAttention {
    pub name: String,
    pub variant: AttentionKind,
    pub channels: usize,
    pub reduced: usize,
    pub reduce_w: ParamId,
    pub reduce_b: ParamId,
    pub expand_w: ParamId,
    pub expand_b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    input: Tensor,
    pooled: Tensor,
    hidden: Tensor,
    weights: Tensor,
}

impl AttentionCache {
    pub fn relu_mask(&self, out: &mut Vec<bool>) {
        out.extend(self.hidden.data().iter().map(|&v| v > 0.0));
    }
}

impl FeatureEnhancementCache {
    pub fn relu_mask(&self, out: &mut Vec<bool>) {
        for c in self.branches.iter().chain([&self.fuse1, &self.fuse2]) {
            c.relu_mask(out);
        }
    }
}

impl ChannelAttention {
    pub fn new(
        store: &mut ParamStore,
        name: String,
        variant: AttentionKind,
        channels: usize,
        reduction: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert_ne!(variant, AttentionKind::None);
        let reduced = channels / reduction;
        let dims = |o: usize, i: usize| match variant {
            AttentionKind::Cam => vec![o, i, 1, 1],
            _ => vec![o, i],
        };
        let reduce_w = store.add_he(
            format!("{name}.reduce.weight"),
            dims(reduced, channels),
            channels,
            rng,
        );
        let reduce_b = store.add_const(format!("{name}.reduce.bias"), reduced, 0.0);
        let expand_w = store.add_he(
            format!("{name}.expand.weight"),
            dims(channels, reduced),
            reduced,
            rng,
        );
        let expand_b = store.add_const(format!("{name}.expand.bias"), channels, 0.0);
        ChannelAttention {
            name,
            variant,
            channels,
            reduced,
            reduce_w,
            reduce_b,
            expand_w,
            expand_b,
        }
    }

    fn spec(&self, in_c: usize, out_c: usize) -> ConvSpec {
        ConvSpec::same(in_c, out_c, 1, 1, 1)
    }

    fn map(
        &self,
        store: &ParamStore,
        x: &Tensor,
        w: ParamId,
        b: ParamId,
        in_c: usize,
        out_c: usize,
    ) -> Result<Tensor> {
        let (wt, bt) = (store.value(w), store.value(b).data());
        match self.variant {
            AttentionKind::Cam => conv2d(x, wt, Some(bt), &self.spec(in_c, out_c)),
            _ => linear(x, wt.data(), bt, out_c),
        }
    }

    fn map_backward(
        &self,
        store: &mut ParamStore,
        x: &Tensor,
        grad: &Tensor,
        (w, b): (ParamId, ParamId),
        in_c: usize,
        out_c: usize,
    ) -> Result<Tensor> {
        let (dx, dw, db) = match self.variant {
            AttentionKind::Cam => {
                let g = conv2d_backward(x, store.value(w), &self.spec(in_c, out_c), grad, true)?;
                (
                    g.input,
                    g.weight.into_vec(),
                    g.bias.expect("bias requested"),
                )
            }
            _ => {
                let g = linear_backward(x, store.value(w).data(), grad)?;
                (g.input, g.weight, g.bias)
            }
        };
        store.accumulate(w, &dw);
        store.accumulate(b, &db);
        Ok(dx)
    }

    pub fn forward(
        &self,
        pass: &mut Pass<'_>,
        x: &Tensor,
    ) -> Result<(Tensor, Option<AttentionCache>)> {
        if x.c() != self.channels {
            return Err(crate::error::Error::shape(
                "channel_attention",
                "channels",
                format!(
                    "input has {} channels, module built for {}",
                    x.c(),
                    self.channels
                ),
            ));
        }
        let store = pass.store();
        let pooled = global_avg_pool(x);
        let hidden = self.map(
            store,
            &pooled,
            self.reduce_w,
            self.reduce_b,
            self.channels,
            self.reduced,
        )?;
        let hidden = activation(&hidden, Activation::Relu);
        let excite = self.map(
            store,
            &hidden,
            self.expand_w,
            self.expand_b,
            self.reduced,
            self.channels,
        )?;
        let weights = activation(&excite, Activation::Sigmoid);
        let y = channel_scale(x, &weights)?;
        let cache = pass.caches().then(|| AttentionCache {
            input: x.clone(),
            pooled,
            hidden,
            weights,
        });
        Ok((y, cache))
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &AttentionCache,
        grad: &Tensor,
    ) -> Result<Tensor> {
        let (mut dx, dweights) = channel_scale_backward(&cache.input, &cache.weights, grad)?;
        let dexcite = activation_backward(&cache.weights, &dweights, Activation::Sigmoid)?;
        let dhidden = self.map_backward(
            store,
            &cache.hidden,
            &dexcite,
            (self.expand_w, self.expand_b),
            self.reduced,
            self.channels,
        )?;
        let dhidden = activation_backward(&cache.hidden, &dhidden, Activation::Relu)?;
        let dpooled = self.map_backward(
            store,
            &cache.pooled,
            &dhidden,
            (self.reduce_w, self.reduce_b),
            self.channels,
            self.reduced,
        )?;
        dx.add_assign(&global_avg_pool_backward(cache.input.shape(), &dpooled)?);
        Ok(dx)
    }

    pub fn report(&self, out: &mut Vec<LayerReport>) {
        let kind = match self.variant {
            AttentionKind::Cam => LayerKind::Conv,
            _ => LayerKind::Dense,
        };
        for (suffix, i, o) in [
            ("reduce", self.channels, self.reduced),
            ("expand", self.reduced, self.channels),
        ] {
            out.push(LayerReport {
                name: format!("{}.{suffix}", self.name),
                kind,
                in_channels: i,
                out_channels: o,
                kernel: 1,
                stride: 1,
                dilation: 1,
                out_hw: (1, 1),
                params: i * o + o,
                macs: (i * o) as u64,
            });
        }
    }
}

/// Four parallel dilated 3x3 branches at half width, concat, 1x1 fusion,
/// concat with the input, and a second 1x1 fusion. Shape preserving.
#[derive(Debug, Clone)]
pub(crate) struct FeatureEnhancement {
    pub branches: [ConvBnRelu; 4],
    pub fuse1: ConvBnRelu,
    pub fuse2: ConvBnRelu,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct FeatureEnhancementCache {
    branches: Vec<ConvBnReluCache>,
    fuse1: ConvBnReluCache,
    fuse2: ConvBnReluCache,
}

impl FeatureEnhancement {
    pub fn new(
        store: &mut ParamStore,
        channels: usize,
        rates: [usize; 4],
        rng: &mut impl Rng,
    ) -> Self {
        let half = channels / 2;
        let branches = [0, 1, 2, 3].map(|i| {
            ConvBnRelu::new(
                store,
                format!("fem.branch{}.conv", i + 1),
                format!("fem.branch{}.bn", i + 1),
                ConvSpec::same(channels, half, 3, 1, rates[i]),
                rng,
            )
        });
        let fuse1 = ConvBnRelu::new(
            store,
            "fem.fuse1.conv".into(),
            "fem.fuse1.bn".into(),
            ConvSpec::same(4 * half, channels, 1, 1, 1),
            rng,
        );
        let fuse2 = ConvBnRelu::new(
            store,
            "fem.fuse2.conv".into(),
            "fem.fuse2.bn".into(),
            ConvSpec::same(2 * channels, channels, 1, 1, 1),
            rng,
        );
        FeatureEnhancement {
            branches,
            fuse1,
            fuse2,
            channels,
        }
    }

    pub fn forward(
        &self,
        pass: &mut Pass<'_>,
        x: &Tensor,
    ) -> Result<(Tensor, Option<FeatureEnhancementCache>)> {
        let mut outs = Vec::with_capacity(4);
        let mut caches = Vec::with_capacity(4);
        for b in &self.branches {
            let (y, c) = b.forward(pass, x)?;
            outs.push(y);
            caches.extend(c);
        }
        let cat = concat_channels(&outs.iter().collect::<Vec<_>>())?;
        drop(outs);
        let (f1, c1) = self.fuse1.forward(pass, &cat)?;
        drop(cat);
        let cat2 = concat_channels(&[&f1, x])?;
        let (y, c2) = self.fuse2.forward(pass, &cat2)?;
        let cache = match (c1, c2) {
            (Some(fuse1), Some(fuse2)) => Some(FeatureEnhancementCache {
                branches: caches,
                fuse1,
                fuse2,
            }),
            _ => None,
        };
        Ok((y, cache))
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &FeatureEnhancementCache,
        grad: &Tensor,
    ) -> Result<Tensor> {
        let g_cat2 = self.fuse2.backward(store, &cache.fuse2, grad)?;
        let mut parts = split_channels(&g_cat2, &[self.channels, self.channels])?;
        let mut dx = parts.pop().expect("two parts");
        let g_f1 = parts.pop().expect("two parts");
        let g_cat = self.fuse1.backward(store, &cache.fuse1, &g_f1)?;
        let half = self.channels / 2;
        let g_branches = split_channels(&g_cat, &[half; 4])?;
        for ((branch, c), g) in self.branches.iter().zip(&cache.branches).zip(&g_branches) {
            dx.add_assign(&branch.backward(store, c, g)?);
        }
        Ok(dx)
    }

    /// Channel count of the four-branch concatenation.
    pub fn concat_width(&self) -> usize {
        4 * (self.channels / 2)
    }

    pub fn report(&self, h: usize, w: usize, out: &mut Vec<LayerReport>) -> (usize, usize) {
        let mut hw = (h, w);
        for b in &self.branches {
            hw = b.report(h, w, out);
        }
        self.fuse1.report(hw.0, hw.1, out);
        self.fuse2.report(hw.0, hw.1, out)
    }
}
