//! The non-pooling segmentation network: three stride-2 basic blocks, each
//! followed by channel attention, a dilated feature-enhancement module at 1/8
//! resolution, a 1x1 classifier, and bilinear upsampling back to input size.

mod checkpoint;
mod config;
mod layers;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{parse_list, AttentionKind, ModelConfig};
pub use layers::{LayerKind, LayerReport};
pub use params::{Buffer, ParamId, ParamStore, Parameter};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, bilinear_resize_backward, ConvSpec, Tensor};
use layers::{
    AttentionCache, BasicBlock, ChannelAttention, ConvBnReluCache, ConvLayer, FeatureEnhancement,
    FeatureEnhancementCache, Pass,
};

/// Total downsampling factor of the three basic blocks.
pub const DOWNSAMPLE: usize = 8;

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    blocks: [BasicBlock; 3],
    attention: [Option<ChannelAttention>; 3],
    fem: FeatureEnhancement,
    classifier: ConvLayer,
}

type StageCache = (Vec<ConvBnReluCache>, Option<AttentionCache>);

/// Activations saved by [`Model::forward_train`] for [`Model::backward`].
#[derive(Debug)]
pub struct ForwardCache {
    input_hw: (usize, usize),
    stages: Vec<StageCache>,
    fem: FeatureEnhancementCache,
    fem_out: Tensor,
    coarse_logits_shape: [usize; 4],
}

impl ForwardCache {
    /// Which ReLU units were active, in network order. Two passes whose masks
    /// agree lie on the same linear piece of every ReLU.
    pub fn relu_mask(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for (block, attn) in &self.stages {
            block.iter().for_each(|c| c.relu_mask(&mut out));
            if let Some(a) = attn {
                a.relu_mask(&mut out);
            }
        }
        self.fem.relu_mask(&mut out);
        out
    }
}

impl Model {
    /// Builds the network with seeded fan-in Gaussian weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let [c1, c2, c3] = config.widths;
        let ins = [config.in_channels, c1, c2];
        let outs = [c1, c2, c3];
        let mut blocks = Vec::with_capacity(3);
        let mut attention = Vec::with_capacity(3);
        for i in 0..3 {
            blocks.push(BasicBlock::new(
                &mut store,
                &format!("block{}", i + 1),
                ins[i],
                outs[i],
                &mut rng,
            ));
            attention.push(match config.attention {
                AttentionKind::None => None,
                kind => Some(ChannelAttention::new(
                    &mut store,
                    format!("attn{}", i + 1),
                    kind,
                    outs[i],
                    config.reduction,
                    &mut rng,
                )),
            });
        }
        let fem = FeatureEnhancement::new(&mut store, c3, config.dilation_rates, &mut rng);
        let classifier = ConvLayer::new(
            &mut store,
            "classifier".into(),
            ConvSpec::same(c3, config.num_classes, 1, 1, 1),
            true,
            &mut rng,
        );
        Ok(Model {
            config,
            store,
            blocks: blocks.try_into().expect("three blocks"),
            attention: attention.try_into().expect("three attention slots"),
            fem,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c() != self.config.in_channels {
            return Err(Error::shape(
                "npnet_forward",
                "channels",
                format!(
                    "input has {} channels, model expects {}",
                    x.c(),
                    self.config.in_channels
                ),
            ));
        }
        if !x.h().is_multiple_of(DOWNSAMPLE) || !x.w().is_multiple_of(DOWNSAMPLE) {
            return Err(Error::shape(
                "npnet_forward",
                "height/width",
                format!(
                    "input {}x{} is not divisible by {DOWNSAMPLE}; resize to {}x{} (e.g. --target-size)",
                    x.h(),
                    x.w(),
                    (x.h() / DOWNSAMPLE).max(1) * DOWNSAMPLE,
                    (x.w() / DOWNSAMPLE).max(1) * DOWNSAMPLE
                ),
            ));
        }
        Ok(())
    }

    /// Runs the encoder and feature enhancement; returns the 1/8-resolution features.
    fn encode(
        &self,
        pass: &mut Pass<'_>,
        x: &Tensor,
    ) -> Result<(Tensor, Vec<StageCache>, Option<FeatureEnhancementCache>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut stages = Vec::with_capacity(3);
        for (block, attn) in self.blocks.iter().zip(&self.attention) {
            let (y, block_cache) = block.forward(pass, &h)?;
            let (y, attn_cache) = match attn {
                Some(a) => a.forward(pass, &y)?,
                None => (y, None),
            };
            stages.push((block_cache, attn_cache));
            h = y;
        }
        let (f, fem_cache) = self.fem.forward(pass, &h)?;
        Ok((f, stages, fem_cache))
    }

    /// Eval-mode logits `(n, classes, h, w)`. Pure; running statistics are read only.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut pass = Pass::Eval(&self.store);
        let (f, _, _) = self.encode(&mut pass, x)?;
        let coarse = self.classifier.forward(&self.store, &f)?;
        bilinear_resize(&coarse, x.h(), x.w())
    }

    /// Eval-mode output of the feature-enhancement module, at `(h/8, w/8)`.
    pub fn bottleneck(&self, x: &Tensor) -> Result<Tensor> {
        let mut pass = Pass::Eval(&self.store);
        Ok(self.encode(&mut pass, x)?.0)
    }

    /// Train-mode forward: batch statistics, running-stat update, cached activations.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let mut store = std::mem::take(&mut self.store);
        let result = self.forward_cached(&mut Pass::Train(&mut store), x);
        self.store = store;
        result
    }

    /// Eval-mode forward (running statistics, nothing mutated) that keeps the
    /// activations needed by [`Model::backward`].
    pub fn forward_eval_cached(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.forward_cached(&mut Pass::EvalCached(&self.store), x)
    }

    fn forward_cached(&self, pass: &mut Pass<'_>, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let (f, stages, fem) = self.encode(pass, x)?;
        let coarse = self.classifier.forward(pass.store(), &f)?;
        let logits = bilinear_resize(&coarse, x.h(), x.w())?;
        Ok((
            logits,
            ForwardCache {
                input_hw: (x.h(), x.w()),
                stages,
                fem: fem.expect("caching pass"),
                fem_out: f,
                coarse_logits_shape: coarse.shape(),
            },
        ))
    }

    /// Accumulates parameter gradients of a scalar loss given `d loss / d logits`.
    pub fn backward(&mut self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<()> {
        let (h, w) = cache.input_hw;
        if grad_logits.h() != h || grad_logits.w() != w {
            return Err(Error::shape(
                "npnet_backward",
                "height/width",
                format!("gradient {:?} vs input {h}x{w}", grad_logits.shape()),
            ));
        }
        let store = &mut self.store;
        let g = bilinear_resize_backward(cache.coarse_logits_shape, grad_logits)?;
        let g = self.classifier.backward(store, &cache.fem_out, &g)?;
        let mut g = self.fem.backward(store, &cache.fem, &g)?;
        for ((block, attn), (block_cache, attn_cache)) in self
            .blocks
            .iter()
            .zip(&self.attention)
            .zip(&cache.stages)
            .rev()
        {
            if let (Some(a), Some(c)) = (attn, attn_cache) {
                g = a.backward(store, c, &g)?;
            }
            g = block.backward(store, block_cache, &g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.store.zero_grad();
    }

    /// Sum of element counts over all learnable tensors.
    pub fn count_params(&self) -> usize {
        self.store.params().iter().map(Parameter::numel).sum()
    }

    /// Per-layer parameter and MAC breakdown for an `in_h x in_w` input.
    /// MACs count convolutions (and the equivalent dense maps) only.
    pub fn layer_report(&self, in_h: usize, in_w: usize) -> Result<Vec<LayerReport>> {
        if in_h == 0
            || in_w == 0
            || !in_h.is_multiple_of(DOWNSAMPLE)
            || !in_w.is_multiple_of(DOWNSAMPLE)
        {
            return Err(Error::InvalidArgument(format!(
                "input size {in_h}x{in_w} must be positive and divisible by {DOWNSAMPLE}"
            )));
        }
        let mut out = Vec::new();
        let (mut h, mut w) = (in_h, in_w);
        for (block, attn) in self.blocks.iter().zip(&self.attention) {
            (h, w) = block.report(h, w, &mut out);
            if let Some(a) = attn {
                a.report(&mut out);
            }
        }
        let (h, w) = self.fem.report(h, w, &mut out);
        self.classifier.report(h, w, &mut out);
        Ok(out)
    }

    /// Total multiply-accumulates for one `in_h x in_w` image.
    pub fn count_macs(&self, in_h: usize, in_w: usize) -> Result<u64> {
        Ok(self.layer_report(in_h, in_w)?.iter().map(|l| l.macs).sum())
    }

    /// Channel width of the four-branch concatenation inside feature enhancement.
    pub fn fem_concat_width(&self) -> usize {
        self.fem.concat_width()
    }
}
