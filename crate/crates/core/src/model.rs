//! Dense-UNet segmentation backbone with spatial dropout.
//!
//! Layout for `B = num_encoder_blocks`:
//!
//! ```text
//! input -> E1 -> pool -> E2 -> pool ... EB -> pool -> bottleneck
//!       bottleneck -> up -> [.., EB] -> D1 -> up -> [.., E(B-1)] -> D2 ... DB -> 1x1 conv -> softmax
//! ```
//!
//! Every dense block has `units_per_block` units of
//! `spatial dropout -> 3x3 conv -> batch norm -> ReLU`; unit `k` sees the
//! block input concatenated with the outputs of units `1..k`, and the block
//! emits the concatenation of all unit outputs. Decoder transitions are
//! nearest-neighbour 2x upsampling followed by one such unit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::grid::{Grid, ScoreMap};
use crate::nn::{
    max_pool2x2, max_pool2x2_backward, relu_backward, relu_inplace, softmax_pixels, upsample_nearest2x,
    upsample_nearest2x_backward, BatchNorm2d, BnCache, Conv2d, Param, Slot, SpatialDropout,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub units_per_block: usize,
    pub filters_per_unit: usize,
    pub num_encoder_blocks: usize,
    pub dropout_rate: f64,
    pub input_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { num_classes: 9, units_per_block: 4, filters_per_unit: 8, num_encoder_blocks: 3, dropout_rate: 0.2, input_channels: 1 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 256 {
            bail!(Config, "num_classes must be in [2, 256], got {}", self.num_classes);
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            bail!(Config, "dropout_rate must be in [0, 1), got {}", self.dropout_rate);
        }
        for (name, v) in [
            ("units_per_block", self.units_per_block),
            ("filters_per_unit", self.filters_per_unit),
            ("num_encoder_blocks", self.num_encoder_blocks),
            ("input_channels", self.input_channels),
        ] {
            if v == 0 {
                bail!(Config, "{} must be positive", name);
            }
        }
        if self.num_encoder_blocks > 16 {
            bail!(Config, "num_encoder_blocks {} is unreasonably deep", self.num_encoder_blocks);
        }
        Ok(())
    }

    /// Feature maps emitted by each dense block.
    pub fn block_output_channels(&self) -> usize {
        self.units_per_block * self.filters_per_unit
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.num_encoder_blocks
    }

    pub fn check_input(&self, channels: usize, height: usize, width: usize) -> Result<()> {
        if channels != self.input_channels {
            bail!(Shape, "model expects {} input channels, got {}", self.input_channels, channels);
        }
        let m = self.size_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            bail!(Shape, "spatial size {}x{} is not a positive multiple of {}", height, width, m);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvUnit {
    conv: Conv2d,
    bn: BatchNorm2d,
}

struct UnitCache {
    input: Tensor,
    mask: Option<Vec<f32>>,
    bn: BnCache,
    output: Tensor,
}

/// Per-pass dropout state shared by all layers of one forward call.
struct Dropout<'a> {
    layer: SpatialDropout,
    rng: Option<Rng>,
    probe: Option<&'a mut dyn FnMut(&Tensor, &Tensor)>,
}

impl Dropout<'_> {
    fn apply(&mut self, x: &Tensor) -> (Tensor, Option<Vec<f32>>) {
        let mut out = x.clone();
        let mask = match &mut self.rng {
            Some(rng) => self.layer.sample_mask(x.n, x.c, rng),
            None => None,
        };
        if let Some(m) = &mask {
            SpatialDropout::apply(m, &mut out);
        }
        if let Some(probe) = self.probe.as_mut() {
            probe(x, &out);
        }
        (out, mask)
    }
}

impl ConvUnit {
    fn new(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Self {
        Self { conv: Conv2d::new(in_channels, out_channels, 3, false, rng), bn: BatchNorm2d::new(out_channels) }
    }

    fn forward(&self, x: &Tensor, drop: &mut Dropout<'_>) -> Tensor {
        let (input, _) = drop.apply(x);
        let mut y = self.conv.forward(&input);
        if drop.rng.is_some() {
            self.bn.forward_per_sample(&mut y);
        } else {
            self.bn.forward_eval(&mut y);
        }
        relu_inplace(&mut y);
        y
    }

    fn forward_train(&mut self, x: &Tensor, drop: &mut Dropout<'_>) -> (Tensor, UnitCache) {
        let (input, mask) = drop.apply(x);
        let mut y = self.conv.forward(&input);
        let bn = self.bn.forward_train(&mut y);
        relu_inplace(&mut y);
        (y.clone(), UnitCache { input, mask, bn, output: y })
    }

    fn backward(&mut self, cache: UnitCache, mut dy: Tensor) -> Tensor {
        relu_backward(&cache.output, &mut dy);
        self.bn.backward(&cache.bn, &mut dy);
        let mut dx = self.conv.backward(&cache.input, &dy);
        if let Some(mask) = &cache.mask {
            SpatialDropout::apply(mask, &mut dx);
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&format!("{prefix}.conv.weight"), Slot::Param(&mut self.conv.weight));
        f(&format!("{prefix}.bn.gamma"), Slot::Param(&mut self.bn.gamma));
        f(&format!("{prefix}.bn.beta"), Slot::Param(&mut self.bn.beta));
        f(&format!("{prefix}.bn.running_mean"), Slot::Buffer(&mut self.bn.running_mean));
        f(&format!("{prefix}.bn.running_var"), Slot::Buffer(&mut self.bn.running_var));
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DenseBlock {
    in_channels: usize,
    growth: usize,
    units: Vec<ConvUnit>,
}

struct BlockCache {
    units: Vec<UnitCache>,
}

impl DenseBlock {
    fn new(in_channels: usize, units: usize, growth: usize, rng: &mut Rng) -> Self {
        let units = (0..units).map(|k| ConvUnit::new(in_channels + k * growth, growth, rng)).collect();
        Self { in_channels, growth, units }
    }

    fn forward(&self, x: &Tensor, drop: &mut Dropout<'_>) -> Tensor {
        let mut feats: Vec<Tensor> = vec![x.clone()];
        for unit in &self.units {
            let input = concat(&feats);
            feats.push(unit.forward(&input, drop));
        }
        concat(&feats[1..])
    }

    fn forward_train(&mut self, x: &Tensor, drop: &mut Dropout<'_>) -> (Tensor, BlockCache) {
        let mut feats: Vec<Tensor> = vec![x.clone()];
        let mut caches = Vec::with_capacity(self.units.len());
        for unit in &mut self.units {
            let input = concat(&feats);
            let (y, c) = unit.forward_train(&input, drop);
            feats.push(y);
            caches.push(c);
        }
        (concat(&feats[1..]), BlockCache { units: caches })
    }

    fn backward(&mut self, cache: BlockCache, dy: &Tensor) -> Tensor {
        let k = self.units.len();
        let mut grads: Vec<Tensor> = Vec::with_capacity(k + 1);
        grads.push(Tensor::zeros(dy.n, self.in_channels, dy.h, dy.w));
        grads.extend(dy.split_channels(&vec![self.growth; k]));
        for (i, (unit, c)) in self.units.iter_mut().zip(cache.units).enumerate().rev() {
            let g = core::mem::replace(&mut grads[i + 1], Tensor::zeros(0, 0, 0, 0));
            let din = unit.backward(c, g);
            let mut sizes = vec![self.in_channels];
            sizes.extend(core::iter::repeat_n(self.growth, i));
            for (acc, part) in grads.iter_mut().zip(din.split_channels(&sizes)) {
                acc.add_assign(&part);
            }
        }
        grads.swap_remove(0)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (k, unit) in self.units.iter_mut().enumerate() {
            unit.visit(&format!("{prefix}.unit{k}"), f);
        }
    }
}

fn concat(parts: &[Tensor]) -> Tensor {
    if parts.len() == 1 {
        return parts[0].clone();
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat_channels(&refs)
}

/// Intermediate values kept by [`SegmentationModel::forward_train`].
pub struct ForwardCache {
    encoders: Vec<BlockCache>,
    pools: Vec<((usize, usize, usize, usize), Vec<u32>)>,
    bottleneck: BlockCache,
    ups: Vec<UnitCache>,
    decoders: Vec<BlockCache>,
    head_input: Tensor,
    head_mask: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationModel {
    config: ModelConfig,
    encoders: Vec<DenseBlock>,
    bottleneck: DenseBlock,
    /// Index 0 is the deepest transition.
    ups: Vec<ConvUnit>,
    /// Index 0 is the deepest decoder block; it receives the deepest skip.
    decoders: Vec<DenseBlock>,
    head: Conv2d,
}

/// Builds an initialized model.
pub fn build_model(config: &ModelConfig, init_seed: u64) -> Result<SegmentationModel> {
    SegmentationModel::new(config.clone(), init_seed)
}

impl SegmentationModel {
    /// He-normal convolution weights drawn from `init_seed`; batch-norm
    /// scales start at one and shifts at zero.
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(init_seed);
        let g = config.block_output_channels();
        let units = config.units_per_block;
        let blocks = config.num_encoder_blocks;
        let encoders = (0..blocks)
            .map(|i| DenseBlock::new(if i == 0 { config.input_channels } else { g }, units, config.filters_per_unit, &mut rng))
            .collect();
        let bottleneck = DenseBlock::new(g, units, config.filters_per_unit, &mut rng);
        let mut ups = Vec::with_capacity(blocks);
        let mut decoders = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            ups.push(ConvUnit::new(g, g, &mut rng));
            decoders.push(DenseBlock::new(2 * g, units, config.filters_per_unit, &mut rng));
        }
        let head = Conv2d::new(g, config.num_classes, 1, true, &mut rng);
        Ok(Self { config, encoders, bottleneck, ups, decoders, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn dropout<'a>(&self, seed: Option<u64>, probe: Option<&'a mut dyn FnMut(&Tensor, &Tensor)>) -> Dropout<'a> {
        Dropout {
            layer: SpatialDropout { rate: self.config.dropout_rate as f32 },
            rng: seed.filter(|_| self.config.dropout_rate > 0.0).map(rng_from_seed),
            probe,
        }
    }

    /// Raw class logits for inference.
    ///
    /// Without a dropout seed (or with a zero dropout rate) batch norm uses
    /// running statistics. Stochastic passes normalize each image with its own
    /// statistics, as during training at batch size 1; running statistics
    /// never saw the per-image effect of a dropout mask.
    pub fn logits(&self, x: &Tensor, dropout_seed: Option<u64>) -> Result<Tensor> {
        self.config.check_input(x.c, x.h, x.w)?;
        let mut drop = self.dropout(dropout_seed, None);
        Ok(self.run_eval(x, &mut drop))
    }

    /// Like [`Self::logits`], calling `probe(before, after)` around every
    /// spatial-dropout application.
    pub fn logits_with_dropout_probe(&self, x: &Tensor, dropout_seed: Option<u64>, probe: &mut dyn FnMut(&Tensor, &Tensor)) -> Result<Tensor> {
        self.config.check_input(x.c, x.h, x.w)?;
        let mut drop = self.dropout(dropout_seed, Some(probe));
        Ok(self.run_eval(x, &mut drop))
    }

    fn run_eval(&self, x: &Tensor, drop: &mut Dropout<'_>) -> Tensor {
        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut h = x.clone();
        for enc in &self.encoders {
            let e = enc.forward(&h, drop);
            h = max_pool2x2(&e).0;
            skips.push(e);
        }
        h = self.bottleneck.forward(&h, drop);
        for (up, dec) in self.ups.iter().zip(&self.decoders) {
            let u = up.forward(&upsample_nearest2x(&h), drop);
            let skip = skips.pop().expect("one skip per decoder");
            h = dec.forward(&Tensor::concat_channels(&[&u, &skip]), drop);
        }
        let (input, _) = drop.apply(&h);
        self.head.forward(&input)
    }

    /// Segmentation forward pass for a batch.
    ///
    /// With `dropout_active` the output is a deterministic function of the
    /// parameters, the input and `seed`; otherwise `seed` is ignored.
    pub fn forward(&self, x: &Tensor, dropout_active: bool, seed: u64) -> Result<Vec<ScoreMap>> {
        let logits = self.logits(x, dropout_active.then_some(seed))?;
        Ok(scores_from_logits(&logits))
    }

    /// Single-channel convenience wrapper around [`Self::forward`].
    pub fn predict(&self, image: &Grid<f32>, dropout_active: bool, seed: u64) -> Result<ScoreMap> {
        let x = Tensor::from_images([image])?;
        Ok(self.forward(&x, dropout_active, seed)?.swap_remove(0))
    }

    /// Training-mode forward: batch statistics, running-statistic updates, and
    /// spatial dropout seeded by `dropout_seed` when given.
    pub fn forward_train(&mut self, x: &Tensor, dropout_seed: Option<u64>) -> Result<(Tensor, ForwardCache)> {
        self.config.check_input(x.c, x.h, x.w)?;
        let mut drop = Dropout {
            layer: SpatialDropout { rate: self.config.dropout_rate as f32 },
            rng: dropout_seed.map(rng_from_seed),
            probe: None,
        };
        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut enc_caches = Vec::with_capacity(self.encoders.len());
        let mut pools = Vec::with_capacity(self.encoders.len());
        let mut h = x.clone();
        for enc in &mut self.encoders {
            let (e, c) = enc.forward_train(&h, &mut drop);
            let (p, arg) = max_pool2x2(&e);
            pools.push(((e.n, e.c, e.h, e.w), arg));
            enc_caches.push(c);
            skips.push(e);
            h = p;
        }
        let (b, bottleneck) = self.bottleneck.forward_train(&h, &mut drop);
        h = b;
        let mut ups = Vec::with_capacity(self.ups.len());
        let mut decoders = Vec::with_capacity(self.decoders.len());
        for (up, dec) in self.ups.iter_mut().zip(&mut self.decoders) {
            let (u, uc) = up.forward_train(&upsample_nearest2x(&h), &mut drop);
            let skip = skips.pop().expect("one skip per decoder");
            let (d, dc) = dec.forward_train(&Tensor::concat_channels(&[&u, &skip]), &mut drop);
            ups.push(uc);
            decoders.push(dc);
            h = d;
        }
        let (head_input, head_mask) = drop.apply(&h);
        let logits = self.head.forward(&head_input);
        Ok((logits, ForwardCache { encoders: enc_caches, pools, bottleneck, ups, decoders, head_input, head_mask }))
    }

    /// Accumulates parameter gradients for `d loss / d logits`.
    pub fn backward(&mut self, cache: ForwardCache, dlogits: &Tensor) {
        let g = self.config.block_output_channels();
        let mut dh = self.head.backward(&cache.head_input, dlogits);
        if let Some(mask) = &cache.head_mask {
            SpatialDropout::apply(mask, &mut dh);
        }
        let blocks = self.encoders.len();
        let mut dskips: Vec<Option<Tensor>> = (0..blocks).map(|_| None).collect();
        let pieces = self.ups.iter_mut().zip(&mut self.decoders).zip(cache.ups.into_iter().zip(cache.decoders));
        for (j, ((up, dec), (uc, dc))) in pieces.enumerate().rev() {
            let dcat = dec.backward(dc, &dh);
            let mut parts = dcat.split_channels(&[g, g]);
            let dskip = parts.pop().expect("two parts");
            dskips[blocks - 1 - j] = Some(dskip);
            let du = up.backward(uc, parts.pop().expect("two parts"));
            dh = upsample_nearest2x_backward(&du);
        }
        dh = self.bottleneck.backward(cache.bottleneck, &dh);
        for (i, (enc, ec)) in self.encoders.iter_mut().zip(cache.encoders).enumerate().rev() {
            let (shape, arg) = &cache.pools[i];
            let mut de = max_pool2x2_backward(*shape, arg, &dh);
            de.add_assign(dskips[i].as_ref().expect("skip gradient set"));
            dh = enc.backward(ec, &de);
        }
    }

    /// Visits every parameter and buffer in a stable order with a stable name.
    pub fn visit(&mut self, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (i, enc) in self.encoders.iter_mut().enumerate() {
            enc.visit(&format!("encoder{i}"), f);
        }
        self.bottleneck.visit("bottleneck", f);
        for (j, (up, dec)) in self.ups.iter_mut().zip(&mut self.decoders).enumerate() {
            up.visit(&format!("up{j}"), f);
            dec.visit(&format!("decoder{j}"), f);
        }
        f("head.weight", Slot::Param(&mut self.head.weight));
        if let Some(b) = &mut self.head.bias {
            f("head.bias", Slot::Param(b));
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |_, slot| {
            if let Slot::Param(p) = slot {
                p.zero_grad();
            }
        });
    }

    pub fn num_parameters(&mut self) -> usize {
        self.param_sizes().iter().sum()
    }

    /// All parameters and buffers as `(name, values)` in visit order.
    pub fn named_arrays(&self) -> Vec<(alloc::string::String, Vec<f32>)> {
        let mut copy = self.clone();
        let mut out = Vec::new();
        copy.visit(&mut |name, slot| {
            let values = match slot {
                Slot::Param(p) => core::mem::take(&mut p.value),
                Slot::Buffer(b) => core::mem::take(b),
            };
            out.push((name.into(), values));
        });
        out
    }

    /// Overwrites every parameter and buffer from `(name, values)` pairs.
    /// Every name must be present with the right length; extras are rejected.
    pub fn load_named_arrays(&mut self, arrays: &[(alloc::string::String, Vec<f32>)]) -> Result<()> {
        let mut used = vec![false; arrays.len()];
        let mut err: Option<Error> = None;
        self.visit(&mut |name, slot| {
            if err.is_some() {
                return;
            }
            let Some(idx) = arrays.iter().position(|(n, _)| n == name) else {
                err = Some(Error::Checkpoint(format!("missing array {name}")));
                return;
            };
            used[idx] = true;
            let src = &arrays[idx].1;
            let dst = match slot {
                Slot::Param(p) => {
                    p.zero_grad();
                    &mut p.value
                }
                Slot::Buffer(b) => b,
            };
            if dst.len() != src.len() {
                err = Some(Error::Checkpoint(format!("array {name} has {} values, model expects {}", src.len(), dst.len())));
                return;
            }
            dst.copy_from_slice(src);
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(i) = used.iter().position(|u| !u) {
            bail!(Checkpoint, "unexpected array {}", arrays[i].0);
        }
        Ok(())
    }

    /// Calls `f` with each learnable parameter in visit order.
    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.visit(&mut |_, slot| {
            if let Slot::Param(p) = slot {
                f(p);
            }
        });
    }

    pub fn param_sizes(&mut self) -> Vec<usize> {
        let mut sizes = Vec::new();
        self.for_each_param(&mut |p| sizes.push(p.len()));
        sizes
    }
}

/// Converts NCHW logits into one softmax score map per sample.
pub fn scores_from_logits(logits: &Tensor) -> Vec<ScoreMap> {
    (0..logits.n)
        .map(|i| ScoreMap::from_raw(logits.h, logits.w, logits.c, softmax_pixels(logits, i)).expect("sized from logits"))
        .collect()
}

/// Seed used for the training-mode dropout of step `iteration`, stream `k`.
pub fn training_dropout_seed(seed: u64, iteration: u64, stream: u64) -> u64 {
    derive_seed(derive_seed(seed, iteration), stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn tiny() -> ModelConfig {
        ModelConfig { num_classes: 2, units_per_block: 1, filters_per_unit: 1, num_encoder_blocks: 1, dropout_rate: 0.0, input_channels: 1 }
    }

    fn random_input(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        Tensor::from_vec(1, c, h, w, (0..c * h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SegmentationModel::new(ModelConfig { num_classes: 1, ..tiny() }, 0).is_err());
        assert!(SegmentationModel::new(ModelConfig { dropout_rate: 1.0, ..tiny() }, 0).is_err());
        assert!(SegmentationModel::new(ModelConfig { units_per_block: 0, ..tiny() }, 0).is_err());
        assert!(SegmentationModel::new(tiny(), 0).is_ok());
    }

    #[test]
    fn default_blocks_emit_32_maps() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.block_output_channels(), 32);
        let model = SegmentationModel::new(cfg, 1).unwrap();
        assert_eq!(model.encoders.len(), 3);
        assert_eq!(model.decoders.len(), 3);
        for block in model.encoders.iter().chain([&model.bottleneck]).chain(&model.decoders) {
            assert_eq!(block.units.iter().map(|u| u.conv.out_channels).sum::<usize>(), 32);
        }
        assert_eq!(model.head.out_channels, 9);
        assert_eq!(model.decoders[0].in_channels, 64);
    }

    #[test]
    fn shape_errors() {
        let model = SegmentationModel::new(ModelConfig { num_encoder_blocks: 2, ..tiny() }, 0).unwrap();
        assert!(matches!(model.forward(&random_input(1, 6, 8, 0), false, 0), Err(Error::Shape(_))));
        assert!(matches!(model.forward(&random_input(2, 8, 8, 0), false, 0), Err(Error::Shape(_))));
        let out = model.forward(&random_input(1, 8, 12, 0), false, 0).unwrap();
        assert_eq!(out[0].spatial_shape(), (8, 12));
    }

    #[test]
    fn params_and_names_are_stable() {
        let mut model = SegmentationModel::new(tiny(), 3).unwrap();
        let names: Vec<_> = model.named_arrays().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.first().map(|s| s.as_str()), Some("encoder0.unit0.conv.weight"));
        assert_eq!(names.last().map(|s| s.as_str()), Some("head.bias"));
        assert_eq!(model.param_sizes().len(), 4 * 3 + 2);
    }

    #[test]
    fn load_rejects_mismatch() {
        let a = SegmentationModel::new(tiny(), 3).unwrap();
        let mut b = SegmentationModel::new(ModelConfig { filters_per_unit: 2, ..tiny() }, 3).unwrap();
        assert!(matches!(b.load_named_arrays(&a.named_arrays()), Err(Error::Checkpoint(_))));
        let mut c = SegmentationModel::new(tiny(), 4).unwrap();
        c.load_named_arrays(&a.named_arrays()).unwrap();
        assert_eq!(c, a);
    }

    /// Whole-network gradient check: scalar objective <w, logits> in training
    /// mode without dropout, perturbing a few parameters.
    #[test]
    fn backward_matches_finite_differences() {
        let cfg = ModelConfig { num_classes: 3, units_per_block: 2, filters_per_unit: 2, num_encoder_blocks: 2, dropout_rate: 0.3, input_channels: 1 };
        let mut model = SegmentationModel::new(cfg, 5).unwrap();
        // keep dropped-out (constant) channels off the ReLU kink
        model.visit(&mut |n, s| {
            if let (true, Slot::Param(p)) = (n.ends_with("bn.beta"), s) {
                p.value.iter_mut().for_each(|v| *v = 0.1);
            }
        });
        let x = random_input(1, 8, 8, 6);
        let mut rng = rng_from_seed(7);
        let w: Vec<f32> = (0..3 * 64).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let seed = Some(42);
        let objective = |m: &SegmentationModel| {
            let mut m = m.clone();
            let (y, _) = m.forward_train(&x, seed).unwrap();
            y.data.iter().zip(&w).map(|(a, b)| (*a as f64) * (*b as f64)).sum::<f64>()
        };
        let mut grad_model = model.clone();
        let (y, cache) = grad_model.forward_train(&x, seed).unwrap();
        let dy = Tensor::from_vec(y.n, y.c, y.h, y.w, w.clone()).unwrap();
        grad_model.backward(cache, &dy);
        let grads: Vec<(alloc::string::String, Vec<f32>)> = {
            let mut out = Vec::new();
            grad_model.visit(&mut |n, s| {
                if let Slot::Param(p) = s {
                    out.push((n.into(), p.grad.clone()));
                }
            });
            out
        };
        let eps = 2e-3f32;
        let mut checked = 0;
        for (name, grad) in &grads {
            for idx in [0, grad.len() / 2] {
                let bump = |delta: f32| {
                    let mut m = model.clone();
                    m.visit(&mut |n, s| {
                        if let (true, Slot::Param(p)) = (n == name, s) {
                            p.value[idx] += delta;
                        }
                    });
                    objective(&m)
                };
                let fd = (bump(eps) - bump(-eps)) / (2.0 * eps as f64);
                let an = grad[idx] as f64;
                let scale = fd.abs().max(an.abs()).max(1.0);
                assert!((fd - an).abs() / scale < 2e-2, "{name}[{idx}]: fd {fd} vs analytic {an}");
                checked += 1;
            }
        }
        assert!(checked > 20);
        model.zero_grad();
    }
}
