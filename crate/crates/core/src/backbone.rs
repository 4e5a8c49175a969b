//! Miniature stage-based CNN host: a conv stem, four residual stages with an
//! attention block after each stage, and a global-average-pool classifier.

use std::io::{Read, Write};

use crate::attention::{AttentionBlock, AttentionKind};
use crate::checkpoint;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::ops::{BatchNorm2d, Conv2d, Linear};
use crate::rng::mix_seed;
use crate::tensor::Tensor;

/// One stage of the host network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    /// Channel count within the stage.
    pub width: usize,
    /// Number of residual blocks.
    pub depth: usize,
    /// Whether the first block enters at stride 2.
    pub downsample: bool,
}

impl StageSpec {
    pub fn new(width: usize, depth: usize, downsample: bool) -> StageSpec {
        StageSpec {
            width,
            depth,
            downsample,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.width == 0 || self.depth == 0 {
            return Err(Error::Config(format!(
                "stage {} must have width >= 1 and depth >= 1, got width {} depth {}",
                index + 1,
                self.width,
                self.depth
            )));
        }
        Ok(())
    }
}

/// Full architecture description. The backbone always has exactly four
/// stages so that exactly four attention blocks are inserted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub stages: [StageSpec; 4],
    pub attention: AttentionKind,
    /// SE reduction ratio used by the attention blocks.
    pub reduction: usize,
    /// Gate convolution kernel size used by the attention blocks.
    pub kernel: usize,
    pub input_size: (usize, usize),
    pub seed: u64,
}

impl BackboneConfig {
    /// Small configuration for desk-scale experiments: widths 16/32/64/128,
    /// one block per stage, downsampling on entry to stages 2-4.
    pub fn desk(
        in_channels: usize,
        num_classes: usize,
        attention: AttentionKind,
        input_size: (usize, usize),
        seed: u64,
    ) -> BackboneConfig {
        BackboneConfig {
            in_channels,
            num_classes,
            stages: [
                StageSpec::new(16, 1, false),
                StageSpec::new(32, 1, true),
                StageSpec::new(64, 1, true),
                StageSpec::new(128, 1, true),
            ],
            attention,
            reduction: 16,
            kernel: 7,
            input_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate(i)?;
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::Config("input_size extents must be >= 1".into()));
        }
        self.stage_shapes().map(|_| ())
    }

    /// The (C,H,W) seen at the output of each stage, following the declared
    /// downsampling plan. Fails when an odd extent would have to be halved.
    pub fn stage_shapes(&self) -> Result<[(usize, usize, usize); 4]> {
        let (mut h, mut w) = self.input_size;
        let mut shapes = [(0, 0, 0); 4];
        for (i, s) in self.stages.iter().enumerate() {
            if s.downsample {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Config(format!(
                        "input size {}x{} is not divisible by the cumulative stride entering stage {}",
                        self.input_size.0,
                        self.input_size.1,
                        i + 1
                    )));
                }
                h /= 2;
                w /= 2;
            }
            shapes[i] = (s.width, h, w);
        }
        Ok(shapes)
    }
}

/// Two 3x3 conv+BN layers with a residual connection. The skip path gains a
/// 1x1 projection whenever the block changes width or resolution.
pub struct BasicBlock<E: Element> {
    conv1: Conv2d<E>,
    bn1: BatchNorm2d<E>,
    conv2: Conv2d<E>,
    bn2: BatchNorm2d<E>,
    proj: Option<(Conv2d<E>, BatchNorm2d<E>)>,
}

impl<E: Element> BasicBlock<E> {
    pub fn new(in_c: usize, out_c: usize, stride: usize, seed: u64) -> Result<BasicBlock<E>> {
        let conv1 = Conv2d::seeded(in_c, out_c, 3, stride, 1, false, mix_seed(seed, 1))?;
        let bn1 = BatchNorm2d::new(out_c)?;
        let conv2 = Conv2d::seeded(out_c, out_c, 3, 1, 1, false, mix_seed(seed, 2))?;
        let bn2 = BatchNorm2d::new(out_c)?;
        let proj = if stride != 1 || in_c != out_c {
            Some((
                Conv2d::seeded(in_c, out_c, 1, stride, 0, false, mix_seed(seed, 3))?,
                BatchNorm2d::new(out_c)?,
            ))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            proj,
        })
    }

    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let main = self
            .bn1
            .forward(&self.conv1.forward(x)?, training)?
            .relu()?;
        let main = self.bn2.forward(&self.conv2.forward(&main)?, training)?;
        let skip = match &self.proj {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, training)?,
            None => x.clone(),
        };
        main.add(&skip)?.relu()
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.conv1.params(&format!("{prefix}.conv1"), out);
        self.bn1.params(&format!("{prefix}.bn1"), out);
        self.conv2.params(&format!("{prefix}.conv2"), out);
        self.bn2.params(&format!("{prefix}.bn2"), out);
        if let Some((conv, bn)) = &self.proj {
            conv.params(&format!("{prefix}.proj.conv"), out);
            bn.params(&format!("{prefix}.proj.bn"), out);
        }
    }

    pub fn buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.bn1.buffers(&format!("{prefix}.bn1"), out);
        self.bn2.buffers(&format!("{prefix}.bn2"), out);
        if let Some((_, bn)) = &self.proj {
            bn.buffers(&format!("{prefix}.proj.bn"), out);
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.bn1.param_count()
            + self.conv2.param_count()
            + self.bn2.param_count()
            + self
                .proj
                .as_ref()
                .map_or(0, |(conv, bn)| conv.param_count() + bn.param_count())
    }
}

/// The assembled network. Forward order is stem, then for each stage its
/// blocks followed by its attention block, then pool and classify.
pub struct MiniBackbone<E: Element> {
    in_channels: usize,
    num_classes: usize,
    input_size: (usize, usize),
    stem_conv: Conv2d<E>,
    stem_bn: BatchNorm2d<E>,
    stages: [Vec<BasicBlock<E>>; 4],
    attn: [AttentionBlock<E>; 4],
    head: Linear<E>,
    stage_shapes: [(usize, usize, usize); 4],
}

impl<E: Element> MiniBackbone<E> {
    /// Builds the network with parameters initialized deterministically from
    /// `cfg.seed`; each layer draws from an independently derived sub-seed.
    pub fn build(cfg: &BackboneConfig) -> Result<MiniBackbone<E>> {
        cfg.validate()?;
        let stage_shapes = cfg.stage_shapes()?;

        let stem_conv = Conv2d::seeded(
            cfg.in_channels,
            cfg.stages[0].width,
            3,
            1,
            1,
            false,
            mix_seed(cfg.seed, 0),
        )?;
        let stem_bn = BatchNorm2d::new(cfg.stages[0].width)?;

        let mut stages: [Vec<BasicBlock<E>>; 4] = [vec![], vec![], vec![], vec![]];
        let mut in_c = cfg.stages[0].width;
        for (i, spec) in cfg.stages.iter().enumerate() {
            let stage_seed = mix_seed(cfg.seed, 1 + i as u64);
            for j in 0..spec.depth {
                let stride = if j == 0 && spec.downsample { 2 } else { 1 };
                stages[i].push(BasicBlock::new(
                    in_c,
                    spec.width,
                    stride,
                    mix_seed(stage_seed, j as u64),
                )?);
                in_c = spec.width;
            }
        }

        let mut attn_blocks = Vec::with_capacity(4);
        for (i, &declared) in stage_shapes.iter().enumerate() {
            attn_blocks.push(AttentionBlock::new(
                cfg.attention,
                declared,
                cfg.reduction,
                cfg.kernel,
                mix_seed(cfg.seed, 0x10 + i as u64),
            )?);
        }
        let attn: [AttentionBlock<E>; 4] = attn_blocks
            .try_into()
            .map_err(|_| Error::Config("expected exactly four attention blocks".into()))?;

        let head = Linear::seeded(
            cfg.stages[3].width,
            cfg.num_classes,
            mix_seed(cfg.seed, 0x20),
        )?;

        Ok(MiniBackbone {
            in_channels: cfg.in_channels,
            num_classes: cfg.num_classes,
            input_size: cfg.input_size,
            stem_conv,
            stem_bn,
            stages,
            attn,
            head,
            stage_shapes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// The (C,H,W) at each stage output, fixed by the downsampling plan.
    pub fn stage_shapes(&self) -> &[(usize, usize, usize); 4] {
        &self.stage_shapes
    }

    pub fn attention(&self) -> &[AttentionBlock<E>; 4] {
        &self.attn
    }

    /// Maps (N,in,H,W) images to (N,num_classes) logits. `training` routes
    /// batch-norm between batch statistics and running statistics.
    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let (_, c, h, w) = x.shape().dims4()?;
        if c != self.in_channels || (h, w) != self.input_size {
            return Err(Error::shape(format!(
                "backbone expects (N,{},{},{}) input, got {}",
                self.in_channels,
                self.input_size.0,
                self.input_size.1,
                x.shape()
            )));
        }
        let mut cur = self
            .stem_bn
            .forward(&self.stem_conv.forward(x)?, training)?
            .relu()?;
        for (i, (stage, attn)) in self.stages.iter().zip(&self.attn).enumerate() {
            for block in stage {
                cur = block.forward(&cur, training)?;
            }
            let dims = cur.shape().dims();
            let got = (dims[1], dims[2], dims[3]);
            if got != self.stage_shapes[i] {
                return Err(Error::shape(format!(
                    "stage {} produced (C,H,W) {:?}, planned {:?}",
                    i + 1,
                    got,
                    self.stage_shapes[i]
                )));
            }
            cur = attn.forward(&cur, training)?;
        }
        self.head.forward(&cur.global_avg_pool()?)
    }

    /// (total trainable scalars, scalars belonging to attention blocks).
    pub fn count_params(&self) -> (usize, usize) {
        let attention: usize = self.attn.iter().map(AttentionBlock::param_count).sum();
        let mut total = attention
            + self.stem_conv.param_count()
            + self.stem_bn.param_count()
            + self.head.param_count();
        for stage in &self.stages {
            for block in stage {
                total += block.param_count();
            }
        }
        (total, attention)
    }

    /// Every trainable tensor exactly once, in a fixed order.
    pub fn params(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        self.stem_conv.params("stem.conv", &mut out);
        self.stem_bn.params("stem.bn", &mut out);
        for (i, stage) in self.stages.iter().enumerate() {
            for (j, block) in stage.iter().enumerate() {
                block.params(&format!("stage{}.block{}", i + 1, j + 1), &mut out);
            }
        }
        for (i, attn) in self.attn.iter().enumerate() {
            attn.params(&format!("attn{}", i + 1), &mut out);
        }
        self.head.params("head", &mut out);
        out
    }

    /// Non-trainable state (batch-norm running statistics), in a fixed order.
    pub fn buffers(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        self.stem_bn.buffers("stem.bn", &mut out);
        for (i, stage) in self.stages.iter().enumerate() {
            for (j, block) in stage.iter().enumerate() {
                block.buffers(&format!("stage{}.block{}", i + 1, j + 1), &mut out);
            }
        }
        for (i, attn) in self.attn.iter().enumerate() {
            attn.buffers(&format!("attn{}", i + 1), &mut out);
        }
        out
    }

    /// Checkpointed state: parameters followed by buffers.
    pub fn state_tensors(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = self.params();
        out.extend(self.buffers());
        out
    }

    /// Hash of the ordered (name, shape) list; saved weights only load into
    /// a model with the same value.
    pub fn fingerprint(&self) -> u64 {
        checkpoint::fingerprint(&self.state_tensors())
    }

    /// Writes every parameter and buffer as a named-tensor stream.
    pub fn save_weights(&self, w: &mut impl Write) -> Result<()> {
        checkpoint::write_weight_section(w, &self.state_tensors())
    }

    /// Restores a stream produced by [`save_weights`](Self::save_weights)
    /// into this model. The architecture fingerprint must match.
    pub fn load_weights(&self, r: &mut impl Read) -> Result<()> {
        checkpoint::read_weight_section(r, &self.state_tensors())
    }
}
