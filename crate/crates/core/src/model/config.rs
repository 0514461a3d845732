use serde::{Deserialize, Serialize};

use crate::attention::AttentionKind;
use crate::blocks::{BlockConfig, BlockKind};
use crate::error::{Error, Result};

/// One row of the stage plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub block_kind: BlockKind,
    pub layers: usize,
    pub channels: usize,
    #[serde(default)]
    pub attention: AttentionKind,
}

impl StageSpec {
    pub const fn new(block_kind: BlockKind, layers: usize, channels: usize, attention: AttentionKind) -> Self {
        StageSpec {
            block_kind,
            layers,
            channels,
            attention,
        }
    }
}

/// Architecture family used by the ablation study. All variants share the
/// stem, the transformer stages and the head; they differ in the blocks of
/// the two convolutional stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mbconv,
    Convnextv2,
    Convnextv2Se,
    Convnextv2Eca,
    Convnextv2Cbam,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Mbconv,
        Variant::Convnextv2,
        Variant::Convnextv2Se,
        Variant::Convnextv2Eca,
        Variant::Convnextv2Cbam,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Mbconv => "MBConv",
            Variant::Convnextv2 => "ConvNeXtV2",
            Variant::Convnextv2Se => "ConvNeXtV2+SE",
            Variant::Convnextv2Eca => "ConvNeXtV2+ECA",
            Variant::Convnextv2Cbam => "ConvNeXtV2+CBAM",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['+', '-', ' '], "_");
        Ok(match key.as_str() {
            "mbconv" => Variant::Mbconv,
            "convnextv2" => Variant::Convnextv2,
            "convnextv2_se" | "se" => Variant::Convnextv2Se,
            "convnextv2_eca" | "eca" => Variant::Convnextv2Eca,
            "convnextv2_cbam" | "cbam" => Variant::Convnextv2Cbam,
            _ => return Err(Error::config(format!("unknown variant {s}"))),
        })
    }

    fn convolutional(self) -> (BlockKind, AttentionKind) {
        match self {
            Variant::Mbconv => (BlockKind::MBConv, AttentionKind::None),
            Variant::Convnextv2 => (BlockKind::ImprovedConvNeXtV2, AttentionKind::None),
            Variant::Convnextv2Se => (BlockKind::ImprovedConvNeXtV2, AttentionKind::Se),
            Variant::Convnextv2Eca => (BlockKind::ImprovedConvNeXtV2, AttentionKind::Eca),
            Variant::Convnextv2Cbam => (BlockKind::ImprovedConvNeXtV2, AttentionKind::Cbam),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Stem first, then the four block stages.
    pub stages: Vec<StageSpec>,
    /// Input height and width.
    pub input_size: [usize; 2],
    pub in_channels: usize,
    pub num_classes: usize,
    pub stem_kernel: usize,
    pub stem_strides: Vec<usize>,
    /// LayerNorm between global pooling and the classifier.
    pub head_norm: bool,
    pub blocks: BlockConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full(8)
    }
}

impl ModelConfig {
    /// Full-size plan: stem 2×32, then 2×64, 3×128 ConvNeXtV2+CBAM, 4×256,
    /// 2×512 transformer, on 224×224 inputs.
    pub fn full(num_classes: usize) -> Self {
        let cbam = AttentionKind::Cbam;
        let none = AttentionKind::None;
        ModelConfig {
            stages: vec![
                StageSpec::new(BlockKind::Conv3x3Stem, 2, 32, none),
                StageSpec::new(BlockKind::ImprovedConvNeXtV2, 2, 64, cbam),
                StageSpec::new(BlockKind::ImprovedConvNeXtV2, 3, 128, cbam),
                StageSpec::new(BlockKind::RelPosTransformer, 4, 256, none),
                StageSpec::new(BlockKind::RelPosTransformer, 2, 512, none),
            ],
            input_size: [224, 224],
            in_channels: 3,
            num_classes,
            stem_kernel: 3,
            stem_strides: vec![2, 1],
            head_norm: true,
            blocks: BlockConfig::default(),
        }
    }

    /// Desk-scale plan: widths 8..128, same depths, 32×32 inputs, stride-1
    /// stem.
    pub fn tiny(num_classes: usize) -> Self {
        let mut cfg = Self::full(num_classes);
        for (stage, d) in cfg.stages.iter_mut().zip([8, 16, 32, 64, 128]) {
            stage.channels = d;
        }
        cfg.input_size = [32, 32];
        cfg.stem_strides = vec![1, 1];
        cfg
    }

    pub fn preset(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "full" | "default" => Ok(Self::full(num_classes)),
            "tiny" => Ok(Self::tiny(num_classes)),
            other => Err(Error::config(format!("unknown preset {other} (expected full or tiny)"))),
        }
    }

    /// Replaces the blocks of the convolutional stages.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        let (kind, attention) = variant.convolutional();
        for stage in &mut self.stages {
            if matches!(stage.block_kind, BlockKind::ImprovedConvNeXtV2 | BlockKind::MBConv) {
                stage.block_kind = kind;
                stage.attention = attention;
            }
        }
        self
    }

    /// Total spatial reduction from input to the last stage.
    pub fn reduction(&self) -> usize {
        let stem: usize = self.stem_strides.iter().product();
        stem << self.stages.len().saturating_sub(2)
    }

    /// Spatial extent after the stem and after each block stage.
    pub fn stage_sizes(&self) -> Vec<[usize; 2]> {
        let stem: usize = self.stem_strides.iter().product();
        let mut size = [self.input_size[0] / stem, self.input_size[1] / stem];
        let mut out = vec![size];
        for _ in 1..self.stages.len() {
            size = [size[0] / 2, size[1] / 2];
            out.push(size);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.blocks.validate()?;
        let Some((stem, rest)) = self.stages.split_first() else {
            return Err(Error::config("stage plan is empty"));
        };
        if stem.block_kind != BlockKind::Conv3x3Stem {
            return Err(Error::config("the first stage must be the convolutional stem"));
        }
        if rest.is_empty() {
            return Err(Error::config("stage plan needs at least one block stage"));
        }
        if stem.layers != self.stem_strides.len() {
            return Err(Error::config(format!(
                "stem has {} layers but {} strides",
                stem.layers,
                self.stem_strides.len()
            )));
        }
        if self.stem_strides.contains(&0) || self.stem_kernel.is_multiple_of(2) {
            return Err(Error::config("stem strides must be positive and the kernel odd"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.layers == 0 || s.channels == 0 {
                return Err(Error::config(format!("stage {i} has zero layers or channels")));
            }
            if i > 0 && s.block_kind == BlockKind::Conv3x3Stem {
                return Err(Error::config(format!("stage {i}: the stem kind is only valid first")));
            }
            if s.attention != AttentionKind::None && s.block_kind != BlockKind::ImprovedConvNeXtV2 {
                return Err(Error::config(format!(
                    "stage {i}: attention applies only to ImprovedConvNeXtV2 blocks"
                )));
            }
            if s.block_kind == BlockKind::RelPosTransformer {
                self.blocks.heads(s.channels)?;
            }
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.in_channels == 0 {
            return Err(Error::config("in_channels must be positive"));
        }
        let r = self.reduction();
        if self.input_size.iter().any(|&e| e == 0 || e % r != 0) {
            return Err(Error::config(format!(
                "input size {:?} must be divisible by the total reduction {r}",
                self.input_size
            )));
        }
        Ok(())
    }
}
