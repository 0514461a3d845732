//! Composite layers: GRN, the ConvNeXtV2 family, MBConv and the
//! relative-position transformer block.
//!
//! Every block is a shape-preserving residual map. Channel-mixing 1×1
//! projections are stored as `out × in` matrices and applied as pointwise
//! convolutions.

use serde::{Deserialize, Serialize};

use crate::attention::{apply_attention, AttentionConfig, AttentionKind, AttentionParams, SeParams};
use crate::error::{Error, Result};
use crate::param::{join, ParamSource};
use crate::tensor::init::Init;
use crate::tensor::{Conv2dOptions, Element, Reduce, Tape, Var};

/// Denominator used to turn GRN channel norms into relative importances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GrnDenominator {
    /// `G_i / (Σ_j G_j + ε)`
    #[default]
    Sum,
    /// `G_i / (mean_j G_j + ε)`
    Mean,
}

/// Block hyperparameters shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockConfig {
    pub expansion: usize,
    pub convnext_kernel: usize,
    pub mbconv_kernel: usize,
    pub norm_epsilon: f64,
    pub grn_epsilon: f64,
    pub grn_denominator: GrnDenominator,
    pub ffn_ratio: usize,
    /// Channels per attention head; heads = max(1, D / head_width).
    pub head_width: usize,
    /// Divide attention scores by sqrt(D / heads).
    pub scale_scores: bool,
    pub attention: AttentionConfig,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            expansion: 4,
            convnext_kernel: 7,
            mbconv_kernel: 3,
            norm_epsilon: 1e-6,
            grn_epsilon: 1e-6,
            grn_denominator: GrnDenominator::Sum,
            ffn_ratio: 4,
            head_width: 32,
            scale_scores: true,
            attention: AttentionConfig::default(),
        }
    }
}

impl BlockConfig {
    pub fn heads(&self, channels: usize) -> Result<usize> {
        if self.head_width == 0 {
            return Err(Error::config("head_width must be positive"));
        }
        let heads = (channels / self.head_width).max(1);
        if !channels.is_multiple_of(heads) {
            return Err(Error::config(format!("{channels} channels do not split into {heads} heads")));
        }
        Ok(heads)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("convnext", self.convnext_kernel), ("mbconv", self.mbconv_kernel)] {
            if k % 2 == 0 {
                return Err(Error::config(format!("{name} depthwise kernel must be odd, got {k}")));
            }
        }
        if self.expansion == 0 || self.ffn_ratio == 0 {
            return Err(Error::config("expansion and ffn_ratio must be positive"));
        }
        if self.norm_epsilon <= 0.0 || self.grn_epsilon < 0.0 {
            return Err(Error::config("norm epsilon must be positive and GRN epsilon non-negative"));
        }
        Ok(())
    }
}

fn weight<T: Element>(src: &mut impl ParamSource<T>, name: &str, out: usize, fan_in: usize) -> Result<Var> {
    src.param(name, &[out, fan_in], Init::KaimingUniform { fan_in })
}

fn bias<T: Element>(src: &mut impl ParamSource<T>, name: &str, out: usize) -> Result<Var> {
    src.param(name, &[out], Init::Zeros)
}

/// Per-channel affine pair of a LayerNorm.
#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub gamma: Var,
    pub beta: Var,
    pub epsilon: f64,
}

impl NormParams {
    pub fn declare<T: Element>(src: &mut impl ParamSource<T>, prefix: &str, channels: usize, epsilon: f64) -> Result<Self> {
        Ok(NormParams {
            gamma: src.param(&join(prefix, "gamma"), &[channels], Init::Ones)?,
            beta: src.param(&join(prefix, "beta"), &[channels], Init::Zeros)?,
            epsilon,
        })
    }

    pub fn apply<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gamma, self.beta, self.epsilon)
    }
}

/// A 1×1 channel projection with bias.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// `out × in`
    pub weight: Var,
    pub bias: Var,
}

impl Projection {
    pub fn declare<T: Element>(src: &mut impl ParamSource<T>, prefix: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Projection {
            weight: weight(src, &join(prefix, "weight"), cout, cin)?,
            bias: bias(src, &join(prefix, "bias"), cout)?,
        })
    }

    pub fn apply<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        pointwise(tape, x, self.weight, Some(self.bias), 1)
    }
}

/// Applies an `out × in` matrix to every spatial location of an N,C,H,W map.
pub fn pointwise<T: Element>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
    let ws = tape.shape(w).to_vec();
    if ws.len() != 2 {
        return Err(Error::dim(format!("projection weight must be rank 2, got {ws:?}")));
    }
    let kernel = tape.reshape(w, &[ws[0], ws[1], 1, 1])?;
    tape.conv2d(x, kernel, b, Conv2dOptions::new(stride, 0))
}

/// Depthwise k×k convolution with bias and same padding.
#[derive(Debug, Clone, Copy)]
pub struct Depthwise {
    /// `C × 1 × k × k`
    pub weight: Var,
    pub bias: Var,
}

impl Depthwise {
    pub fn declare<T: Element>(src: &mut impl ParamSource<T>, prefix: &str, channels: usize, kernel: usize) -> Result<Self> {
        Ok(Depthwise {
            weight: src.param(
                &join(prefix, "weight"),
                &[channels, 1, kernel, kernel],
                Init::KaimingUniform { fan_in: kernel * kernel },
            )?,
            bias: bias(src, &join(prefix, "bias"), channels)?,
        })
    }

    pub fn apply<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let ws = tape.shape(self.weight);
        let (c, k) = (ws[0], ws[2]);
        let opts = Conv2dOptions::new(1, k / 2).with_groups(c);
        tape.conv2d(x, self.weight, Some(self.bias), opts)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GrnParams {
    pub gamma: Var,
    pub beta: Var,
    pub epsilon: f64,
    pub denominator: GrnDenominator,
}

impl GrnParams {
    pub fn declare<T: Element>(
        src: &mut impl ParamSource<T>,
        prefix: &str,
        channels: usize,
        epsilon: f64,
        denominator: GrnDenominator,
    ) -> Result<Self> {
        Ok(GrnParams {
            gamma: src.param(&join(prefix, "gamma"), &[channels], Init::Zeros)?,
            beta: src.param(&join(prefix, "beta"), &[channels], Init::Zeros)?,
            epsilon,
            denominator,
        })
    }
}

/// Relative channel importances `N_i = G_i / (agg_j G_j + ε)` where `G_i` is
/// the L2 norm of channel `i`'s spatial map. Shape `N,C,1,1`.
pub fn grn_response<T: Element>(tape: &mut Tape<T>, x: Var, epsilon: f64, denominator: GrnDenominator) -> Result<Var> {
    let [n, c, h, w] = tape.value(x).dims4()?;
    let sq = tape.mul(x, x)?;
    let sq = tape.reshape(sq, &[n, c, h * w])?;
    let energy = tape.reduce(sq, 2, Reduce::Sum)?;
    let g = tape.unary(energy, crate::tensor::Unary::Sqrt)?;
    let g = tape.reshape(g, &[n, c, 1, 1])?;
    let agg = match denominator {
        GrnDenominator::Sum => tape.reduce(g, 1, Reduce::Sum)?,
        GrnDenominator::Mean => tape.reduce(g, 1, Reduce::Mean)?,
    };
    let agg = tape.add_scalar(agg, epsilon)?;
    tape.div(g, agg)
}

/// `X̂_i = γ_i·X_i·N_i + β_i + X_i`.
pub fn grn<T: Element>(tape: &mut Tape<T>, x: Var, p: &GrnParams) -> Result<Var> {
    let c = tape.value(x).dims4()?[1];
    let resp = grn_response(tape, x, p.epsilon, p.denominator)?;
    let gamma = tape.reshape(p.gamma, &[1, c, 1, 1])?;
    let beta = tape.reshape(p.beta, &[1, c, 1, 1])?;
    let scaled = tape.mul(x, resp)?;
    let scaled = tape.mul(scaled, gamma)?;
    let shifted = tape.add(scaled, beta)?;
    tape.add(shifted, x)
}

#[derive(Debug, Clone, Copy)]
pub struct ConvNeXtV2BlockParams {
    pub depthwise: Depthwise,
    pub norm: NormParams,
    pub attention: AttentionParams,
    pub expand: Projection,
    pub grn: GrnParams,
    pub project: Projection,
}

impl ConvNeXtV2BlockParams {
    pub fn declare<T: Element>(
        src: &mut impl ParamSource<T>,
        prefix: &str,
        channels: usize,
        attention: AttentionKind,
        cfg: &BlockConfig,
    ) -> Result<Self> {
        let hidden = cfg.expansion * channels;
        Ok(ConvNeXtV2BlockParams {
            depthwise: Depthwise::declare(src, &join(prefix, "dw"), channels, cfg.convnext_kernel)?,
            norm: NormParams::declare(src, &join(prefix, "norm"), channels, cfg.norm_epsilon)?,
            attention: AttentionParams::declare(src, &join(prefix, "attn"), attention, channels, &cfg.attention)?,
            expand: Projection::declare(src, &join(prefix, "expand"), channels, hidden)?,
            grn: GrnParams::declare(src, &join(prefix, "grn"), hidden, cfg.grn_epsilon, cfg.grn_denominator)?,
            project: Projection::declare(src, &join(prefix, "project"), hidden, channels)?,
        })
    }
}

/// `Y = X + Project(GRN(GELU(Expand(LayerNorm(DepthwiseConv(X))))))`.
pub fn convnextv2_block<T: Element>(tape: &mut Tape<T>, x: Var, p: &ConvNeXtV2BlockParams) -> Result<Var> {
    if !matches!(p.attention, AttentionParams::None) {
        return Err(Error::contract(
            "convnextv2_block takes no attention module; use improved_convnextv2_block",
        ));
    }
    improved_convnextv2_block(tape, x, p)
}

/// ConvNeXtV2 block with an attention module right after the LayerNorm.
pub fn improved_convnextv2_block<T: Element>(tape: &mut Tape<T>, x: Var, p: &ConvNeXtV2BlockParams) -> Result<Var> {
    let y = p.depthwise.apply(tape, x)?;
    let y = p.norm.apply(tape, y)?;
    let y = apply_attention(tape, y, &p.attention)?;
    let y = p.expand.apply(tape, y)?;
    let y = tape.gelu(y)?;
    let y = grn(tape, y, &p.grn)?;
    let y = p.project.apply(tape, y)?;
    tape.add(x, y)
}

#[derive(Debug, Clone, Copy)]
pub struct MbconvBlockParams {
    pub norm: NormParams,
    pub expand: Projection,
    pub depthwise: Depthwise,
    pub se: SeParams,
    pub project: Projection,
}

impl MbconvBlockParams {
    pub fn declare<T: Element>(src: &mut impl ParamSource<T>, prefix: &str, channels: usize, cfg: &BlockConfig) -> Result<Self> {
        let hidden = cfg.expansion * channels;
        Ok(MbconvBlockParams {
            norm: NormParams::declare(src, &join(prefix, "norm"), channels, cfg.norm_epsilon)?,
            expand: Projection::declare(src, &join(prefix, "expand"), channels, hidden)?,
            depthwise: Depthwise::declare(src, &join(prefix, "dw"), hidden, cfg.mbconv_kernel)?,
            se: SeParams::declare(src, &join(prefix, "se"), hidden, cfg.attention.se_reduction)?,
            project: Projection::declare(src, &join(prefix, "project"), hidden, channels)?,
        })
    }
}

/// `Y = X + Project(SE(GELU(DepthwiseConv(GELU(Expand(Norm(X)))))))`.
pub fn mbconv_block<T: Element>(tape: &mut Tape<T>, x: Var, p: &MbconvBlockParams) -> Result<Var> {
    let y = p.norm.apply(tape, x)?;
    let y = p.expand.apply(tape, y)?;
    let y = tape.gelu(y)?;
    let y = p.depthwise.apply(tape, y)?;
    let y = tape.gelu(y)?;
    let y = crate::attention::se(tape, y, &p.se)?;
    let y = p.project.apply(tape, y)?;
    tape.add(x, y)
}

#[derive(Debug, Clone, Copy)]
pub struct RelAttnParams {
    pub query: Projection,
    pub key: Projection,
    pub value: Projection,
    pub output: Projection,
    /// `heads × (2H−1) × (2W−1)`
    pub bias_table: Var,
    pub heads: usize,
    pub scale_scores: bool,
    pub norm1: NormParams,
    pub norm2: NormParams,
    pub ffn1: Projection,
    pub ffn2: Projection,
}

impl RelAttnParams {
    /// Declares a transformer block operating on `channels × size[0] × size[1]`
    /// maps.
    pub fn declare<T: Element>(
        src: &mut impl ParamSource<T>,
        prefix: &str,
        channels: usize,
        size: [usize; 2],
        cfg: &BlockConfig,
    ) -> Result<Self> {
        let heads = cfg.heads(channels)?;
        let hidden = cfg.ffn_ratio * channels;
        let table = [heads, 2 * size[0] - 1, 2 * size[1] - 1];
        Ok(RelAttnParams {
            norm1: NormParams::declare(src, &join(prefix, "norm1"), channels, cfg.norm_epsilon)?,
            query: Projection::declare(src, &join(prefix, "query"), channels, channels)?,
            key: Projection::declare(src, &join(prefix, "key"), channels, channels)?,
            value: Projection::declare(src, &join(prefix, "value"), channels, channels)?,
            bias_table: src.param(&join(prefix, "rel_bias"), &table, Init::Zeros)?,
            output: Projection::declare(src, &join(prefix, "output"), channels, channels)?,
            norm2: NormParams::declare(src, &join(prefix, "norm2"), channels, cfg.norm_epsilon)?,
            ffn1: Projection::declare(src, &join(prefix, "ffn1"), channels, hidden)?,
            ffn2: Projection::declare(src, &join(prefix, "ffn2"), hidden, channels)?,
            heads,
            scale_scores: cfg.scale_scores,
        })
    }
}

/// Attention weights and projected values, laid out per (sample, head):
/// weights `N·h × L × L` (rows are queries) and values `N·h × D/h × L`.
fn attention_core<T: Element>(tape: &mut Tape<T>, x: Var, p: &RelAttnParams) -> Result<(Var, Var)> {
    let [n, d, h, w] = tape.value(x).dims4()?;
    let heads = p.heads;
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!("{d} channels do not split into {heads} heads")));
    }
    let bias = tape.relative_bias(p.bias_table, h, w)?;
    if tape.shape(bias)[0] != heads {
        return Err(Error::config(format!(
            "bias table has {} heads, block has {heads}",
            tape.shape(bias)[0]
        )));
    }
    let (dh, l) = (d / heads, h * w);
    let split = |tape: &mut Tape<T>, proj: &Projection| -> Result<Var> {
        let y = proj.apply(tape, x)?;
        tape.reshape(y, &[n * heads, dh, l])
    };
    let q = split(tape, &p.query)?;
    let k = split(tape, &p.key)?;
    let v = split(tape, &p.value)?;

    let mut scores = tape.matmul(q, k, true, false)?;
    if p.scale_scores {
        scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
    }
    let scores = tape.reshape(scores, &[n, heads, l, l])?;
    let bias = tape.reshape(bias, &[1, heads, l, l])?;
    let scores = tape.add(scores, bias)?;
    let scores = tape.reshape(scores, &[n * heads, l, l])?;
    let weights = tape.softmax(scores, 2)?;
    Ok((weights, v))
}

/// Attention weights `A` reshaped to `N × heads × L × L`.
pub fn relpos_attention_weights<T: Element>(tape: &mut Tape<T>, x: Var, p: &RelAttnParams) -> Result<Var> {
    let [n, _, h, w] = tape.value(x).dims4()?;
    let (a, _) = attention_core(tape, x, p)?;
    tape.reshape(a, &[n, p.heads, h * w, h * w])
}

/// Multi-head self-attention over the H·W tokens of a map with a learned
/// per-head bias indexed by the 2-D offset between query and key.
pub fn relpos_attention<T: Element>(tape: &mut Tape<T>, x: Var, p: &RelAttnParams) -> Result<Var> {
    let [n, d, h, w] = tape.value(x).dims4()?;
    let (a, v) = attention_core(tape, x, p)?;
    let y = tape.matmul(v, a, false, true)?;
    let y = tape.reshape(y, &[n, d, h, w])?;
    p.output.apply(tape, y)
}

/// Pre-norm transformer block: attention residual followed by FFN residual.
pub fn transformer_block<T: Element>(tape: &mut Tape<T>, x: Var, p: &RelAttnParams) -> Result<Var> {
    let a = p.norm1.apply(tape, x)?;
    let a = relpos_attention(tape, a, p)?;
    let y = tape.add(x, a)?;
    let f = p.norm2.apply(tape, y)?;
    let f = p.ffn1.apply(tape, f)?;
    let f = tape.gelu(f)?;
    let f = p.ffn2.apply(tape, f)?;
    tape.add(y, f)
}

/// Layer family of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    #[serde(rename = "conv3x3_stem")]
    Conv3x3Stem,
    #[serde(rename = "improved_convnextv2")]
    ImprovedConvNeXtV2,
    #[serde(rename = "mbconv")]
    MBConv,
    #[serde(rename = "relpos_transformer")]
    RelPosTransformer,
}

/// Everything needed to declare one residual block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub attention: AttentionKind,
    pub channels: usize,
    /// Spatial extent the block runs at (sizes the relative bias table).
    pub size: [usize; 2],
}

#[derive(Debug, Clone, Copy)]
pub enum BlockParams {
    ConvNeXt(ConvNeXtV2BlockParams),
    MBConv(MbconvBlockParams),
    Transformer(RelAttnParams),
}

impl BlockSpec {
    pub fn declare<T: Element>(&self, src: &mut impl ParamSource<T>, prefix: &str, cfg: &BlockConfig) -> Result<BlockParams> {
        if self.attention != AttentionKind::None && self.kind != BlockKind::ImprovedConvNeXtV2 {
            return Err(Error::config(format!(
                "{:?} blocks do not take an attention module",
                self.kind
            )));
        }
        Ok(match self.kind {
            BlockKind::ImprovedConvNeXtV2 => BlockParams::ConvNeXt(ConvNeXtV2BlockParams::declare(
                src,
                prefix,
                self.channels,
                self.attention,
                cfg,
            )?),
            BlockKind::MBConv => BlockParams::MBConv(MbconvBlockParams::declare(src, prefix, self.channels, cfg)?),
            BlockKind::RelPosTransformer => {
                BlockParams::Transformer(RelAttnParams::declare(src, prefix, self.channels, self.size, cfg)?)
            }
            BlockKind::Conv3x3Stem => return Err(Error::config("the stem is not a residual block")),
        })
    }
}

impl BlockParams {
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self {
            BlockParams::ConvNeXt(p) => improved_convnextv2_block(tape, x, p),
            BlockParams::MBConv(p) => mbconv_block(tape, x, p),
            BlockParams::Transformer(p) => transformer_block(tape, x, p),
        }
    }

    /// Name suffixes of the weights whose zeroing turns the block into the
    /// identity map.
    pub fn final_projections(&self) -> &'static [&'static str] {
        match self {
            BlockParams::ConvNeXt(_) | BlockParams::MBConv(_) => &["project.weight", "project.bias"],
            BlockParams::Transformer(_) => &["output.weight", "output.bias", "ffn2.weight", "ffn2.bias"],
        }
    }
}
