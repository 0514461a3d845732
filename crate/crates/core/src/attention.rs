//! Channel and spatial attention: CBAM and the SE / ECA alternatives.
//!
//! Attention maps broadcast against the feature map they gate: channel maps
//! (`N,C,1,1`) expand over H and W, spatial maps (`N,1,H,W`) over C.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{join, ParamSource};
use crate::tensor::init::Init;
use crate::tensor::{Conv2dOptions, Element, PoolKind, PoolWindow, Reduce, Tape, Var};

/// Attention module placed after the normalization layer of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    #[default]
    None,
    Se,
    Eca,
    Cbam,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 4] = [
        AttentionKind::None,
        AttentionKind::Se,
        AttentionKind::Eca,
        AttentionKind::Cbam,
    ];
}

/// Hyperparameters of the attention modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub cbam_reduction: usize,
    pub cbam_kernel: usize,
    pub se_reduction: usize,
    pub eca_kernel: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            cbam_reduction: 16,
            cbam_kernel: 7,
            se_reduction: 16,
            eca_kernel: 3,
        }
    }
}

/// Bottleneck width of a reduction MLP.
pub fn hidden_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

fn check_odd(name: &str, k: usize) -> Result<()> {
    if k % 2 == 1 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} kernel size must be odd, got {k}")))
    }
}

/// Shared channel MLP (no biases) and spatial convolution of CBAM.
#[derive(Debug, Clone, Copy)]
pub struct CbamParams {
    /// `C/r × C`
    pub mlp_w1: Var,
    /// `C × C/r`
    pub mlp_w2: Var,
    /// `1 × 2 × k × k`
    pub spatial_kernel: Var,
    /// `1`
    pub spatial_bias: Var,
}

impl CbamParams {
    pub fn declare<T: Element>(
        src: &mut impl ParamSource<T>,
        prefix: &str,
        channels: usize,
        reduction: usize,
        kernel: usize,
    ) -> Result<Self> {
        check_odd("CBAM spatial", kernel)?;
        let hidden = hidden_width(channels, reduction);
        Ok(CbamParams {
            mlp_w1: src.param(&join(prefix, "mlp_w1"), &[hidden, channels], Init::KaimingUniform { fan_in: channels })?,
            mlp_w2: src.param(&join(prefix, "mlp_w2"), &[channels, hidden], Init::KaimingUniform { fan_in: hidden })?,
            spatial_kernel: src.param(
                &join(prefix, "spatial_kernel"),
                &[1, 2, kernel, kernel],
                Init::KaimingUniform { fan_in: 2 * kernel * kernel },
            )?,
            spatial_bias: src.param(&join(prefix, "spatial_bias"), &[1], Init::Zeros)?,
        })
    }
}

/// Squeeze-and-excitation bottleneck (no biases).
#[derive(Debug, Clone, Copy)]
pub struct SeParams {
    pub w1: Var,
    pub w2: Var,
}

impl SeParams {
    pub fn declare<T: Element>(
        src: &mut impl ParamSource<T>,
        prefix: &str,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        let hidden = hidden_width(channels, reduction);
        Ok(SeParams {
            w1: src.param(&join(prefix, "w1"), &[hidden, channels], Init::KaimingUniform { fan_in: channels })?,
            w2: src.param(&join(prefix, "w2"), &[channels, hidden], Init::KaimingUniform { fan_in: hidden })?,
        })
    }
}

/// 1-D kernel slid over the channel axis.
#[derive(Debug, Clone, Copy)]
pub struct EcaParams {
    pub kernel: Var,
}

impl EcaParams {
    pub fn declare<T: Element>(src: &mut impl ParamSource<T>, prefix: &str, kernel: usize) -> Result<Self> {
        check_odd("ECA", kernel)?;
        Ok(EcaParams {
            kernel: src.param(&join(prefix, "kernel"), &[kernel], Init::KaimingUniform { fan_in: kernel })?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum AttentionParams {
    None,
    Se(SeParams),
    Eca(EcaParams),
    Cbam(CbamParams),
}

impl AttentionParams {
    pub fn declare<T: Element>(
        src: &mut impl ParamSource<T>,
        prefix: &str,
        kind: AttentionKind,
        channels: usize,
        cfg: &AttentionConfig,
    ) -> Result<Self> {
        Ok(match kind {
            AttentionKind::None => AttentionParams::None,
            AttentionKind::Se => AttentionParams::Se(SeParams::declare(src, prefix, channels, cfg.se_reduction)?),
            AttentionKind::Eca => AttentionParams::Eca(EcaParams::declare(src, prefix, cfg.eca_kernel)?),
            AttentionKind::Cbam => AttentionParams::Cbam(CbamParams::declare(
                src,
                prefix,
                channels,
                cfg.cbam_reduction,
                cfg.cbam_kernel,
            )?),
        })
    }

    pub fn kind(&self) -> AttentionKind {
        match self {
            AttentionParams::None => AttentionKind::None,
            AttentionParams::Se(_) => AttentionKind::Se,
            AttentionParams::Eca(_) => AttentionKind::Eca,
            AttentionParams::Cbam(_) => AttentionKind::Cbam,
        }
    }
}

fn dims4<T: Element>(tape: &Tape<T>, x: Var) -> Result<[usize; 4]> {
    tape.value(x).dims4()
}

/// Two-layer bottleneck MLP with ReLU applied to `N × C` rows.
fn bottleneck<T: Element>(tape: &mut Tape<T>, rows: Var, w1: Var, w2: Var) -> Result<Var> {
    let h = tape.linear(rows, w1, None)?;
    let h = tape.relu(h)?;
    tape.linear(h, w2, None)
}

/// `M_C = σ(MLP(AvgPool(F)) + MLP(MaxPool(F)))`, shape `N,C,1,1`.
pub fn channel_attention<T: Element>(tape: &mut Tape<T>, f: Var, p: &CbamParams) -> Result<Var> {
    let [n, c, _, _] = dims4(tape, f)?;
    let avg = tape.pool2d(f, PoolKind::Avg, PoolWindow::Global, 1)?;
    let max = tape.pool2d(f, PoolKind::Max, PoolWindow::Global, 1)?;
    let avg = tape.reshape(avg, &[n, c])?;
    let max = tape.reshape(max, &[n, c])?;
    let a = bottleneck(tape, avg, p.mlp_w1, p.mlp_w2)?;
    let m = bottleneck(tape, max, p.mlp_w1, p.mlp_w2)?;
    let s = tape.add(a, m)?;
    let s = tape.sigmoid(s)?;
    tape.reshape(s, &[n, c, 1, 1])
}

/// `M_S = σ(Conv([mean_c(F′); max_c(F′)]))` with same padding, shape `N,1,H,W`.
pub fn spatial_attention<T: Element>(tape: &mut Tape<T>, fp: Var, p: &CbamParams) -> Result<Var> {
    dims4(tape, fp)?;
    let k = tape.shape(p.spatial_kernel)[2];
    let mean = tape.reduce(fp, 1, Reduce::Mean)?;
    let max = tape.reduce(fp, 1, Reduce::Max)?;
    let pooled = tape.concat(&[mean, max], 1)?;
    let logits = tape.conv2d(pooled, p.spatial_kernel, Some(p.spatial_bias), Conv2dOptions::new(1, k / 2))?;
    tape.sigmoid(logits)
}

/// `R_F = M_S(F′) ⊙ F′` with `F′ = M_C(F) ⊙ F`.
pub fn cbam<T: Element>(tape: &mut Tape<T>, f: Var, p: &CbamParams) -> Result<Var> {
    let mc = channel_attention(tape, f, p)?;
    let refined = tape.mul(f, mc)?;
    let ms = spatial_attention(tape, refined, p)?;
    tape.mul(refined, ms)
}

/// Channel gate `σ(w2·ReLU(w1·AvgPool(F)))` applied to `F`.
pub fn se<T: Element>(tape: &mut Tape<T>, f: Var, p: &SeParams) -> Result<Var> {
    let [n, c, _, _] = dims4(tape, f)?;
    let pooled = tape.pool2d(f, PoolKind::Avg, PoolWindow::Global, 1)?;
    let rows = tape.reshape(pooled, &[n, c])?;
    let s = bottleneck(tape, rows, p.w1, p.w2)?;
    let s = tape.sigmoid(s)?;
    let s = tape.reshape(s, &[n, c, 1, 1])?;
    tape.mul(f, s)
}

/// Channel gate from a same-padded 1-D convolution over pooled channel
/// descriptors, applied to `F`.
pub fn eca<T: Element>(tape: &mut Tape<T>, f: Var, p: &EcaParams) -> Result<Var> {
    let [n, c, _, _] = dims4(tape, f)?;
    let k = tape.value(p.kernel).numel();
    let pooled = tape.pool2d(f, PoolKind::Avg, PoolWindow::Global, 1)?;
    let row = tape.reshape(pooled, &[n, 1, 1, c])?;
    let kernel = tape.reshape(p.kernel, &[1, 1, 1, k])?;
    let s = tape.conv2d(row, kernel, None, Conv2dOptions::new(1, 0).with_padding(0, k / 2))?;
    let s = tape.sigmoid(s)?;
    let s = tape.reshape(s, &[n, c, 1, 1])?;
    tape.mul(f, s)
}

/// Applies the selected attention module; `None` is the identity.
pub fn apply_attention<T: Element>(tape: &mut Tape<T>, f: Var, p: &AttentionParams) -> Result<Var> {
    match p {
        AttentionParams::None => Ok(f),
        AttentionParams::Se(p) => se(tape, f, p),
        AttentionParams::Eca(p) => eca(tape, f, p),
        AttentionParams::Cbam(p) => cbam(tape, f, p),
    }
}
