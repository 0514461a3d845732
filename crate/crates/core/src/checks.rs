//! Finite-difference gradient suite over every differentiable layer.
//!
//! Each case draws seeded inputs and parameters (zero-initialized pieces
//! included, so GRN and the relative bias take part) and compares tape
//! gradients with central differences in f64.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, AttentionConfig, AttentionKind, CbamParams, EcaParams, SeParams};
use crate::blocks::{
    self, BlockConfig, BlockKind, BlockSpec, ConvNeXtV2BlockParams, GrnDenominator, GrnParams, RelAttnParams,
};
use crate::error::Result;
use crate::param::{initialize, Binder, ParamSource};
use crate::tensor::{grad_check_all, Conv2dOptions, GradCheckReport, Tape, Tensor, Var};

/// Relative tolerance of the suite.
pub const TOLERANCE: f64 = 1e-4;

const SHAPE: [usize; 4] = [1, 8, 6, 6];

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

fn noise(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale)).expect("shape")
}

fn block_config() -> BlockConfig {
    BlockConfig {
        head_width: 4,
        attention: AttentionConfig {
            cbam_reduction: 4,
            se_reduction: 4,
            ..AttentionConfig::default()
        },
        ..BlockConfig::default()
    }
}

/// Layers whose parameters come from a declaration.
#[derive(Debug, Clone, Copy)]
enum Layer {
    Grn(GrnDenominator),
    ChannelAttention,
    SpatialAttention,
    Cbam,
    Se,
    Eca,
    ConvNeXtV2,
    Block(BlockSpec),
    RelAttention,
}

enum Declared {
    Grn(GrnParams),
    Cbam(CbamParams),
    Se(SeParams),
    Eca(EcaParams),
    ConvNeXt(ConvNeXtV2BlockParams),
    Block(blocks::BlockParams),
    Rel(RelAttnParams),
}

impl Layer {
    fn declare(self, src: &mut impl ParamSource<f64>, cfg: &BlockConfig) -> Result<Declared> {
        let c = SHAPE[1];
        let a = &cfg.attention;
        Ok(match self {
            Layer::Grn(d) => Declared::Grn(GrnParams::declare(src, "grn", c, cfg.grn_epsilon, d)?),
            Layer::ChannelAttention | Layer::SpatialAttention | Layer::Cbam => Declared::Cbam(CbamParams::declare(
                src,
                "cbam",
                c,
                a.cbam_reduction,
                a.cbam_kernel,
            )?),
            Layer::Se => Declared::Se(SeParams::declare(src, "se", c, a.se_reduction)?),
            Layer::Eca => Declared::Eca(EcaParams::declare(src, "eca", a.eca_kernel)?),
            Layer::ConvNeXtV2 => {
                Declared::ConvNeXt(ConvNeXtV2BlockParams::declare(src, "b", c, AttentionKind::None, cfg)?)
            }
            Layer::Block(spec) => Declared::Block(spec.declare(src, "b", cfg)?),
            Layer::RelAttention => Declared::Rel(RelAttnParams::declare(src, "b", c, [SHAPE[2], SHAPE[3]], cfg)?),
        })
    }

    fn forward(self, tape: &mut Tape<f64>, x: Var, p: &Declared) -> Result<Var> {
        match (self, p) {
            (Layer::Grn(_), Declared::Grn(p)) => blocks::grn(tape, x, p),
            (Layer::ChannelAttention, Declared::Cbam(p)) => attention::channel_attention(tape, x, p),
            (Layer::SpatialAttention, Declared::Cbam(p)) => attention::spatial_attention(tape, x, p),
            (Layer::Cbam, Declared::Cbam(p)) => attention::cbam(tape, x, p),
            (Layer::Se, Declared::Se(p)) => attention::se(tape, x, p),
            (Layer::Eca, Declared::Eca(p)) => attention::eca(tape, x, p),
            (Layer::ConvNeXtV2, Declared::ConvNeXt(p)) => blocks::convnextv2_block(tape, x, p),
            (Layer::Block(_), Declared::Block(p)) => p.forward(tape, x),
            (Layer::RelAttention, Declared::Rel(p)) => blocks::relpos_attention(tape, x, p),
            _ => unreachable!("declaration and layer disagree"),
        }
    }
}

/// Checks a declared layer with respect to its input and every parameter.
/// Key-projection biases are held fixed: they shift each query's scores
/// uniformly, so their true gradient is zero and a relative comparison
/// would measure only rounding.
fn check_layer(layer: Layer, seed: u64) -> GradCheckReport {
    let cfg = block_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let declared = match initialize::<f64, _>(seed, |src| layer.declare(src, &cfg)) {
        Ok(p) => p,
        Err(e) => {
            return GradCheckReport {
                max_rel_err: f64::INFINITY,
                worst: None,
                coordinates: 0,
                pass: false,
                failure: Some(format!("declaration failed: {e}")),
            }
        }
    };
    let params: IndexMap<String, Tensor<f64>> =
        declared.iter().map(|(n, t)| (n.clone(), noise(t.shape(), &mut rng, 0.5))).collect();
    let frozen = |n: &str| n.ends_with("key.bias");
    let names: Vec<String> = params.keys().filter(|n| !frozen(n)).cloned().collect();
    let fixed: Vec<(String, Tensor<f64>)> =
        params.iter().filter(|(n, _)| frozen(n)).map(|(n, t)| (n.clone(), t.clone())).collect();
    let mut inputs = vec![noise(&SHAPE, &mut rng, 1.0)];
    inputs.extend(names.iter().map(|n| params[n].clone()));
    grad_check_all(
        |tape, vars| {
            let mut b = Binder::from_vars(tape, &names, &vars[1..]);
            for (n, t) in &fixed {
                let v = tape.constant(t.clone());
                b.insert(n.clone(), v, t.shape().to_vec());
            }
            let p = layer.declare(&mut b, &cfg)?;
            layer.forward(tape, vars[0], &p)
        },
        &inputs,
        TOLERANCE,
    )
}

fn check_primitives(seed: u64) -> Vec<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [n, c, h, w] = SHAPE;
    let x = noise(&SHAPE, &mut rng, 1.0);
    let mut out = vec![];
    let mut push = |name: &str, report| {
        out.push(SuiteEntry {
            name: name.into(),
            report,
        })
    };

    let k = noise(&[c, c / 2, 3, 3], &mut rng, 0.5);
    let b = noise(&[c], &mut rng, 0.5);
    push(
        "conv2d",
        grad_check_all(
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), Conv2dOptions {
                stride: 2,
                padding: [1, 1],
                groups: 2,
            }),
            &[x.clone(), k, b],
            TOLERANCE,
        ),
    );

    let gamma = noise(&[c], &mut rng, 1.0);
    let beta = noise(&[c], &mut rng, 1.0);
    push(
        "layer_norm",
        grad_check_all(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-6), &[x.clone(), gamma, beta], TOLERANCE),
    );

    let scores = noise(&[n * 2, 4, h * w / 4], &mut rng, 2.0);
    push("softmax", grad_check_all(|t, v| t.softmax(v[0], 1), &[scores], TOLERANCE));

    let rows = noise(&[4, c], &mut rng, 1.0);
    let wl = noise(&[5, c], &mut rng, 0.5);
    let bl = noise(&[5], &mut rng, 0.5);
    push(
        "linear",
        grad_check_all(|t, v| t.linear(v[0], v[1], Some(v[2])), &[rows, wl, bl], TOLERANCE),
    );

    let logits = noise(&[6, c], &mut rng, 2.0);
    let labels: Vec<usize> = (0..6).map(|i| (i * 3) % c).collect();
    push(
        "cross_entropy",
        grad_check_all(|t, v| t.cross_entropy(v[0], &labels), &[logits], TOLERANCE),
    );
    out
}

/// Runs every case and returns one entry per layer, in a fixed order.
pub fn gradient_suite() -> Vec<SuiteEntry> {
    let mut out = check_primitives(1);
    let size = [SHAPE[2], SHAPE[3]];
    let block = |kind, attention| {
        Layer::Block(BlockSpec {
            kind,
            attention,
            channels: SHAPE[1],
            size,
        })
    };
    let mut cases: Vec<(String, Layer)> = vec![
        ("grn".into(), Layer::Grn(GrnDenominator::Sum)),
        ("grn (mean denominator)".into(), Layer::Grn(GrnDenominator::Mean)),
        ("channel_attention".into(), Layer::ChannelAttention),
        ("spatial_attention".into(), Layer::SpatialAttention),
        ("cbam".into(), Layer::Cbam),
        ("se".into(), Layer::Se),
        ("eca".into(), Layer::Eca),
        ("convnextv2_block".into(), Layer::ConvNeXtV2),
    ];
    for kind in AttentionKind::ALL {
        cases.push((
            format!("improved_convnextv2_block ({})", format!("{kind:?}").to_lowercase()),
            block(BlockKind::ImprovedConvNeXtV2, kind),
        ));
    }
    cases.push(("mbconv_block".into(), block(BlockKind::MBConv, AttentionKind::None)));
    cases.push(("relpos_attention".into(), Layer::RelAttention));
    cases.push((
        "transformer_block".into(),
        block(BlockKind::RelPosTransformer, AttentionKind::None),
    ));
    for (i, (name, layer)) in cases.into_iter().enumerate() {
        out.push(SuiteEntry {
            name,
            report: check_layer(layer, 100 + i as u64),
        });
    }
    out
}
