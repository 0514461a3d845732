//! Network assembly: stem, block stages joined by strided projections, and
//! a pooled classification head.

mod checkpoint;
mod config;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, load_into, read_manifest, save_checkpoint, CheckpointManifest, ParamEntry};
pub use config::{ModelConfig, StageSpec, Variant};

use crate::blocks::{pointwise, BlockParams, BlockSpec, NormParams, Projection};
use crate::error::{Error, Result};
use crate::param::{join, Binder, Initializer, ParamSource};
use crate::tensor::init::Init;
use crate::tensor::{Conv2dOptions, Element, PoolKind, PoolWindow, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct StemLayer {
    pub weight: Var,
    pub bias: Var,
    pub norm: NormParams,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct StageLayers {
    pub downsample: Projection,
    pub blocks: Vec<BlockParams>,
}

/// The declared layer graph, holding tape variables.
#[derive(Debug, Clone)]
pub struct Network {
    pub stem: Vec<StemLayer>,
    pub stages: Vec<StageLayers>,
    pub head_norm: Option<NormParams>,
    pub head: Projection,
}

impl Network {
    pub fn declare<T: Element>(cfg: &ModelConfig, src: &mut impl ParamSource<T>) -> Result<Self> {
        cfg.validate()?;
        let eps = cfg.blocks.norm_epsilon;
        let k = cfg.stem_kernel;
        let mut cin = cfg.in_channels;
        let width = cfg.stages[0].channels;
        let mut stem = vec![];
        for (i, &stride) in cfg.stem_strides.iter().enumerate() {
            let prefix = format!("stem.{i}");
            stem.push(StemLayer {
                weight: src.param(
                    &join(&prefix, "conv.weight"),
                    &[width, cin, k, k],
                    Init::KaimingUniform { fan_in: cin * k * k },
                )?,
                bias: src.param(&join(&prefix, "conv.bias"), &[width], Init::Zeros)?,
                norm: NormParams::declare(src, &join(&prefix, "norm"), width, eps)?,
                stride,
            });
            cin = width;
        }

        let sizes = cfg.stage_sizes();
        let mut stages = vec![];
        for (s, spec) in cfg.stages.iter().enumerate().skip(1) {
            let prefix = format!("s{s}");
            let downsample = Projection::declare(src, &join(&prefix, "down"), cin, spec.channels)?;
            let block = BlockSpec {
                kind: spec.block_kind,
                attention: spec.attention,
                channels: spec.channels,
                size: sizes[s],
            };
            let blocks = (0..spec.layers)
                .map(|l| block.declare(src, &format!("{prefix}.blocks.{l}"), &cfg.blocks))
                .collect::<Result<Vec<_>>>()?;
            stages.push(StageLayers { downsample, blocks });
            cin = spec.channels;
        }

        let head_norm = if cfg.head_norm {
            Some(NormParams::declare(src, "head.norm", cin, eps)?)
        } else {
            None
        };
        let head = Projection::declare(src, "head.fc", cin, cfg.num_classes)?;
        Ok(Network {
            stem,
            stages,
            head_norm,
            head,
        })
    }

    /// Logits for an N,C,H,W batch. When `trace` is given it receives the
    /// output shape of the stem and of every stage.
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, x: Var, mut trace: Option<&mut Vec<Vec<usize>>>) -> Result<Var> {
        let mut h = x;
        for layer in &self.stem {
            let k = tape.shape(layer.weight)[2];
            h = tape.conv2d(h, layer.weight, Some(layer.bias), Conv2dOptions::new(layer.stride, k / 2))?;
            h = layer.norm.apply(tape, h)?;
            h = tape.gelu(h)?;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(tape.shape(h).to_vec());
        }
        for stage in &self.stages {
            h = downsample(tape, h, &stage.downsample)?;
            for block in &stage.blocks {
                h = block.forward(tape, h)?;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(tape.shape(h).to_vec());
            }
        }
        self.head(tape, h)
    }

    /// Global average pool, optional LayerNorm, linear classifier.
    pub fn head<T: Element>(&self, tape: &mut Tape<T>, features: Var) -> Result<Var> {
        let [n, c, _, _] = tape.value(features).dims4()?;
        let mut h = tape.pool2d(features, PoolKind::Avg, PoolWindow::Global, 1)?;
        if let Some(norm) = &self.head_norm {
            h = norm.apply(tape, h)?;
        }
        let h = tape.reshape(h, &[n, c])?;
        tape.linear(h, self.head.weight, Some(self.head.bias))
    }
}

/// 1×1 projection with stride 2; halves H and W.
pub fn downsample<T: Element>(tape: &mut Tape<T>, x: Var, p: &Projection) -> Result<Var> {
    let [_, _, h, w] = tape.value(x).dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("downsampling needs even extents, got {h}×{w}")));
    }
    pointwise(tape, x, p.weight, Some(p.bias), 2)
}

/// Parameter total and its size as 32-bit floats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub count: usize,
    pub bytes_f32: usize,
}

pub fn count_parameters<T: Element>(params: &IndexMap<String, Tensor<T>>) -> ParamCount {
    let count = params.values().map(Tensor::numel).sum();
    ParamCount {
        count,
        bytes_f32: 4 * count,
    }
}

/// Names present in only one model, and shared names whose shapes differ.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDiff {
    pub only_left: Vec<String>,
    pub only_right: Vec<String>,
    pub reshaped: Vec<String>,
}

impl ParamDiff {
    pub fn is_empty(&self) -> bool {
        self.only_left.is_empty() && self.only_right.is_empty() && self.reshaped.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.only_left.iter().chain(&self.only_right).chain(&self.reshaped)
    }
}

pub fn param_diff<T: Element, U: Element>(left: &Model<T>, right: &Model<U>) -> ParamDiff {
    let mut d = ParamDiff::default();
    for (name, t) in left.params() {
        match right.params().get(name) {
            None => d.only_left.push(name.clone()),
            Some(u) if u.shape() != t.shape() => d.reshaped.push(name.clone()),
            _ => {}
        }
    }
    d.only_right = right
        .params()
        .keys()
        .filter(|n| !left.params().contains_key(*n))
        .cloned()
        .collect();
    d
}

/// A model's parameters bound onto a tape.
pub struct Bound<T: Element> {
    pub network: Network,
    /// Parameter variables in model order.
    pub vars: Vec<Var>,
    binder: Binder<T>,
}

impl<T: Element> Bound<T> {
    pub fn var(&self, name: &str) -> Option<Var> {
        self.binder.get(name)
    }
}

/// Configuration plus named parameters in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Element = f32> {
    config: ModelConfig,
    params: IndexMap<String, Tensor<T>>,
}

/// Builds a model with seeded initialization.
pub fn build_model(config: ModelConfig, seed: u64) -> Result<Model<f32>> {
    Model::build(config, seed)
}

impl<T: Element> Model<T> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut tape = Tape::new();
        let mut init = Initializer::new(&mut tape, seed);
        Network::declare(&config, &mut init)?;
        Ok(Model {
            config,
            params: init.into_tensors(),
        })
    }

    /// Wraps existing tensors, checking that names and shapes are exactly
    /// those the configuration declares.
    pub fn from_params(config: ModelConfig, params: IndexMap<String, Tensor<T>>) -> Result<Self> {
        let expected = Self::layout(&config)?;
        for (name, shape) in &expected {
            match params.get(name) {
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = params.keys().find(|n| !expected.contains_key(*n)) {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        let params = expected
            .keys()
            .map(|n| (n.clone(), params[n].clone().with_requires_grad(true)))
            .collect();
        Ok(Model { config, params })
    }

    /// Parameter names and shapes a configuration declares, in order.
    pub fn layout(config: &ModelConfig) -> Result<IndexMap<String, Vec<usize>>> {
        let mut rec = ShapeRecorder::default();
        Network::declare::<T>(config, &mut rec)?;
        Ok(rec.shapes)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> IndexMap<String, Tensor<T>> {
        self.params
    }

    pub fn count_parameters(&self) -> ParamCount {
        count_parameters(&self.params)
    }

    /// Overwrites parameter values in place; names and shapes must match.
    pub fn set_values(&mut self, values: &[Vec<T>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::contract(format!(
                "{} value arrays for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for ((name, t), v) in self.params.iter().zip(values) {
            if t.numel() != v.len() {
                return Err(Error::contract(format!("value length mismatch for {name}")));
            }
        }
        for (t, v) in self.params.values_mut().zip(values) {
            t.data_mut().copy_from_slice(v);
        }
        Ok(())
    }

    /// Parameter tensors in model order, for in-place updates.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.values_mut()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Result<Bound<T>> {
        let mut binder = Binder::bind_all(tape, &self.params, trainable);
        let network = Network::declare(&self.config, &mut binder)?;
        let vars = self.params.keys().map(|n| binder.get(n).expect("bound")).collect();
        Ok(Bound { network, vars, binder })
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = batch.dims4()?;
        let [eh, ew] = self.config.input_size;
        if c != self.config.in_channels || h != eh || w != ew {
            return Err(Error::dim(format!(
                "batch is {c}×{h}×{w}, model expects {}×{eh}×{ew}",
                self.config.in_channels
            )));
        }
        Ok(())
    }

    /// Records the forward pass for `batch` on `tape` and returns the logits.
    pub fn forward_on(&self, tape: &mut Tape<T>, bound: &Bound<T>, batch: &Tensor<T>) -> Result<Var> {
        self.check_input(batch)?;
        let x = tape.constant(batch.clone());
        bound.network.forward(tape, x, None)
    }

    /// Logits `N × num_classes`.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let y = self.forward_on(&mut tape, &bound, batch)?;
        Ok(tape.value(y).clone())
    }

    /// Output shapes of the stem and every stage, followed by the logits
    /// shape.
    pub fn trace(&self, batch: &Tensor<T>) -> Result<Vec<Vec<usize>>> {
        self.check_input(batch)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false)?;
        let x = tape.constant(batch.clone());
        let mut shapes = vec![];
        let y = bound.network.forward(&mut tape, x, Some(&mut shapes))?;
        shapes.push(tape.shape(y).to_vec());
        Ok(shapes)
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(|(n, t)| (n.clone(), t.cast::<U>())).collect(),
        }
    }
}

/// Records declared names and shapes without creating tensors.
#[derive(Default)]
struct ShapeRecorder {
    shapes: IndexMap<String, Vec<usize>>,
    next: usize,
}

impl<T: Element> ParamSource<T> for ShapeRecorder {
    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Var> {
        if self.shapes.insert(name.to_string(), shape.to_vec()).is_some() {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        self.next += 1;
        Ok(Var::placeholder(self.next))
    }
}

#[cfg(test)]
mod tests;
