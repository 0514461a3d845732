//! SGD training, evaluation, grid search and k-fold cross-validation.

use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_batch, make_folds, mix, DatasetManifest, FoldPlan, Normalization};
use crate::error::{Error, Result};
use crate::metrics::{argmax, auc, metrics_from_confusion, AucReport, ConfusionMatrix, Metrics};
use crate::model::{Model, ModelConfig};
use crate::tensor::{DType, Element, Tape, Tensor};

pub use crate::tensor::ops::cross_entropy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds initialization, shuffling and augmentation.
    pub seed: u64,
    pub precision: DType,
    /// Random horizontal/vertical flips of training images.
    pub augment: bool,
    pub normalization: Normalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            precision: DType::F32,
            augment: false,
            normalization: Normalization::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        self.normalization.validate()
    }
}

/// Momentum buffers, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T> {
    pub velocity: Vec<Vec<T>>,
}

impl<T: Element> SgdState<T> {
    pub fn for_model(model: &Model<T>) -> Self {
        SgdState {
            velocity: model.params().values().map(|t| vec![T::zero(); t.numel()]).collect(),
        }
    }
}

/// `v ← μ·v + g`, `p ← p − lr·v` for every parameter. Nothing is modified
/// unless all gradients and buffers match their parameters.
pub fn sgd_step<'a, T: Element>(
    params: impl IntoIterator<Item = &'a mut Tensor<T>>,
    grads: &[Vec<T>],
    state: &mut SgdState<T>,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    let mut params: Vec<&mut Tensor<T>> = params.into_iter().collect();
    if grads.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::contract(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if grads[i].len() != p.numel() || state.velocity[i].len() != p.numel() {
            return Err(Error::contract(format!(
                "parameter {i} of shape {:?} got a gradient of {} values",
                p.shape(),
                grads[i].len()
            )));
        }
    }
    let (lr, mu) = (T::lit(learning_rate), T::lit(momentum));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = mu * *vi + gi;
            *w = *w - lr * *vi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy over the epoch's mini-batches.
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if history.is_empty() {
        w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])?;
    }
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn rows_f64<T: Element>(logits: &Tensor<T>) -> Vec<Vec<f64>> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        .collect()
}

/// Logits of every requested entry, computed in batches.
fn predict<T: Element>(
    model: &Model<T>,
    manifest: &DatasetManifest,
    indices: &[usize],
    norm: &Normalization,
    batch_size: usize,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut rows = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = load_batch::<T>(manifest, chunk, false, 0, norm)?;
        let logits = model.forward(&batch.images)?;
        rows.extend(rows_f64(&logits));
        labels.extend(batch.labels);
    }
    Ok((rows, labels))
}

fn mean_loss(rows: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let k = rows.first().map_or(0, Vec::len);
    let flat = Tensor::new([rows.len(), k], rows.concat())?;
    cross_entropy(&flat, labels)
}

fn accuracy(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    let hits = rows.iter().zip(labels).filter(|(r, &l)| argmax(r) == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Loss, logit rows and parameter gradients for one mini-batch.
fn step<T: Element>(model: &Model<T>, batch: &crate::data::Batch<T>) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<T>>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true)?;
    let logits = model.forward_on(&mut tape, &bound, &batch.images)?;
    let loss = tape.cross_entropy(logits, &batch.labels)?;
    let value = tape.value(loss).item()?.to_f64().unwrap_or(f64::NAN);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss {value}")));
    }
    let rows = rows_f64(tape.value(logits));
    let mut g = tape.backward(loss)?;
    let grads: Vec<Vec<T>> = bound.vars.iter().map(|&v| g.take(v).expect("trainable leaf")).collect();
    if grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((value, rows, grads))
}

/// Mini-batch SGD on `train` entries, validating on `val` after every
/// epoch (skipped when `val` is empty). Returns the per-epoch history.
pub fn fit<T: Element>(
    model: &mut Model<T>,
    manifest: &DatasetManifest,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train.is_empty() && cfg.epochs > 0 {
        return Err(Error::config("no training entries"));
    }
    if model.config().num_classes != manifest.num_classes() {
        return Err(Error::config(format!(
            "model has {} outputs, dataset has {} classes",
            model.config().num_classes,
            manifest.num_classes()
        )));
    }
    let mut state = SgdState::for_model(model);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order = train.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64)));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = load_batch::<T>(manifest, chunk, cfg.augment, mix(cfg.seed ^ 0xA5A5, epoch as u64), &cfg.normalization)?;
            let at = |e: Error| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, batch {}", b + 1)),
                other => other,
            };
            let (value, rows, grads) = step(model, &batch).map_err(at)?;
            hits += rows.iter().zip(&batch.labels).filter(|(r, &l)| argmax(r) == l).count();
            loss_sum += value * chunk.len() as f64;
            sgd_step(model.params_mut(), &grads, &mut state, cfg.learning_rate, cfg.momentum)?;
        }
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (rows, labels) = predict(model, manifest, val, &cfg.normalization, cfg.batch_size)?;
            let l = mean_loss(&rows, &labels)?;
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("validation loss {l} at epoch {epoch}")));
            }
            (Some(l), Some(accuracy(&rows, &labels)))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}{}",
            record.train_loss,
            record.train_acc,
            match (val_loss, val_acc) {
                (Some(l), Some(a)) => format!(", val loss {l:.4} acc {a:.4}"),
                _ => String::new(),
            }
        );
        history.push(record);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T: Element> {
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
}

/// Trains on every entry outside `fold` and validates on `fold`.
pub fn train<T: Element>(
    mut model: Model<T>,
    manifest: &DatasetManifest,
    plan: &FoldPlan,
    fold: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    check_plan(manifest, plan, fold)?;
    let history = fit(&mut model, manifest, &plan.training(fold), &plan.validation(fold), cfg)?;
    Ok(TrainOutcome { model, history })
}

fn check_plan(manifest: &DatasetManifest, plan: &FoldPlan, fold: usize) -> Result<()> {
    if plan.assignment.len() != manifest.len() {
        return Err(Error::contract(format!(
            "fold plan covers {} entries, manifest has {}",
            plan.assignment.len(),
            manifest.len()
        )));
    }
    if fold >= plan.k {
        return Err(Error::contract(format!("fold {fold} outside [0, {})", plan.k)));
    }
    Ok(())
}

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub fold: Option<usize>,
    pub samples: usize,
    pub class_names: Vec<String>,
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// `None` when no class has both positives and negatives.
    pub auc: Option<AucReport>,
}

impl EvalReport {
    /// Scores `rows` (one logit row per sample) against `labels`.
    pub fn from_logits(class_names: &[String], rows: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        let k = class_names.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::contract(format!("score rows must have {k} entries")));
        }
        let predicted: Vec<usize> = rows.iter().map(|r| argmax(r)).collect();
        let confusion = ConfusionMatrix::from_predictions(k, labels, &predicted)?;
        let metrics = metrics_from_confusion(&confusion)?;
        let auc = match auc(rows, labels) {
            Ok(a) => Some(a),
            Err(e) => {
                log::warn!("AUC not reported: {e}");
                None
            }
        };
        Ok(EvalReport {
            schema: REPORT_SCHEMA,
            fold: None,
            samples: labels.len(),
            class_names: class_names.to_vec(),
            loss: mean_loss(rows, labels)?,
            confusion,
            metrics,
            auc,
        })
    }

    /// Headline numbers, keyed by name.
    pub fn summary(&self) -> IndexMap<String, f64> {
        let m = &self.metrics;
        let mut out: IndexMap<String, f64> = [
            ("accuracy", m.accuracy),
            ("precision", m.precision),
            ("recall", m.recall),
            ("f1", m.f1),
            ("kappa", m.kappa),
            ("loss", self.loss),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        if let Some(a) = &self.auc {
            out.insert("auc".into(), a.value);
        }
        out
    }
}

/// Argmax predictions of `model` on `indices`, scored into a report.
pub fn evaluate<T: Element>(
    model: &Model<T>,
    manifest: &DatasetManifest,
    indices: &[usize],
    norm: &Normalization,
    batch_size: usize,
) -> Result<EvalReport> {
    if model.config().num_classes != manifest.num_classes() {
        return Err(Error::config(format!(
            "model has {} outputs, dataset has {} classes",
            model.config().num_classes,
            manifest.num_classes()
        )));
    }
    let (rows, labels) = predict(model, manifest, indices, norm, batch_size)?;
    EvalReport::from_logits(&manifest.class_names, &rows, &labels)
}

/// Named hyperparameter axes; the Cartesian product is walked with the
/// first axis outermost.
pub type GridSpace = IndexMap<String, Vec<f64>>;

pub const GRID_AXES: [&str; 5] = ["learning_rate", "momentum", "batch_size", "epochs", "seed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub values: IndexMap<String, f64>,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// Index into `rows` of the winner.
    pub best: usize,
    /// Combinations skipped by the budget.
    pub skipped: usize,
}

fn apply_axis(cfg: &mut TrainConfig, name: &str, v: f64) -> Result<()> {
    let whole = || -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::config(format!("{name} must be a whole number, got {v}")))
        }
    };
    match name {
        "learning_rate" => cfg.learning_rate = v,
        "momentum" => cfg.momentum = v,
        "batch_size" => cfg.batch_size = whole()?,
        "epochs" => cfg.epochs = whole()?,
        "seed" => cfg.seed = whole()? as u64,
        other => {
            return Err(Error::config(format!(
                "unknown grid axis {other} (expected one of {})",
                GRID_AXES.join(", ")
            )))
        }
    }
    Ok(())
}

/// Every combination of `space` in walk order.
pub fn grid_points(space: &GridSpace) -> Result<Vec<IndexMap<String, f64>>> {
    if space.is_empty() || space.values().any(Vec::is_empty) {
        return Err(Error::contract("grid search space is empty"));
    }
    let mut points = vec![IndexMap::new()];
    for (name, values) in space {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.insert(name.clone(), v);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// Best row: highest accuracy, then lowest loss, then earliest.
pub fn best_row(rows: &[GridRow]) -> Option<usize> {
    (0..rows.len()).min_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        rb.val_accuracy
            .total_cmp(&ra.val_accuracy)
            .then(ra.val_loss.total_cmp(&rb.val_loss))
            .then(a.cmp(&b))
    })
}

/// Trains one model per grid point on fold 0 of `plan` and ranks them by
/// final validation accuracy. With a budget smaller than the grid, only the
/// first `budget` points in walk order run.
pub fn grid_search<T: Element>(
    space: &GridSpace,
    base: &TrainConfig,
    budget: Option<usize>,
    model_cfg: &ModelConfig,
    manifest: &DatasetManifest,
    plan: &FoldPlan,
) -> Result<(TrainConfig, GridResult)> {
    let points = grid_points(space)?;
    let mut configs = vec![];
    for p in &points {
        let mut cfg = base.clone();
        for (name, &v) in p {
            apply_axis(&mut cfg, name, v)?;
        }
        cfg.validate()?;
        configs.push(cfg);
    }
    let run = budget.unwrap_or(points.len()).min(points.len());
    if run == 0 {
        return Err(Error::contract("grid search budget is zero"));
    }
    let mut rows = vec![];
    for (p, cfg) in points.iter().zip(&configs).take(run) {
        let model = Model::<T>::build(model_cfg.clone(), cfg.seed)?;
        let outcome = train(model, manifest, plan, 0, cfg)?;
        let report = evaluate(&outcome.model, manifest, &plan.validation(0), &cfg.normalization, cfg.batch_size)?;
        log::info!("grid point {p:?}: val acc {:.4}, loss {:.4}", report.metrics.accuracy, report.loss);
        rows.push(GridRow {
            values: p.clone(),
            val_accuracy: report.metrics.accuracy,
            val_loss: report.loss,
        });
    }
    let best = best_row(&rows).expect("at least one row");
    Ok((
        configs[best].clone(),
        GridResult {
            rows,
            best,
            skipped: points.len() - run,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub history: Vec<EpochRecord>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub k: usize,
    pub fold_seed: u64,
    pub fold_hash: String,
    pub folds: Vec<FoldResult>,
    pub mean: IndexMap<String, f64>,
    /// Population standard deviation.
    pub std: IndexMap<String, f64>,
}

/// Mean and population standard deviation of every headline metric,
/// folds taken in id order. A metric missing from any fold is left out.
pub fn aggregate(folds: &[FoldResult]) -> (IndexMap<String, f64>, IndexMap<String, f64>) {
    let mut sorted: Vec<&FoldResult> = folds.iter().collect();
    sorted.sort_by_key(|f| f.fold);
    let summaries: Vec<IndexMap<String, f64>> = sorted.iter().map(|f| f.report.summary()).collect();
    let (mut mean, mut std) = (IndexMap::new(), IndexMap::new());
    let Some(first) = summaries.first() else {
        return (mean, std);
    };
    for key in first.keys() {
        let values: Option<Vec<f64>> = summaries.iter().map(|s| s.get(key).copied()).collect();
        let Some(values) = values else { continue };
        // Welford: equal inputs give their value back exactly and a zero spread
        let (mut m, mut m2) = (0.0, 0.0);
        for (i, v) in values.iter().enumerate() {
            let d = v - m;
            m += d / (i + 1) as f64;
            m2 += d * (v - m);
        }
        mean.insert(key.clone(), m);
        std.insert(key.clone(), (m2 / values.len() as f64).sqrt());
    }
    (mean, std)
}

/// k-fold cross-validation with a fresh model (seeded by `train_cfg.seed`)
/// per fold. `on_fold` sees each trained model before it is dropped.
pub fn cross_validate<T: Element>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    manifest: &DatasetManifest,
    k: usize,
    fold_seed: u64,
    mut on_fold: impl FnMut(usize, &Model<T>) -> Result<()>,
) -> Result<CvSummary> {
    let plan = make_folds(manifest, k, fold_seed)?;
    let mut folds = vec![];
    for fold in 0..k {
        log::info!("fold {}/{k}", fold + 1);
        let model = Model::<T>::build(model_cfg.clone(), train_cfg.seed)?;
        let outcome = train(model, manifest, &plan, fold, train_cfg)?;
        let mut report = evaluate(
            &outcome.model,
            manifest,
            &plan.validation(fold),
            &train_cfg.normalization,
            train_cfg.batch_size,
        )?;
        report.fold = Some(fold);
        on_fold(fold, &outcome.model)?;
        folds.push(FoldResult {
            fold,
            history: outcome.history,
            report,
        });
    }
    let (mean, std) = aggregate(&folds);
    Ok(CvSummary {
        k,
        fold_seed,
        fold_hash: plan.hash(),
        folds,
        mean,
        std,
    })
}
