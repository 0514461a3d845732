//! Run configuration, result artifacts and the attention ablation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{export_dataset, make_folds, scan_dataset, synth_dataset, DatasetManifest, DatasetMode, SynthSpec};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{save_checkpoint, Model, ModelConfig, ParamDiff, Variant};
use crate::tensor::{DType, Element};
use crate::train::{
    cross_validate, evaluate, grid_search, train, write_history, CvSummary, EvalReport, GridResult, GridSpace, TrainConfig,
};

pub const CONFIG_SCHEMA: u32 = 1;

/// Where the images come from. Without `root` the synthetic recipe is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub root: Option<PathBuf>,
    pub mode: DatasetMode,
    pub synth: SynthSpec,
    pub synth_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            mode: DatasetMode::EightClass,
            synth: SynthSpec {
                size: [224, 224],
                ..SynthSpec::default()
            },
            synth_seed: 7,
        }
    }
}

impl DataConfig {
    pub fn num_classes(&self) -> usize {
        match self.root {
            Some(_) => self.mode.num_classes(),
            None => self.synth.num_classes,
        }
    }

    pub fn load(&self) -> Result<DatasetManifest> {
        match &self.root {
            Some(root) => scan_dataset(root, self.mode),
            None => synth_dataset(self.synth, self.synth_seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    pub k: usize,
    pub seed: u64,
    /// Held-out fold for single training runs.
    pub fold: usize,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig { k: 5, seed: 0, fold: 0 }
    }
}

/// Everything a run needs; embedded verbatim in every report it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub folds: FoldConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            folds: FoldConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        if cfg.schema_version != CONFIG_SCHEMA {
            return Err(Error::config(format!(
                "unsupported config schema_version {} (expected {CONFIG_SCHEMA})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the model with a named preset (keeping the class count) and
    /// sizes synthetic images to its input.
    pub fn with_preset(mut self, name: &str) -> Result<Self> {
        self.model = ModelConfig::preset(name, self.model.num_classes)?;
        self.data.synth.size = self.model.input_size;
        Ok(self)
    }

    /// Applies `a.b.c=value`. The value is read as JSON when it parses,
    /// otherwise as a string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment} is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self)?;
        let mut node = &mut tree;
        for key in path.split('.') {
            node = match node {
                Value::Object(map) => map
                    .get_mut(key)
                    .ok_or_else(|| Error::config(format!("unknown config key {path}")))?,
                Value::Array(items) => key
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| Error::config(format!("bad index {key} in {path}")))?,
                _ => return Err(Error::config(format!("{path} goes below a leaf value"))),
            };
        }
        *node = value;
        *self = serde_json::from_value(tree).map_err(|e| Error::config(format!("override {assignment}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.folds.k < 2 {
            return Err(Error::config("folds.k must be at least 2"));
        }
        if self.folds.fold >= self.folds.k {
            return Err(Error::config(format!("folds.fold {} outside [0, {})", self.folds.fold, self.folds.k)));
        }
        if self.model.num_classes != self.data.num_classes() {
            return Err(Error::config(format!(
                "model has {} classes, data has {}",
                self.model.num_classes,
                self.data.num_classes()
            )));
        }
        if self.data.root.is_none() && self.data.synth.size != self.model.input_size {
            return Err(Error::config(format!(
                "synthetic images are {:?} but the model expects {:?}",
                self.data.synth.size, self.model.input_size
            )));
        }
        Ok(())
    }

    fn manifest(&self) -> Result<DatasetManifest> {
        let m = self.data.load()?;
        if m.image_size != self.model.input_size {
            return Err(Error::config(format!(
                "dataset images are {:?}, model expects {:?}",
                m.image_size, self.model.input_size
            )));
        }
        Ok(m)
    }
}

/// Report file: the run config, the tool version, a body, and the only
/// time-dependent value in its own field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<B> {
    pub tool: String,
    pub run_config: RunConfig,
    pub body: B,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl<B: Serialize> Envelope<B> {
    pub fn new(run_config: &RunConfig, body: B) -> Self {
        Envelope {
            tool: crate::TOOL_VERSION.to_string(),
            run_config: run_config.clone(),
            body,
            created_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Confusion matrix as aligned text and as CSV. The CSV header row and
/// first column carry class names, followed by a `total` column and row.
pub fn render_confusion(cm: &ConfusionMatrix, class_names: &[String]) -> Result<(String, String)> {
    let k = cm.order();
    if class_names.len() != k {
        return Err(Error::contract(format!("{} names for a {k}-class matrix", class_names.len())));
    }
    let mut grid: Vec<Vec<String>> = vec![];
    let mut header = vec!["truth\\predicted".to_string()];
    header.extend(class_names.iter().cloned());
    header.push("total".into());
    grid.push(header);
    for (t, name) in class_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(cm.counts[t].iter().map(u64::to_string));
        row.push(cm.row_total(t).to_string());
        grid.push(row);
    }
    let mut totals = vec!["total".to_string()];
    totals.extend((0..k).map(|p| cm.column_total(p).to_string()));
    totals.push(cm.total().to_string());
    grid.push(totals);

    let mut w = csv::Writer::from_writer(vec![]);
    for row in &grid {
        w.write_record(row)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?)
        .expect("csv output is UTF-8");

    let widths: Vec<usize> = (0..=k + 1)
        .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &grid {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(text, "{}", cells.join("  ").trim_end());
    }
    Ok((text, csv))
}

/// Inverse of the CSV half of [`render_confusion`]; totals are checked.
pub fn parse_confusion_csv(text: &str) -> Result<(Vec<String>, ConfusionMatrix)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
    let bad = |m: &str| Error::Validation(format!("confusion CSV: {m}"));
    let header = rows.first().ok_or_else(|| bad("empty"))?;
    if header.len() < 3 || header.get(header.len() - 1) != Some("total") {
        return Err(bad("header must end with a total column"));
    }
    let k = header.len() - 2;
    let names: Vec<String> = header.iter().skip(1).take(k).map(str::to_string).collect();
    if rows.len() != k + 2 {
        return Err(bad(&format!("expected {} rows, found {}", k + 2, rows.len())));
    }
    let number = |s: &str| s.parse::<u64>().map_err(|_| bad(&format!("{s} is not a count")));
    let mut counts = vec![];
    for (t, row) in rows[1..=k].iter().enumerate() {
        if row.len() != k + 2 || row.get(0) != Some(names[t].as_str()) {
            return Err(bad(&format!("row {} does not match class {}", t + 1, names[t])));
        }
        counts.push(row.iter().skip(1).take(k).map(number).collect::<Result<Vec<u64>>>()?);
    }
    let cm = ConfusionMatrix::from_counts(counts)?;
    let last = &rows[k + 1];
    let totals: Vec<u64> = last.iter().skip(1).map(number).collect::<Result<_>>()?;
    let expected: Vec<u64> = (0..k).map(|p| cm.column_total(p)).chain([cm.total()]).collect();
    if last.get(0) != Some("total") || totals != expected {
        return Err(bad("totals row disagrees with the counts"));
    }
    for (t, row) in rows[1..=k].iter().enumerate() {
        if number(row.get(k + 1).unwrap_or(""))? != cm.row_total(t) {
            return Err(bad(&format!("row total of {} disagrees", names[t])));
        }
    }
    Ok((names, cm))
}

fn write_confusion(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    let (text, csv) = render_confusion(&report.confusion, &report.class_names)?;
    write_text(dir.join(format!("{stem}.txt")), &text)?;
    write_text(dir.join(format!("{stem}.csv")), &csv)
}

fn checkpoint_metadata(cfg: &RunConfig, fold: usize) -> IndexMap<String, Value> {
    [
        ("seed", Value::from(cfg.train.seed)),
        ("fold", Value::from(fold)),
        ("k", Value::from(cfg.folds.k)),
        ("fold_seed", Value::from(cfg.folds.seed)),
        ("epochs", Value::from(cfg.train.epochs)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Files written by [`run_train`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub report: PathBuf,
    pub eval: EvalReport,
}

fn train_typed<T: Element>(cfg: &RunConfig) -> Result<TrainArtifacts> {
    let manifest = cfg.manifest()?;
    let plan = make_folds(&manifest, cfg.folds.k, cfg.folds.seed)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    manifest.write_csv(dir.join("manifest.csv"))?;
    plan.write_csv(dir.join("folds.csv"))?;
    let fold = cfg.folds.fold;
    let model = Model::<T>::build(cfg.model.clone(), cfg.train.seed)?;
    let outcome = train(model, &manifest, &plan, fold, &cfg.train)?;
    let mut eval = evaluate(&outcome.model, &manifest, &plan.validation(fold), &cfg.train.normalization, cfg.train.batch_size)?;
    eval.fold = Some(fold);
    let checkpoint = dir.join("checkpoint.ckpt");
    save_checkpoint(&outcome.model, &checkpoint, checkpoint_metadata(cfg, fold))?;
    let history = dir.join("history.csv");
    write_history(&outcome.history, &history)?;
    let report = dir.join("report.json");
    Envelope::new(cfg, &eval).write(&report)?;
    write_confusion(dir, "confusion", &eval)?;
    Ok(TrainArtifacts {
        checkpoint,
        history,
        report,
        eval,
    })
}

/// Trains on every fold but `cfg.folds.fold` and writes the checkpoint,
/// history, report and confusion matrix into `cfg.output_dir`.
pub fn run_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    cfg.validate()?;
    match cfg.train.precision {
        DType::F32 => train_typed::<f32>(cfg),
        DType::F64 => train_typed::<f64>(cfg),
    }
}

fn eval_typed<T: Element>(cfg: &RunConfig, checkpoint: &Path, all: bool) -> Result<EvalReport> {
    let (model, _) = crate::model::load_checkpoint::<T>(checkpoint)?;
    let manifest = cfg.manifest()?;
    let (indices, fold) = if all {
        ((0..manifest.len()).collect(), None)
    } else {
        let plan = make_folds(&manifest, cfg.folds.k, cfg.folds.seed)?;
        (plan.validation(cfg.folds.fold), Some(cfg.folds.fold))
    };
    let mut eval = evaluate(&model, &manifest, &indices, &cfg.train.normalization, cfg.train.batch_size)?;
    eval.fold = fold;
    Ok(eval)
}

/// Scores a checkpoint on the configured validation fold, or on every
/// entry with `all`. The checkpoint's own model config is used.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, all: bool) -> Result<EvalReport> {
    let manifest = crate::model::read_manifest(checkpoint)?;
    let mut cfg = cfg.clone();
    cfg.model = manifest.config;
    cfg.validate()?;
    let eval = match manifest.dtype {
        DType::F32 => eval_typed::<f32>(&cfg, checkpoint, all)?,
        DType::F64 => eval_typed::<f64>(&cfg, checkpoint, all)?,
    };
    create_dir(&cfg.output_dir)?;
    Envelope::new(&cfg, &eval).write(cfg.output_dir.join("eval_report.json"))?;
    write_confusion(&cfg.output_dir, "eval_confusion", &eval)?;
    Ok(eval)
}

fn cv_typed<T: Element>(cfg: &RunConfig, dir: &Path, checkpoints: bool) -> Result<CvSummary> {
    let manifest = cfg.manifest()?;
    create_dir(dir)?;
    let summary = cross_validate::<T>(&cfg.model, &cfg.train, &manifest, cfg.folds.k, cfg.folds.seed, |fold, model| {
        if checkpoints {
            save_checkpoint(model, dir.join(format!("fold{fold}.ckpt")), checkpoint_metadata(cfg, fold))?;
        }
        Ok(())
    })?;
    for f in &summary.folds {
        write_history(&f.history, dir.join(format!("history_fold{}.csv", f.fold)))?;
        write_confusion(dir, &format!("confusion_fold{}", f.fold), &f.report)?;
    }
    Ok(summary)
}

/// k-fold cross-validation writing per-fold checkpoints, histories and
/// confusion matrices plus `cv_report.json` into `cfg.output_dir`.
pub fn run_cv(cfg: &RunConfig) -> Result<CvSummary> {
    cfg.validate()?;
    let summary = match cfg.train.precision {
        DType::F32 => cv_typed::<f32>(cfg, &cfg.output_dir, true)?,
        DType::F64 => cv_typed::<f64>(cfg, &cfg.output_dir, true)?,
    };
    Envelope::new(cfg, &summary).write(cfg.output_dir.join("cv_report.json"))?;
    Ok(summary)
}

/// Ordered list of architecture variants to compare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub variants: Vec<Variant>,
}

impl AblationPlan {
    /// MBConv baseline, ConvNeXtV2, then the three attention modules.
    pub fn full() -> Self {
        AblationPlan {
            variants: Variant::ALL.to_vec(),
        }
    }

    /// `full`, or a comma-separated list of variant names.
    pub fn parse(s: &str) -> Result<Self> {
        if s.trim() == "full" {
            return Ok(Self::full());
        }
        let variants = s.split(',').map(|v| Variant::parse(v.trim())).collect::<Result<Vec<_>>>()?;
        let plan = AblationPlan { variants };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::config("ablation plan is empty"));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].contains(v) {
                return Err(Error::config(format!("variant {} listed twice", v.label())));
            }
        }
        Ok(())
    }
}

/// True when every differing parameter lives in a block of a stage whose
/// blocks the variants swap.
pub fn diff_is_confined(diff: &ParamDiff, base: &ModelConfig) -> bool {
    use crate::blocks::BlockKind;
    let swappable: Vec<String> = base
        .stages
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s.block_kind, BlockKind::ImprovedConvNeXtV2 | BlockKind::MBConv))
        .map(|(i, _)| format!("s{i}.blocks."))
        .collect();
    diff.names().all(|n| swappable.iter().any(|p| n.starts_with(p.as_str())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub fold_hash: String,
    /// Parameter names differ from the first variant only inside swapped
    /// blocks.
    pub diff_confined: bool,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        Ok(AblationTable {
            rows: r.deserialize().collect::<std::result::Result<_, _>>()?,
        })
    }

    /// Aligned text table for terminals.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<18} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "variant", "params", "acc", "±", "prec", "recall", "f1", "auc"
        );
        for r in &self.rows {
            let auc = r.auc.map_or("-".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                out,
                "{:<18} {:>9} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8}",
                r.variant, r.params, r.accuracy, r.accuracy_std, r.precision, r.recall, r.f1, auc
            );
        }
        out
    }
}

/// Cross-validates every variant of `plan` under the same data, folds and
/// seeds, writing `ablation.csv` and `ablation.json` into the output
/// directory. Checkpoints are not kept.
pub fn run_ablation(plan: &AblationPlan, cfg: &RunConfig) -> Result<AblationTable> {
    plan.validate()?;
    cfg.validate()?;
    let base_cfg = cfg.model.clone().with_variant(plan.variants[0]);
    let base = Model::<f32>::layout(&base_cfg)?;
    let mut rows = vec![];
    let mut summaries = IndexMap::new();
    for &v in &plan.variants {
        log::info!("ablation variant {}", v.label());
        let mut run = cfg.clone();
        run.model = cfg.model.clone().with_variant(v);
        let layout = Model::<f32>::layout(&run.model)?;
        let diff = layout_diff(&base, &layout);
        let dir = cfg.output_dir.join(format!("{v:?}").to_lowercase());
        let summary = match run.train.precision {
            DType::F32 => cv_typed::<f32>(&run, &dir, false)?,
            DType::F64 => cv_typed::<f64>(&run, &dir, false)?,
        };
        let m = &summary.mean;
        rows.push(AblationRow {
            variant: v.label().to_string(),
            params: layout.values().map(|s| s.iter().product::<usize>()).sum(),
            fold_hash: summary.fold_hash.clone(),
            diff_confined: diff_is_confined(&diff, &base_cfg),
            accuracy: m["accuracy"],
            accuracy_std: summary.std["accuracy"],
            precision: m["precision"],
            recall: m["recall"],
            f1: m["f1"],
            auc: m.get("auc").copied(),
            kappa: m["kappa"],
        });
        summaries.insert(v.label().to_string(), summary);
    }
    let table = AblationTable { rows };
    write_text(cfg.output_dir.join("ablation.csv"), &table.to_csv()?)?;
    Envelope::new(cfg, &summaries).write(cfg.output_dir.join("ablation.json"))?;
    Ok(table)
}

/// Published size of the full model, for side-by-side comparison only.
pub const REFERENCE_PARAMS: f64 = 18.8e6;
pub const REFERENCE_MEGABYTES: f64 = 110.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub count: usize,
    pub bytes_f32: usize,
    pub reference_count: f64,
    pub reference_megabytes: f64,
    /// Parameters per stage, stem first, then the head.
    pub per_stage: IndexMap<String, usize>,
}

impl ParamReport {
    pub fn for_config(cfg: &ModelConfig) -> Result<Self> {
        let layout = Model::<f32>::layout(cfg)?;
        let mut per_stage: IndexMap<String, usize> = IndexMap::new();
        for (name, shape) in &layout {
            let group = name.split('.').next().unwrap_or(name).to_string();
            *per_stage.entry(group).or_default() += shape.iter().product::<usize>();
        }
        let count = per_stage.values().sum();
        Ok(ParamReport {
            count,
            bytes_f32: 4 * count,
            reference_count: REFERENCE_PARAMS,
            reference_megabytes: REFERENCE_MEGABYTES,
            per_stage,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.count as f64 / self.reference_count
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<12} {:>14} {:>14}\n", "", "this model", "reference");
        let _ = writeln!(
            out,
            "{:<12} {:>14} {:>14}",
            "parameters",
            format!("{:.2} M", self.count as f64 / 1e6),
            format!("{:.1} M", self.reference_count / 1e6)
        );
        let _ = writeln!(
            out,
            "{:<12} {:>14} {:>14}",
            "size",
            format!("{:.1} MB", self.bytes_f32 as f64 / 1e6),
            format!("{:.0} MB", self.reference_megabytes)
        );
        let _ = writeln!(out, "ratio to reference count: {:.3}", self.ratio());
        for (stage, n) in &self.per_stage {
            let _ = writeln!(out, "  {stage:<10} {n:>12}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub space: GridSpace,
    pub best_config: TrainConfig,
    pub result: GridResult,
}

/// Grid search over `space` on fold `cfg.folds.fold`, written to
/// `gridsearch.json` in the output directory.
pub fn run_gridsearch(cfg: &RunConfig, space: &GridSpace, budget: Option<usize>) -> Result<GridReport> {
    cfg.validate()?;
    let manifest = cfg.manifest()?;
    let plan = make_folds(&manifest, cfg.folds.k, cfg.folds.seed)?;
    let (best_config, result) = match cfg.train.precision {
        DType::F32 => grid_search::<f32>(space, &cfg.train, budget, &cfg.model, &manifest, &plan)?,
        DType::F64 => grid_search::<f64>(space, &cfg.train, budget, &cfg.model, &manifest, &plan)?,
    };
    let report = GridReport {
        space: space.clone(),
        best_config,
        result,
    };
    create_dir(&cfg.output_dir)?;
    Envelope::new(cfg, &report).write(cfg.output_dir.join("gridsearch.json"))?;
    Ok(report)
}

/// Writes the configured synthetic set as PNG files under `root` plus a
/// `manifest.csv`, and returns the file-backed manifest.
pub fn run_synth(cfg: &RunConfig, root: &Path) -> Result<DatasetManifest> {
    let manifest = synth_dataset(cfg.data.synth, cfg.data.synth_seed)?;
    let written = export_dataset(&manifest, root)?;
    written.write_csv(root.join("manifest.csv"))?;
    Ok(written)
}

fn layout_diff(left: &IndexMap<String, Vec<usize>>, right: &IndexMap<String, Vec<usize>>) -> ParamDiff {
    let mut d = ParamDiff::default();
    for (name, shape) in left {
        match right.get(name) {
            None => d.only_left.push(name.clone()),
            Some(s) if s != shape => d.reshaped.push(name.clone()),
            _ => {}
        }
    }
    d.only_right = right.keys().filter(|n| !left.contains_key(*n)).cloned().collect();
    d
}
