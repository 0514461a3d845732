//! Dataset manifests, synthetic textures, stratified folds and batch
//! assembly.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const EIGHT_CLASS_NAMES: [&str; 8] = ["ADI", "DEB", "LYM", "MUC", "MUS", "NOR", "STR", "TUM"];
pub const BINARY_CLASS_NAMES: [&str; 2] = ["abnormal", "normal"];

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "bmp", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    EightClass,
    Binary,
}

impl DatasetMode {
    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            DatasetMode::EightClass => &EIGHT_CLASS_NAMES,
            DatasetMode::Binary => &BINARY_CLASS_NAMES,
        }
    }

    pub fn num_classes(self) -> usize {
        self.class_names().len()
    }
}

/// Where the pixels of an entry come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    File(PathBuf),
    /// Generated on demand from the texture recipe and this seed.
    Synth(u64),
}

impl EntrySource {
    fn render(&self) -> String {
        match self {
            EntrySource::File(p) => p.display().to_string(),
            EntrySource::Synth(s) => format!("synth:{s}"),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s.strip_prefix("synth:") {
            Some(seed) => seed
                .parse()
                .map(EntrySource::Synth)
                .map_err(|_| Error::Validation(format!("bad synthetic entry {s}"))),
            None => Ok(EntrySource::File(PathBuf::from(s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: EntrySource,
    pub label: usize,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    /// Height and width shared by every image.
    pub image_size: [usize; 2],
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// Entry indices per label.
    pub fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]; self.num_classes()];
        for (i, e) in self.entries.iter().enumerate() {
            out[e.label].push(i);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            let Some(name) = self.class_names.get(e.label) else {
                return Err(Error::Validation(format!(
                    "entry {i} has label {} outside [0, {})",
                    e.label,
                    self.num_classes()
                )));
            };
            if *name != e.class_name {
                return Err(Error::Validation(format!(
                    "entry {i}: label {} is {name}, entry says {}",
                    e.label, e.class_name
                )));
            }
            seen.insert(e.label, ());
        }
        Ok(())
    }

    /// Writes `path,label,class_name` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path", "label", "class_name"])?;
        for e in &self.entries {
            w.write_record([e.source.render(), e.label.to_string(), e.class_name.clone()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest CSV. Class names are ordered by label; the image
    /// size is given by the caller (or probed from the first file when
    /// `None`).
    pub fn read_csv(path: impl AsRef<Path>, image_size: Option<[usize; 2]>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            path: String,
            label: usize,
            class_name: String,
        }
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let mut entries = vec![];
        let mut names: BTreeMap<usize, String> = BTreeMap::new();
        for row in r.deserialize() {
            let row: Row = row?;
            if let Some(prev) = names.insert(row.label, row.class_name.clone()) {
                if prev != row.class_name {
                    return Err(Error::Validation(format!(
                        "label {} is named both {prev} and {}",
                        row.label, row.class_name
                    )));
                }
            }
            entries.push(ManifestEntry {
                source: EntrySource::parse(&row.path)?,
                label: row.label,
                class_name: row.class_name,
            });
        }
        if names.keys().copied().ne(0..names.len()) {
            return Err(Error::Validation("labels must be contiguous from 0".into()));
        }
        let image_size = match image_size {
            Some(s) => s,
            None => match entries.first().map(|e| &e.source) {
                Some(EntrySource::File(p)) => probe_size(p)?,
                _ => return Err(Error::Validation("image size required for synthetic manifests".into())),
            },
        };
        let m = DatasetManifest {
            entries,
            class_names: names.into_values().collect(),
            image_size,
        };
        m.validate()?;
        Ok(m)
    }
}

fn probe_size(path: &Path) -> Result<[usize; 2]> {
    let (w, h) = image::image_dimensions(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok([h as usize, w as usize])
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = vec![];
    for item in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let item = item.map_err(|e| Error::io(dir, e))?;
        let name = item.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(item.path());
    }
    out.sort();
    Ok(out)
}

/// Lists `root/<class_name>/<image>` files in lexicographic order.
pub fn scan_dataset(root: impl AsRef<Path>, mode: DatasetMode) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let names = mode.class_names();
    let mut per_class: Vec<Vec<PathBuf>> = vec![vec![]; names.len()];
    let mut present = vec![false; names.len()];
    for dir in sorted_dir(root)? {
        if !dir.is_dir() {
            continue;
        }
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some(label) = names.iter().position(|n| *n == name) else {
            return Err(Error::config(format!(
                "unknown class directory {name} (expected one of {})",
                names.join(", ")
            )));
        };
        present[label] = true;
        per_class[label] = sorted_dir(&dir)?.into_iter().filter(|p| p.is_file() && is_image(p)).collect();
    }
    for (label, files) in per_class.iter().enumerate() {
        if !present[label] {
            return Err(Error::config(format!("class directory {} is missing", names[label])));
        }
        if files.is_empty() {
            return Err(Error::config(format!("class {} has no images", names[label])));
        }
    }

    let image_size = probe_size(&per_class[0][0])?;
    let mut offenders = vec![];
    let mut entries = vec![];
    for (label, files) in per_class.into_iter().enumerate() {
        for path in files {
            let size = probe_size(&path)?;
            if size != image_size {
                offenders.push(format!("{} ({}×{})", path.display(), size[0], size[1]));
            }
            entries.push(ManifestEntry {
                source: EntrySource::File(path),
                label,
                class_name: names[label].to_string(),
            });
        }
    }
    if !offenders.is_empty() {
        let shown = offenders.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
        let more = offenders.len().saturating_sub(10);
        return Err(Error::Validation(format!(
            "images differ from {}×{}: {shown}{}",
            image_size[0],
            image_size[1],
            if more > 0 { format!(" and {more} more") } else { String::new() }
        )));
    }
    Ok(DatasetManifest {
        entries,
        class_names: names.iter().map(|s| s.to_string()).collect(),
        image_size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub size: [usize; 2],
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 8,
            per_class: 64,
            size: [32, 32],
        }
    }
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Class names used for synthetic data: the histology names when they fit,
/// otherwise `class_<i>`.
fn synth_names(k: usize) -> Vec<String> {
    match k {
        8 => EIGHT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        2 => BINARY_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        _ => (0..k).map(|i| format!("class_{i}")).collect(),
    }
}

/// `per_class` procedurally textured images per class, label-major.
pub fn synth_dataset(spec: SynthSpec, seed: u64) -> Result<DatasetManifest> {
    if spec.per_class == 0 || spec.num_classes < 2 || spec.size.contains(&0) {
        return Err(Error::config("synthetic data needs ≥2 classes, ≥1 image per class and a positive size"));
    }
    let names = synth_names(spec.num_classes);
    let mut entries = vec![];
    for (label, name) in names.iter().enumerate() {
        for i in 0..spec.per_class {
            entries.push(ManifestEntry {
                source: EntrySource::Synth(mix(mix(seed, label as u64 + 1), i as u64 + 1)),
                label,
                class_name: name.clone(),
            });
        }
    }
    Ok(DatasetManifest {
        entries,
        class_names: names,
        image_size: spec.size,
    })
}

/// Renders one synthetic texture: a class-specific tint plus an oriented
/// sinusoidal grating (orientation and frequency depend on the class),
/// with seeded phase and pixel noise.
pub fn synth_image(label: usize, num_classes: usize, size: [usize; 2], seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = num_classes.max(1) as f64;
    let c = label as f64;
    let hue = c / k;
    let tint: [f64; 3] = [0.0, 1.0 / 3.0, 2.0 / 3.0].map(|o| 0.5 + 0.25 * (2.0 * PI * (hue + o)).cos());
    let theta = PI * c / k;
    let freq = 2.0 + (label % 4) as f64 * 1.5;
    let phase = rng.gen_range(0.0..2.0 * PI);
    let (h, w) = (size[0] as u32, size[1] as u32);
    RgbImage::from_fn(w, h, |x, y| {
        let u = (x as f64 * theta.cos() + y as f64 * theta.sin()) / size[1].max(size[0]) as f64;
        let wave = 0.2 * (2.0 * PI * freq * u + phase).sin();
        let px = tint.map(|t| {
            let v = t + wave + rng.gen_range(-0.08..0.08);
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        });
        image::Rgb(px)
    })
}

/// Stratified assignment of manifest entries to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold of each manifest entry.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for &f in &self.assignment {
            out[f] += 1;
        }
        out
    }

    /// SHA-256 over k and the assignment, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.k as u64).to_le_bytes());
        for &f in &self.assignment {
            h.update((f as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "fold"])?;
        for (i, f) in self.assignment.iter().enumerate() {
            w.write_record([i.to_string(), f.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, k: usize, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let mut assignment = vec![];
        for (row, rec) in r.deserialize::<(usize, usize)>().enumerate() {
            let (i, f) = rec?;
            if i != row || f >= k {
                return Err(Error::Validation(format!("fold CSV row {row} is ({i}, {f})")));
            }
            assignment.push(f);
        }
        Ok(FoldPlan { k, seed, assignment })
    }
}

/// Shuffles each class with a seeded generator and deals its entries
/// round-robin, continuing the rotation from where the previous class
/// stopped so overall fold sizes also stay within one.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    let mut assignment = vec![0; manifest.len()];
    let mut offset = 0;
    for (label, mut members) in manifest.by_class().into_iter().enumerate() {
        if members.len() < k {
            return Err(Error::config(format!(
                "class {} has {} samples, fewer than {k} folds",
                manifest.class_names[label],
                members.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, label as u64));
        members.shuffle(&mut rng);
        for (j, idx) in members.iter().enumerate() {
            assignment[*idx] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(FoldPlan { k, seed, assignment })
}

/// Per-channel standardization applied after scaling pixels to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| s <= 0.0 || !s.is_finite()) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("normalization std must be positive and finite"));
        }
        Ok(())
    }

    pub fn apply(&self, channel: usize, byte: u8) -> f64 {
        (byte as f64 / 255.0 - self.mean[channel]) / self.std[channel]
    }

    /// Inverse of [`Normalization::apply`], rounded to the nearest byte.
    pub fn invert(&self, channel: usize, value: f64) -> u8 {
        ((value * self.std[channel] + self.mean[channel]) * 255.0).round().clamp(0.0, 255.0) as u8
    }
}

/// Decodes (or renders) entry `index` as an RGB image of the manifest size.
/// Writes every entry as `root/<class_name>/<nnnnn>.png` and returns the
/// manifest of the written files, in the same order.
pub fn export_dataset(manifest: &DatasetManifest, root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let mut counters = vec![0usize; manifest.num_classes()];
    let mut entries = Vec::with_capacity(manifest.len());
    for (i, entry) in manifest.entries.iter().enumerate() {
        let dir = root.join(&entry.class_name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{:05}.png", counters[entry.label]));
        counters[entry.label] += 1;
        load_image(manifest, i)?.save(&path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(&path, io),
            other => Error::Image {
                path: path.clone(),
                message: other.to_string(),
            },
        })?;
        entries.push(ManifestEntry {
            source: EntrySource::File(path),
            ..entry.clone()
        });
    }
    Ok(DatasetManifest {
        entries,
        ..manifest.clone()
    })
}

pub fn load_image(manifest: &DatasetManifest, index: usize) -> Result<RgbImage> {
    let entry = manifest
        .entries
        .get(index)
        .ok_or_else(|| Error::contract(format!("index {index} outside manifest of {}", manifest.len())))?;
    let img = match &entry.source {
        EntrySource::Synth(seed) => synth_image(entry.label, manifest.num_classes(), manifest.image_size, *seed),
        EntrySource::File(path) => image::open(path)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Image {
                    path: path.clone(),
                    message: other.to_string(),
                },
            })?
            .to_rgb8(),
    };
    let [h, w] = manifest.image_size;
    if img.height() as usize != h || img.width() as usize != w {
        return Err(Error::Validation(format!(
            "{} is {}×{}, dataset is {h}×{w}",
            entry.source.render(),
            img.height(),
            img.width()
        )));
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Element> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Assembles `indices` into an N,3,H,W batch in request order. With
/// `augment`, each image is flipped horizontally and/or vertically by a
/// draw seeded from `(seed, entry index)`.
pub fn load_batch<T: Element>(
    manifest: &DatasetManifest,
    indices: &[usize],
    augment: bool,
    seed: u64,
    norm: &Normalization,
) -> Result<Batch<T>> {
    norm.validate()?;
    if indices.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let [h, w] = manifest.image_size;
    let plane = h * w;
    let mut data = vec![T::zero(); indices.len() * 3 * plane];
    let mut labels = Vec::with_capacity(indices.len());
    for (n, &idx) in indices.iter().enumerate() {
        let img = load_image(manifest, idx)?;
        let (flip_h, flip_v) = if augment {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, idx as u64));
            (rng.gen_bool(0.5), rng.gen_bool(0.5))
        } else {
            (false, false)
        };
        for y in 0..h {
            let sy = if flip_v { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if flip_h { w - 1 - x } else { x };
                let px = img.get_pixel(sx as u32, sy as u32);
                for c in 0..3 {
                    data[(n * 3 + c) * plane + y * w + x] = T::lit(norm.apply(c, px[c]));
                }
            }
        }
        labels.push(manifest.entries[idx].label);
    }
    Ok(Batch {
        images: Tensor::new([indices.len(), 3, h, w], data)?,
        labels,
    })
}

/// Per-channel mean and (population) standard deviation of pixel values
/// scaled to [0, 1] over the given entries.
pub fn channel_stats(manifest: &DatasetManifest, indices: &[usize]) -> Result<Normalization> {
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut count = 0usize;
    for &i in indices {
        let img = load_image(manifest, i)?;
        for px in img.pixels() {
            for c in 0..3 {
                let v = px[c] as f64 / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        count += img.pixels().len();
    }
    if count == 0 {
        return Err(Error::contract("no pixels to summarize"));
    }
    let n = count as f64;
    let mean = sum.map(|s| s / n);
    let mut std = [0.0; 3];
    for c in 0..3 {
        std[c] = (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt().max(1e-6);
    }
    Ok(Normalization { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32, v: u8) {
        RgbImage::from_pixel(w, h, image::Rgb([v, v / 2, 255 - v])).save(path).unwrap();
    }

    fn layout(root: &Path, classes: &[&str], per: usize) {
        for (c, name) in classes.iter().enumerate() {
            std::fs::create_dir_all(root.join(name)).unwrap();
            for i in 0..per {
                write_png(&root.join(name).join(format!("img_{i:02}.png")), 8, 6, (c * 40 + i) as u8);
            }
        }
    }

    #[test]
    fn scans_class_directories_in_order() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), &["normal", "abnormal"], 3);
        std::fs::write(dir.path().join("normal").join("notes.txt"), "x").unwrap();
        let m = scan_dataset(dir.path(), DatasetMode::Binary).unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(m.labels(), [0, 0, 0, 1, 1, 1]);
        assert_eq!(m.image_size, [6, 8]);
        assert_eq!(m.class_names, ["abnormal", "normal"]);
        let again = scan_dataset(dir.path(), DatasetMode::Binary).unwrap();
        assert_eq!(m, again);
        let files: Vec<_> = m.entries.iter().map(|e| e.source.render()).collect();
        let mut sorted = files.clone();
        sorted.sort();
        assert_eq!(files, sorted);
    }

    #[test]
    fn scan_errors() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), &["abnormal", "normal"], 2);
        std::fs::create_dir(dir.path().join("TUM")).unwrap();
        assert!(matches!(scan_dataset(dir.path(), DatasetMode::Binary), Err(Error::Config(_))));

        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), &["abnormal"], 2);
        std::fs::create_dir(dir.path().join("normal")).unwrap();
        let err = scan_dataset(dir.path(), DatasetMode::Binary).unwrap_err();
        assert!(err.to_string().contains("normal"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), &["abnormal", "normal"], 2);
        write_png(&dir.path().join("normal").join("odd.png"), 5, 5, 1);
        let err = scan_dataset(dir.path(), DatasetMode::Binary).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("odd.png"), "{err}");
    }

    #[test]
    fn exported_synthetic_set_scans_back_pixel_for_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let s = synth_dataset(SynthSpec { num_classes: 2, per_class: 3, size: [8, 10] }, 5).unwrap();
        let written = export_dataset(&s, dir.path()).unwrap();
        let scanned = scan_dataset(dir.path(), DatasetMode::Binary).unwrap();
        assert_eq!(scanned, written);
        assert_eq!(scanned.labels(), s.labels());
        for i in 0..s.len() {
            assert_eq!(load_image(&scanned, i).unwrap(), load_image(&s, i).unwrap());
        }
    }

    #[test]
    fn manifest_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        layout(&dir.path().join("data"), &["abnormal", "normal"], 2);
        let m = scan_dataset(dir.path().join("data"), DatasetMode::Binary).unwrap();
        let csv_path = dir.path().join("m.csv");
        m.write_csv(&csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("path,label,class_name\n"));
        assert_eq!(DatasetManifest::read_csv(&csv_path, None).unwrap(), m);

        let s = synth_dataset(SynthSpec { num_classes: 3, per_class: 4, size: [8, 8] }, 1).unwrap();
        s.write_csv(&csv_path).unwrap();
        assert_eq!(DatasetManifest::read_csv(&csv_path, Some([8, 8])).unwrap(), s);
    }

    #[test]
    fn synthetic_data_is_deterministic_and_counted() {
        let spec = SynthSpec::default();
        let a = synth_dataset(spec, 7).unwrap();
        assert_eq!(a.len(), 512);
        assert!(a.by_class().iter().all(|c| c.len() == 64));
        let b = synth_dataset(spec, 7).unwrap();
        let ia = load_image(&a, 100).unwrap();
        let ib = load_image(&b, 100).unwrap();
        assert_eq!(ia.as_raw(), ib.as_raw());
        let c = synth_dataset(spec, 8).unwrap();
        assert_ne!(load_image(&c, 100).unwrap().as_raw(), ia.as_raw());
    }

    #[test]
    fn synthetic_classes_separate_by_mean_color() {
        let m = synth_dataset(SynthSpec { per_class: 10, ..SynthSpec::default() }, 3).unwrap();
        let means: Vec<[f64; 3]> = (0..m.len())
            .map(|i| {
                let img = load_image(&m, i).unwrap();
                let mut s = [0.0; 3];
                for p in img.pixels() {
                    for c in 0..3 {
                        s[c] += p[c] as f64;
                    }
                }
                s.map(|v| v / img.pixels().len() as f64)
            })
            .collect();
        let centroids: Vec<[f64; 3]> = m
            .by_class()
            .iter()
            .map(|idx| {
                let mut s = [0.0; 3];
                for &i in idx {
                    for c in 0..3 {
                        s[c] += means[i][c] / idx.len() as f64;
                    }
                }
                s
            })
            .collect();
        let dist = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
        for (i, e) in m.entries.iter().enumerate() {
            let nearest = (0..8)
                .min_by(|&a, &b| dist(&means[i], &centroids[a]).total_cmp(&dist(&means[i], &centroids[b])))
                .unwrap();
            assert_eq!(nearest, e.label);
        }
    }

    #[test]
    fn folds_are_stratified_and_reproducible() {
        let one = synth_dataset(SynthSpec { num_classes: 2, per_class: 10, size: [4, 4] }, 0).unwrap();
        let plan = make_folds(&one, 5, 1).unwrap();
        assert_eq!(plan.fold_sizes(), [4; 5]);
        for idx in one.by_class() {
            let mut counts = [0; 5];
            for i in idx {
                counts[plan.assignment[i]] += 1;
            }
            assert_eq!(counts, [2; 5]);
        }
        assert_eq!(plan, make_folds(&one, 5, 1).unwrap());
        assert_eq!(plan.hash(), make_folds(&one, 5, 1).unwrap().hash());
        assert_ne!(plan.hash(), make_folds(&one, 5, 2).unwrap().hash());

        let mut all: Vec<usize> = (0..5).flat_map(|f| plan.validation(f)).collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(plan.training(0).len() + plan.validation(0).len(), 20);

        assert!(make_folds(&one, 1, 0).is_err());
        assert!(make_folds(&one, 11, 0).is_err());
    }

    #[test]
    fn fold_csv_round_trip() {
        let m = synth_dataset(SynthSpec { num_classes: 3, per_class: 7, size: [4, 4] }, 0).unwrap();
        let plan = make_folds(&m, 3, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("folds.csv");
        plan.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("index,fold\n"));
        assert_eq!(FoldPlan::read_csv(&p, 3, 9).unwrap(), plan);
    }

    #[test]
    fn normalization_maps_and_inverts() {
        let n = Normalization::default();
        assert_eq!(n.apply(0, 255), 1.0);
        assert_eq!(n.apply(1, 0), -1.0);
        for b in 0..=255u8 {
            assert_eq!(n.invert(2, n.apply(2, b)), b);
        }
    }

    #[test]
    fn batches_follow_request_order() {
        let m = synth_dataset(SynthSpec { num_classes: 4, per_class: 3, size: [6, 5] }, 2).unwrap();
        let norm = Normalization::default();
        let b = load_batch::<f64>(&m, &[7, 0, 11], false, 0, &norm).unwrap();
        assert_eq!(b.images.shape(), &[3, 3, 6, 5]);
        assert_eq!(b.labels, [2, 0, 3]);
        let again = load_batch::<f64>(&m, &[7, 0, 11], false, 99, &norm).unwrap();
        assert_eq!(b, again);
        let img = load_image(&m, 0).unwrap();
        for y in 0..6 {
            for x in 0..5 {
                for c in 0..3 {
                    let v = b.images.at(&[1, c, y, x]);
                    assert_eq!(norm.invert(c, v), img.get_pixel(x as u32, y as u32)[c]);
                }
            }
        }
    }

    #[test]
    fn flips_preserve_labels_and_pixel_multisets() {
        let m = synth_dataset(SynthSpec { num_classes: 2, per_class: 8, size: [7, 6] }, 4).unwrap();
        let norm = Normalization::default();
        let idx: Vec<usize> = (0..16).collect();
        let plain = load_batch::<f32>(&m, &idx, false, 0, &norm).unwrap();
        let flipped = load_batch::<f32>(&m, &idx, true, 5, &norm).unwrap();
        assert_eq!(plain.labels, flipped.labels);
        assert_ne!(plain.images, flipped.images);
        let per_image = 3 * 7 * 6;
        for n in 0..16 {
            for c in 0..3 {
                let range = n * per_image + c * 42..n * per_image + (c + 1) * 42;
                let mut a: Vec<u32> = plain.images.data()[range.clone()].iter().map(|v| v.to_bits()).collect();
                let mut b: Vec<u32> = flipped.images.data()[range].iter().map(|v| v.to_bits()).collect();
                a.sort();
                b.sort();
                assert_eq!(a, b);
            }
        }
        assert_eq!(flipped, load_batch::<f32>(&m, &idx, true, 5, &norm).unwrap());
    }

    #[test]
    fn unreadable_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), &["abnormal", "normal"], 1);
        let m = scan_dataset(dir.path(), DatasetMode::Binary).unwrap();
        let EntrySource::File(p) = &m.entries[1].source else { unreachable!() };
        std::fs::remove_file(p).unwrap();
        let err = load_batch::<f32>(&m, &[1], false, 0, &Normalization::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("img_00.png"));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn channel_stats_of_constant_images() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), &["abnormal", "normal"], 1);
        let m = scan_dataset(dir.path(), DatasetMode::Binary).unwrap();
        let s = channel_stats(&m, &[0]).unwrap();
        assert!((s.mean[0] - 0.0).abs() < 1e-12);
        assert!((s.mean[2] - 1.0).abs() < 1e-12);
        let s = channel_stats(&m, &[0, 1]).unwrap();
        assert!((s.mean[0] - 20.0 / 255.0).abs() < 1e-12);
        assert!((s.std[0] - 20.0 / 255.0).abs() < 1e-12);
    }
}
