//! Experiment orchestration: single-scale sweeps, dual grids, spliced and
//! double-full architectures, splice-point search and report emission.
//!
//! An [`Experiment`] resolves a config into a fixed train/test split and a
//! feature source (feature dumps or the synthetic extractor). Pooled
//! features are computed once per (scale, extractor) and shared by every
//! architecture evaluated in the experiment. All randomness derives from
//! the config seed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{self, ClassifyError, LabeledSet, SvmConfig};
use crate::extract::{self, mix64, ExtractError, ExtractorProfile, FeatureStore, PatchFeatureSet};
use crate::fuse::{self, FuseError};
use crate::metrics::{self, MetricsError, MiOptions};
use crate::pyramid::{PyramidError, ScalePlan, ScaleSpec, DEFAULT_SIDES};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid splice point {point} for {num_scales} scales")]
    InvalidSplice { point: usize, num_scales: usize },
    #[error("{} missing feature records, first: {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    MissingRecords(Vec<String>),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Fuse(#[from] FuseError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report: {0}")]
    Report(String),
}

impl From<PyramidError> for HarnessError {
    fn from(e: PyramidError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl HarnessError {
    /// 2 for configuration problems, 3 for missing or unreadable data,
    /// 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::InvalidSplice { .. } | HarnessError::Report(_) => 2,
            HarnessError::MissingRecords(_) | HarnessError::Io { .. } => 3,
            HarnessError::Extract(e) => match e {
                ExtractError::InvalidProfile(_) | ExtractError::ExtractorMismatch { .. } => 2,
                _ => 3,
            },
            HarnessError::Fuse(_) | HarnessError::Classify(_) | HarnessError::Metrics(_) => 4,
        }
    }
}

type Result<T, E = HarnessError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn default_scales() -> Vec<u32> {
    DEFAULT_SIDES.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub patch_side: u32,
    pub stride: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            patch_side: crate::pyramid::DEFAULT_PATCH_SIDE,
            stride: crate::pyramid::DEFAULT_STRIDE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDataset {
    pub num_categories: usize,
    pub images_per_category: usize,
    pub profiles: Vec<ExtractorProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Extractor id → feature dump path. Labels come from the dump indexes.
    Dumps { stores: BTreeMap<String, PathBuf> },
    Synthetic(SyntheticDataset),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_per_category: usize,
    pub test_per_category: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSettings {
    pub c: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
}

impl Default for SvmSettings {
    fn default() -> Self {
        let d = SvmConfig::default();
        SvmSettings {
            c: d.c,
            tolerance: d.tolerance,
            max_epochs: d.max_epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSettings {
    /// Total reduced dimension of a multi-scale plan, split evenly over scales.
    pub budget: usize,
    pub whiten: bool,
}

impl Default for PcaSettings {
    fn default() -> Self {
        PcaSettings {
            budget: 4096,
            whiten: false,
        }
    }
}

fn default_validation_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_scales")]
    pub scales: Vec<u32>,
    #[serde(default)]
    pub geometry: Geometry,
    /// Extractors used by sweeps; empty means every extractor in the dataset.
    #[serde(default)]
    pub extractors: Vec<String>,
    #[serde(default)]
    pub scene_extractor: Option<String>,
    #[serde(default)]
    pub object_extractor: Option<String>,
    pub split: SplitConfig,
    #[serde(default)]
    pub svm: SvmSettings,
    #[serde(default)]
    pub pca: PcaSettings,
    #[serde(default)]
    pub l2_normalize: bool,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Pick the splice point on test accuracy instead of a validation split.
    #[serde(default)]
    pub select_on_test: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub save_models: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn scale_specs(&self) -> Result<Vec<ScaleSpec>> {
        if self.scales.is_empty() {
            return Err(HarnessError::Config("no scales".into()));
        }
        let specs = self
            .scales
            .iter()
            .map(|&s| ScaleSpec::with_geometry(s, self.geometry.patch_side, self.geometry.stride))
            .collect::<Result<Vec<_>, _>>()?;
        if specs.windows(2).any(|w| w[0].side >= w[1].side) {
            return Err(HarnessError::Config("scales must be strictly ascending".into()));
        }
        Ok(specs)
    }

    fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            c: self.svm.c,
            tolerance: self.svm.tolerance,
            max_epochs: self.svm.max_epochs,
            seed: mix64(self.seed, SOLVER_STREAM),
            ..SvmConfig::default()
        }
    }

    fn dataset_extractors(&self) -> Vec<String> {
        match &self.dataset {
            DatasetConfig::Dumps { stores } => stores.keys().cloned().collect(),
            DatasetConfig::Synthetic(s) => {
                let ids: BTreeSet<String> = s.profiles.iter().map(|p| p.id.clone()).collect();
                ids.into_iter().collect()
            }
        }
    }

    /// Extractors swept by single-scale runs, sorted by id unless listed
    /// explicitly.
    pub fn sweep_extractors(&self) -> Vec<String> {
        if self.extractors.is_empty() {
            self.dataset_extractors()
        } else {
            self.extractors.clone()
        }
    }

    fn role(&self, role: Option<&String>, name: &str) -> Result<String> {
        role.cloned()
            .ok_or_else(|| HarnessError::Config(format!("{name} is not set")))
    }

    pub fn scene(&self) -> Result<String> {
        self.role(self.scene_extractor.as_ref(), "scene_extractor")
    }

    pub fn object(&self) -> Result<String> {
        self.role(self.object_extractor.as_ref(), "object_extractor")
    }
}

const SPLIT_STREAM: u64 = 1;
const SOLVER_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;
const DATA_STREAM: u64 = 4;

/// Synthetic image ids encode nothing; labels travel separately.
pub fn synthetic_image_id(category: usize, index: usize) -> String {
    format!("img_c{category:03}_{index:05}")
}

fn synthetic_instance_seed(seed: u64, category: usize, index: usize) -> u64 {
    mix64(mix64(seed, DATA_STREAM), ((category as u64) << 32) | index as u64)
}

/// Features for one (image, scale, extractor) from either backing.
enum Source {
    Dumps(BTreeMap<String, FeatureStore>),
    Synthetic {
        profiles: BTreeMap<String, ExtractorProfile>,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageEntry {
    pub image_id: String,
    pub label: usize,
    /// Index within its category, used by the synthetic source.
    ordinal: usize,
}

impl Source {
    fn load(&self, image: &ImageEntry, spec: &ScaleSpec, extractor: &str) -> Result<PatchFeatureSet> {
        match self {
            Source::Dumps(stores) => {
                let store = stores
                    .get(extractor)
                    .ok_or_else(|| HarnessError::Config(format!("unknown extractor {extractor}")))?;
                let set = store.load_features(&image.image_id, spec.side)?;
                set.check_geometry(spec)?;
                Ok(set)
            }
            Source::Synthetic { profiles, seed } => {
                let profile = profiles
                    .get(extractor)
                    .ok_or_else(|| HarnessError::Config(format!("unknown extractor {extractor}")))?;
                let mut set = extract::synthetic_extract(
                    image.label,
                    synthetic_instance_seed(*seed, image.label, image.ordinal),
                    spec,
                    profile,
                )?;
                set.image_id = image.image_id.clone();
                Ok(set)
            }
        }
    }

    fn has(&self, image: &ImageEntry, side: u32, extractor: &str) -> bool {
        match self {
            Source::Dumps(stores) => stores.get(extractor).is_some_and(|s| s.contains(&image.image_id, side)),
            Source::Synthetic { profiles, .. } => profiles.contains_key(extractor),
        }
    }
}

/// One feature block of an architecture: an extractor evaluated at a scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub side: u32,
    pub extractor: String,
}

/// A fused descriptor layout to train and score.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub label: String,
    pub blocks: Vec<Block>,
    /// Per-block PCA dimension; `None` keeps the pooled features.
    pub pca_k: Option<usize>,
}

impl Architecture {
    pub fn single(side: u32, extractor: &str) -> Self {
        Architecture {
            label: "single".into(),
            blocks: vec![Block {
                side,
                extractor: extractor.into(),
            }],
            pca_k: None,
        }
    }

    fn from_plans(label: String, plans: &[&ScalePlan], budget: usize) -> Self {
        let blocks: Vec<Block> = plans
            .iter()
            .flat_map(|p| p.entries.iter())
            .map(|e| Block {
                side: e.spec.side,
                extractor: e.extractor_id.clone(),
            })
            .collect();
        let per_plan = plans.first().map_or(1, |p| p.len().max(1));
        Architecture {
            label,
            blocks,
            pca_k: Some((budget / per_plan).max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub architecture: String,
    /// Block scales joined with `;`.
    pub scales: String,
    /// Block extractors joined with `;`, aligned with `scales`.
    pub extractors: String,
    pub accuracy: f64,
    pub class_avg_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
}

impl ResultTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(["architecture", "scales", "extractors", "accuracy", "class_avg_accuracy"])
                .map_err(|e| HarnessError::Report(e.to_string()))?;
        }
        for row in &self.rows {
            w.serialize(row).map_err(|e| HarnessError::Report(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r
            .deserialize()
            .collect::<Result<Vec<ResultRow>, _>>()
            .map_err(|e| HarnessError::Report(e.to_string()))?;
        Ok(ResultTable { rows })
    }

    /// Column-aligned plain text, accuracies as percentages.
    pub fn to_text(&self) -> String {
        let header = ["architecture", "scales", "extractors", "accuracy", "class_avg"];
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.architecture.clone(),
                    r.scales.clone(),
                    r.extractors.clone(),
                    format!("{:.2}", 100.0 * r.accuracy),
                    format!("{:.2}", 100.0 * r.class_avg_accuracy),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |cols: &[&str]| {
            let parts: Vec<String> = cols
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i >= 3 { format!("{c:>w$}") } else { format!("{c:<w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header);
        for row in &cells {
            line(&row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Text => Ok(self.to_text()),
        }
    }

    pub fn best_by_class_avg(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.rows.iter().enumerate() {
            if best.is_none_or(|b| r.class_avg_accuracy > self.rows[b].class_avg_accuracy) {
                best = Some(i);
            }
        }
        best
    }
}

/// Writes a nonempty table to `path`.
pub fn emit_report(table: &ResultTable, format: ReportFormat, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        return Err(HarnessError::Report("empty table".into()));
    }
    let text = table.render(format)?;
    std::fs::write(path, text).map_err(io_err(path))
}

/// Outcome of a splice-point search.
#[derive(Debug, Clone, PartialEq)]
pub struct SpliceSearch {
    pub best: usize,
    /// One row per candidate splice point, scored on the selection split.
    pub table: ResultTable,
}

/// `scale_side, extractor_id, D_bits, R_bits` for one pooled feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scale_side: u32,
    pub extractor_id: String,
    #[serde(rename = "D_bits")]
    pub d_bits: f64,
    #[serde(rename = "R_bits")]
    pub r_bits: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::Report(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

type MatrixKey = (u32, String);

/// A config bound to its data: the split is fixed at construction.
pub struct Experiment {
    config: ExperimentConfig,
    specs: Vec<ScaleSpec>,
    source: Source,
    images: Vec<ImageEntry>,
    num_categories: usize,
    train: Vec<usize>,
    test: Vec<usize>,
    pooled: Mutex<HashMap<MatrixKey, Arc<Array2<f64>>>>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let specs = config.scale_specs()?;
        if !(0.0..1.0).contains(&config.validation_fraction) {
            return Err(HarnessError::Config("validation_fraction must lie in [0, 1)".into()));
        }
        let (source, labeled) = match &config.dataset {
            DatasetConfig::Dumps { stores } => open_dumps(stores, &config.geometry)?,
            DatasetConfig::Synthetic(s) => synthetic_source(s, config.seed)?,
        };
        let num_categories = labeled.iter().map(|e| e.label + 1).max().unwrap_or(0);
        if num_categories < 2 {
            return Err(HarnessError::Config("need at least two categories".into()));
        }
        let (images, train, test) = split(&labeled, num_categories, &config.split, mix64(config.seed, SPLIT_STREAM))?;
        info!(
            "{} categories, {} train / {} test images",
            num_categories,
            train.len(),
            test.len()
        );
        Ok(Experiment {
            config,
            specs,
            source,
            images,
            num_categories,
            train,
            test,
            pooled: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn train_images(&self) -> impl Iterator<Item = &ImageEntry> {
        self.train.iter().map(|&i| &self.images[i])
    }

    pub fn test_images(&self) -> impl Iterator<Item = &ImageEntry> {
        self.test.iter().map(|&i| &self.images[i])
    }

    fn spec_for(&self, side: u32) -> Result<ScaleSpec> {
        self.specs
            .iter()
            .copied()
            .find(|s| s.side == side)
            .ok_or_else(|| HarnessError::Config(format!("scale {side} is not in the config")))
    }

    /// Fails with every absent (image, scale, extractor) before any work.
    pub fn check_available(&self, blocks: &[Block]) -> Result<()> {
        let mut missing = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for b in blocks {
            if !seen.insert((b.side, b.extractor.clone())) {
                continue;
            }
            self.spec_for(b.side)?;
            if let Source::Dumps(stores) = &self.source {
                if !stores.contains_key(&b.extractor) {
                    return Err(HarnessError::Config(format!("no dump for extractor {}", b.extractor)));
                }
            }
            if let Source::Synthetic { profiles, .. } = &self.source {
                if !profiles.contains_key(&b.extractor) {
                    return Err(HarnessError::Config(format!("no profile for extractor {}", b.extractor)));
                }
            }
            for img in &self.images {
                if !self.source.has(img, b.side, &b.extractor) {
                    missing.push(format!("{}@{}/{}", img.image_id, b.side, b.extractor));
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::MissingRecords(missing))
        }
    }

    /// Max-pooled features of every split image at one scale, rows in
    /// image order. Cached for the lifetime of the experiment.
    pub fn pooled_matrix(&self, side: u32, extractor: &str) -> Result<Arc<Array2<f64>>> {
        let key = (side, extractor.to_string());
        if let Some(m) = self.pooled.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(m));
        }
        let spec = self.spec_for(side)?;
        let rows: Vec<Vec<f64>> = self
            .images
            .par_iter()
            .map(|img| {
                let set = self.source.load(img, &spec, extractor)?;
                Ok(fuse::max_pool(&set)?.values)
            })
            .collect::<Result<_>>()?;
        let dim = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(HarnessError::Fuse(FuseError::DimensionMismatch {
                expected: dim,
                got: rows[bad].len(),
            }));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let m = Arc::new(Array2::from_shape_vec((self.images.len(), dim), flat).expect("shape"));
        self.pooled.lock().expect("cache lock").insert(key, Arc::clone(&m));
        Ok(m)
    }

    fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.images[i].label).collect()
    }

    /// Builds the fused descriptors for `fit` and `eval` image indices. PCA
    /// (when requested) is fitted on `fit` only.
    fn features(&self, arch: &Architecture, fit: &[usize], eval: &[usize]) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut fit_blocks = Vec::with_capacity(arch.blocks.len());
        let mut eval_blocks = Vec::with_capacity(arch.blocks.len());
        for b in &arch.blocks {
            let all = self.pooled_matrix(b.side, &b.extractor)?;
            let f = all.select(Axis(0), fit);
            let e = all.select(Axis(0), eval);
            match arch.pca_k {
                None => {
                    fit_blocks.push(f);
                    eval_blocks.push(e);
                }
                Some(k) => {
                    let max = fit.len().saturating_sub(1).min(f.ncols());
                    let k_eff = k.min(max);
                    if k_eff < k {
                        warn!("{}: PCA dimension {k} clamped to {k_eff}", arch.label);
                    }
                    let model = fuse::pca_fit(f.view(), k_eff)?;
                    fit_blocks.push(project(&model, f.view(), self.config.pca.whiten)?);
                    eval_blocks.push(project(&model, e.view(), self.config.pca.whiten)?);
                }
            }
        }
        let join = |blocks: Vec<Array2<f64>>| -> Array2<f64> {
            let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
            let mut m = concatenate(Axis(1), &views).expect("rows agree");
            if self.config.l2_normalize {
                for mut row in m.rows_mut() {
                    fuse::l2_normalize(row.as_slice_mut().expect("standard layout"));
                }
            }
            m
        };
        Ok((join(fit_blocks), join(eval_blocks)))
    }

    /// Trains on `fit`, scores on `eval`.
    fn score(&self, arch: &Architecture, fit: &[usize], eval: &[usize], save: bool) -> Result<ResultRow> {
        let (xf, xe) = self.features(arch, fit, eval)?;
        let train = LabeledSet::new(xf, self.labels_of(fit), self.num_categories)?;
        let test = LabeledSet::new(xe, self.labels_of(eval), self.num_categories)?;
        let model = classify::svm_train(&train, &self.config.svm_config())?;
        let report = classify::accuracy(&model, &test)?;
        let row = ResultRow {
            architecture: arch.label.clone(),
            scales: arch.blocks.iter().map(|b| b.side.to_string()).collect::<Vec<_>>().join(";"),
            extractors: arch.blocks.iter().map(|b| b.extractor.as_str()).collect::<Vec<_>>().join(";"),
            accuracy: report.overall,
            class_avg_accuracy: report.class_averaged,
        };
        if save && self.config.save_models {
            if let Some(dir) = &self.config.output_dir {
                let name = format!("{}_{}_{}", row.architecture, row.scales, row.extractors).replace([';', '@', '/'], "-");
                let path = dir.join(format!("{name}.msvm"));
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
                let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
                model.write_to(&mut w)?;
                w.flush().map_err(io_err(&path))?;
            }
        }
        info!("{} [{}] {:.4}", row.architecture, row.scales, row.class_avg_accuracy);
        Ok(row)
    }

    /// Train on the training split, score on the test split.
    pub fn evaluate(&self, arch: &Architecture) -> Result<ResultRow> {
        self.check_available(&arch.blocks)?;
        self.score(arch, &self.train, &self.test, true)
    }

    fn evaluate_all(&self, archs: &[Architecture]) -> Result<ResultTable> {
        let blocks: Vec<Block> = archs.iter().flat_map(|a| a.blocks.iter().cloned()).collect();
        self.check_available(&blocks)?;
        let rows = archs
            .par_iter()
            .map(|a| self.score(a, &self.train, &self.test, true))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResultTable { rows })
    }

    fn single_scale_archs(&self, extractors: &[String]) -> Vec<Architecture> {
        extractors
            .iter()
            .flat_map(|e| self.specs.iter().map(move |s| Architecture::single(s.side, e)))
            .collect()
    }

    /// One row per (extractor, scale), extractor-major.
    pub fn run_single_scale_sweep(&self) -> Result<ResultTable> {
        let exts = self.config.sweep_extractors();
        self.evaluate_all(&self.single_scale_archs(&exts))
    }

    /// A-only and B-only single-scale rows followed by every ordered pair
    /// (A at sᵢ, B at sⱼ) of pooled features concatenated without PCA.
    pub fn run_dual_grid(&self, a: &str, b: &str) -> Result<ResultTable> {
        let mut archs = self.single_scale_archs(&[a.to_string(), b.to_string()]);
        for si in &self.specs {
            for sj in &self.specs {
                archs.push(Architecture {
                    label: "dual".into(),
                    blocks: vec![
                        Block {
                            side: si.side,
                            extractor: a.into(),
                        },
                        Block {
                            side: sj.side,
                            extractor: b.into(),
                        },
                    ],
                    pca_k: None,
                });
            }
        }
        self.evaluate_all(&archs)
    }

    pub fn spliced_architecture(&self, splice_point: usize) -> Result<Architecture> {
        let n = self.specs.len();
        if n < 2 || splice_point > n {
            return Err(HarnessError::InvalidSplice {
                point: splice_point,
                num_scales: n,
            });
        }
        let plan = ScalePlan::spliced(&self.specs, splice_point, &self.config.scene()?, &self.config.object()?)?;
        Ok(Architecture::from_plans(
            format!("spliced@{splice_point}"),
            &[&plan],
            self.config.pca.budget,
        ))
    }

    /// Scene extractor below `splice_point`, object extractor from it on,
    /// each scale PCA-reduced to `⌊budget / num_scales⌋`.
    pub fn run_spliced(&self, splice_point: usize) -> Result<ResultRow> {
        let arch = self.spliced_architecture(splice_point)?;
        self.evaluate(&arch)
    }

    /// Same extractor at every scale.
    pub fn run_full(&self, extractor: &str) -> Result<ResultRow> {
        let plan = ScalePlan::full(&self.specs, extractor)?;
        let arch = Architecture::from_plans("full".into(), &[&plan], self.config.pca.budget);
        self.evaluate(&arch)
    }

    /// Per-category train/validation partition of the training split.
    pub fn validation_split(&self) -> (Vec<usize>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.config.seed, VALIDATION_STREAM));
        let mut fit = Vec::new();
        let mut val = Vec::new();
        for c in 0..self.num_categories {
            let mut idx: Vec<usize> = self.train.iter().copied().filter(|&i| self.images[i].label == c).collect();
            idx.shuffle(&mut rng);
            let n_val = ((idx.len() as f64 * self.config.validation_fraction).round() as usize).min(idx.len().saturating_sub(1));
            val.extend_from_slice(&idx[..n_val]);
            fit.extend_from_slice(&idx[n_val..]);
        }
        fit.sort_unstable();
        val.sort_unstable();
        (fit, val)
    }

    /// Scores splice points `0..=num_scales` on the selection split and
    /// returns the best by class-averaged accuracy (lowest index on ties).
    pub fn splice_search(&self) -> Result<SpliceSearch> {
        let n = self.specs.len();
        if n < 2 {
            return Err(HarnessError::InvalidSplice { point: 0, num_scales: n });
        }
        let archs = (0..=n).map(|k| self.spliced_architecture(k)).collect::<Result<Vec<_>>>()?;
        let blocks: Vec<Block> = archs.iter().flat_map(|a| a.blocks.iter().cloned()).collect();
        self.check_available(&blocks)?;
        let (fit, eval) = if self.config.select_on_test {
            (self.train.clone(), self.test.clone())
        } else {
            self.validation_split()
        };
        if eval.is_empty() {
            return Err(HarnessError::Config("selection split is empty".into()));
        }
        let rows = archs
            .par_iter()
            .map(|a| self.score(a, &fit, &eval, false))
            .collect::<Result<Vec<_>>>()?;
        let table = ResultTable { rows };
        let best = table.best_by_class_avg().expect("nonempty");
        Ok(SpliceSearch { best, table })
    }

    /// Both full architectures, each PCA-reduced per scale, concatenated.
    pub fn run_double_full(&self) -> Result<ResultRow> {
        let scene = ScalePlan::full(&self.specs, &self.config.scene()?)?;
        let object = ScalePlan::full(&self.specs, &self.config.object()?)?;
        let arch = Architecture::from_plans("double_full".into(), &[&scene, &object], self.config.pca.budget);
        self.evaluate(&arch)
    }

    /// Discriminability and redundancy of each pooled (scale, extractor)
    /// feature over the training images.
    pub fn run_metrics(&self, opts: &MiOptions) -> Result<Vec<MetricsRow>> {
        let exts = self.config.sweep_extractors();
        let archs = self.single_scale_archs(&exts);
        let blocks: Vec<Block> = archs.iter().flat_map(|a| a.blocks.iter().cloned()).collect();
        self.check_available(&blocks)?;
        let labels = self.labels_of(&self.train);
        let mut rows = Vec::new();
        for b in blocks {
            let m = self.pooled_matrix(b.side, &b.extractor)?;
            let x = m.select(Axis(0), &self.train);
            let report = metrics::feature_report(x.view(), &labels, self.num_categories, opts)?;
            rows.push(MetricsRow {
                scale_side: b.side,
                extractor_id: b.extractor,
                d_bits: report.discriminability,
                r_bits: report.redundancy,
            });
        }
        Ok(rows)
    }
}

fn project(model: &fuse::PcaModel, x: ArrayView2<'_, f64>, whiten: bool) -> Result<Array2<f64>> {
    let k = model.k();
    let mut out = Array2::zeros((x.nrows(), k));
    for (i, row) in x.rows().into_iter().enumerate() {
        let z = fuse::pca_transform(model, &row.to_vec(), whiten)?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&z));
    }
    Ok(out)
}

fn open_dumps(stores: &BTreeMap<String, PathBuf>, geometry: &Geometry) -> Result<(Source, Vec<ImageEntry>)> {
    if stores.is_empty() {
        return Err(HarnessError::Config("no feature dumps configured".into()));
    }
    let mut opened = BTreeMap::new();
    let mut labels: Option<BTreeMap<String, usize>> = None;
    for (id, path) in stores {
        let store = FeatureStore::open(path)?;
        if store.extractor_id() != id {
            return Err(HarnessError::Config(format!(
                "{} holds extractor {}, configured as {id}",
                path.display(),
                store.extractor_id()
            )));
        }
        if let Some((p, s)) = store.geometry() {
            if (p, s) != (geometry.patch_side, geometry.stride) {
                return Err(HarnessError::Config(format!(
                    "{} was extracted with patch {p} stride {s}, config says {} / {}",
                    path.display(),
                    geometry.patch_side,
                    geometry.stride
                )));
            }
        }
        match &labels {
            None if !store.labels().is_empty() => labels = Some(store.labels().clone()),
            Some(known) => {
                for (img, l) in store.labels() {
                    if known.get(img).is_some_and(|k| k != l) {
                        return Err(HarnessError::Config(format!("conflicting labels for {img}")));
                    }
                }
            }
            None => {}
        }
        opened.insert(id.clone(), store);
    }
    let labels = labels.ok_or_else(|| HarnessError::Config("feature dumps carry no labels".into()))?;
    let mut per_cat: BTreeMap<usize, usize> = BTreeMap::new();
    let entries = labels
        .into_iter()
        .map(|(image_id, label)| {
            let c = per_cat.entry(label).or_default();
            *c += 1;
            ImageEntry {
                image_id,
                label,
                ordinal: *c - 1,
            }
        })
        .collect();
    Ok((Source::Dumps(opened), entries))
}

fn synthetic_source(s: &SyntheticDataset, seed: u64) -> Result<(Source, Vec<ImageEntry>)> {
    if s.profiles.is_empty() {
        return Err(HarnessError::Config("synthetic dataset has no profiles".into()));
    }
    let mut profiles = BTreeMap::new();
    for p in &s.profiles {
        p.validate()?;
        if profiles.insert(p.id.clone(), p.clone()).is_some() {
            return Err(HarnessError::Config(format!("duplicate profile {}", p.id)));
        }
    }
    let entries = (0..s.num_categories)
        .flat_map(|c| {
            (0..s.images_per_category).map(move |i| ImageEntry {
                image_id: synthetic_image_id(c, i),
                label: c,
                ordinal: i,
            })
        })
        .collect();
    Ok((Source::Synthetic { profiles, seed }, entries))
}

/// Per category: shuffle (seeded) and take train then test. Returns the
/// selected images plus train and test indices into them.
fn split(
    labeled: &[ImageEntry],
    num_categories: usize,
    cfg: &SplitConfig,
    seed: u64,
) -> Result<(Vec<ImageEntry>, Vec<usize>, Vec<usize>)> {
    if cfg.train_per_category == 0 || cfg.test_per_category == 0 {
        return Err(HarnessError::Config("split counts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..num_categories {
        let mut members: Vec<&ImageEntry> = labeled.iter().filter(|e| e.label == c).collect();
        members.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let need = cfg.train_per_category + cfg.test_per_category;
        if members.len() < need {
            return Err(HarnessError::Config(format!(
                "category {c} has {} images, split needs {need}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (i, e) in members.into_iter().take(need).enumerate() {
            if i < cfg.train_per_category {
                train.push(images.len());
            } else {
                test.push(images.len());
            }
            images.push(e.clone());
        }
    }
    Ok((images, train, test))
}

/// Writes one dump per synthetic profile (all images, all scales) into
/// `dir` as `<extractor>.msfd`, with labels in the index.
pub fn write_synthetic_dumps(
    dataset: &SyntheticDataset,
    specs: &[ScaleSpec],
    seed: u64,
    dir: &Path,
) -> Result<BTreeMap<String, PathBuf>> {
    let (source, entries) = synthetic_source(dataset, seed)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let geometry = specs.first().map(|s| (s.patch_side, s.stride));
    let mut out = BTreeMap::new();
    for p in &dataset.profiles {
        let path = dir.join(format!("{}.msfd", p.id));
        let mut store = FeatureStore::create(&path, &p.id, geometry)?;
        for spec in specs {
            let sets = entries
                .par_iter()
                .map(|e| source.load(e, spec, &p.id))
                .collect::<Result<Vec<_>>>()?;
            store.save_batch(&sets)?;
        }
        for e in &entries {
            store.set_label(e.image_id.clone(), e.label);
        }
        store.write_index()?;
        out.insert(p.id.clone(), path);
    }
    Ok(out)
}
