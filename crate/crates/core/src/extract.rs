//! Per-scale patch features: the file-backed dump store that bridges to any
//! external CNN, and a deterministic synthetic extractor whose class signal
//! fades with distance (in log scale) from a preferred image side.
//!
//! Dump layout (little-endian): magic `MSFD`, `u32` version 1, then records
//! of `u16` id length, UTF-8 id, `u32` scale side, `u32` patch count, `u32`
//! dim and `patch count × dim` row-major `f32`. A JSON sidecar next to the
//! dump (`<dump>.index.json`) maps `(image_id, scale_side)` to the record
//! offset and carries the image labels.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::pyramid::ScaleSpec;

pub const DUMP_MAGIC: &[u8; 4] = b"MSFD";
const HEADER_LEN: u64 = 8;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("no record for image `{image_id}` at scale {scale_side}")]
    MissingRecord { image_id: String, scale_side: u32 },
    #[error("corrupt feature dump: {0}")]
    CorruptDump(String),
    #[error("invalid feature set: {0}")]
    InvalidFeatures(String),
    #[error("store holds extractor `{store}`, got features from `{got}`")]
    ExtractorMismatch { store: String, got: String },
    #[error("invalid extractor profile: {0}")]
    InvalidProfile(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad dump index {path}: {source}")]
    Index {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExtractError + '_ {
    move |source| ExtractError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Patch activations of one image at one scale, one row per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureSet {
    pub image_id: String,
    pub scale_side: u32,
    pub extractor_id: String,
    features: Array2<f32>,
}

impl PatchFeatureSet {
    /// Checks that the matrix is nonempty and holds finite, nonnegative values.
    pub fn new(
        image_id: impl Into<String>,
        scale_side: u32,
        extractor_id: impl Into<String>,
        features: Array2<f32>,
    ) -> Result<Self, ExtractError> {
        if features.ncols() == 0 {
            return Err(ExtractError::InvalidFeatures("feature dimension is zero".into()));
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(ExtractError::InvalidFeatures(format!(
                "activation {bad} is not finite and nonnegative"
            )));
        }
        Ok(PatchFeatureSet {
            image_id: image_id.into(),
            scale_side,
            extractor_id: extractor_id.into(),
            features,
        })
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn num_patches(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn patch(&self, p: usize) -> ArrayView1<'_, f32> {
        self.features.row(p)
    }

    pub fn check_geometry(&self, spec: &ScaleSpec) -> Result<(), ExtractError> {
        spec.validate()
            .map_err(|e| ExtractError::InvalidFeatures(e.to_string()))?;
        if spec.side != self.scale_side || spec.num_patches() != self.num_patches() {
            return Err(ExtractError::InvalidFeatures(format!(
                "{} patches at side {}, grid requires {} at side {}",
                self.num_patches(),
                self.scale_side,
                spec.num_patches(),
                spec.side
            )));
        }
        Ok(())
    }
}

/// Parameters of the synthetic extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorProfile {
    pub id: String,
    pub dim: usize,
    /// Natural log of the image side where the class signal peaks.
    pub preferred_log_side: f64,
    /// Width of the Gaussian fall-off, in log-side units.
    pub bandwidth: f64,
    pub seed: u64,
    /// Standard deviation of the per-image nuisance shared by all patches.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    1.0
}

/// Offset every activation starts from before noise and signal.
const BASELINE: f64 = 4.0;
/// Range of the per-patch jitter relative to the per-image nuisance.
const PATCH_NOISE: f64 = 0.25;

impl ExtractorProfile {
    pub fn centered_at(id: impl Into<String>, preferred_side: f64, dim: usize, bandwidth: f64, seed: u64) -> Self {
        ExtractorProfile {
            id: id.into(),
            dim,
            preferred_log_side: preferred_side.ln(),
            bandwidth,
            seed,
            noise: default_noise(),
        }
    }

    pub fn validate(&self) -> Result<(), ExtractError> {
        if self.id.is_empty() {
            return Err(ExtractError::InvalidProfile("empty id".into()));
        }
        if self.dim == 0 {
            return Err(ExtractError::InvalidProfile("dim must be positive".into()));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(ExtractError::InvalidProfile("bandwidth must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !self.preferred_log_side.is_finite() {
            return Err(ExtractError::InvalidProfile("noise and preferred side must be finite".into()));
        }
        Ok(())
    }

    /// Leading dimensions carrying class signal; the rest are pure noise.
    pub fn informative_dims(&self) -> usize {
        ((3 * self.dim).div_ceil(4)).max(1).min(self.dim)
    }

    /// `exp(-(ln side - preferred)² / (2 bandwidth²))`.
    pub fn amplitude(&self, side: u32) -> f64 {
        let dx = (side as f64).ln() - self.preferred_log_side;
        (-(dx * dx) / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Unit-variance class pattern on the informative dimensions.
    pub fn class_pattern(&self, class_label: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(self.seed ^ 0x5eed_c1a5_5e5e_ed00, class_label as u64));
        let k = self.informative_dims();
        (0..self.dim)
            .map(|d| if d < k { rng.sample(StandardNormal) } else { 0.0 })
            .collect()
    }
}

/// SplitMix64 finalizer over a pair, for deriving independent stream seeds.
pub(crate) fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stand-in for a CNN evaluated densely at one scale.
///
/// Each activation is `max(0, BASELINE + a·μ_c[d] + z[d] + 0.25·noise·ε)`
/// where `a` is the profile amplitude at this side, `μ_c` the class pattern,
/// `z ~ N(0, noise²)` a per-image nuisance shared by all patches and
/// `ε ~ U[0, 1)` iid per-patch jitter.
pub fn synthetic_extract(
    class_label: usize,
    instance_seed: u64,
    spec: &ScaleSpec,
    profile: &ExtractorProfile,
) -> Result<PatchFeatureSet, ExtractError> {
    profile.validate()?;
    spec.validate()
        .map_err(|e| ExtractError::InvalidFeatures(e.to_string()))?;
    let amp = profile.amplitude(spec.side);
    let pattern = profile.class_pattern(class_label);
    let stream = mix64(
        mix64(profile.seed, class_label as u64),
        mix64(instance_seed, spec.side as u64),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let base: Vec<f64> = pattern
        .iter()
        .map(|&mu| {
            let z: f64 = rng.sample(StandardNormal);
            BASELINE + amp * mu + profile.noise * z
        })
        .collect();
    let n = spec.num_patches();
    let jitter = (PATCH_NOISE * profile.noise) as f32;
    let base: Vec<f32> = base.into_iter().map(|b| b as f32).collect();
    // 24 random bits per activation give a uniform on [0, 1).
    let mut bits = vec![0u32; n * profile.dim];
    Xoshiro256PlusPlus::seed_from_u64(rng.random()).fill(&mut bits[..]);
    let unit = 1.0 / (1u32 << 24) as f32;
    let mut data = vec![0f32; n * profile.dim];
    for (row, raw) in data.chunks_exact_mut(profile.dim).zip(bits.chunks_exact(profile.dim)) {
        for ((v, &b), &r) in row.iter_mut().zip(&base).zip(raw) {
            *v = (b + jitter * ((r >> 8) as f32 * unit)).max(0.0);
        }
    }
    let features = Array2::from_shape_vec((n, profile.dim), data).expect("shape matches");
    PatchFeatureSet::new(
        format!("c{class_label}_s{instance_seed:016x}"),
        spec.side,
        profile.id.clone(),
        features,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    image_id: String,
    scale_side: u32,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreIndex {
    format: String,
    version: u32,
    extractor_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patch_side: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<u32>,
    records: Vec<IndexEntry>,
    labels: BTreeMap<String, usize>,
}

/// A feature dump plus its sidecar index. One store holds one extractor.
///
/// Reads open their own file handle and may run concurrently; writes need a
/// single writer.
#[derive(Debug)]
pub struct FeatureStore {
    path: PathBuf,
    index_path: PathBuf,
    extractor_id: String,
    geometry: Option<(u32, u32)>,
    records: BTreeMap<(String, u32), u64>,
    labels: BTreeMap<String, usize>,
}

pub fn index_path_for(dump: &Path) -> PathBuf {
    let mut s = dump.as_os_str().to_owned();
    s.push(".index.json");
    PathBuf::from(s)
}

impl FeatureStore {
    /// Creates an empty store, truncating any existing dump. `geometry` is the
    /// `(patch_side, stride)` records are validated against.
    pub fn create(
        path: impl AsRef<Path>,
        extractor_id: impl Into<String>,
        geometry: Option<(u32, u32)>,
    ) -> Result<Self, ExtractError> {
        let path = path.as_ref().to_path_buf();
        let mut f = File::create(&path).map_err(io_err(&path))?;
        binio::write_header(&mut f, DUMP_MAGIC).map_err(io_err(&path))?;
        let store = FeatureStore {
            index_path: index_path_for(&path),
            path,
            extractor_id: extractor_id.into(),
            geometry,
            records: BTreeMap::new(),
            labels: BTreeMap::new(),
        };
        store.write_index()?;
        Ok(store)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ExtractError> {
        let path = path.as_ref().to_path_buf();
        let mut f = File::open(&path).map_err(io_err(&path))?;
        match binio::read_header(&mut f, DUMP_MAGIC) {
            Ok(true) => {}
            Ok(false) => return Err(ExtractError::CorruptDump("bad magic or version".into())),
            Err(_) => return Err(ExtractError::CorruptDump("truncated header".into())),
        }
        let index_path = index_path_for(&path);
        let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
        let index: StoreIndex = serde_json::from_str(&text).map_err(|source| ExtractError::Index {
            path: index_path.clone(),
            source,
        })?;
        if index.format != "MSFD" || index.version != binio::FORMAT_VERSION {
            return Err(ExtractError::CorruptDump(format!(
                "index declares {} v{}",
                index.format, index.version
            )));
        }
        let geometry = match (index.patch_side, index.stride) {
            (Some(p), Some(s)) => Some((p, s)),
            (None, None) => None,
            _ => return Err(ExtractError::CorruptDump("index declares only half of the geometry".into())),
        };
        let records = index
            .records
            .into_iter()
            .map(|e| ((e.image_id, e.scale_side), e.offset))
            .collect();
        Ok(FeatureStore {
            path,
            index_path,
            extractor_id: index.extractor_id,
            geometry,
            records,
            labels: index.labels,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn extractor_id(&self) -> &str {
        &self.extractor_id
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, image_id: &str, scale_side: u32) -> bool {
        self.records.contains_key(&(image_id.to_string(), scale_side))
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, u32)> {
        self.records.keys().map(|(id, s)| (id.as_str(), *s))
    }

    /// `(patch_side, stride)` recorded at creation, if any.
    pub fn geometry(&self) -> Option<(u32, u32)> {
        self.geometry
    }

    pub fn labels(&self) -> &BTreeMap<String, usize> {
        &self.labels
    }

    pub fn set_label(&mut self, image_id: impl Into<String>, category: usize) {
        self.labels.insert(image_id.into(), category);
    }

    fn spec_for(&self, side: u32) -> Option<ScaleSpec> {
        self.geometry.map(|(patch_side, stride)| ScaleSpec {
            side,
            patch_side,
            stride,
        })
    }

    /// Appends one record and rewrites the index. A repeated key replaces the
    /// earlier record; its bytes stay in the dump but are unreachable.
    pub fn save_features(&mut self, set: &PatchFeatureSet) -> Result<(), ExtractError> {
        self.save_batch(std::slice::from_ref(set))
    }

    pub fn save_batch(&mut self, sets: &[PatchFeatureSet]) -> Result<(), ExtractError> {
        for set in sets {
            if set.extractor_id != self.extractor_id {
                return Err(ExtractError::ExtractorMismatch {
                    store: self.extractor_id.clone(),
                    got: set.extractor_id.clone(),
                });
            }
            if let Some(spec) = self.spec_for(set.scale_side) {
                set.check_geometry(&spec)?;
            }
            if set.image_id.len() > u16::MAX as usize {
                return Err(ExtractError::InvalidFeatures("image id longer than 65535 bytes".into()));
            }
        }
        let file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        let mut offset = file.metadata().map_err(io_err(&self.path))?.len();
        let mut w = BufWriter::new(file);
        for set in sets {
            let start = offset;
            write_record(&mut w, set).map_err(io_err(&self.path))?;
            offset += record_len(set);
            self.records
                .insert((set.image_id.clone(), set.scale_side), start);
        }
        w.flush().map_err(io_err(&self.path))?;
        self.write_index()
    }

    pub fn load_features(&self, image_id: &str, scale_side: u32) -> Result<PatchFeatureSet, ExtractError> {
        let offset = *self
            .records
            .get(&(image_id.to_string(), scale_side))
            .ok_or_else(|| ExtractError::MissingRecord {
                image_id: image_id.to_string(),
                scale_side,
            })?;
        let file = File::open(&self.path).map_err(io_err(&self.path))?;
        let file_len = file.metadata().map_err(io_err(&self.path))?.len();
        if offset < HEADER_LEN || offset >= file_len {
            return Err(ExtractError::CorruptDump(format!(
                "offset {offset} outside dump of {file_len} bytes"
            )));
        }
        let mut r = BufReader::new(file);
        r.seek(SeekFrom::Start(offset)).map_err(io_err(&self.path))?;
        let truncated = |_| ExtractError::CorruptDump(format!("truncated record at offset {offset}"));
        let id_len = binio::read_u16(&mut r).map_err(truncated)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(truncated)?;
        let id = String::from_utf8(id)
            .map_err(|_| ExtractError::CorruptDump("image id is not UTF-8".into()))?;
        let side = binio::read_u32(&mut r).map_err(truncated)?;
        let num_patches = binio::read_u32(&mut r).map_err(truncated)? as usize;
        let dim = binio::read_u32(&mut r).map_err(truncated)? as usize;
        if id != image_id || side != scale_side {
            return Err(ExtractError::CorruptDump(format!(
                "index points at ({id}, {side}), expected ({image_id}, {scale_side})"
            )));
        }
        if dim == 0 || num_patches == 0 {
            return Err(ExtractError::CorruptDump(format!(
                "empty matrix {num_patches}x{dim}"
            )));
        }
        let payload_end = offset + 14 + id_len as u64 + (num_patches * dim * 4) as u64;
        if payload_end > file_len {
            return Err(ExtractError::CorruptDump(format!(
                "payload of {num_patches}x{dim} runs past end of dump"
            )));
        }
        if let Some(spec) = self.spec_for(side) {
            if spec.validate().is_err() || spec.num_patches() != num_patches {
                return Err(ExtractError::CorruptDump(format!(
                    "{num_patches} patches declared for side {side}, grid requires {}",
                    if spec.validate().is_ok() { spec.num_patches() } else { 0 }
                )));
            }
        }
        let data = binio::read_f32_vec(&mut r, num_patches * dim).map_err(truncated)?;
        let features = Array2::from_shape_vec((num_patches, dim), data)
            .map_err(|e| ExtractError::CorruptDump(e.to_string()))?;
        PatchFeatureSet::new(id, side, self.extractor_id.clone(), features)
            .map_err(|e| ExtractError::CorruptDump(e.to_string()))
    }

    /// Persists the sidecar index (written via a temporary file and rename).
    pub fn write_index(&self) -> Result<(), ExtractError> {
        let index = StoreIndex {
            format: "MSFD".into(),
            version: binio::FORMAT_VERSION,
            extractor_id: self.extractor_id.clone(),
            patch_side: self.geometry.map(|g| g.0),
            stride: self.geometry.map(|g| g.1),
            records: self
                .records
                .iter()
                .map(|((id, side), &offset)| IndexEntry {
                    image_id: id.clone(),
                    scale_side: *side,
                    offset,
                })
                .collect(),
            labels: self.labels.clone(),
        };
        let text = serde_json::to_string_pretty(&index).map_err(|source| ExtractError::Index {
            path: self.index_path.clone(),
            source,
        })?;
        let tmp = self.index_path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &self.index_path).map_err(io_err(&self.index_path))
    }
}

fn record_len(set: &PatchFeatureSet) -> u64 {
    14 + set.image_id.len() as u64 + (set.num_patches() * set.dim() * 4) as u64
}

fn write_record<W: Write>(w: &mut W, set: &PatchFeatureSet) -> io::Result<()> {
    binio::write_u16(w, set.image_id.len() as u16)?;
    w.write_all(set.image_id.as_bytes())?;
    binio::write_u32(w, set.scale_side)?;
    binio::write_u32(w, set.num_patches() as u32)?;
    binio::write_u32(w, set.dim() as u32)?;
    match set.features.as_slice() {
        Some(s) => binio::write_f32_slice(w, s),
        None => binio::write_f32_slice(w, &set.features.iter().copied().collect::<Vec<_>>()),
    }
}
