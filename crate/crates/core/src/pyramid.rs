//! Scale set and patch-grid geometry.
//!
//! A network with a 227 px receptive field and an overall stride of 32 px,
//! evaluated fully convolutionally over a square image of side `s`, produces
//! the same responses as cropping 227 px patches on a 32 px lattice. The grid
//! computed here is that lattice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;

pub const DEFAULT_PATCH_SIDE: u32 = 227;
pub const DEFAULT_STRIDE: u32 = 32;

/// Sides of the default seven-scale pyramid. 1155 and 1411 are interpolated;
/// the others are the sides the architecture was originally evaluated at.
pub const DEFAULT_SIDES: [u32; 7] = [227, 451, 643, 899, 1155, 1411, 1827];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PyramidError {
    #[error("invalid scale: side {side}, patch {patch_side}, stride {stride}")]
    InvalidScale {
        side: u32,
        patch_side: u32,
        stride: u32,
    },
    #[error("image is empty")]
    EmptyImage,
    #[error("invalid scale plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub side: u32,
    pub patch_side: u32,
    pub stride: u32,
}

impl ScaleSpec {
    /// Scale with the default 227 px patch and 32 px stride. Not validated.
    pub const fn new(side: u32) -> Self {
        ScaleSpec {
            side,
            patch_side: DEFAULT_PATCH_SIDE,
            stride: DEFAULT_STRIDE,
        }
    }

    pub fn with_geometry(side: u32, patch_side: u32, stride: u32) -> Result<Self, PyramidError> {
        let spec = ScaleSpec {
            side,
            patch_side,
            stride,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PyramidError> {
        let ok = self.stride > 0
            && self.patch_side > 0
            && self.side >= self.patch_side
            && (self.side - self.patch_side).is_multiple_of(self.stride);
        if ok {
            Ok(())
        } else {
            Err(PyramidError::InvalidScale {
                side: self.side,
                patch_side: self.patch_side,
                stride: self.stride,
            })
        }
    }

    /// Patch positions along one axis. Assumes a valid spec.
    pub fn per_axis(&self) -> usize {
        ((self.side - self.patch_side) / self.stride + 1) as usize
    }

    /// Total number of patches, `per_axis²`. Assumes a valid spec.
    pub fn num_patches(&self) -> usize {
        let n = self.per_axis();
        n * n
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    /// Top-left offsets in row-major order (y outer, x inner).
    pub positions: Vec<(u32, u32)>,
    pub patch_side: u32,
    pub per_axis: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn default_scale_set() -> Vec<ScaleSpec> {
    DEFAULT_SIDES.iter().map(|&s| ScaleSpec::new(s)).collect()
}

pub fn patch_grid(spec: &ScaleSpec) -> Result<PatchGrid, PyramidError> {
    spec.validate()?;
    let n = spec.per_axis();
    let mut positions = Vec::with_capacity(n * n);
    for j in 0..n as u32 {
        for i in 0..n as u32 {
            positions.push((i * spec.stride, j * spec.stride));
        }
    }
    Ok(PatchGrid {
        positions,
        patch_side: spec.patch_side,
        per_axis: n,
    })
}

/// Resizes so the shorter side equals `target_side` (bilinear), then takes the
/// centered `target_side × target_side` crop.
pub fn resize_image(image: &Raster, target_side: usize) -> Result<Raster, PyramidError> {
    if image.is_empty() || target_side == 0 {
        return Err(PyramidError::EmptyImage);
    }
    let (w, h) = (image.width(), image.height());
    let shorter = w.min(h) as f64;
    let scale = target_side as f64 / shorter;
    let new_w = if w <= h {
        target_side
    } else {
        ((w as f64 * scale).round() as usize).max(target_side)
    };
    let new_h = if h <= w {
        target_side
    } else {
        ((h as f64 * scale).round() as usize).max(target_side)
    };
    let resized = image.resize_bilinear(new_w, new_h);
    if new_w == target_side && new_h == target_side {
        return Ok(resized);
    }
    let x0 = ((new_w - target_side) / 2) as i64;
    let y0 = ((new_h - target_side) / 2) as i64;
    Ok(resized.crop_padded(x0, y0, target_side, target_side, [0, 0, 0]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub spec: ScaleSpec,
    pub extractor_id: String,
}

/// Ordered assignment of extractors to scales.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePlan {
    pub entries: Vec<PlanEntry>,
    pub splice_point: Option<usize>,
}

impl ScalePlan {
    pub fn new(entries: Vec<PlanEntry>, splice_point: Option<usize>) -> Result<Self, PyramidError> {
        let plan = ScalePlan {
            entries,
            splice_point,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Scene-centric extractor below `splice_point`, object-centric from it on.
    pub fn spliced(
        scales: &[ScaleSpec],
        splice_point: usize,
        scene_extractor: &str,
        object_extractor: &str,
    ) -> Result<Self, PyramidError> {
        let entries = scales
            .iter()
            .enumerate()
            .map(|(i, &spec)| PlanEntry {
                spec,
                extractor_id: if i < splice_point {
                    scene_extractor.to_string()
                } else {
                    object_extractor.to_string()
                },
            })
            .collect();
        ScalePlan::new(entries, Some(splice_point))
    }

    /// Same extractor at every scale.
    pub fn full(scales: &[ScaleSpec], extractor: &str) -> Result<Self, PyramidError> {
        let entries = scales
            .iter()
            .map(|&spec| PlanEntry {
                spec,
                extractor_id: extractor.to_string(),
            })
            .collect();
        ScalePlan::new(entries, None)
    }

    pub fn validate(&self) -> Result<(), PyramidError> {
        for e in &self.entries {
            e.spec.validate()?;
            if e.extractor_id.is_empty() {
                return Err(PyramidError::InvalidPlan("empty extractor id".into()));
            }
        }
        if self.entries.windows(2).any(|w| w[0].spec.side > w[1].spec.side) {
            return Err(PyramidError::InvalidPlan(
                "entries must be sorted by ascending side".into(),
            ));
        }
        if let Some(k) = self.splice_point {
            if k > self.entries.len() {
                return Err(PyramidError::InvalidPlan(format!(
                    "splice point {k} outside [0, {}]",
                    self.entries.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
