//! Object-probe crops: {original, canonical} × {masked, with background}.
//!
//! Original kinds keep the object's native scale (after the usual
//! shorter-side-256 preprocessing) and center the crop on the polygon
//! centroid. Canonical kinds rescale the object's bounding box so its larger
//! side is a given fraction of the crop and center the box.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::datastats::{normalized_size, polygon_area, AnnotationRecord, Vertex, PREPROCESS_SHORT_SIDE};
use crate::raster::{Raster, Rgb};

pub const DEFAULT_CROP_SIDE: usize = 227;
pub const DEFAULT_FILL: Rgb = [128, 128, 128];
pub const DEFAULT_MIN_PROBE_SIZE: f64 = 0.05;
pub const MIN_SCALE_PCT: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariantError {
    #[error("polygon has zero area or fewer than 3 vertices")]
    DegeneratePolygon,
    #[error("object extends beyond the {width}×{height} source image")]
    ObjectLargerThanImage { width: usize, height: usize },
    #[error("invalid variant spec: {0}")]
    InvalidSpec(String),
    #[error("unknown variant kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantKind {
    OriginalMasked,
    OriginalBackground,
    CanonicalMasked,
    CanonicalBackground,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::OriginalMasked,
        VariantKind::OriginalBackground,
        VariantKind::CanonicalMasked,
        VariantKind::CanonicalBackground,
    ];

    pub fn is_canonical(self) -> bool {
        matches!(self, VariantKind::CanonicalMasked | VariantKind::CanonicalBackground)
    }

    pub fn is_masked(self) -> bool {
        matches!(self, VariantKind::OriginalMasked | VariantKind::CanonicalMasked)
    }

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::OriginalMasked => "original_masked",
            VariantKind::OriginalBackground => "original_background",
            VariantKind::CanonicalMasked => "canonical_masked",
            VariantKind::CanonicalBackground => "canonical_background",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = VariantError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| VariantError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantSpec {
    pub kind: VariantKind,
    /// Linear fraction of the crop taken by the object's larger bbox side.
    pub scale_pct: Option<f64>,
    pub crop_side: usize,
    pub fill: Rgb,
}

impl VariantSpec {
    pub fn original(masked: bool) -> Self {
        VariantSpec {
            kind: if masked {
                VariantKind::OriginalMasked
            } else {
                VariantKind::OriginalBackground
            },
            scale_pct: None,
            crop_side: DEFAULT_CROP_SIDE,
            fill: DEFAULT_FILL,
        }
    }

    pub fn canonical(masked: bool, scale_pct: f64) -> Self {
        VariantSpec {
            kind: if masked {
                VariantKind::CanonicalMasked
            } else {
                VariantKind::CanonicalBackground
            },
            scale_pct: Some(scale_pct),
            crop_side: DEFAULT_CROP_SIDE,
            fill: DEFAULT_FILL,
        }
    }

    pub fn validate(&self) -> Result<(), VariantError> {
        if self.crop_side == 0 {
            return Err(VariantError::InvalidSpec("crop_side must be positive".into()));
        }
        match (self.kind.is_canonical(), self.scale_pct) {
            (true, Some(p)) if (MIN_SCALE_PCT..=1.0).contains(&p) => Ok(()),
            (true, Some(p)) => Err(VariantError::InvalidSpec(format!("scale_pct {p} outside [0.10, 1.00]"))),
            (true, None) => Err(VariantError::InvalidSpec("canonical kinds need scale_pct".into())),
            (false, Some(_)) => Err(VariantError::InvalidSpec("original kinds take no scale_pct".into())),
            (false, None) => Ok(()),
        }
    }
}

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Inclusive pixel bounds `(x0, y0, x1, y1)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        bb
    }
}

/// Even-odd fill sampled at pixel centers `(x + 0.5, y + 0.5)`.
pub fn rasterize_polygon(polygon: &[Vertex], width: usize, height: usize) -> Result<Mask, VariantError> {
    if polygon.len() < 3 || polygon_area(polygon) <= 0.0 {
        return Err(VariantError::DegeneratePolygon);
    }
    let mut mask = Mask::empty(width, height);
    let n = polygon.len();
    let mut crossings = Vec::new();
    for y in 0..height {
        let py = y as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let [xi, yi] = polygon[i];
            let [xj, yj] = polygon[(i + n - 1) % n];
            if (yi > py) != (yj > py) {
                crossings.push(xi + (xj - xi) * (py - yi) / (yj - yi));
            }
        }
        crossings.sort_by(f64::total_cmp);
        // A center is inside when it lies in [c0, c1), [c2, c3), ...
        for pair in crossings.chunks_exact(2) {
            let lo = (pair[0] - 0.5).ceil().max(0.0);
            let hi = (pair[1] - 0.5).ceil().min(width as f64);
            if lo >= hi {
                continue;
            }
            let row = y * width;
            mask.bits[row + lo as usize..row + hi as usize].fill(true);
        }
    }
    Ok(mask)
}

/// Area centroid of a simple polygon.
pub fn polygon_centroid(polygon: &[Vertex]) -> [f64; 2] {
    let n = polygon.len();
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let [x0, y0] = polygon[i];
        let [x1, y1] = polygon[(i + 1) % n];
        let cross = x0 * y1 - x1 * y0;
        a2 += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    if a2 == 0.0 {
        let m = polygon.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        return [m[0] / n as f64, m[1] / n as f64];
    }
    [cx / (3.0 * a2), cy / (3.0 * a2)]
}

fn bounds(polygon: &[Vertex]) -> (f64, f64, f64, f64) {
    polygon.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &[x, y]| (a.min(x), b.min(y), c.max(x), d.max(y)),
    )
}

/// A crop plus the object's mask in crop coordinates.
#[derive(Debug, Clone)]
pub struct Variant {
    pub image: Raster,
    pub mask: Mask,
}

pub fn make_variant(image: &Raster, polygon: &[Vertex], spec: &VariantSpec) -> Result<Variant, VariantError> {
    spec.validate()?;
    if polygon.len() < 3 || polygon_area(polygon) <= 0.0 {
        return Err(VariantError::DegeneratePolygon);
    }
    if image.is_empty() {
        return Err(VariantError::ObjectLargerThanImage { width: 0, height: 0 });
    }
    let (w, h) = (image.width() as f64, image.height() as f64);
    let (x0, y0, x1, y1) = bounds(polygon);
    if x0 < 0.0 || y0 < 0.0 || x1 > w || y1 > h {
        return Err(VariantError::ObjectLargerThanImage {
            width: image.width(),
            height: image.height(),
        });
    }
    let side = spec.crop_side;
    let mut out = if spec.kind.is_canonical() {
        canonical(image, polygon, spec)?
    } else {
        original(image, polygon, spec)?
    };
    if spec.kind.is_masked() {
        for y in 0..side {
            for x in 0..side {
                if !out.mask.get(x, y) {
                    out.image.set(x, y, spec.fill);
                }
            }
        }
    }
    Ok(out)
}

fn original(image: &Raster, polygon: &[Vertex], spec: &VariantSpec) -> Result<Variant, VariantError> {
    let (w, h) = (image.width(), image.height());
    let r = PREPROCESS_SHORT_SIDE / w.min(h) as f64;
    let nw = ((w as f64 * r).round() as usize).max(1);
    let nh = ((h as f64 * r).round() as usize).max(1);
    let (sx, sy) = (nw as f64 / w as f64, nh as f64 / h as f64);
    let resized = image.resize_bilinear(nw, nh);
    let scaled: Vec<Vertex> = polygon.iter().map(|&[x, y]| [x * sx, y * sy]).collect();
    let [cx, cy] = polygon_centroid(&scaled);
    let half = spec.crop_side as f64 / 2.0;
    let ox = (cx - half).round() as i64;
    let oy = (cy - half).round() as i64;
    let crop = resized.crop_padded(ox, oy, spec.crop_side, spec.crop_side, spec.fill);
    let local: Vec<Vertex> = scaled.iter().map(|&[x, y]| [x - ox as f64, y - oy as f64]).collect();
    let mask = rasterize_polygon(&local, spec.crop_side, spec.crop_side)?;
    Ok(Variant { image: crop, mask })
}

fn canonical(image: &Raster, polygon: &[Vertex], spec: &VariantSpec) -> Result<Variant, VariantError> {
    let side = spec.crop_side;
    let pct = spec.scale_pct.expect("validated");
    let (x0, y0, x1, y1) = bounds(polygon);
    let larger = (x1 - x0).max(y1 - y0);
    let target = (pct * side as f64).round().max(1.0);
    let s = target / larger;
    let (bcx, bcy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let half = side as f64 / 2.0;
    let (w, h) = (image.width() as f64, image.height() as f64);
    let crop = Raster::from_fn(side, side, |i, j| {
        let sx = (i as f64 + 0.5 - half) / s + bcx;
        let sy = (j as f64 + 0.5 - half) / s + bcy;
        if sx < 0.0 || sy < 0.0 || sx > w || sy > h {
            spec.fill
        } else {
            image.sample_bilinear(sx, sy)
        }
    });
    let local: Vec<Vertex> = polygon
        .iter()
        .map(|&[x, y]| [(x - bcx) * s + half, (y - bcy) * s + half])
        .collect();
    let mask = rasterize_polygon(&local, side, side)?;
    Ok(Variant { image: crop, mask })
}

/// One selected probe object and its category index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeObject {
    pub record: usize,
    pub object: usize,
    pub label: String,
    pub category: usize,
}

/// Keeps objects of at least `min_size` normalized size whose label is among
/// the `top_k` most frequent such labels (ties by name). Categories are
/// numbered in frequency order.
pub fn select_probe_objects(records: &[AnnotationRecord], top_k: usize, min_size: f64) -> Vec<ProbeObject> {
    let mut eligible = Vec::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (ri, rec) in records.iter().enumerate() {
        for (oi, obj) in rec.objects.iter().enumerate() {
            if matches!(normalized_size(rec, oi), Ok(s) if s >= min_size) {
                eligible.push((ri, oi));
                *counts.entry(obj.label.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(top_k);
    let category: BTreeMap<&str, usize> = ranked.iter().enumerate().map(|(i, (l, _))| (*l, i)).collect();
    eligible
        .into_iter()
        .filter_map(|(ri, oi)| {
            let label = records[ri].objects[oi].label.as_str();
            category.get(label).map(|&c| ProbeObject {
                record: ri,
                object: oi,
                label: label.to_string(),
                category: c,
            })
        })
        .collect()
}

/// `{image_id}_{object}_{kind}_{pct}.png`; original kinds use `native`.
pub fn variant_file_name(image_id: &str, object: usize, spec: &VariantSpec) -> String {
    let pct = match spec.scale_pct {
        Some(p) => format!("{:03}", (p * 100.0).round() as u32),
        None => "native".to_string(),
    };
    format!("{image_id}_{object}_{}_{pct}.png", spec.kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastats::AnnotatedObject;
    use proptest::prelude::*;

    const RED: Rgb = [200, 20, 20];
    const BLUE: Rgb = [20, 20, 200];

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vertex> {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    /// Blue background with a red rectangle painted over `poly`'s pixels.
    fn scene(w: usize, h: usize, poly: &[Vertex]) -> Raster {
        let m = rasterize_polygon(poly, w, h).unwrap();
        Raster::from_fn(w, h, |x, y| if m.get(x, y) { RED } else { BLUE })
    }

    #[test]
    fn rectangle_mask() {
        let m = rasterize_polygon(&rect(10.0, 10.0, 20.0, 20.0), 32, 32).unwrap();
        assert_eq!(m.count(), 100);
        assert_eq!(m.bounding_box(), Some((10, 10, 19, 19)));
    }

    #[test]
    fn outside_and_degenerate() {
        let m = rasterize_polygon(&rect(100.0, 100.0, 150.0, 150.0), 32, 32).unwrap();
        assert_eq!(m.count(), 0);
        assert_eq!(
            rasterize_polygon(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 8, 8),
            Err(VariantError::DegeneratePolygon)
        );
        assert_eq!(rasterize_polygon(&[[0.0, 0.0], [1.0, 1.0]], 8, 8), Err(VariantError::DegeneratePolygon));
    }

    #[test]
    fn triangle_area() {
        let tri = [[5.0, 7.0], [190.0, 30.0], [60.0, 180.0]];
        let m = rasterize_polygon(&tri, 200, 200).unwrap();
        let exact = polygon_area(&tri);
        assert!((m.count() as f64 - exact).abs() / exact < 0.02);
    }

    #[test]
    fn spec_validation() {
        assert!(VariantSpec::canonical(true, 0.05).validate().is_err());
        assert!(VariantSpec::canonical(true, 1.0).validate().is_ok());
        let mut s = VariantSpec::original(false);
        s.scale_pct = Some(0.5);
        assert!(s.validate().is_err());
        assert_eq!("canonical-masked".parse::<VariantKind>().unwrap(), VariantKind::CanonicalMasked);
    }

    #[test]
    fn canonical_full_scale() {
        let poly = rect(100.0, 80.0, 160.0, 140.0);
        let img = scene(300, 240, &poly);
        let v = make_variant(&img, &poly, &VariantSpec::canonical(true, 1.0)).unwrap();
        let (x0, y0, x1, y1) = v.mask.bounding_box().unwrap();
        assert!(((x1 - x0 + 1) as i64 - 227).abs() <= 1);
        assert!(((y1 - y0 + 1) as i64 - 227).abs() <= 1);
        for y in 0..227 {
            for x in 0..227 {
                if !v.mask.get(x, y) {
                    assert_eq!(v.image.get(x, y), DEFAULT_FILL);
                }
            }
        }
    }

    #[test]
    fn canonical_ten_percent() {
        let poly = rect(40.0, 50.0, 140.0, 90.0);
        let img = scene(200, 200, &poly);
        let v = make_variant(&img, &poly, &VariantSpec::canonical(true, 0.10)).unwrap();
        let (x0, _, x1, _) = v.mask.bounding_box().unwrap();
        assert!(((x1 - x0 + 1) as i64 - 23).abs() <= 1);
    }

    #[test]
    fn masking_only_touches_background() {
        let poly = vec![[50.0, 40.0], [130.0, 60.0], [90.0, 140.0]];
        let img = Raster::from_fn(180, 160, |x, y| [(x * 7 % 256) as u8, (y * 3 % 256) as u8, 99]);
        for spec in [VariantSpec::canonical(true, 0.6), VariantSpec::original(true)] {
            let mut bg_spec = spec;
            bg_spec.kind = if spec.kind.is_canonical() {
                VariantKind::CanonicalBackground
            } else {
                VariantKind::OriginalBackground
            };
            let masked = make_variant(&img, &poly, &spec).unwrap();
            let bg = make_variant(&img, &poly, &bg_spec).unwrap();
            assert_eq!(masked.mask, bg.mask);
            for y in 0..227 {
                for x in 0..227 {
                    if masked.mask.get(x, y) {
                        assert_eq!(masked.image.get(x, y), bg.image.get(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn original_centered_object() {
        let poly = rect(480.0, 480.0, 544.0, 544.0);
        let img = scene(1024, 1024, &poly);
        let v = make_variant(&img, &poly, &VariantSpec::original(true)).unwrap();
        assert_eq!(v.image.get(113, 113), RED);
        for (x, y) in [(0, 0), (226, 0), (0, 226), (226, 226)] {
            assert_eq!(v.image.get(x, y), DEFAULT_FILL);
        }
    }

    #[test]
    fn original_pads_near_border() {
        let poly = rect(0.0, 0.0, 20.0, 20.0);
        let img = scene(256, 256, &poly);
        let v = make_variant(&img, &poly, &VariantSpec::original(false)).unwrap();
        assert_eq!(v.image.get(0, 0), DEFAULT_FILL);
        assert_eq!((v.image.width(), v.image.height()), (227, 227));
        let outside = make_variant(&img, &rect(200.0, 200.0, 300.0, 300.0), &VariantSpec::original(false));
        assert!(matches!(outside, Err(VariantError::ObjectLargerThanImage { .. })));
    }

    #[test]
    fn probe_selection() {
        let obj = |label: &str, side: f64| AnnotatedObject {
            label: label.into(),
            polygon: rect(0.0, 0.0, side, side),
        };
        let recs = vec![
            AnnotationRecord {
                image_id: "a".into(),
                width: 256,
                height: 256,
                objects: vec![obj("chair", 100.0), obj("chair", 100.0), obj("lamp", 100.0), obj("cup", 2.0)],
            },
            AnnotationRecord {
                image_id: "b".into(),
                width: 256,
                height: 256,
                objects: vec![obj("lamp", 100.0), obj("bed", 100.0), obj("cup", 3.0), obj("cup", 3.0)],
            },
        ];
        let picked = select_probe_objects(&recs, 2, DEFAULT_MIN_PROBE_SIZE);
        let labels: Vec<_> = picked.iter().map(|p| (p.label.as_str(), p.category)).collect();
        assert_eq!(labels, vec![("chair", 0), ("chair", 0), ("lamp", 1), ("lamp", 1)]);
    }

    #[test]
    fn file_names() {
        assert_eq!(variant_file_name("x", 3, &VariantSpec::canonical(true, 0.1)), "x_3_canonical_masked_010.png");
        assert_eq!(variant_file_name("x", 0, &VariantSpec::original(false)), "x_0_original_background_native.png");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]
        #[test]
        fn canonical_size_and_shape(pct in 0.10f64..=1.0, w in 20.0f64..120.0, h in 20.0f64..120.0,
                                    masked in any::<bool>()) {
            let poly = rect(30.0, 40.0, 30.0 + w, 40.0 + h);
            let img = scene(200, 200, &poly);
            let v = make_variant(&img, &poly, &VariantSpec::canonical(masked, pct)).unwrap();
            prop_assert_eq!((v.image.width(), v.image.height()), (227, 227));
            let (x0, y0, x1, y1) = v.mask.bounding_box().unwrap();
            let larger = (x1 - x0 + 1).max(y1 - y0 + 1) as f64;
            prop_assert!((larger - (pct * 227.0).round()).abs() <= 1.0);
        }
    }
}
