//! Object statistics over annotated images: normalized object size and
//! objects-per-image histograms.
//!
//! Annotation files are JSON:
//! `{"images": [{"id", "width", "height", "objects": [{"label", "deleted", "polygon": [[x, y], ...]}]}]}`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

/// Shorter side after the notional training preprocessing.
pub const PREPROCESS_SHORT_SIDE: f64 = 256.0;
/// Side of the center crop fed to the network.
pub const TRAINING_CROP_SIDE: f64 = 227.0;
pub const DEFAULT_SIZE_BINS: usize = 20;
pub const DEFAULT_COUNT_CAP: usize = 20;

#[derive(Debug, Error)]
pub enum DatastatsError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {context}: {message}")]
    ParseError { context: String, message: String },
    #[error("annotation file contains no images")]
    EmptyFile,
    #[error("object {object} of image {image_id} has zero area")]
    ZeroAreaPolygon { image_id: String, object: usize },
    #[error("image {image_id} has no object {object}")]
    ObjectIndex { image_id: String, object: usize },
    #[error("no records")]
    EmptyRecords,
    #[error("invalid histogram edges: {0}")]
    InvalidEdges(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Vertex = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatedObject {
    pub label: String,
    pub polygon: Vec<Vertex>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationRecord {
    #[serde(rename = "id")]
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotatedObject>,
}

#[derive(Serialize)]
struct AnnotationFile<'a> {
    images: &'a [AnnotationRecord],
}

/// Serializes records back into the annotation schema.
pub fn annotations_to_json(records: &[AnnotationRecord]) -> String {
    serde_json::to_string_pretty(&AnnotationFile { images: records }).expect("records serialize")
}

pub fn parse_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, DatastatsError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatastatsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_annotations_str(&text)
}

pub fn parse_annotations_str(text: &str) -> Result<Vec<AnnotationRecord>, DatastatsError> {
    if text.trim().is_empty() {
        return Err(DatastatsError::EmptyFile);
    }
    let root: Value = serde_json::from_str(text).map_err(|e| DatastatsError::ParseError {
        context: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let images = root
        .get("images")
        .and_then(Value::as_array)
        .ok_or_else(|| DatastatsError::ParseError {
            context: "top level".into(),
            message: "expected an \"images\" array".into(),
        })?;
    if images.is_empty() {
        return Err(DatastatsError::EmptyFile);
    }
    images.iter().enumerate().map(|(i, v)| parse_record(i, v)).collect()
}

fn parse_record(index: usize, v: &Value) -> Result<AnnotationRecord, DatastatsError> {
    let id_hint = v.get("id").and_then(Value::as_str).unwrap_or("?");
    let err = |message: String| DatastatsError::ParseError {
        context: format!("record {index} (id {id_hint})"),
        message,
    };
    let image_id = v
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| err("missing string field \"id\"".into()))?
        .to_string();
    let dim = |name: &str| -> Result<u32, DatastatsError> {
        v.get(name)
            .and_then(Value::as_u64)
            .filter(|&d| d > 0 && d <= u32::MAX as u64)
            .map(|d| d as u32)
            .ok_or_else(|| err(format!("\"{name}\" must be a positive integer")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let raw_objects = match v.get("objects") {
        None | Some(Value::Null) => &[][..],
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => return Err(err("\"objects\" must be an array".into())),
    };
    let mut objects = Vec::with_capacity(raw_objects.len());
    for (j, o) in raw_objects.iter().enumerate() {
        if o.get("deleted").and_then(Value::as_bool).unwrap_or(false) {
            continue;
        }
        let label = o
            .get("label")
            .and_then(Value::as_str)
            .ok_or_else(|| err(format!("object {j}: missing string field \"label\"")))?
            .to_string();
        let pts = o
            .get("polygon")
            .and_then(Value::as_array)
            .ok_or_else(|| err(format!("object {j}: missing \"polygon\" array")))?;
        if pts.len() < 3 {
            return Err(err(format!("object {j}: polygon needs at least 3 vertices, got {}", pts.len())));
        }
        let mut polygon = Vec::with_capacity(pts.len());
        for p in pts {
            let xy = p
                .as_array()
                .filter(|a| a.len() == 2)
                .and_then(|a| Some([a[0].as_f64()?, a[1].as_f64()?]))
                .filter(|xy| xy[0].is_finite() && xy[1].is_finite())
                .ok_or_else(|| err(format!("object {j}: vertex must be [x, y]")))?;
            polygon.push([xy[0].clamp(0.0, width as f64), xy[1].clamp(0.0, height as f64)]);
        }
        objects.push(AnnotatedObject { label, polygon });
    }
    Ok(AnnotationRecord {
        image_id,
        width,
        height,
        objects,
    })
}

/// Shoelace area (absolute value).
pub fn polygon_area(polygon: &[Vertex]) -> f64 {
    let n = polygon.len();
    let mut twice = 0.0;
    for i in 0..n {
        let [x0, y0] = polygon[i];
        let [x1, y1] = polygon[(i + 1) % n];
        twice += x0 * y1 - x1 * y0;
    }
    twice.abs() / 2.0
}

/// Side of the object relative to the training crop: `sqrt(area / 227²)`
/// after rescaling the image so its shorter side is 256. Clipped to 1.
pub fn normalized_size(record: &AnnotationRecord, object: usize) -> Result<f64, DatastatsError> {
    let obj = record.objects.get(object).ok_or_else(|| DatastatsError::ObjectIndex {
        image_id: record.image_id.clone(),
        object,
    })?;
    let area = polygon_area(&obj.polygon);
    if area <= 0.0 {
        return Err(DatastatsError::ZeroAreaPolygon {
            image_id: record.image_id.clone(),
            object,
        });
    }
    let scale = PREPROCESS_SHORT_SIDE / record.width.min(record.height) as f64;
    let ratio = area * scale * scale / (TRAINING_CROP_SIDE * TRAINING_CROP_SIDE);
    Ok(ratio.sqrt().min(1.0))
}

/// Bins are `[lo, hi)` except the last, which also includes its upper edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn with_edges(edges: Vec<f64>) -> Result<Self, DatastatsError> {
        if edges.len() < 2 {
            return Err(DatastatsError::InvalidEdges("need at least two edges".into()));
        }
        if edges.iter().any(|e| e.is_nan()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DatastatsError::InvalidEdges("edges must be strictly ascending".into()));
        }
        let counts = vec![0; edges.len() - 1];
        Ok(Histogram {
            edges,
            counts,
            total: 0,
        })
    }

    pub fn uniform(bins: usize, lo: f64, hi: f64) -> Result<Self, DatastatsError> {
        if bins == 0 {
            return Err(DatastatsError::InvalidEdges("zero bins".into()));
        }
        let edges = (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
        Self::with_edges(edges)
    }

    pub fn bin_of(&self, value: f64) -> Option<usize> {
        let last = *self.edges.last()?;
        if value.is_nan() || value < self.edges[0] || value > last {
            return None;
        }
        if value == last {
            return Some(self.counts.len() - 1);
        }
        Some(self.edges.partition_point(|&e| e <= value) - 1)
    }

    /// Returns false (and leaves the histogram untouched) when out of range.
    pub fn add(&mut self, value: f64) -> bool {
        match self.bin_of(value) {
            Some(b) => {
                self.counts[b] += 1;
                self.total += 1;
                true
            }
            None => false,
        }
    }

    /// CSV rows `edge_lo,edge_hi,count`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatastatsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["edge_lo", "edge_hi", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([
                self.edges[i].to_string(),
                self.edges[i + 1].to_string(),
                c.to_string(),
            ])?;
        }
        w.flush().map_err(|e| DatastatsError::Csv(e.into()))?;
        Ok(())
    }
}

/// Histogram of normalized sizes over every object. `edges = None` gives
/// 20 uniform bins on [0, 1].
pub fn object_size_histogram(records: &[AnnotationRecord], edges: Option<Vec<f64>>) -> Result<Histogram, DatastatsError> {
    if records.is_empty() {
        return Err(DatastatsError::EmptyRecords);
    }
    let mut hist = match edges {
        Some(e) => Histogram::with_edges(e)?,
        None => Histogram::uniform(DEFAULT_SIZE_BINS, 0.0, 1.0)?,
    };
    for rec in records {
        for i in 0..rec.objects.len() {
            hist.add(normalized_size(rec, i)?);
        }
    }
    Ok(hist)
}

/// Unit bins `0, 1, …, cap` plus an overflow bin `[cap + 1, ∞)`. Edges depend
/// only on `cap`, so histograms from different datasets line up.
pub fn objects_per_image_histogram(records: &[AnnotationRecord], cap: usize) -> Result<Histogram, DatastatsError> {
    if records.is_empty() {
        return Err(DatastatsError::EmptyRecords);
    }
    let mut edges: Vec<f64> = (0..=cap + 1).map(|i| i as f64).collect();
    edges.push(f64::INFINITY);
    let mut hist = Histogram::with_edges(edges)?;
    for rec in records {
        let n = rec.objects.len();
        let bin = n.min(cap + 1);
        hist.counts[bin] += 1;
        hist.total += 1;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: f64, y0: f64, side: f64) -> Vec<Vertex> {
        vec![[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]]
    }

    fn record(w: u32, h: u32, polys: Vec<Vec<Vertex>>) -> AnnotationRecord {
        AnnotationRecord {
            image_id: "img".into(),
            width: w,
            height: h,
            objects: polys
                .into_iter()
                .map(|polygon| AnnotatedObject {
                    label: "thing".into(),
                    polygon,
                })
                .collect(),
        }
    }

    const SAMPLE: &str = r#"{"images": [
        {"id": "a", "width": 100, "height": 80, "objects": [
            {"label": "cup", "deleted": false, "polygon": [[0,0],[10,0],[10,10]]},
            {"label": "cup", "polygon": [[105,0],[10,0],[10,10]]},
            {"label": "gone", "deleted": true, "polygon": [[0,0],[1,0],[1,1]]}
        ]},
        {"id": "b", "width": 50, "height": 50, "objects": [
            {"label": "dog", "polygon": [[1,1],[20,1],[20,20],[1,20]]}
        ]}
    ]}"#;

    #[test]
    fn parse_counts_and_clamps() {
        let recs = parse_annotations_str(SAMPLE).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs.iter().map(|r| r.objects.len()).sum::<usize>(), 3);
        assert_eq!(recs[0].objects[1].polygon[0], [100.0, 0.0]);
    }

    #[test]
    fn parse_errors() {
        let bad = r#"{"images": [{"id": "ok", "width": 1, "height": 1},
                                 {"id": "broken", "width": -3, "height": 1}]}"#;
        match parse_annotations_str(bad) {
            Err(DatastatsError::ParseError { context, .. }) => {
                assert!(context.contains("record 1") && context.contains("broken"), "{context}")
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_annotations_str("  "), Err(DatastatsError::EmptyFile)));
        assert!(matches!(parse_annotations_str(r#"{"images": []}"#), Err(DatastatsError::EmptyFile)));
        assert!(matches!(
            parse_annotations_str("{\"images\": [\n{]"),
            Err(DatastatsError::ParseError { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let recs = parse_annotations_str(SAMPLE).unwrap();
        let again = parse_annotations_str(&annotations_to_json(&recs)).unwrap();
        assert_eq!(recs, again);
    }

    #[test]
    fn normalized_size_examples() {
        let full = record(227, 227, vec![square(0.0, 0.0, 227.0)]);
        // 227 px shorter side is upscaled to 256, so the full image clips to 1.
        assert_eq!(normalized_size(&full, 0).unwrap(), 1.0);

        let half = record(256, 256, vec![square(0.0, 0.0, 113.5)]);
        assert!((normalized_size(&half, 0).unwrap() - 0.5).abs() < 1e-12);

        let small = record(512, 512, vec![square(10.0, 10.0, 100.0)]);
        assert!((normalized_size(&small, 0).unwrap() - 50.0 / 227.0).abs() < 1e-12);

        let flat = record(10, 10, vec![vec![[0.0, 0.0], [5.0, 0.0], [9.0, 0.0]]]);
        assert!(matches!(normalized_size(&flat, 0), Err(DatastatsError::ZeroAreaPolygon { .. })));
        assert!(matches!(normalized_size(&flat, 3), Err(DatastatsError::ObjectIndex { .. })));
    }

    fn sized(size: f64) -> AnnotationRecord {
        // 256×256 image: normalized size equals side / 227.
        record(256, 256, vec![square(0.0, 0.0, size * 227.0)])
    }

    #[test]
    fn size_histogram_bins() {
        let h = object_size_histogram(&[sized(0.5)], None).unwrap();
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.total, 1);

        let ones: Vec<_> = (0..5).map(|_| sized(1.0)).collect();
        let h = object_size_histogram(&ones, None).unwrap();
        assert_eq!(h.counts[19], 5);

        let h = object_size_histogram(&[sized(0.1), sized(0.1), sized(0.9)], Some(vec![0.0, 0.5, 1.0])).unwrap();
        assert_eq!(h.counts, vec![2, 1]);
        assert!(object_size_histogram(&[], None).is_err());
    }

    #[test]
    fn count_histogram() {
        let tri = || vec![[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
        let recs = vec![
            record(10, 10, vec![tri()]),
            record(10, 10, vec![tri()]),
            record(10, 10, (0..5).map(|_| tri()).collect()),
            record(10, 10, vec![]),
        ];
        let h = objects_per_image_histogram(&recs, DEFAULT_COUNT_CAP).unwrap();
        assert_eq!((h.counts[0], h.counts[1], h.counts[5]), (1, 2, 1));
        assert_eq!(h.total, 4);
        let other = objects_per_image_histogram(&recs[..1], DEFAULT_COUNT_CAP).unwrap();
        assert_eq!(h.edges, other.edges);

        let many = record(10, 10, (0..30).map(|_| tri()).collect());
        let h = objects_per_image_histogram(&[many], 3).unwrap();
        assert_eq!(h.counts, vec![0, 0, 0, 0, 1]);
    }

    #[test]
    fn csv_output() {
        let h = object_size_histogram(&[sized(0.1), sized(0.9)], Some(vec![0.0, 0.5, 1.0])).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "edge_lo,edge_hi,count\n0,0.5,1\n0.5,1,1\n");
    }

    fn raster_area(poly: &[Vertex], w: usize, h: usize) -> f64 {
        // Even-odd crossing test at pixel centers, written out independently.
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut inside = false;
                let mut j = poly.len() - 1;
                for i in 0..poly.len() {
                    let ([xi, yi], [xj, yj]) = (poly[i], poly[j]);
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                count += inside as usize;
            }
        }
        count as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn upscaling_invariance(w in 50u32..400, h in 50u32..400, f in 1u32..5,
                                fx in 0.0f64..0.5, fy in 0.0f64..0.5, fs in 0.1f64..0.5) {
            let side = fs * w.min(h) as f64;
            let (x0, y0) = (fx * w as f64, fy * h as f64);
            let base = record(w, h, vec![square(x0, y0, side)]);
            let k = f as f64;
            let up = record(w * f, h * f, vec![square(x0 * k, y0 * k, side * k)]);
            let a = normalized_size(&base, 0).unwrap();
            let b = normalized_size(&up, 0).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn shoelace_matches_raster(cx in 60.0f64..140.0, cy in 60.0f64..140.0,
                                   r in 25.0f64..55.0, sides in 3usize..9, phase in 0.0f64..std::f64::consts::TAU) {
            let poly: Vec<Vertex> = (0..sides)
                .map(|i| {
                    let t = phase + i as f64 * std::f64::consts::TAU / sides as f64;
                    [cx + r * t.cos(), cy + r * t.sin()]
                })
                .collect();
            let exact = polygon_area(&poly);
            let approx = raster_area(&poly, 200, 200);
            prop_assert!((exact - approx).abs() / exact <= 0.02, "{exact} vs {approx}");
        }

        #[test]
        fn histogram_total_matches(sizes in proptest::collection::vec(0.05f64..1.0, 1..50)) {
            let recs: Vec<_> = sizes.iter().map(|&s| sized(s)).collect();
            let h = object_size_histogram(&recs, None).unwrap();
            prop_assert_eq!(h.total as usize, sizes.len());
            prop_assert_eq!(h.counts.iter().sum::<u64>(), h.total);
        }
    }
}
