//! Patch aggregation and cross-scale fusion: max pooling within a scale,
//! per-scale PCA, and concatenation in plan order.

use std::io::{self, Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::binio;
use crate::extract::PatchFeatureSet;
use crate::pyramid::ScalePlan;

pub const PCA_MAGIC: &[u8; 4] = b"MSPC";

#[derive(Debug, Error)]
pub enum FuseError {
    #[error("patch set has no patches")]
    EmptyPatchSet,
    #[error("plan mismatch: {0}")]
    PlanMismatch(String),
    #[error("mixed image ids: `{0}` and `{1}`")]
    MixedImageIds(String, String),
    #[error("need at least two samples, got {0}")]
    DegenerateInput(usize),
    #[error("{k} components requested, at most {max} achievable")]
    RankDeficient { k: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("corrupt PCA model: {0}")]
    CorruptModel(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One image's descriptor at one scale, either max-pooled or PCA-reduced.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub image_id: String,
    pub scale_side: u32,
    pub extractor_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub scale_side: u32,
    pub extractor_id: String,
    pub dim: usize,
}

/// Multi-scale descriptor with the provenance of each block.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    pub image_id: String,
    pub values: Vec<f64>,
    pub layout: Vec<LayoutEntry>,
}

impl FusedFeature {
    /// Values contributed by the `i`-th plan entry.
    pub fn block(&self, i: usize) -> &[f64] {
        let start: usize = self.layout[..i].iter().map(|l| l.dim).sum();
        &self.values[start..start + self.layout[i].dim]
    }
}

pub fn max_pool(set: &PatchFeatureSet) -> Result<PooledFeature, FuseError> {
    let features = set.features();
    if features.nrows() == 0 {
        return Err(FuseError::EmptyPatchSet);
    }
    let mut acc = features.row(0).to_vec();
    let mut take_max = |row: &[f32]| {
        for (a, &b) in acc.iter_mut().zip(row) {
            if b > *a {
                *a = b;
            }
        }
    };
    match features.as_slice() {
        Some(flat) => flat.chunks_exact(features.ncols()).skip(1).for_each(&mut take_max),
        None => features
            .rows()
            .into_iter()
            .skip(1)
            .for_each(|r| take_max(&r.to_vec())),
    }
    Ok(PooledFeature {
        image_id: set.image_id.clone(),
        scale_side: set.scale_side,
        extractor_id: set.extractor_id.clone(),
        values: acc.iter().map(|&v| v as f64).collect(),
    })
}

/// Concatenates one vector per plan entry, in plan order.
pub fn concat(pooled: &[PooledFeature], plan: &ScalePlan) -> Result<FusedFeature, FuseError> {
    if pooled.len() != plan.len() {
        return Err(FuseError::PlanMismatch(format!(
            "{} vectors for {} plan entries",
            pooled.len(),
            plan.len()
        )));
    }
    let first = pooled
        .first()
        .ok_or_else(|| FuseError::PlanMismatch("empty plan".into()))?;
    let mut values = Vec::with_capacity(pooled.iter().map(|p| p.values.len()).sum());
    let mut layout = Vec::with_capacity(pooled.len());
    for (p, entry) in pooled.iter().zip(&plan.entries) {
        if p.image_id != first.image_id {
            return Err(FuseError::MixedImageIds(first.image_id.clone(), p.image_id.clone()));
        }
        if p.scale_side != entry.spec.side || p.extractor_id != entry.extractor_id {
            return Err(FuseError::PlanMismatch(format!(
                "got ({}, {}) where plan has ({}, {})",
                p.scale_side, p.extractor_id, entry.spec.side, entry.extractor_id
            )));
        }
        values.extend_from_slice(&p.values);
        layout.push(LayoutEntry {
            scale_side: p.scale_side,
            extractor_id: p.extractor_id.clone(),
            dim: p.values.len(),
        });
    }
    Ok(FusedFeature {
        image_id: first.image_id.clone(),
        values,
        layout,
    })
}

/// Scales to unit Euclidean norm; zero vectors are left unchanged.
pub fn l2_normalize(values: &mut [f64]) {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `k × dim`, orthonormal rows ordered by decreasing explained variance.
    pub components: Array2<f64>,
    pub explained_variance: Array1<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), FuseError> {
        binio::write_header(w, PCA_MAGIC)?;
        binio::write_u32(w, self.dim() as u32)?;
        binio::write_u32(w, self.k() as u32)?;
        binio::write_f64_slice(w, &self.mean.to_vec())?;
        binio::write_f64_slice(w, &self.components.iter().copied().collect::<Vec<_>>())?;
        binio::write_f64_slice(w, &self.explained_variance.to_vec())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, FuseError> {
        let corrupt = |e: io::Error| FuseError::CorruptModel(e.to_string());
        if !binio::read_header(r, PCA_MAGIC).map_err(corrupt)? {
            return Err(FuseError::CorruptModel("bad magic or version".into()));
        }
        let dim = binio::read_u32(r).map_err(corrupt)? as usize;
        let k = binio::read_u32(r).map_err(corrupt)? as usize;
        if k > dim {
            return Err(FuseError::CorruptModel(format!("k = {k} exceeds dim = {dim}")));
        }
        let mean = Array1::from(binio::read_f64_vec(r, dim).map_err(corrupt)?);
        let comps = binio::read_f64_vec(r, k * dim).map_err(corrupt)?;
        let components = Array2::from_shape_vec((k, dim), comps)
            .map_err(|e| FuseError::CorruptModel(e.to_string()))?;
        let explained_variance = Array1::from(binio::read_f64_vec(r, k).map_err(corrupt)?);
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
        })
    }
}

/// Fits the top-`k` principal directions of `samples` (one sample per row).
///
/// Uses the `dim × dim` covariance when `dim <= n` and the `n × n` Gram
/// matrix otherwise. Directions with (numerically) zero variance are completed
/// to an orthonormal set, so any `k <= min(n - 1, dim)` succeeds.
pub fn pca_fit(samples: ArrayView2<'_, f64>, k: usize) -> Result<PcaModel, FuseError> {
    let (n, dim) = samples.dim();
    if n < 2 {
        return Err(FuseError::DegenerateInput(n));
    }
    let max = (n - 1).min(dim);
    if k == 0 || k > max {
        return Err(FuseError::RankDeficient { k, max });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(FuseError::NonFinite);
    }
    let mean = samples.mean_axis(Axis(0)).expect("n >= 2");
    let centered = DMatrix::from_fn(n, dim, |i, j| samples[[i, j]] - mean[j]);
    let denom = (n - 1) as f64;

    let mut directions: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    if dim <= n {
        let cov = centered.tr_mul(&centered) / denom;
        let eig = SymmetricEigen::new(cov);
        for idx in descending_order(eig.eigenvalues.as_slice()).into_iter().take(k) {
            let v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            directions.push((eig.eigenvalues[idx].max(0.0), v));
        }
    } else {
        let gram = &centered * centered.transpose() / denom;
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let floor = top * 1e-12 + f64::MIN_POSITIVE;
        for idx in descending_order(eig.eigenvalues.as_slice()).into_iter().take(k) {
            let lambda = eig.eigenvalues[idx];
            if lambda <= floor {
                directions.push((0.0, Vec::new()));
                continue;
            }
            let u = eig.eigenvectors.column(idx);
            let v = centered.tr_mul(&u);
            let norm = v.norm();
            directions.push((lambda, v.iter().map(|x| x / norm).collect()));
        }
    }

    let mut components = Array2::<f64>::zeros((k, dim));
    let mut variance = Array1::<f64>::zeros(k);
    let mut next_basis = 0usize;
    for (row, (lambda, v)) in directions.into_iter().enumerate() {
        variance[row] = lambda;
        let mut v = if v.is_empty() { vec![0.0; dim] } else { v };
        // Re-orthogonalize against earlier rows; fall back to basis vectors
        // for null directions.
        loop {
            orthogonalize(&mut v, &components, row);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                orthogonalize(&mut v, &components, row);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                break;
            }
            v = vec![0.0; dim];
            v[next_basis] = 1.0;
            next_basis += 1;
        }
        fix_sign(&mut v);
        components.row_mut(row).assign(&ArrayView1::from(&v));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: variance,
    })
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

fn orthogonalize(v: &mut [f64], basis: &Array2<f64>, rows: usize) {
    for r in 0..rows {
        let b = basis.row(r);
        let dot: f64 = b.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b.iter()).for_each(|(x, y)| *x -= dot * y);
    }
}

/// Makes the largest-magnitude coordinate positive.
fn fix_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i);
    if let Some(i) = pivot {
        if v[i] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// `components · (x − mean)`, optionally divided by the per-component
/// standard deviation.
pub fn pca_transform(model: &PcaModel, x: &[f64], whiten: bool) -> Result<Vec<f64>, FuseError> {
    if x.len() != model.dim() {
        return Err(FuseError::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    let centered: Vec<f64> = x.iter().zip(model.mean.iter()).map(|(a, m)| a - m).collect();
    Ok(model
        .components
        .rows()
        .into_iter()
        .zip(model.explained_variance.iter())
        .map(|(c, &var)| {
            let p: f64 = c.iter().zip(&centered).map(|(a, b)| a * b).sum();
            if whiten && var > 0.0 {
                p / var.sqrt()
            } else {
                p
            }
        })
        .collect())
}

/// Maps reduced coordinates back into the input space.
pub fn pca_reconstruct(model: &PcaModel, z: &[f64]) -> Vec<f64> {
    let mut out = model.mean.to_vec();
    for (c, &w) in model.components.rows().into_iter().zip(z) {
        out.iter_mut().zip(c.iter()).for_each(|(o, v)| *o += w * v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::{PlanEntry, ScaleSpec};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn set(rows: Array2<f32>) -> PatchFeatureSet {
        PatchFeatureSet::new("img", 227, "e", rows).unwrap()
    }

    #[test]
    fn max_pool_examples() {
        let p = max_pool(&set(array![[1.0f32, 5.0], [3.0, 2.0]])).unwrap();
        assert_eq!(p.values, vec![3.0, 5.0]);
        let p = max_pool(&set(array![[0.25f32, 7.0, 1.5]])).unwrap();
        assert_eq!(p.values, vec![0.25, 7.0, 1.5]);
        assert!(matches!(
            max_pool(&set(Array2::zeros((0, 3)))),
            Err(FuseError::EmptyPatchSet)
        ));
    }

    fn plan(sides: &[(u32, &str)]) -> ScalePlan {
        ScalePlan::new(
            sides
                .iter()
                .map(|&(s, e)| PlanEntry {
                    spec: ScaleSpec::new(s),
                    extractor_id: e.to_string(),
                })
                .collect(),
            None,
        )
        .unwrap()
    }

    fn pooled(id: &str, side: u32, ext: &str, values: Vec<f64>) -> PooledFeature {
        PooledFeature {
            image_id: id.into(),
            scale_side: side,
            extractor_id: ext.into(),
            values,
        }
    }

    #[test]
    fn concat_dimensions() {
        let p = plan(&[(227, "scene"), (899, "object")]);
        let f = concat(
            &[pooled("a", 227, "scene", vec![1.0; 4096]), pooled("a", 899, "object", vec![2.0; 4096])],
            &p,
        )
        .unwrap();
        assert_eq!(f.values.len(), 8192);
        assert_eq!(f.block(1), &vec![2.0; 4096][..]);

        let one = concat(&[pooled("a", 227, "scene", vec![1.0, 2.0])], &plan(&[(227, "scene")])).unwrap();
        assert_eq!(one.values, vec![1.0, 2.0]);

        let sides: Vec<(u32, &str)> = crate::pyramid::DEFAULT_SIDES.iter().map(|&s| (s, "e")).collect();
        let seven: Vec<_> = sides.iter().map(|&(s, _)| pooled("a", s, "e", vec![0.5; 4096 / 7])).collect();
        let f = concat(&seven, &plan(&sides)).unwrap();
        assert_eq!(f.values.len(), 4095);
    }

    #[test]
    fn concat_errors() {
        let p = plan(&[(227, "scene"), (899, "object")]);
        assert!(matches!(
            concat(&[pooled("a", 227, "scene", vec![1.0])], &p),
            Err(FuseError::PlanMismatch(_))
        ));
        assert!(matches!(
            concat(&[pooled("a", 227, "scene", vec![1.0]), pooled("b", 899, "object", vec![1.0])], &p),
            Err(FuseError::MixedImageIds(..))
        ));
        assert!(matches!(
            concat(&[pooled("a", 227, "scene", vec![1.0]), pooled("a", 899, "scene", vec![1.0])], &p),
            Err(FuseError::PlanMismatch(_))
        ));
    }

    fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
    }

    fn assert_orthonormal(m: &PcaModel, tol: f64) {
        let g = m.components.dot(&m.components.t());
        for i in 0..m.k() {
            for j in 0..m.k() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < tol, "gram[{i},{j}] = {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn line_in_5d_recovers_direction() {
        let dir = [1.0, -2.0, 0.5, 3.0, 1.0];
        let norm = dir.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_fn((40, 5), |(_, _)| 0.0);
        let mut data = data;
        for mut row in data.rows_mut() {
            let t: f64 = rng.sample(StandardNormal);
            for (j, v) in row.iter_mut().enumerate() {
                *v = 2.0 + t * dir[j];
            }
        }
        let m = pca_fit(data.view(), 1).unwrap();
        let cos: f64 = m.components.row(0).iter().zip(dir).map(|(a, b)| a * b).sum::<f64>() / norm;
        assert!(cos.abs() > 1.0 - 1e-6);
    }

    #[test]
    fn isotropic_variances_close() {
        let m = pca_fit(gaussian(10_000, 6, 9).view(), 2).unwrap();
        let (a, b) = (m.explained_variance[0], m.explained_variance[1]);
        assert!(a >= b);
        assert!((a - b) / b < 0.1, "{a} vs {b}");
    }

    #[test]
    fn gram_route_matches_covariance_route() {
        // n < dim goes through the Gram matrix; compare projectors with the
        // transpose-padded covariance route on the same data.
        let x = gaussian(12, 30, 4);
        let m = pca_fit(x.view(), 5).unwrap();
        assert_orthonormal(&m, 1e-10);
        let mut padded = Array2::<f64>::zeros((60, 30));
        // Duplicating rows (and the mean) leaves directions unchanged and
        // makes n >= dim.
        for r in 0..60 {
            padded.row_mut(r).assign(&x.row(r % 12));
        }
        let c = pca_fit(padded.view(), 5).unwrap();
        let p1 = m.components.t().dot(&m.components);
        let p2 = c.components.t().dot(&c.components);
        let diff = (&p1 - &p2).mapv(|v| v * v).sum().sqrt();
        assert!(diff < 1e-8, "projector diff {diff}");
    }

    #[test]
    fn zero_data_gives_orthonormal_completion() {
        let x = Array2::<f64>::zeros((5, 20));
        let m = pca_fit(x.view(), 4).unwrap();
        assert_orthonormal(&m, 1e-12);
        assert!(m.explained_variance.iter().all(|&v| v == 0.0));
        assert_eq!(pca_transform(&m, &[0.0; 20], false).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn pca_errors() {
        let x = gaussian(1, 3, 0);
        assert!(matches!(pca_fit(x.view(), 1), Err(FuseError::DegenerateInput(1))));
        let x = gaussian(4, 3, 0);
        assert!(matches!(pca_fit(x.view(), 4), Err(FuseError::RankDeficient { .. })));
        let x = gaussian(3, 6, 0);
        assert!(matches!(pca_fit(x.view(), 3), Err(FuseError::RankDeficient { k: 3, max: 2 })));
        let m = pca_fit(gaussian(10, 3, 0).view(), 2).unwrap();
        assert!(matches!(
            pca_transform(&m, &[1.0, 2.0], false),
            Err(FuseError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn transform_examples() {
        let x = gaussian(50, 8, 1);
        let m = pca_fit(x.view(), 3).unwrap();
        let at_mean = pca_transform(&m, m.mean.as_slice().unwrap(), false).unwrap();
        assert!(at_mean.iter().all(|v| v.abs() < 1e-12));
        let e1: Vec<f64> = (&m.mean + &m.components.row(0)).to_vec();
        let z = pca_transform(&m, &e1, false).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12 && z[1].abs() < 1e-12 && z[2].abs() < 1e-12);
    }

    #[test]
    fn reconstructs_rank_k_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = gaussian(3, 10, 6);
        let data = Array2::from_shape_fn((40, 3), |_| rng.sample::<f64, _>(StandardNormal)).dot(&basis);
        let m = pca_fit(data.view(), 3).unwrap();
        for row in data.rows() {
            let z = pca_transform(&m, row.as_slice().unwrap(), false).unwrap();
            let back = pca_reconstruct(&m, &z);
            let err: f64 = back.iter().zip(row.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err < 1e-6 * norm.max(1.0), "err {err}");
        }
    }

    #[test]
    fn whitening_gives_unit_variance() {
        let x = gaussian(500, 4, 8).mapv(|v| v * 3.0);
        let m = pca_fit(x.view(), 2).unwrap();
        let z: Vec<Vec<f64>> = x.rows().into_iter().map(|r| pca_transform(&m, r.as_slice().unwrap(), true).unwrap()).collect();
        let var0 = z.iter().map(|v| v[0] * v[0]).sum::<f64>() / 499.0;
        assert!((var0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn model_serialization_round_trip() {
        let m = pca_fit(gaussian(20, 6, 2).view(), 3).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MSPC");
        let back = PcaModel::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        buf[0] = b'Z';
        assert!(PcaModel::read_from(&mut buf.as_slice()).is_err());
        assert!(PcaModel::read_from(&mut &buf[..20]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn max_pool_permutation_invariant_and_monotone(
            rows in proptest::collection::vec(proptest::collection::vec(0.0f32..100.0, 4), 1..20),
            extra in proptest::collection::vec(0.0f32..100.0, 4),
            rot in 0usize..20,
        ) {
            let n = rows.len();
            let flat: Vec<f32> = rows.iter().flatten().copied().collect();
            let base = max_pool(&set(Array2::from_shape_vec((n, 4), flat).unwrap())).unwrap();
            let mut rotated = rows.clone();
            rotated.rotate_left(rot % n);
            let flat: Vec<f32> = rotated.iter().flatten().copied().collect();
            let perm = max_pool(&set(Array2::from_shape_vec((n, 4), flat).unwrap())).unwrap();
            prop_assert_eq!(&base.values, &perm.values);
            let mut grown = rows.clone();
            grown.push(extra);
            let flat: Vec<f32> = grown.iter().flatten().copied().collect();
            let more = max_pool(&set(Array2::from_shape_vec((n + 1, 4), flat).unwrap())).unwrap();
            prop_assert!(more.values.iter().zip(&base.values).all(|(a, b)| a >= b));
        }

        #[test]
        fn pca_transform_is_affine(seed in any::<u64>(), alpha in -2.0f64..2.0) {
            let x = gaussian(15, 5, seed);
            let m = pca_fit(x.view(), 3).unwrap();
            let a = x.row(0).to_vec();
            let b = x.row(1).to_vec();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(p, q)| alpha * p + (1.0 - alpha) * q).collect();
            let fa = pca_transform(&m, &a, false).unwrap();
            let fb = pca_transform(&m, &b, false).unwrap();
            let fm = pca_transform(&m, &mix, false).unwrap();
            for i in 0..3 {
                prop_assert!((fm[i] - (alpha * fa[i] + (1.0 - alpha) * fb[i])).abs() < 1e-9);
            }
            prop_assert!(m.explained_variance.windows(2).into_iter().all(|w| w[0] >= w[1]));
        }

        #[test]
        fn concat_slices_recover_inputs(dims in proptest::collection::vec(1usize..6, 1..5)) {
            let sides: Vec<u32> = (0..dims.len() as u32).map(|i| 227 + 32 * i).collect();
            let p = plan(&sides.iter().map(|&s| (s, "e")).collect::<Vec<_>>());
            let inputs: Vec<PooledFeature> = dims.iter().zip(&sides).enumerate()
                .map(|(i, (&d, &s))| pooled("x", s, "e", (0..d).map(|j| (i * 10 + j) as f64).collect()))
                .collect();
            let f = concat(&inputs, &p).unwrap();
            prop_assert_eq!(f.values.len(), dims.iter().sum::<usize>());
            for (i, inp) in inputs.iter().enumerate() {
                prop_assert_eq!(f.block(i), &inp.values[..]);
            }
        }
    }
}
