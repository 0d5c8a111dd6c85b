//! Information-theoretic feature diagnostics.
//!
//! Features are discretized per dimension into equal-frequency bins and
//! mutual information is estimated with the plugin (maximum-likelihood)
//! estimator, in bits. On top of that:
//!
//! * discriminability `D = 1/(M·d) Σ_c Σ_i I(x_i; [label = c])`
//! * redundancy `R = 1/d² Σ_i Σ_j I(x_i; x_j)`, self-pairs included.
//!
//! Sums are accumulated in fixed index order so results do not depend on
//! how the per-dimension work is scheduled.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub const DEFAULT_BINS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{samples} samples cannot fill {bins} bins")]
    TooFewSamples { samples: usize, bins: usize },
    #[error("need at least 2 bins, got {0}")]
    InvalidBins(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two categories, got {0}")]
    TooFewCategories(usize),
    #[error("label {label} outside [0, {num_categories})")]
    LabelOutOfRange { label: usize, num_categories: usize },
    #[error("features have no dimensions")]
    NoDimensions,
}

/// Per-dimension bin codes (stored column-major) and the thresholds that
/// produced them: a value's code is the number of thresholds `<=` it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedFeatures {
    codes: Vec<Vec<u16>>,
    pub num_bins: usize,
    pub bin_edges: Vec<Vec<f64>>,
}

impl QuantizedFeatures {
    pub fn num_samples(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }

    pub fn num_dims(&self) -> usize {
        self.codes.len()
    }

    pub fn column(&self, dim: usize) -> &[u16] {
        &self.codes[dim]
    }

    /// Bins actually used by a dimension (ties can merge bins).
    pub fn effective_bins(&self, dim: usize) -> usize {
        self.bin_edges[dim].len() + 1
    }
}

/// Equal-frequency binning of every column. Thresholds sit at the sample
/// quantiles `⌈b·n/B⌉`; tied values never straddle a threshold, so ties merge
/// bins instead of splitting.
pub fn quantize(features: ArrayView2<'_, f64>, num_bins: usize) -> Result<QuantizedFeatures, MetricsError> {
    if num_bins < 2 || num_bins > u16::MAX as usize {
        return Err(MetricsError::InvalidBins(num_bins));
    }
    let (n, d) = features.dim();
    if n < num_bins {
        return Err(MetricsError::TooFewSamples {
            samples: n,
            bins: num_bins,
        });
    }
    let columns: Vec<(Vec<u16>, Vec<f64>)> = (0..d)
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = features.column(j).to_vec();
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            let mut edges: Vec<f64> = Vec::with_capacity(num_bins - 1);
            for b in 1..num_bins {
                let idx = (b * n).div_ceil(num_bins);
                let t = sorted[idx];
                if t > sorted[0] && edges.last().is_none_or(|&last| t > last) {
                    edges.push(t);
                }
            }
            let codes = col
                .iter()
                .map(|&v| edges.partition_point(|&e| e <= v) as u16)
                .collect();
            (codes, edges)
        })
        .collect();
    let (codes, bin_edges) = columns.into_iter().unzip();
    Ok(QuantizedFeatures {
        codes,
        num_bins,
        bin_edges,
    })
}

/// Relabels arbitrary symbols to `0..k` (in sorted order); returns `k`.
fn densify<T: Copy + Ord>(series: &[T]) -> (Vec<u32>, usize) {
    let mut uniq: Vec<T> = series.to_vec();
    uniq.sort();
    uniq.dedup();
    let codes = series
        .iter()
        .map(|s| uniq.binary_search(s).expect("present") as u32)
        .collect();
    (codes, uniq.len())
}

fn mi_dense<A: Copy + Into<u32>, B: Copy + Into<u32>>(a: &[A], ka: usize, b: &[B], kb: usize) -> f64 {
    let n = a.len();
    let mut joint = vec![0u32; ka * kb];
    let mut ca = vec![0u32; ka];
    let mut cb = vec![0u32; kb];
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.into() as usize, y.into() as usize);
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for x in 0..ka {
        if ca[x] == 0 {
            continue;
        }
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / nf * (c * nf / (ca[x] as f64 * cb[y] as f64)).log2();
        }
    }
    mi.max(0.0)
}

fn entropy_dense<A: Copy + Into<u32>>(a: &[A], ka: usize) -> f64 {
    let mut counts = vec![0u32; ka];
    for &x in a {
        counts[x.into() as usize] += 1;
    }
    let nf = a.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / nf;
            -p * p.log2()
        })
        .sum()
}

/// Plugin estimate of `I(a; b)` in bits over the empirical joint distribution.
pub fn mutual_information<T: Copy + Ord, U: Copy + Ord>(a: &[T], b: &[U]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::LengthMismatch(0, 0));
    }
    let (da, ka) = densify(a);
    let (db, kb) = densify(b);
    Ok(mi_dense(&da, ka, &db, kb))
}

/// Plugin entropy in bits.
pub fn entropy<T: Copy + Ord>(a: &[T]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let (da, ka) = densify(a);
    entropy_dense(&da, ka)
}

fn check_labels(n: usize, labels: &[usize], num_categories: usize) -> Result<(), MetricsError> {
    if labels.len() != n {
        return Err(MetricsError::LengthMismatch(n, labels.len()));
    }
    if num_categories < 2 {
        return Err(MetricsError::TooFewCategories(num_categories));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= num_categories) {
        return Err(MetricsError::LabelOutOfRange {
            label,
            num_categories,
        });
    }
    Ok(())
}

/// `M × d` matrix of `I(x_i; [label = c])`.
pub fn class_information(
    q: &QuantizedFeatures,
    labels: &[usize],
    num_categories: usize,
) -> Result<Array2<f64>, MetricsError> {
    check_labels(q.num_samples(), labels, num_categories)?;
    let d = q.num_dims();
    let mut out = Array2::zeros((num_categories, d));
    for c in 0..num_categories {
        let indicator: Vec<u16> = labels.iter().map(|&l| u16::from(l == c)).collect();
        let row: Vec<f64> = (0..d)
            .into_par_iter()
            .map(|i| mi_dense(q.column(i), q.effective_bins(i), &indicator, 2))
            .collect();
        out.row_mut(c).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(out)
}

pub fn discriminability(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    num_categories: usize,
    num_bins: usize,
) -> Result<f64, MetricsError> {
    check_labels(features.nrows(), labels, num_categories)?;
    if features.ncols() == 0 {
        return Err(MetricsError::NoDimensions);
    }
    let q = quantize(features, num_bins)?;
    let table = class_information(&q, labels, num_categories)?;
    Ok(mean_in_order(&table))
}

fn mean_in_order(table: &Array2<f64>) -> f64 {
    let mut sum = 0.0;
    for v in table.iter() {
        sum += v;
    }
    sum / table.len() as f64
}

/// Redundancy of already-quantized features. With `pair_sample = Some(m)`
/// the off-diagonal sum is estimated from `m` ordered pairs drawn uniformly
/// without replacement; the diagonal is always exact.
pub fn redundancy_quantized(q: &QuantizedFeatures, pair_sample: Option<usize>, seed: u64) -> Result<f64, MetricsError> {
    let d = q.num_dims();
    if d == 0 {
        return Err(MetricsError::NoDimensions);
    }
    let diag: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|i| entropy_dense(q.column(i), q.effective_bins(i)))
        .collect();
    let diag_sum: f64 = diag.iter().sum();
    let total_pairs = d * (d - 1);
    let mi = |i: usize, j: usize| mi_dense(q.column(i), q.effective_bins(i), q.column(j), q.effective_bins(j));

    let off = match pair_sample {
        Some(m) if m < total_pairs => {
            if m == 0 {
                0.0
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut picks = rand::seq::index::sample(&mut rng, total_pairs, m).into_vec();
                picks.sort_unstable();
                let vals: Vec<f64> = picks
                    .par_iter()
                    .map(|&p| {
                        let i = p / (d - 1);
                        let r = p % (d - 1);
                        let j = if r >= i { r + 1 } else { r };
                        mi(i, j)
                    })
                    .collect();
                vals.iter().sum::<f64>() * total_pairs as f64 / m as f64
            }
        }
        _ => {
            let rows: Vec<f64> = (0..d)
                .into_par_iter()
                .map(|i| {
                    let mut s = 0.0;
                    for j in i + 1..d {
                        s += mi(i, j);
                    }
                    s
                })
                .collect();
            2.0 * rows.iter().sum::<f64>()
        }
    };
    Ok((diag_sum + off) / (d * d) as f64)
}

pub fn redundancy(
    features: ArrayView2<'_, f64>,
    num_bins: usize,
    pair_sample: Option<usize>,
    seed: u64,
) -> Result<f64, MetricsError> {
    if features.ncols() == 0 {
        return Err(MetricsError::NoDimensions);
    }
    let q = quantize(features, num_bins)?;
    redundancy_quantized(&q, pair_sample, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiOptions {
    pub num_bins: usize,
    pub pair_sample: Option<usize>,
    pub seed: u64,
    pub keep_per_dimension: bool,
}

impl Default for MiOptions {
    fn default() -> Self {
        MiOptions {
            num_bins: DEFAULT_BINS,
            pair_sample: None,
            seed: 0,
            keep_per_dimension: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiReport {
    pub discriminability: f64,
    pub redundancy: f64,
    /// `M × d` class information, when requested.
    pub per_dimension_mi: Option<Array2<f64>>,
}

/// Discriminability and redundancy from a single quantization pass.
pub fn feature_report(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    num_categories: usize,
    opts: &MiOptions,
) -> Result<MiReport, MetricsError> {
    check_labels(features.nrows(), labels, num_categories)?;
    if features.ncols() == 0 {
        return Err(MetricsError::NoDimensions);
    }
    let q = quantize(features, opts.num_bins)?;
    let table = class_information(&q, labels, num_categories)?;
    let redundancy = redundancy_quantized(&q, opts.pair_sample, opts.seed)?;
    Ok(MiReport {
        discriminability: mean_in_order(&table),
        redundancy,
        per_dimension_mi: opts.keep_per_dimension.then_some(table),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn column(values: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()
    }

    #[test]
    fn median_split() {
        let v: Vec<f64> = (1..=8).map(|x| x as f64).collect();
        let q = quantize(column(&v).view(), 2).unwrap();
        assert_eq!(q.column(0), &[0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn constant_dimension_single_bin() {
        let q = quantize(column(&[3.5; 20]).view(), 4).unwrap();
        assert!(q.column(0).iter().all(|&c| c == 0));
        assert_eq!(q.effective_bins(0), 1);
    }

    #[test]
    fn uniform_counts_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let q = quantize(column(&v).view(), 8).unwrap();
        let mut counts = [0usize; 8];
        q.column(0).iter().for_each(|&c| counts[c as usize] += 1);
        for c in counts {
            assert!((c as f64 - 1250.0).abs() <= 12.5, "{counts:?}");
        }
        assert!(q.bin_edges[0].windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn quantize_errors() {
        assert!(matches!(
            quantize(column(&[1.0, 2.0]).view(), 3),
            Err(MetricsError::TooFewSamples { .. })
        ));
        assert!(matches!(quantize(column(&[1.0, 2.0]).view(), 1), Err(MetricsError::InvalidBins(1))));
    }

    #[test]
    fn mi_examples() {
        let x: Vec<u8> = (0..400).map(|i| (i % 4) as u8).collect();
        assert_eq!(mutual_information(&x, &x).unwrap(), 2.0);
        let a: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let not_a: Vec<u8> = a.iter().map(|v| 1 - v).collect();
        assert_eq!(mutual_information(&a, &not_a).unwrap(), 1.0);
        assert!(matches!(
            mutual_information(&a, &x),
            Err(MetricsError::LengthMismatch(100, 400))
        ));
    }

    #[test]
    fn independent_coins_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<bool> = (0..10_000).map(|_| rng.random()).collect();
        let b: Vec<bool> = (0..10_000).map(|_| rng.random()).collect();
        assert!(mutual_information(&a, &b).unwrap() <= 0.01);
    }

    #[test]
    fn discriminability_examples() {
        let labels: Vec<usize> = (0..10_000).map(|i| i % 2).collect();
        let x = column(&labels.iter().map(|&l| l as f64).collect::<Vec<_>>());
        let d = discriminability(x.view(), &labels, 2, DEFAULT_BINS).unwrap();
        assert!((d - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Array2::from_shape_fn((10_000, 3), |_| rng.random::<f64>());
        assert!(discriminability(noise.view(), &labels, 2, DEFAULT_BINS).unwrap() <= 0.01);

        // Appending a noise dimension dilutes the average.
        let mut both = Array2::zeros((10_000, 2));
        both.column_mut(0).assign(&x.column(0));
        both.column_mut(1).assign(&noise.column(0));
        let diluted = discriminability(both.view(), &labels, 2, DEFAULT_BINS).unwrap();
        assert!(diluted < d);
    }

    #[test]
    fn redundancy_examples() {
        let bits: Vec<f64> = (0..10_000).map(|i| (i % 2) as f64).collect();
        let mut dup = Array2::zeros((10_000, 2));
        dup.column_mut(0).assign(&ndarray::ArrayView1::from(&bits));
        dup.column_mut(1).assign(&ndarray::ArrayView1::from(&bits));
        let r = redundancy(dup.view(), DEFAULT_BINS, None, 0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = Array2::from_shape_fn((4096, 1), |_| rng.random::<f64>());
        let q = quantize(one.view(), 8).unwrap();
        let h = entropy(q.column(0));
        assert!((redundancy(one.view(), 8, None, 0).unwrap() - h).abs() < 1e-12);

        // Independent uniform dims: only the diagonal survives.
        let d = 6;
        let indep = Array2::from_shape_fn((20_000, d), |_| rng.random::<f64>());
        let r = redundancy(indep.view(), 4, None, 0).unwrap();
        let expected = 2.0 / d as f64;
        assert!((r - expected).abs() < 0.01, "{r} vs {expected}");
    }

    #[test]
    fn pair_sampling_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 12;
        let base = Array2::from_shape_fn((500, d), |_| rng.random::<f64>());
        // Correlate neighbours so the off-diagonal sum is nontrivial.
        let x = Array2::from_shape_fn((500, d), |(i, j)| base[[i, j]] + base[[i, (j + 1) % d]]);
        let exact = redundancy(x.view(), 8, None, 0).unwrap();
        let full = redundancy(x.view(), 8, Some(d * (d - 1)), 7).unwrap();
        assert!((exact - full).abs() < 1e-12);
        let mut last_err = f64::INFINITY;
        for m in [d * (d - 1) / 4, d * (d - 1) / 2, d * (d - 1) - 1] {
            let errs: f64 = (0..20)
                .map(|s| (redundancy(x.view(), 8, Some(m), s).unwrap() - exact).abs())
                .sum::<f64>()
                / 20.0;
            assert!(errs <= last_err + 1e-12, "m={m}: {errs} > {last_err}");
            last_err = errs;
        }
    }

    #[test]
    fn report_combines_both() {
        let labels: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let x = Array2::from_shape_fn((200, 3), |(i, j)| (labels[i] * (j + 1)) as f64);
        let opts = MiOptions {
            keep_per_dimension: true,
            num_bins: 4,
            ..MiOptions::default()
        };
        let r = feature_report(x.view(), &labels, 4, &opts).unwrap();
        assert_eq!(r.per_dimension_mi.as_ref().unwrap().dim(), (4, 3));
        assert_eq!(r.discriminability, discriminability(x.view(), &labels, 4, 4).unwrap());
        assert_eq!(r.redundancy, redundancy(x.view(), 4, None, 0).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn mi_symmetric_nonnegative_bounded(
            pairs in proptest::collection::vec((0u8..5, 0u8..7), 1..300)
        ) {
            let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let ab = mutual_information(&a, &b).unwrap();
            let ba = mutual_information(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= entropy(&a).min(entropy(&b)) + 1e-12);
        }

        #[test]
        fn rank_invariance(seed in any::<u64>(), shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 64;
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let x = Array2::from_shape_fn((n, 3), |(i, _)| rng.random::<f64>() + labels[i] as f64 * 0.3);
            let y = x.mapv(|v| (v * 3.0 + shift).exp());
            let dx = discriminability(x.view(), &labels, 2, 8).unwrap();
            let dy = discriminability(y.view(), &labels, 2, 8).unwrap();
            prop_assert_eq!(dx, dy);
            prop_assert_eq!(redundancy(x.view(), 8, None, 0).unwrap(), redundancy(y.view(), 8, None, 0).unwrap());
            // Decreasing transforms reverse the bins exactly when B divides n.
            let z = x.mapv(|v| -v);
            let dz = discriminability(z.view(), &labels, 2, 8).unwrap();
            prop_assert!((dx - dz).abs() < 1e-12);
        }
    }
}
