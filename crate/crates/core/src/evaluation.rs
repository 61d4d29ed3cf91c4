//! FID, mAP on generated images, median rank, and image grids.

use image::{imageops, RgbImage};
use mlcgan_autodiff::{no_grad, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier::{mean_average_precision, Classifier};
use crate::data::{labels_tensor, Dataset, ImageTensor, LabelVector, Vocabulary};
use crate::generator::Generator;
use crate::label_encoder::ScaleEmbeddingSet;
use crate::{Error, Result};

/// Largest composite grid edge, in pixels.
pub const GRID_LIMIT: usize = 16384;
/// Relative size of a negative eigenvalue still treated as rounding noise.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Maps image batches `[n, 3, R, R]` to feature rows `[n, F]`.
pub trait FeatureExtractor {
    fn feature_dim(&self) -> usize;
    fn extract(&self, images: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl FeatureExtractor for Classifier<f32> {
    fn feature_dim(&self) -> usize {
        Classifier::feature_dim(self)
    }
    fn extract(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.predict(images, 64)?.1)
    }
}

/// Gaussian fit of a feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Row-major `F × F` unbiased covariance.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Stats with the given mean and covariance (`count` is informational).
    pub fn from_parts(mean: Vec<f64>, cov: Vec<f64>, count: usize) -> Result<Self> {
        if cov.len() != mean.len() * mean.len() {
            return Err(Error::dims("covariance size", mean.len() * mean.len(), cov.len()));
        }
        Ok(Self { mean, cov, count })
    }
}

/// Running first and second moments in f64.
#[derive(Clone, Debug)]
pub struct StatsAccumulator {
    sum: Vec<f64>,
    outer: Vec<f64>,
    count: usize,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { sum: vec![0.0; dim], outer: vec![0.0; dim * dim], count: 0 }
    }

    pub fn push(&mut self, x: &[f64]) {
        let f = self.sum.len();
        assert_eq!(x.len(), f, "feature length");
        for i in 0..f {
            self.sum[i] += x[i];
            let row = &mut self.outer[i * f..(i + 1) * f];
            for j in 0..f {
                row[j] += x[i] * x[j];
            }
        }
        self.count += 1;
    }

    /// Push every row of a `[n, F]` tensor.
    pub fn push_rows(&mut self, rows: &Tensor<f32>) {
        let f = self.sum.len();
        let v = rows.to_f64_vec();
        for r in v.chunks_exact(f) {
            self.push(r);
        }
    }

    pub fn finish(&self) -> Result<FeatureStats> {
        let n = self.count;
        if n < 2 {
            return Err(Error::Metric(format!("feature statistics need at least 2 samples, got {n}")));
        }
        let f = self.sum.len();
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n as f64).collect();
        let mut cov = vec![0.0; f * f];
        for i in 0..f {
            for j in 0..f {
                cov[i * f + j] = (self.outer[i * f + j] - n as f64 * mean[i] * mean[j]) / (n - 1) as f64;
            }
        }
        Ok(FeatureStats { mean, cov, count: n })
    }
}

/// Stats of extractor features over a stream of images, batched.
pub fn feature_stats<'a>(
    images: impl IntoIterator<Item = &'a ImageTensor>,
    extractor: &dyn FeatureExtractor,
    batch: usize,
) -> Result<FeatureStats> {
    let mut acc = StatsAccumulator::new(extractor.feature_dim());
    let mut pending: Vec<&ImageTensor> = Vec::with_capacity(batch);
    let mut flush = |pending: &mut Vec<&ImageTensor>| -> Result<()> {
        if !pending.is_empty() {
            acc.push_rows(&extractor.extract(&crate::data::images_tensor(pending))?);
            pending.clear();
        }
        Ok(())
    };
    for img in images {
        pending.push(img);
        if pending.len() == batch.max(1) {
            flush(&mut pending)?;
        }
    }
    flush(&mut pending)?;
    acc.finish()
}

fn symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues clamped at zero, rejecting clearly negative ones.
fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(symmetric(m));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for v in eig.eigenvalues.iter_mut() {
        if *v < -PSD_TOLERANCE * scale {
            return Err(Error::Metric(format!("{what} is not positive semidefinite (eigenvalue {v})")));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(ΣaΣb)^{1/2})`, with the trace of the square
/// root taken from the eigenvalues of `Σa^{1/2} Σb Σa^{1/2}`.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    let f = a.dim();
    if b.dim() != f {
        return Err(Error::dims("feature dimension", f, b.dim()));
    }
    let sa = DMatrix::from_row_slice(f, f, &a.cov);
    let sb = DMatrix::from_row_slice(f, f, &b.cov);
    let ea = psd_eigen(&sa, "first covariance")?;
    psd_eigen(&sb, "second covariance")?;
    let root = &ea.eigenvectors
        * DMatrix::from_diagonal(&ea.eigenvalues.map(f64::sqrt))
        * ea.eigenvectors.transpose();
    let inner = &root * &sb * &root;
    let tr_sqrt: f64 = psd_eigen(&inner, "covariance product")?.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let diff = DVector::from_column_slice(&a.mean) - DVector::from_column_slice(&b.mean);
    let d = diff.norm_squared() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

/// Standard-normal style noise derived from a seed.
pub fn z_from_seed(seed: u64, dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn z_batch<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Tensor<f32> {
    let data = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_vec(data, &[n, dim])
}

/// Generated-image evaluation: mAP against the conditioning labels and the
/// FID statistics of the classifier features.
#[derive(Clone, Debug)]
pub struct GeneratedEval {
    pub map: f64,
    pub stats: FeatureStats,
}

/// Generate `n` images with labels drawn uniformly from `label_pool` and
/// score them with `classifier`.
pub fn evaluate_generated<R: Rng + ?Sized>(
    g: &Generator<f32>,
    classifier: &Classifier<f32>,
    label_pool: &[LabelVector],
    n: usize,
    psi: f64,
    batch: usize,
    rng: &mut R,
) -> Result<GeneratedEval> {
    if classifier.config.num_labels != g.num_labels() {
        return Err(Error::dims("classifier labels", g.num_labels(), classifier.config.num_labels));
    }
    if label_pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = StatsAccumulator::new(classifier.feature_dim());
    let mut scores = Vec::with_capacity(n * g.num_labels());
    let mut truth = Vec::with_capacity(n * g.num_labels());
    let mut done = 0;
    while done < n {
        let len = batch.max(1).min(n - done);
        let labels: Vec<LabelVector> = (0..len).map(|_| label_pool[rng.random_range(0..label_pool.len())].clone()).collect();
        let z = z_batch(len, g.z_dim(), rng);
        let imgs = no_grad(|| g.generate(&labels_tensor(&labels), &z, psi))?;
        let (logits, feats) = classifier.predict(&imgs, 64)?;
        acc.push_rows(&feats);
        scores.extend(logits.to_f64_vec());
        truth.extend(labels.iter().flat_map(|l| l.0.iter().copied()));
        done += len;
    }
    Ok(GeneratedEval { map: mean_average_precision(&scores, &truth, g.num_labels())?, stats: acc.finish()? })
}

/// mAP of `classifier` on `n` generated images.
pub fn map_on_generated<R: Rng + ?Sized>(
    g: &Generator<f32>,
    classifier: &Classifier<f32>,
    label_pool: &[LabelVector],
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(evaluate_generated(g, classifier, label_pool, n, 1.0, 32, rng)?.map)
}

/// Feature statistics of up to `n` dataset images (in dataset order).
pub fn dataset_stats(dataset: &Dataset, extractor: &dyn FeatureExtractor, n: usize) -> Result<FeatureStats> {
    feature_stats(dataset.samples.iter().take(n).map(|s| &s.image), extractor, 64)
}

/// Median over rows of the rank of the diagonal entry under descending
/// similarity, ties sharing their average rank.
pub fn median_rank(similarity: &[f64], n: usize) -> Result<f64> {
    if n == 0 || similarity.len() != n * n {
        return Err(Error::dims("similarity matrix", format!("{n}×{n}"), similarity.len()));
    }
    let mut ranks: Vec<f64> = (0..n)
        .map(|i| {
            let row = &similarity[i * n..(i + 1) * n];
            let d = row[i];
            let above = row.iter().filter(|&&v| v > d).count();
            let tied = row.iter().filter(|&&v| v == d).count() - 1;
            1.0 + above as f64 + tied as f64 / 2.0
        })
        .collect();
    ranks.sort_by(f64::total_cmp);
    Ok(if n % 2 == 1 { ranks[n / 2] } else { (ranks[n / 2 - 1] + ranks[n / 2]) / 2.0 })
}

/// What a grid cell is conditioned on.
#[derive(Clone, Debug)]
pub enum CellCondition {
    Labels(LabelVector),
    Embedding(ScaleEmbeddingSet<f32>),
}

#[derive(Clone, Debug)]
pub struct GridCell {
    pub condition: CellCondition,
    pub z: Vec<f32>,
    pub psi: f64,
    pub meta: CellMeta,
}

/// Per-cell description written to the grid sidecar.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMeta {
    pub row: usize,
    pub col: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingredients: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub psi: f64,
    /// Interpolation weight toward endpoint B along the label axis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_alpha: Option<f64>,
    /// Interpolation weight toward endpoint B along the noise axis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_alpha: Option<f64>,
}

/// Row-major grid of cells.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<GridCell>,
}

impl GridSpec {
    pub fn cell(&self, row: usize, col: usize) -> &GridCell {
        &self.cells[row * self.cols + col]
    }
}

/// Rows share a style seed, columns share an ingredient list.
pub fn independence_grid(vocab: &Vocabulary, label_lists: &[LabelVector], seeds: &[u64], z_dim: usize, psi: f64) -> GridSpec {
    let mut cells = Vec::new();
    for (row, &seed) in seeds.iter().enumerate() {
        let z = z_from_seed(seed, z_dim);
        for (col, labels) in label_lists.iter().enumerate() {
            cells.push(GridCell {
                condition: CellCondition::Labels(labels.clone()),
                z: z.clone(),
                psi,
                meta: CellMeta {
                    row,
                    col,
                    ingredients: Some(vocab.decode(labels)),
                    seed: Some(seed),
                    psi,
                    ..Default::default()
                },
            });
        }
    }
    GridSpec { rows: seeds.len(), cols: label_lists.len(), cells }
}

fn lerp_vec(a: &[f32], b: &[f32], t: f64) -> Vec<f32> {
    if t == 0.0 {
        return a.to_vec();
    }
    if t == 1.0 {
        return b.to_vec();
    }
    a.iter().zip(b).map(|(&x, &y)| ((1.0 - t) * x as f64 + t * y as f64) as f32).collect()
}

/// `steps × steps` grid: rows interpolate the label embeddings, columns the
/// style noise. Corners reproduce the endpoints exactly.
pub fn interpolate_condition(
    te_a: &ScaleEmbeddingSet<f32>,
    te_b: &ScaleEmbeddingSet<f32>,
    z_a: &[f32],
    z_b: &[f32],
    steps: usize,
    psi: f64,
) -> Result<GridSpec> {
    if steps < 2 {
        return Err(Error::InvalidConfig(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    if z_a.len() != z_b.len() {
        return Err(Error::dims("style noise length", z_a.len(), z_b.len()));
    }
    let mut cells = Vec::with_capacity(steps * steps);
    for row in 0..steps {
        let a = row as f64 / (steps - 1) as f64;
        let te = te_a.lerp(te_b, a)?;
        for col in 0..steps {
            let b = col as f64 / (steps - 1) as f64;
            cells.push(GridCell {
                condition: CellCondition::Embedding(te.clone()),
                z: lerp_vec(z_a, z_b, b),
                psi,
                meta: CellMeta { row, col, psi, label_alpha: Some(a), noise_alpha: Some(b), ..Default::default() },
            });
        }
    }
    Ok(GridSpec { rows: steps, cols: steps, cells })
}

/// Generate one cell.
pub fn render_cell(g: &Generator<f32>, cell: &GridCell) -> Result<ImageTensor> {
    let z = Tensor::from_vec(cell.z.clone(), &[1, cell.z.len()]);
    let img = no_grad(|| -> Result<Tensor<f32>> {
        let te = match &cell.condition {
            CellCondition::Labels(l) => g.embed(&labels_tensor(std::slice::from_ref(l)))?,
            CellCondition::Embedding(te) => te.clone(),
        };
        let w = g.truncate(&g.map(&z, &te)?, cell.psi)?;
        g.synthesize(&w, &te, None)
    })?;
    ImageTensor::from_tensor(&img, 0)
}

/// Composite image (cells abutted, row-major) and the per-cell metadata.
pub fn render_grid(spec: &GridSpec, g: &Generator<f32>) -> Result<(RgbImage, Vec<CellMeta>)> {
    let r = g.resolution();
    let (w, h) = (spec.cols * r, spec.rows * r);
    if w > GRID_LIMIT || h > GRID_LIMIT {
        return Err(Error::GridTooLarge { width: w, height: h, limit: GRID_LIMIT });
    }
    if spec.cells.len() != spec.rows * spec.cols {
        return Err(Error::dims("grid cells", spec.rows * spec.cols, spec.cells.len()));
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for cell in &spec.cells {
        let img = render_cell(g, cell)?.to_rgb();
        imageops::replace(&mut out, &img, (cell.meta.col * r) as i64, (cell.meta.row * r) as i64);
    }
    Ok((out, spec.cells.iter().map(|c| c.meta.clone()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_1d(mean: f64, var: f64) -> FeatureStats {
        FeatureStats::from_parts(vec![mean], vec![var], 2).unwrap()
    }

    #[test]
    fn scalar_frechet_distance() {
        let d = fid(&stats_1d(0.0, 1.0), &stats_1d(1.0, 4.0)).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert_eq!(fid(&stats_1d(0.3, 2.0), &stats_1d(0.3, 2.0)).unwrap(), 0.0);
    }

    #[test]
    fn identical_samples_have_zero_covariance() {
        let mut acc = StatsAccumulator::new(3);
        acc.push(&[0.1, -2.0, 3.3]);
        acc.push(&[0.1, -2.0, 3.3]);
        assert!(acc.finish().unwrap().cov.iter().all(|&v| v == 0.0));
        let mut one = StatsAccumulator::new(1);
        one.push(&[1.0]);
        assert!(one.finish().is_err());
    }

    #[test]
    fn fid_rejects_bad_inputs() {
        let a = stats_1d(0.0, 1.0);
        let b = FeatureStats::from_parts(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert!(fid(&a, &b).is_err());
        assert!(fid(&a, &stats_1d(0.0, -1.0)).is_err());
    }

    #[test]
    fn median_rank_cases() {
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(median_rank(&eye, 3).unwrap(), 1.0);
        let second = [0.5, 0.9, 0.1, 0.1, 0.5, 0.9, 0.9, 0.1, 0.5];
        assert_eq!(median_rank(&second, 3).unwrap(), 2.0);
        assert_eq!(median_rank(&[1.0, 1.0, 1.0, 1.0], 2).unwrap(), 1.5);
        assert!(median_rank(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        assert_eq!(z_from_seed(3, 16), z_from_seed(3, 16));
        assert_ne!(z_from_seed(3, 16), z_from_seed(4, 16));
    }
}
