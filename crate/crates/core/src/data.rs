//! Vocabulary, label vectors, JSONL manifests, image loading, minibatch
//! sampling and the procedural toy dataset.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{imageops, ImageFormat, Rgb, RgbImage};
use mlcgan_autodiff::{Element, Tensor};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MISMATCH_TRIES: usize = 100;

/// Ordered, duplicate-free ingredient names. Position defines the label bit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;
    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.names
    }
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::EmptyVocabulary(PathBuf::new()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::DuplicateIngredient(n.clone()));
            }
        }
        Ok(Self { names, index })
    }

    /// One name per line; surrounding whitespace and blank lines are ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let names: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        if names.is_empty() {
            return Err(Error::EmptyVocabulary(path.to_path_buf()));
        }
        Self::new(names)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.names.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn encode<S: AsRef<str>>(&self, names: &[S]) -> Result<LabelVector> {
        let mut bits = vec![false; self.len()];
        for n in names {
            let n = n.as_ref();
            let i = self.index_of(n).ok_or_else(|| Error::UnknownIngredient(n.to_string()))?;
            bits[i] = true;
        }
        Ok(LabelVector(bits))
    }

    /// Active names in vocabulary order.
    pub fn decode(&self, labels: &LabelVector) -> Vec<String> {
        labels.active().map(|i| self.names[i].clone()).collect()
    }
}

/// Binary ingredient indicator.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelVector(pub Vec<bool>);

impl LabelVector {
    pub fn zeros(c: usize) -> Self {
        Self(vec![false; c])
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Self(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn to_f64s(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }
}

/// Stack label vectors into a `[n, C]` tensor.
pub fn labels_tensor<T: Element>(labels: &[LabelVector]) -> Tensor<T> {
    let c = labels.first().map_or(0, LabelVector::len);
    let data: Vec<f64> = labels.iter().flat_map(LabelVector::to_f64s).collect();
    Tensor::from_f64s(&data, &[labels.len(), c])
}

/// RGB image with values in `[-1, 1]`, stored planar (`[3, R, R]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    resolution: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn from_planar(resolution: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * resolution * resolution {
            return Err(Error::dims("planar image length", 3 * resolution * resolution, data.len()));
        }
        Ok(Self { resolution, data })
    }

    /// Center-crop to a square, bilinear resize, scale to `[-1, 1]`.
    pub fn from_rgb(img: &RgbImage, resolution: usize) -> Self {
        let (w, h) = img.dimensions();
        let side = w.min(h);
        let cropped = imageops::crop_imm(img, (w - side) / 2, (h - side) / 2, side, side).to_image();
        let r = resolution as u32;
        let resized =
            if side == r { cropped } else { imageops::resize(&cropped, r, r, imageops::FilterType::Triangle) };
        let plane = resolution * resolution;
        let mut data = vec![0.0f32; 3 * plane];
        for (x, y, px) in resized.enumerate_pixels() {
            let at = y as usize * resolution + x as usize;
            for c in 0..3 {
                data[c * plane + at] = px[c] as f32 / 127.5 - 1.0;
            }
        }
        Self { resolution, data }
    }

    pub fn load(path: impl AsRef<Path>, resolution: usize) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
        Ok(Self::from_rgb(&img.to_rgb8(), resolution))
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Pixel `(y, x)` as `[r, g, b]`.
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let plane = self.resolution * self.resolution;
        let at = y * self.resolution + x;
        [self.data[at], self.data[plane + at], self.data[2 * plane + at]]
    }

    /// Interleaved row-major `H×W×3` values.
    pub fn to_hwc(&self) -> Vec<f32> {
        let r = self.resolution;
        (0..r * r).flat_map(|i| self.pixel(i / r, i % r)).collect()
    }

    /// 8-bit image, clamping to `[-1, 1]` first.
    pub fn to_rgb(&self) -> RgbImage {
        let r = self.resolution as u32;
        RgbImage::from_fn(r, r, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            Rgb(p.map(to_u8))
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_png(&self.to_rgb(), path)
    }

    /// Image `i` of an `[n, 3, R, R]` tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, i: usize) -> Result<Self> {
        if t.rank() != 4 || t.dim(1) != 3 || t.dim(2) != t.dim(3) {
            return Err(Error::dims("image batch", "[n, 3, R, R]", format!("{:?}", t.shape())));
        }
        let r = t.dim(2);
        let len = 3 * r * r;
        let data = t.data()[i * len..(i + 1) * len].iter().map(|v| v.as_f64() as f32).collect();
        Ok(Self { resolution: r, data })
    }
}

pub fn to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.save_with_format(path, ImageFormat::Png).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Stack images into a `[n, 3, R, R]` tensor.
pub fn images_tensor<T: Element>(images: &[&ImageTensor]) -> Tensor<T> {
    let r = images.first().map_or(0, |i| i.resolution);
    let data: Vec<T> = images.iter().flat_map(|i| i.data.iter().map(|&v| T::from_f64_lossy(v as f64))).collect();
    Tensor::from_vec(data, &[images.len(), 3, r, r])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    pub ingredients: Vec<String>,
}

/// JSON Lines list of records; image paths are relative to `root`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("records always serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.image)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub labels: LabelVector,
}

/// In-memory `(image, labels)` pairs at one resolution.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub resolution: usize,
    pub samples: Vec<Sample>,
    /// Records dropped because their image could not be decoded.
    pub skipped: usize,
}

/// A sampled minibatch as tensors.
#[derive(Clone, Debug)]
pub struct Batch<T: Element> {
    pub indices: Vec<usize>,
    pub images: Tensor<T>,
    pub labels: Tensor<T>,
    pub label_vectors: Vec<LabelVector>,
}

/// Load every record of `manifest`. Unknown ingredients abort; undecodable
/// images are skipped and counted.
pub fn load_dataset(manifest: &Manifest, vocab: &Vocabulary, resolution: usize) -> Result<Dataset> {
    let labels = manifest.records.iter().map(|r| vocab.encode(&r.ingredients)).collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(labels.len());
    let mut skipped = 0;
    for (rec, labels) in manifest.records.iter().zip(labels) {
        match ImageTensor::load(manifest.resolve(rec), resolution) {
            Ok(image) => samples.push(Sample { image, labels }),
            Err(e) => {
                log::warn!("skipping record: {e}");
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} of {} images could not be decoded", manifest.records.len());
    }
    Ok(Dataset { vocab: vocab.clone(), resolution, samples, skipped })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.vocab.len()
    }

    /// Load `manifest.jsonl` and `vocab.txt` from one directory.
    pub fn open_dir(dir: impl AsRef<Path>, resolution: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let vocab = Vocabulary::load(dir.join("vocab.txt"))?;
        let manifest = Manifest::load(dir.join("manifest.jsonl"))?;
        load_dataset(&manifest, &vocab, resolution)
    }

    pub fn batch<T: Element>(&self, indices: &[usize]) -> Batch<T> {
        let images: Vec<&ImageTensor> = indices.iter().map(|&i| &self.samples[i].image).collect();
        let label_vectors: Vec<LabelVector> = indices.iter().map(|&i| self.samples[i].labels.clone()).collect();
        Batch {
            indices: indices.to_vec(),
            images: images_tensor(&images),
            labels: labels_tensor(&label_vectors),
            label_vectors,
        }
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch_size < 2 {
            return Err(Error::BatchTooSmall(batch_size));
        }
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.len())).collect())
    }

    pub fn sample_batch<T: Element, R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch<T>> {
        Ok(self.batch(&self.sample_indices(batch_size, rng)?))
    }

    /// For each query, a sample whose labels differ from it.
    pub fn sample_mismatched_indices<R: Rng + ?Sized>(&self, queries: &[LabelVector], rng: &mut R) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let first = &self.samples[0].labels;
        if self.samples.iter().all(|s| &s.labels == first) {
            return Err(Error::NoMismatch("every sample carries the same labels".into()));
        }
        queries
            .iter()
            .map(|q| {
                (0..MISMATCH_TRIES)
                    .map(|_| rng.random_range(0..self.len()))
                    .find(|&i| &self.samples[i].labels != q)
                    .ok_or_else(|| Error::NoMismatch(format!("no mismatch found in {MISMATCH_TRIES} draws")))
            })
            .collect()
    }

    pub fn sample_mismatched<T: Element, R: Rng + ?Sized>(&self, queries: &[LabelVector], rng: &mut R) -> Result<Batch<T>> {
        Ok(self.batch(&self.sample_mismatched_indices(queries, rng)?))
    }

    /// Copy with every image resampled to `resolution`.
    pub fn resized(&self, resolution: usize) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample { image: ImageTensor::from_rgb(&s.image.to_rgb(), resolution), labels: s.labels.clone() })
            .collect();
        Dataset { vocab: self.vocab.clone(), resolution, samples, skipped: self.skipped }
    }

    /// Deterministic shuffled split; the first part holds `fraction` of the samples.
    pub fn split(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order = index::sample(&mut rng, self.len(), self.len()).into_vec();
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let pick = |ids: &[usize]| Dataset {
            vocab: self.vocab.clone(),
            resolution: self.resolution,
            samples: ids.iter().map(|&i| self.samples[i].clone()).collect(),
            skipped: 0,
        };
        let (a, b) = order.as_slice().split_at(cut.min(self.len()));
        (pick(a), pick(b))
    }

    pub fn label_vectors(&self) -> Vec<LabelVector> {
        self.samples.iter().map(|s| s.labels.clone()).collect()
    }

    pub fn report(&self) -> DatasetReport {
        let mut counts = vec![0usize; self.num_labels()];
        let mut empty = 0;
        for s in &self.samples {
            if s.labels.count() == 0 {
                empty += 1;
            }
            for i in s.labels.active() {
                counts[i] += 1;
            }
        }
        DatasetReport {
            total: self.len(),
            skipped: self.skipped,
            empty,
            per_ingredient: self.vocab.names().iter().cloned().zip(counts).collect(),
        }
    }
}

/// Per-ingredient sample counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub total: usize,
    pub skipped: usize,
    /// Samples with no ingredient labeled.
    pub empty: usize,
    pub per_ingredient: Vec<(String, usize)>,
}

impl DatasetReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_err = |e: csv::Error| Error::Metric(e.to_string());
        w.write_record(["ingredient", "count"]).map_err(to_err)?;
        for (name, n) in &self.per_ingredient {
            w.write_record([name.as_str(), &n.to_string()]).map_err(to_err)?;
        }
        w.write_record(["[empty]", &self.empty.to_string()]).map_err(to_err)?;
        w.flush().map_err(|e| Error::Metric(e.to_string()))
    }
}

/// Glyph classes of the toy dataset: (name, hue in degrees, shape).
pub const TOY_CLASSES: [(&str, f32, Glyph); 10] = [
    ("Pepperoni", 0.0, Glyph::Disc),
    ("Corn", 36.0, Glyph::Square),
    ("Bell pepper", 72.0, Glyph::Triangle),
    ("Fresh basil", 108.0, Glyph::Cross),
    ("Broccoli", 144.0, Glyph::Ring),
    ("Spinach", 180.0, Glyph::Diamond),
    ("Black olives", 216.0, Glyph::HBar),
    ("Tomato", 252.0, Glyph::VBar),
    ("Onion", 288.0, Glyph::Plus),
    ("Mushroom", 324.0, Glyph::Dots),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Glyph {
    Disc,
    Square,
    Triangle,
    Cross,
    Ring,
    Diamond,
    HBar,
    VBar,
    Plus,
    Dots,
}

impl Glyph {
    /// Whether offset `(dx, dy)` in glyph units (`[-1, 1]²`) is inked.
    pub fn covers(self, dx: f32, dy: f32) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        match self {
            Glyph::Disc => dx * dx + dy * dy <= 1.0,
            Glyph::Square => ax <= 0.8 && ay <= 0.8,
            Glyph::Triangle => dy <= 0.8 && dy >= -1.0 + 2.0 * ax * 0.9 - 0.1,
            Glyph::Cross => ax <= 0.9 && ay <= 0.9 && ((dx - dy).abs() <= 0.4 || (dx + dy).abs() <= 0.4),
            Glyph::Ring => {
                let r2 = dx * dx + dy * dy;
                (0.35..=1.0).contains(&r2)
            }
            Glyph::Diamond => ax + ay <= 1.0,
            Glyph::HBar => ax <= 1.0 && ay <= 0.3,
            Glyph::VBar => ax <= 0.3 && ay <= 1.0,
            Glyph::Plus => (ax <= 0.25 && ay <= 1.0) || (ay <= 0.25 && ax <= 1.0),
            Glyph::Dots => {
                let near = |cx: f32, cy: f32| (dx - cx).powi(2) + (dy - cy).powi(2) <= 0.16;
                near(-0.5, -0.5) || near(0.5, -0.5) || near(0.0, 0.5)
            }
        }
    }
}

fn hue_to_rgb(hue: f32) -> [f32; 3] {
    let h = (hue / 60.0) % 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r * 255.0, g * 255.0, b * 255.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDatasetConfig {
    pub num_images: usize,
    pub resolution: usize,
    pub num_labels: usize,
    pub seed: u64,
    pub max_ingredients: usize,
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        Self { num_images: 2000, resolution: 32, num_labels: 10, seed: 7, max_ingredients: 3 }
    }
}

impl ToyDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if ![32, 64, 128, 256].contains(&self.resolution) {
            return Err(Error::InvalidConfig(format!("toy resolution must be 32, 64, 128 or 256, got {}", self.resolution)));
        }
        if !(1..=TOY_CLASSES.len()).contains(&self.num_labels) {
            return Err(Error::InvalidConfig(format!("toy datasets support 1 to 10 labels, got {}", self.num_labels)));
        }
        if !(1..=self.num_labels).contains(&self.max_ingredients) {
            return Err(Error::InvalidConfig(format!(
                "max_ingredients must lie in 1..={}, got {}",
                self.num_labels, self.max_ingredients
            )));
        }
        if self.num_images == 0 {
            return Err(Error::InvalidConfig("num_images must be positive".into()));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(TOY_CLASSES[..self.num_labels].iter().map(|c| c.0.to_string()).collect())
            .expect("toy class names are distinct")
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Uniform draw over all subsets of `0..c` with at most `max` elements.
pub fn sample_label_subset<R: Rng + ?Sized>(c: usize, max: usize, rng: &mut R) -> LabelVector {
    let weights: Vec<f64> = (0..=max).map(|k| binomial(c, k)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut k = max;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            k = i;
            break;
        }
        u -= w;
    }
    let mut bits = vec![false; c];
    for i in index::sample(rng, c, k) {
        bits[i] = true;
    }
    LabelVector(bits)
}

/// Draw one toy image: a crust disc on a dark background with the glyphs of
/// every active label scattered over it.
pub fn render_toy_image<R: Rng + ?Sized>(labels: &LabelVector, resolution: usize, rng: &mut R) -> RgbImage {
    let r = resolution as f32;
    let cx = r * (0.5 + rng.random_range(-0.03..0.03));
    let cy = r * (0.5 + rng.random_range(-0.03..0.03));
    let radius = r * rng.random_range(0.40..0.45);
    let glyph_radius = (r * 0.08).max(2.5);
    let mut glyphs = Vec::new();
    for c in labels.active() {
        for _ in 0..3 {
            let angle = rng.random_range(0.0..std::f32::consts::TAU);
            let dist = (radius - glyph_radius * 1.2) * rng.random::<f32>().sqrt();
            glyphs.push((c, cx + dist * angle.cos(), cy + dist * angle.sin()));
        }
    }
    let background = [22.0, 20.0, 26.0];
    let crust = [222.0, 196.0, 150.0];
    let sub = [0.25f32, 0.75];
    RgbImage::from_fn(resolution as u32, resolution as u32, |x, y| {
        let mut acc = [0.0f32; 3];
        for sy in sub {
            for sx in sub {
                let (px, py) = (x as f32 + sx, y as f32 + sy);
                let mut color = if (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius { crust } else { background };
                for &(c, gx, gy) in &glyphs {
                    let (dx, dy) = ((px - gx) / glyph_radius, (py - gy) / glyph_radius);
                    if TOY_CLASSES[c].2.covers(dx, dy) {
                        color = hue_to_rgb(TOY_CLASSES[c].1);
                    }
                }
                for k in 0..3 {
                    acc[k] += color[k] / 4.0;
                }
            }
        }
        Rgb(acc.map(|v| v.round().clamp(0.0, 255.0) as u8))
    })
}

/// Write `vocab.txt`, `manifest.jsonl` and `images/*.png` into `out_dir`.
/// The output is a pure function of `cfg`.
pub fn synth_toy_dataset(cfg: &ToyDatasetConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let vocab = cfg.vocabulary();
    vocab.save(out.join("vocab.txt"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.num_images);
    for i in 0..cfg.num_images {
        let labels = sample_label_subset(cfg.num_labels, cfg.max_ingredients, &mut rng);
        let img = render_toy_image(&labels, cfg.resolution, &mut rng);
        let name = format!("images/{i:06}.png");
        save_png(&img, out.join(&name))?;
        records.push(ManifestRecord { image: name, ingredients: vocab.decode(&labels) });
    }
    let manifest = Manifest { root: out.to_path_buf(), records };
    manifest.save(out.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Toy dataset rendered straight into memory, without touching disk.
pub fn toy_dataset_in_memory(cfg: &ToyDatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = (0..cfg.num_images)
        .map(|_| {
            let labels = sample_label_subset(cfg.num_labels, cfg.max_ingredients, &mut rng);
            let img = render_toy_image(&labels, cfg.resolution, &mut rng);
            Sample { image: ImageTensor::from_rgb(&img, cfg.resolution), labels }
        })
        .collect();
    Ok(Dataset { vocab: cfg.vocabulary(), resolution: cfg.resolution, samples, skipped: 0 })
}

/// Distinct label vectors present in `labels`.
pub fn distinct_labels(labels: &[LabelVector]) -> usize {
    labels.iter().collect::<HashSet<_>>().len()
}
