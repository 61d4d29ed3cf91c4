//! Multilabel ingredient classifier and average-precision metrics.

use std::path::Path;

use mlcgan_autodiff::{no_grad, Element, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, Vocabulary};
use crate::losses::classification_regularizer;
use crate::nn::{join, Activation, Conv2d, Dense, Module};
use crate::optim::{Adam, AdamConfig};
use crate::{Error, Result};

/// Information-retrieval AP: mean precision at the rank of each positive,
/// scores sorted descending with ties kept in index order. `None` when there
/// are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Per-class AP for row-major `n × c` matrices.
pub fn per_class_ap(scores: &[f64], labels: &[bool], c: usize) -> Result<Vec<Option<f64>>> {
    if scores.len() != labels.len() || c == 0 || scores.len() % c != 0 {
        return Err(Error::dims("score/label matrix", scores.len(), labels.len()));
    }
    let n = scores.len() / c;
    Ok((0..c)
        .map(|j| {
            let s: Vec<f64> = (0..n).map(|i| scores[i * c + j]).collect();
            let l: Vec<bool> = (0..n).map(|i| labels[i * c + j]).collect();
            average_precision(&s, &l)
        })
        .collect())
}

/// Mean of per-class AP over classes with at least one positive.
pub fn mean_average_precision(scores: &[f64], labels: &[bool], c: usize) -> Result<f64> {
    let aps: Vec<f64> = per_class_ap(scores, labels, c)?.into_iter().flatten().collect();
    if aps.is_empty() {
        return Err(Error::Metric("no class has a positive label".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub resolution: usize,
    pub num_labels: usize,
    /// Channels of the first stage; doubled per stage up to `max_width`.
    pub width: usize,
    pub max_width: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { resolution: 32, num_labels: 10, width: 16, max_width: 64 }
    }
}

/// Two 3×3 convolutions with an identity or 1×1 shortcut.
#[derive(Clone, Debug)]
pub struct ResBlock<T: Element> {
    pub conv0: Conv2d<T>,
    pub conv1: Conv2d<T>,
    pub skip: Option<Conv2d<T>>,
}

impl<T: Element> ResBlock<T> {
    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.conv1.forward(&self.conv0.forward(x));
        let s = self.skip.as_ref().map_or_else(|| x.clone(), |c| c.forward(x));
        h.add(&s).mul_scalar(std::f64::consts::FRAC_1_SQRT_2)
    }
}

impl<T: Element> Module<T> for ResBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv0.visit(&join(prefix, "conv0"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.skip.visit(&join(prefix, "skip"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv0.visit_mut(&join(prefix, "conv0"), f);
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.skip.visit_mut(&join(prefix, "skip"), f);
    }
}

/// Small residual network: stages down to 4×4, global average and max
/// pooling concatenated, then a dense layer to `C` logits. The pooled features double as the
/// FID embedding.
#[derive(Clone, Debug)]
pub struct Classifier<T: Element> {
    pub config: ClassifierConfig,
    pub stem: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub head: Dense<T>,
}

impl<T: Element> Classifier<T> {
    pub fn new<R: Rng + ?Sized>(config: &ClassifierConfig, rng: &mut R) -> Result<Self> {
        let r = config.resolution;
        if r < 4 || !r.is_power_of_two() || config.num_labels == 0 || config.width == 0 {
            return Err(Error::InvalidConfig(format!("invalid classifier config {config:?}")));
        }
        let stem = Conv2d::new(3, config.width, 3, 1, Activation::Lrelu, rng);
        let mut blocks = Vec::new();
        let mut c = config.width;
        let mut res = r;
        while res > 4 {
            let out = (c * 2).min(config.max_width.max(config.width));
            blocks.push(ResBlock {
                conv0: Conv2d::new(c, out, 3, 1, Activation::Lrelu, rng),
                conv1: Conv2d::new(out, out, 3, 1, Activation::Lrelu, rng),
                skip: (c != out).then(|| Conv2d::new(c, out, 1, 1, Activation::Linear, rng)),
            });
            c = out;
            res /= 2;
        }
        let head = Dense::new(2 * c, config.num_labels, Activation::Linear, 0.0, 1.0, rng);
        Ok(Self { config: config.clone(), stem, blocks, head })
    }

    pub fn feature_dim(&self) -> usize {
        self.head.in_dim()
    }

    fn check(&self, y: &Tensor<T>) -> Result<()> {
        let r = self.config.resolution;
        if y.rank() != 4 || y.shape()[1..] != [3, r, r] {
            return Err(Error::dims("classifier input", format!("[n, 3, {r}, {r}]"), format!("{:?}", y.shape())));
        }
        Ok(())
    }

    /// Penultimate features `[n, F]`.
    pub fn features(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(y)?;
        let mut x = self.stem.forward(y);
        for b in &self.blocks {
            x = b.forward(&x).avg_pool2x();
        }
        Ok(Tensor::cat(&[&x.mean_axes(&[2, 3]), &x.max_spatial()], 1))
    }

    /// Logits `[n, C]`.
    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.head.forward(&self.features(y)?))
    }

    /// Logits and features without recording a graph, in chunks.
    pub fn predict(&self, y: &Tensor<T>, chunk: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        no_grad(|| {
            let n = y.dim(0);
            let mut logits = Vec::new();
            let mut feats = Vec::new();
            let mut start = 0;
            while start < n {
                let len = chunk.max(1).min(n - start);
                let f = self.features(&y.narrow(0, start, len))?;
                logits.push(self.head.forward(&f));
                feats.push(f);
                start += len;
            }
            let cat = |v: &[Tensor<T>]| Tensor::cat(&v.iter().collect::<Vec<_>>(), 0);
            Ok((cat(&logits), cat(&feats)))
        })
    }

    pub fn to_checkpoint(&self, vocab: &Vocabulary) -> Checkpoint {
        let header = ClassifierHeader { kind: "classifier".into(), config: self.config.clone(), vocabulary: vocab.clone() };
        let mut ck = Checkpoint::new(&header);
        ck.put_module("", self);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Vocabulary)> {
        let header: ClassifierHeader = ck.header_as()?;
        if header.kind != "classifier" {
            return Err(Error::Checkpoint(format!("expected a classifier checkpoint, found {:?}", header.kind)));
        }
        let mut model = Self::new(&header.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        ck.load_module("", &mut model)?;
        Ok((model, header.vocabulary))
    }

    pub fn save(&self, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(vocab).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vocabulary)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl<T: Element> Module<T> for Classifier<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ClassifierHeader {
    kind: String,
    config: ClassifierConfig,
    vocabulary: Vocabulary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    /// Training fraction of the deterministic split.
    pub split: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub width: usize,
    pub max_width: usize,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self { split: 0.8, seed: 0, epochs: 10, batch_size: 32, lr: 0.01, width: 16, max_width: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_map: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub classifier: Classifier<f32>,
    /// Held-out mAP of the returned parameters.
    pub test_map: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub history: Vec<EpochRecord>,
}

/// Held-out mAP of `clf` on `data`.
pub fn evaluate_map(clf: &Classifier<f32>, data: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let batch = data.batch::<f32>(&idx);
    let (logits, _) = clf.predict(&batch.images, 64)?;
    let labels: Vec<bool> = batch.label_vectors.iter().flat_map(|l| l.0.iter().copied()).collect();
    mean_average_precision(&logits.to_f64_vec(), &labels, data.num_labels())
}

/// BCE training on a seeded split, keeping the parameters with the best
/// held-out mAP.
pub fn train_classifier(dataset: &Dataset, cfg: &ClassifierTrainConfig) -> Result<TrainedClassifier> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.split > 0.0 && cfg.split < 1.0) || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig(format!("invalid classifier training config {cfg:?}")));
    }
    let (train, test) = dataset.split(cfg.split, cfg.seed);
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidConfig("split leaves an empty train or test set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model_cfg = ClassifierConfig {
        resolution: dataset.resolution,
        num_labels: dataset.num_labels(),
        width: cfg.width,
        max_width: cfg.max_width,
    };
    let mut clf = Classifier::<f32>::new(&model_cfg, &mut rng)?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
    let mut best = (f64::NEG_INFINITY, clf.clone());
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = train.batch::<f32>(chunk);
            let loss = classification_regularizer(&b.labels, &clf.forward(&b.images)?)?;
            let grads = loss.backward();
            adam.step(&mut clf, &grads);
            total += loss.item();
            batches += 1;
        }
        let test_map = evaluate_map(&clf, &test)?;
        let train_loss = total / batches as f64;
        log::info!("classifier epoch {epoch}: loss {train_loss:.4}, held-out mAP {test_map:.4}");
        history.push(EpochRecord { epoch, train_loss, test_map });
        if test_map > best.0 {
            best = (test_map, clf.clone());
        }
    }
    if cfg.epochs == 0 {
        best.0 = evaluate_map(&clf, &test)?;
    }
    Ok(TrainedClassifier {
        classifier: best.1,
        test_map: best.0,
        train_size: train.len(),
        test_size: test.len(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_hand_example() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[0.1], &[true]), Some(1.0));
        assert_eq!(average_precision(&[0.1, 0.2], &[false, false]), None);
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]), Some(1.0));
    }

    #[test]
    fn ties_follow_index_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]), Some(1.0));
    }

    #[test]
    fn map_skips_classes_without_positives() {
        let labels = [true, false, false, false];
        let scores = [0.9, 0.1, 0.2, 0.3];
        assert_eq!(mean_average_precision(&scores, &labels, 2).unwrap(), 1.0);
        assert!(mean_average_precision(&scores, &[false; 4], 2).is_err());
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let cfg = ClassifierConfig { resolution: 8, num_labels: 10, width: 4, max_width: 8 };
        let mut clf = Classifier::<f64>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        clf.visit_mut("", &mut |_, t| *t = Tensor::zeros(t.shape()).detach_param());
        let y = Tensor::<f64>::randn(&[2, 3, 8, 8], &mut ChaCha8Rng::seed_from_u64(1));
        let logits = clf.forward(&y).unwrap();
        assert_eq!(logits.shape(), &[2, 10]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
        assert!(clf.forward(&Tensor::zeros(&[1, 3, 16, 16])).is_err());
    }

    #[test]
    fn duplicate_inputs_give_identical_rows() {
        let cfg = ClassifierConfig { resolution: 8, num_labels: 3, width: 4, max_width: 8 };
        let clf = Classifier::<f32>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let one = Tensor::<f32>::randn(&[1, 3, 8, 8], &mut ChaCha8Rng::seed_from_u64(3));
        let logits = clf.forward(&Tensor::cat(&[&one, &one], 0)).unwrap();
        assert!(logits.narrow(0, 0, 1).bit_eq(&logits.narrow(0, 1, 1)));
    }
}
