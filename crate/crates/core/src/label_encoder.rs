//! Scalewise label encoder: one small ReLU encoder per synthesis scale.

use mlcgan_autodiff::{Element, Tensor};
use rand::Rng;

use crate::config::{ModelConfig, ScaleSet};
use crate::nn::{join, Activation, Dense, Module};
use crate::{Error, Result};

/// One label embedding `[n, T]` per scale, aligned with a [`ScaleSet`].
#[derive(Clone, Debug)]
pub struct ScaleEmbeddingSet<T: Element> {
    scales: ScaleSet,
    embeddings: Vec<Tensor<T>>,
}

impl<T: Element> ScaleEmbeddingSet<T> {
    pub fn new(scales: ScaleSet, embeddings: Vec<Tensor<T>>) -> Result<Self> {
        if embeddings.len() != scales.len() {
            return Err(Error::dims("embeddings per scale", scales.len(), embeddings.len()));
        }
        let first = embeddings[0].shape().to_vec();
        if first.len() != 2 || embeddings.iter().any(|e| e.shape() != first.as_slice()) {
            return Err(Error::InvalidConfig("scale embeddings must share one [n, T] shape".into()));
        }
        Ok(Self { scales, embeddings })
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }

    pub fn get(&self, scale: usize) -> Option<&Tensor<T>> {
        self.scales.index_of(scale).map(|i| &self.embeddings[i])
    }

    /// Embedding at `scale`; panics if the scale is not in the set.
    pub fn at(&self, scale: usize) -> &Tensor<T> {
        self.get(scale).unwrap_or_else(|| panic!("no embedding for scale {scale}"))
    }

    pub fn embeddings(&self) -> &[Tensor<T>] {
        &self.embeddings
    }

    pub fn batch_size(&self) -> usize {
        self.embeddings[0].dim(0)
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings[0].dim(1)
    }

    pub fn detach(&self) -> Self {
        Self { scales: self.scales.clone(), embeddings: self.embeddings.iter().map(Tensor::detach).collect() }
    }

    pub fn map(&self, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> Self {
        Self { scales: self.scales.clone(), embeddings: self.embeddings.iter().map(f).collect() }
    }

    /// Replace the embedding at one scale.
    pub fn with_scale(&self, scale: usize, value: Tensor<T>) -> Result<Self> {
        let i = self.scales.index_of(scale).ok_or_else(|| Error::dims("scale", "a member of the set", scale))?;
        let mut out = self.clone();
        out.embeddings[i] = value;
        Ok(out)
    }

    /// `(1 - alpha)·self + alpha·other`, scale by scale.
    pub fn lerp(&self, other: &Self, alpha: f64) -> Result<Self> {
        if self.scales != other.scales {
            return Err(Error::dims("scale sets", format!("{:?}", self.scales.scales()), format!("{:?}", other.scales.scales())));
        }
        // endpoints are returned as-is so they stay bit-exact
        if alpha == 0.0 {
            return Ok(self.clone());
        }
        if alpha == 1.0 {
            return Ok(other.clone());
        }
        let embeddings = self
            .embeddings
            .iter()
            .zip(&other.embeddings)
            .map(|(a, b)| a.mul_scalar(1.0 - alpha).add(&b.mul_scalar(alpha)))
            .collect();
        Ok(Self { scales: self.scales.clone(), embeddings })
    }
}

/// Stack of fully connected ReLU layers for one scale.
#[derive(Clone, Debug)]
pub struct SubEncoder<T: Element> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Element> SubEncoder<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.layers.iter().fold(x.clone(), |h, layer| layer.forward(&h))
    }
}

impl<T: Element> Module<T> for SubEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.layers.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.layers.visit_mut(prefix, f);
    }
}

#[derive(Clone, Debug)]
pub struct LabelEncoder<T: Element> {
    scales: ScaleSet,
    num_labels: usize,
    /// One encoder per scale, or a single shared encoder.
    pub encoders: Vec<SubEncoder<T>>,
}

impl<T: Element> LabelEncoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let scales = cfg.scales();
        let count = if cfg.ablation.shared_embedding() { 1 } else { scales.len() };
        let encoders = (0..count)
            .map(|_| {
                let layers = (0..cfg.sle_depth)
                    .map(|d| {
                        let in_dim = if d == 0 { cfg.num_labels } else { cfg.embed_dim };
                        Dense::new(in_dim, cfg.embed_dim, Activation::Relu, 0.0, 1.0, rng)
                    })
                    .collect();
                SubEncoder { layers }
            })
            .collect();
        Self { scales, num_labels: cfg.num_labels, encoders }
    }

    /// Encoder with explicit per-scale layers (one entry per scale, or one shared).
    pub fn from_encoders(scales: ScaleSet, encoders: Vec<SubEncoder<T>>) -> Result<Self> {
        if encoders.len() != 1 && encoders.len() != scales.len() {
            return Err(Error::dims("sub-encoders", scales.len(), encoders.len()));
        }
        let num_labels = encoders[0].layers.first().map(Dense::in_dim).ok_or_else(|| {
            Error::InvalidConfig("sub-encoder needs at least one layer".into())
        })?;
        Ok(Self { scales, num_labels, encoders })
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn is_shared(&self) -> bool {
        self.encoders.len() == 1 && self.scales.len() > 1
    }

    /// `te_i = Enc_i(x)` for every scale. `labels` is `[n, C]`.
    pub fn forward(&self, labels: &Tensor<T>) -> Result<ScaleEmbeddingSet<T>> {
        if labels.rank() != 2 || labels.dim(1) != self.num_labels {
            return Err(Error::dims("label vector length", self.num_labels, format!("{:?}", labels.shape())));
        }
        let embeddings = if self.encoders.len() == 1 {
            let e = self.encoders[0].forward(labels);
            vec![e; self.scales.len()]
        } else {
            self.encoders.iter().map(|enc| enc.forward(labels)).collect()
        };
        ScaleEmbeddingSet::new(self.scales.clone(), embeddings)
    }
}

impl<T: Element> Module<T> for LabelEncoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.encoders.visit(&join(prefix, "enc"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoders.visit_mut(&join(prefix, "enc"), f);
    }
}
