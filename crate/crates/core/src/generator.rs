//! Mapping network, modulated synthesis network and the conditional generator.

use mlcgan_autodiff::{Element, Tensor};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::config::{ModelConfig, ScaleSet};
use crate::label_encoder::{LabelEncoder, ScaleEmbeddingSet};
use crate::nn::{join, Activation, Dense, ModConvSpec, ModulatedConv, Module};
use crate::{Error, Result};

const NORMALIZE_EPS: f64 = 1e-8;

/// Rescale each row of `z` to norm `√L`.
pub fn normalize_latent<T: Element>(z: &Tensor<T>) -> Tensor<T> {
    z.mul(&z.square().mean_keepdim(&[1]).add_scalar(NORMALIZE_EPS).rsqrt())
}

/// `w_avg + ψ(w − w_avg)`; `w` is `[n, L]` or `[L]`, `w_avg` is `[L]`.
pub fn truncate<T: Element>(w: &Tensor<T>, w_avg: &Tensor<T>, psi: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::InvalidConfig(format!("truncation psi must lie in [0, 1], got {psi}")));
    }
    let l = *w.shape().last().unwrap_or(&0);
    if w_avg.shape() != [l] {
        return Err(Error::dims("w_avg length", l, format!("{:?}", w_avg.shape())));
    }
    if psi == 1.0 {
        return Ok(w.clone());
    }
    Ok(w.sub(w_avg).mul_scalar(psi).add(w_avg))
}

/// Mapping network `f`: an MLP over the normalized style noise.
#[derive(Clone, Debug)]
pub struct MappingNetwork<T: Element> {
    pub layers: Vec<Dense<T>>,
    /// Length of an optional label embedding prepended to `z`.
    pub embed_dim: usize,
}

impl<T: Element> MappingNetwork<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let embed_dim = if cfg.ablation.sle_before_mapping { cfg.embed_dim } else { 0 };
        let layers = (0..cfg.mapping_layers)
            .map(|i| {
                let in_dim = if i == 0 { cfg.mapping_in_dim() } else { cfg.z_dim };
                let act = if i + 1 == cfg.mapping_layers { Activation::Linear } else { Activation::Lrelu };
                Dense::new(in_dim, cfg.z_dim, act, 0.0, cfg.mapping_lr_mul, rng)
            })
            .collect();
        Self { layers, embed_dim }
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Self {
        Self { layers, embed_dim: 0 }
    }

    pub fn z_dim(&self) -> usize {
        self.layers[0].in_dim() - self.embed_dim
    }

    /// `w = MLP(normalize(z))`, or `MLP(te ⊕ normalize(z))` when an embedding is given.
    pub fn forward(&self, z: &Tensor<T>, embedding: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        if z.rank() != 2 || z.dim(1) != self.z_dim() {
            return Err(Error::dims("style noise length", self.z_dim(), format!("{:?}", z.shape())));
        }
        let z = normalize_latent(z);
        let input = match (embedding, self.embed_dim) {
            (_, 0) => z,
            (Some(te), t) if te.shape() == [z.dim(0), t] => Tensor::cat(&[te, &z], 1),
            (te, t) => {
                return Err(Error::dims("mapping label embedding", t, format!("{:?}", te.map(|e| e.shape().to_vec()))))
            }
        };
        Ok(self.layers.iter().fold(input, |h, layer| layer.forward(&h)))
    }
}

impl<T: Element> Module<T> for MappingNetwork<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.layers.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.layers.visit_mut(prefix, f);
    }
}

/// One synthesis resolution: optional upsampling conv, conv, and toRGB.
#[derive(Clone, Debug)]
pub struct SynthesisBlock<T: Element> {
    pub resolution: usize,
    pub conv0: Option<ModulatedConv<T>>,
    pub conv1: ModulatedConv<T>,
    pub to_rgb: ModulatedConv<T>,
}

impl<T: Element> Module<T> for SynthesisBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv0.visit(&join(prefix, "conv0"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.to_rgb.visit(&join(prefix, "to_rgb"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv0.visit_mut(&join(prefix, "conv0"), f);
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.to_rgb.visit_mut(&join(prefix, "to_rgb"), f);
    }
}

/// Synthesis network `S` with skip-connected RGB outputs.
#[derive(Clone, Debug)]
pub struct SynthesisNetwork<T: Element> {
    scales: ScaleSet,
    /// Learned `[c, 4, 4]` input.
    pub constant: Tensor<T>,
    pub blocks: Vec<SynthesisBlock<T>>,
    /// Whether each style input is `te_i ⊕ w` or `w` alone.
    pub concat_embedding: bool,
}

impl<T: Element> SynthesisNetwork<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let scales = cfg.scales();
        let style_dim = cfg.synthesis_cond_dim();
        let spec = |in_ch, out_ch, kernel, upsample, demodulate, activation| ModConvSpec {
            in_ch,
            out_ch,
            kernel,
            style_dim,
            demodulate,
            upsample,
            stride: 1,
            activation,
            noise: demodulate && cfg.use_noise,
        };
        let constant = Tensor::<T>::randn(&[cfg.channels(4), 4, 4], rng).detach_param();
        let blocks = scales
            .scales()
            .iter()
            .map(|&res| {
                let out = cfg.channels(res);
                let conv0 = (res > 4)
                    .then(|| ModulatedConv::new(spec(cfg.channels(res / 2), out, 3, true, true, Activation::Lrelu), rng));
                let in1 = if res == 4 { cfg.channels(4) } else { out };
                let conv1 = ModulatedConv::new(spec(in1, out, 3, false, true, Activation::Lrelu), rng);
                let to_rgb = ModulatedConv::new(spec(out, 3, 1, false, false, Activation::Linear), rng);
                SynthesisBlock { resolution: res, conv0, conv1, to_rgb }
            })
            .collect();
        Self { scales, constant, blocks, concat_embedding: !cfg.ablation.sle_before_mapping }
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }

    /// Style input of a scale block.
    fn condition(&self, w: &Tensor<T>, te: &ScaleEmbeddingSet<T>, res: usize) -> Tensor<T> {
        if self.concat_embedding {
            Tensor::cat(&[te.at(res), w], 1)
        } else {
            w.clone()
        }
    }

    /// Image `[n, 3, R, R]` from `w` (`[n, L]`) and per-scale embeddings.
    pub fn forward(
        &self,
        w: &Tensor<T>,
        te: &ScaleEmbeddingSet<T>,
        mut noise: Option<&mut dyn RngCore>,
    ) -> Result<Tensor<T>> {
        if te.scales() != &self.scales {
            return Err(Error::dims(
                "embedding scales",
                format!("{:?}", self.scales.scales()),
                format!("{:?}", te.scales().scales()),
            ));
        }
        let n = w.dim(0);
        if te.batch_size() != n {
            return Err(Error::dims("embedding batch", n, te.batch_size()));
        }
        let c4 = self.constant.dim(0);
        let mut x = self.constant.reshape(&[1, c4, 4, 4]).broadcast_to(&[n, c4, 4, 4]);
        let mut rgb: Option<Tensor<T>> = None;
        for block in &self.blocks {
            let cond = self.condition(w, te, block.resolution);
            let res = block.resolution;
            let mut layer_noise = |conv: &ModulatedConv<T>| -> Option<Tensor<T>> {
                conv.noise_strength.as_ref()?;
                noise.as_mut().map(|r| gaussian(&[n, 1, res, res], &mut **r))
            };
            if let Some(conv0) = &block.conv0 {
                let nz = layer_noise(conv0);
                x = conv0.forward(&x, &cond, nz.as_ref());
            }
            let nz = layer_noise(&block.conv1);
            x = block.conv1.forward(&x, &cond, nz.as_ref());
            let y = block.to_rgb.forward(&x, &cond, None);
            rgb = Some(match rgb {
                Some(prev) => prev.upsample2x().add(&y),
                None => y,
            });
        }
        Ok(rgb.expect("at least one synthesis block"))
    }
}

fn gaussian<T: Element>(shape: &[usize], rng: &mut dyn RngCore) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(StandardNormal.sample(rng))).collect();
    Tensor::from_vec(data, shape)
}

impl<T: Element> Module<T> for SynthesisNetwork<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "const"), &self.constant);
        for b in &self.blocks {
            b.visit(&join(prefix, &format!("b{}", b.resolution)), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "const"), &mut self.constant);
        for b in &mut self.blocks {
            let name = join(prefix, &format!("b{}", b.resolution));
            b.visit_mut(&name, f);
        }
    }
}

/// The full generator `G(x, z)`: label encoder, mapping and synthesis.
#[derive(Clone, Debug)]
pub struct Generator<T: Element> {
    cfg: ModelConfig,
    pub sle: LabelEncoder<T>,
    pub mapping: Option<MappingNetwork<T>>,
    pub synthesis: SynthesisNetwork<T>,
    /// Running average of mapping outputs, used for truncation. Not trainable.
    pub w_avg: Tensor<T>,
}

impl<T: Element> Generator<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let sle = LabelEncoder::new(cfg, rng);
        let mapping = (!cfg.ablation.disable_mapping).then(|| MappingNetwork::new(cfg, rng));
        let synthesis = SynthesisNetwork::new(cfg, rng);
        Ok(Self { cfg: cfg.clone(), sle, mapping, synthesis, w_avg: Tensor::zeros(&[cfg.z_dim]) })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn resolution(&self) -> usize {
        self.cfg.resolution
    }

    pub fn num_labels(&self) -> usize {
        self.cfg.num_labels
    }

    pub fn z_dim(&self) -> usize {
        self.cfg.z_dim
    }

    /// `{te_i}` for labels `[n, C]`.
    pub fn embed(&self, labels: &Tensor<T>) -> Result<ScaleEmbeddingSet<T>> {
        self.sle.forward(labels)
    }

    /// Intermediate latent `w` (`[n, L]`). Without a mapping network this is `z`.
    pub fn map(&self, z: &Tensor<T>, te: &ScaleEmbeddingSet<T>) -> Result<Tensor<T>> {
        if z.rank() != 2 || z.dim(1) != self.cfg.z_dim {
            return Err(Error::dims("style noise length", self.cfg.z_dim, format!("{:?}", z.shape())));
        }
        match &self.mapping {
            None => Ok(z.clone()),
            Some(m) => {
                let shared = self.cfg.ablation.sle_before_mapping.then(|| te.embeddings()[0].clone());
                m.forward(z, shared.as_ref())
            }
        }
    }

    pub fn truncate(&self, w: &Tensor<T>, psi: f64) -> Result<Tensor<T>> {
        truncate(w, &self.w_avg, psi)
    }

    pub fn synthesize(
        &self,
        w: &Tensor<T>,
        te: &ScaleEmbeddingSet<T>,
        noise: Option<&mut dyn RngCore>,
    ) -> Result<Tensor<T>> {
        self.synthesis.forward(w, te, noise)
    }

    /// `ỹ = S(truncate(f(z)), SLE(x))` with detail noise disabled.
    pub fn generate(&self, labels: &Tensor<T>, z: &Tensor<T>, psi: f64) -> Result<Tensor<T>> {
        let te = self.embed(labels)?;
        if te.batch_size() != z.dim(0) {
            return Err(Error::dims("batch of style noise", te.batch_size(), z.dim(0)));
        }
        let w = self.truncate(&self.map(z, &te)?, psi)?;
        self.synthesize(&w, &te, None)
    }

    /// Move `w_avg` toward the batch mean of `w` by `1 − decay`.
    pub fn update_w_avg(&mut self, w: &Tensor<T>, decay: f64) {
        let mean = w.detach().mean_axes(&[0]);
        self.w_avg = mean.add(&self.w_avg.sub(&mean).mul_scalar(decay)).detach();
    }

    /// Non-trainable state carried in checkpoints.
    pub fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "w_avg"), &self.w_avg);
    }

    pub fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "w_avg"), &mut self.w_avg);
    }
}

impl<T: Element> Module<T> for Generator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.sle.visit(&join(prefix, "sle"), f);
        self.mapping.visit(&join(prefix, "mapping"), f);
        self.synthesis.visit(&join(prefix, "synthesis"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.sle.visit_mut(&join(prefix, "sle"), f);
        self.mapping.visit_mut(&join(prefix, "mapping"), f);
        self.synthesis.visit_mut(&join(prefix, "synthesis"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn truncation_arithmetic() {
        let w = Tensor::<f64>::from_f64s(&[4.0], &[1, 1]);
        let avg = Tensor::<f64>::from_f64s(&[2.0], &[1]);
        assert_eq!(truncate(&w, &avg, 0.5).unwrap().item(), 3.0);
        assert_eq!(truncate(&w, &avg, 0.0).unwrap().item(), 2.0);
        assert!(truncate(&w, &avg, 1.0).unwrap().bit_eq(&w));
        assert!(truncate(&w, &avg, 1.5).is_err());
        assert!(truncate(&w, &Tensor::zeros(&[2]), 0.5).is_err());
    }

    #[test]
    fn normalized_latent_has_norm_sqrt_l() {
        let z = Tensor::<f64>::randn(&[3, 16], &mut rng(0));
        let norms = normalize_latent(&z).square().sum_axes(&[1]).sqrt().to_f64_vec();
        assert!(norms.iter().all(|&v| (v - 4.0).abs() < 1e-6));
    }

    #[test]
    fn zero_weight_mapping_returns_final_bias() {
        let cfg = ModelConfig::tiny(8, 2);
        let mut m = MappingNetwork::<f64>::new(&cfg, &mut rng(1));
        for layer in &mut m.layers {
            layer.weight = Tensor::zeros(layer.weight.shape()).detach_param();
        }
        let last = m.layers.last_mut().unwrap();
        last.bias = Tensor::randn(&[8], &mut rng(2)).detach_param();
        let expect = last.bias.mul_scalar(last.bias_gain);
        let w = m.forward(&Tensor::randn(&[2, 8], &mut rng(3)), None).unwrap();
        for row in 0..2 {
            assert!(w.narrow(0, row, 1).reshape(&[8]).max_abs_diff(&expect) < 1e-15);
        }
    }

    #[test]
    fn output_shape_and_determinism() {
        let cfg = ModelConfig::tiny(16, 3);
        let g = Generator::<f32>::new(&cfg, &mut rng(4)).unwrap();
        let x = Tensor::from_f64s(&[1.0, 0.0, 1.0, 0.0, 0.0, 0.0], &[2, 3]);
        let z = Tensor::randn(&[2, 8], &mut rng(5));
        let a = g.generate(&x, &z, 1.0).unwrap();
        let b = g.generate(&x, &z, 1.0).unwrap();
        assert_eq!(a.shape(), &[2, 3, 16, 16]);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn psi_zero_collapses_style_noise() {
        let cfg = ModelConfig::tiny(8, 2);
        let mut g = Generator::<f64>::new(&cfg, &mut rng(6)).unwrap();
        g.w_avg = Tensor::randn(&[8], &mut rng(7));
        let x = Tensor::from_f64s(&[1.0, 0.0], &[1, 2]);
        let a = g.generate(&x, &Tensor::randn(&[1, 8], &mut rng(8)), 0.0).unwrap();
        let b = g.generate(&x, &Tensor::randn(&[1, 8], &mut rng(9)), 0.0).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn label_bit_changes_image() {
        let cfg = ModelConfig::tiny(8, 3);
        let g = Generator::<f64>::new(&cfg, &mut rng(10)).unwrap();
        let z = Tensor::randn(&[1, 8], &mut rng(11));
        let a = g.generate(&Tensor::from_f64s(&[1.0, 0.0, 0.0], &[1, 3]), &z, 1.0).unwrap();
        let b = g.generate(&Tensor::from_f64s(&[1.0, 1.0, 0.0], &[1, 3]), &z, 1.0).unwrap();
        assert!(a.sub(&b).map_values(f64::abs).sum_all().item() > 0.0);
    }

    #[test]
    fn every_scale_embedding_reaches_the_image() {
        let cfg = ModelConfig::tiny(16, 2);
        let g = Generator::<f64>::new(&cfg, &mut rng(12)).unwrap();
        let te = g.embed(&Tensor::from_f64s(&[1.0, 1.0], &[1, 2])).unwrap();
        let w = g.map(&Tensor::randn(&[1, 8], &mut rng(13)), &te).unwrap();
        let base = g.synthesize(&w, &te, None).unwrap();
        for &s in te.scales().scales() {
            let moved = te.with_scale(s, te.at(s).add_scalar(0.25)).unwrap();
            let img = g.synthesize(&w, &moved, None).unwrap();
            assert!(!img.bit_eq(&base), "scale {s} had no effect");
        }
    }

    #[test]
    fn noise_is_optional_and_seedable() {
        let mut cfg = ModelConfig::tiny(8, 2);
        cfg.use_noise = true;
        let mut g = Generator::<f64>::new(&cfg, &mut rng(14)).unwrap();
        g.visit_mut("", &mut |name, t| {
            if name.ends_with("noise_strength") {
                *t = Tensor::ones(t.shape()).detach_param();
            }
        });
        let te = g.embed(&Tensor::zeros(&[1, 2])).unwrap();
        let w = g.map(&Tensor::randn(&[1, 8], &mut rng(15)), &te).unwrap();
        let quiet = g.synthesize(&w, &te, None).unwrap();
        let a = g.synthesize(&w, &te, Some(&mut rng(16))).unwrap();
        let b = g.synthesize(&w, &te, Some(&mut rng(16))).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&quiet));
    }

    #[test]
    fn scale_mismatch_is_an_error() {
        let g8 = Generator::<f64>::new(&ModelConfig::tiny(8, 2), &mut rng(17)).unwrap();
        let g16 = Generator::<f64>::new(&ModelConfig::tiny(16, 2), &mut rng(18)).unwrap();
        let te = g16.embed(&Tensor::zeros(&[1, 2])).unwrap();
        let w = Tensor::zeros(&[1, 8]);
        assert!(matches!(g8.synthesize(&w, &te, None), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn w_avg_moves_toward_batch_mean() {
        let mut g = Generator::<f64>::new(&ModelConfig::tiny(8, 2), &mut rng(19)).unwrap();
        let w = Tensor::full(&[4, 8], 2.0);
        g.update_w_avg(&w, 0.995);
        assert!(g.w_avg.data().iter().all(|&v| (v - 0.01).abs() < 1e-12));
    }
}
