//! Dual-branch discriminator: a label-modulated conditional branch and a
//! plain unconditional branch, each ending in minibatch statistics and a head.

use mlcgan_autodiff::{Element, Tensor};
use rand::Rng;

use crate::config::{ModelConfig, ScaleSet};
use crate::label_encoder::ScaleEmbeddingSet;
use crate::nn::{join, Activation, Conv2d, Dense, ModConvSpec, ModulatedConv, Module};
use crate::{Error, Result};

pub const MBSTD_EPS: f64 = 1e-8;

/// Largest divisor of `n` not exceeding `group`.
pub fn mbstd_group_size(n: usize, group: usize) -> usize {
    (1..=group.min(n)).rev().find(|g| n % g == 0).unwrap_or(1)
}

/// Append one channel holding the per-group feature standard deviation,
/// averaged over channels and space.
///
/// Sample `k` belongs to group member `k / m` of column `k % m`, where
/// `m = n / g`.
pub fn minibatch_stddev<T: Element>(x: &Tensor<T>, group: usize, eps: f64) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::dims("feature map rank", 4, x.rank()));
    }
    let [n, c, h, w] = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let g = mbstd_group_size(n, group);
    let m = n / g;
    let y = x.reshape(&[g, m, c, h, w]);
    let centered = y.sub(&y.mean_keepdim(&[0]));
    let std = centered.square().mean_keepdim(&[0]).add_scalar(eps).sqrt();
    let stat = std.mean_keepdim(&[2, 3, 4]);
    let stat = stat.broadcast_to(&[g, m, 1, h, w]).reshape(&[n, 1, h, w]);
    Ok(Tensor::cat(&[x, &stat], 1))
}

/// A convolution that is either plain or modulated by a label embedding.
#[derive(Clone, Debug)]
pub enum DConv<T: Element> {
    Plain(Conv2d<T>),
    Modulated(ModulatedConv<T>),
}

impl<T: Element> DConv<T> {
    fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        style_dim: Option<usize>,
        rng: &mut R,
    ) -> Self {
        match style_dim {
            None => DConv::Plain(Conv2d::new(in_ch, out_ch, 3, stride, Activation::Lrelu, rng)),
            Some(style_dim) => DConv::Modulated(ModulatedConv::new(
                ModConvSpec {
                    in_ch,
                    out_ch,
                    kernel: 3,
                    style_dim,
                    demodulate: true,
                    upsample: false,
                    stride,
                    activation: Activation::Lrelu,
                    noise: false,
                },
                rng,
            )),
        }
    }

    fn forward(&self, x: &Tensor<T>, te: Option<&Tensor<T>>) -> Tensor<T> {
        match (self, te) {
            (DConv::Plain(c), _) => c.forward(x),
            (DConv::Modulated(c), Some(te)) => c.forward(x, te, None),
            (DConv::Modulated(_), None) => unreachable!("modulated conv without an embedding"),
        }
    }
}

impl<T: Element> Module<T> for DConv<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        match self {
            DConv::Plain(c) => c.visit(prefix, f),
            DConv::Modulated(c) => c.visit(prefix, f),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match self {
            DConv::Plain(c) => c.visit_mut(prefix, f),
            DConv::Modulated(c) => c.visit_mut(prefix, f),
        }
    }
}

/// Two 3×3 convolutions at resolution `r`, the second with stride 2.
#[derive(Clone, Debug)]
pub struct DBlock<T: Element> {
    pub resolution: usize,
    pub conv0: DConv<T>,
    pub conv1: DConv<T>,
}

impl<T: Element> Module<T> for DBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv0.visit(&join(prefix, "conv0"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv0.visit_mut(&join(prefix, "conv0"), f);
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
    }
}

/// 4×4 stage: minibatch stddev, conv, and two dense layers down to one score.
#[derive(Clone, Debug)]
pub struct Head<T: Element> {
    pub conv: DConv<T>,
    pub fc: Dense<T>,
    pub out: Dense<T>,
}

impl<T: Element> Module<T> for Head<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.fc.visit(&join(prefix, "fc"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.fc.visit_mut(&join(prefix, "fc"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// One discriminator branch. Conditional branches modulate every
/// convolution by the embedding of the scale it runs at.
#[derive(Clone, Debug)]
pub struct Branch<T: Element> {
    pub from_rgb: Conv2d<T>,
    pub blocks: Vec<DBlock<T>>,
    pub head: Head<T>,
    pub mbstd_group: usize,
    pub conditional: bool,
}

impl<T: Element> Branch<T> {
    fn new<R: Rng + ?Sized>(cfg: &ModelConfig, conditional: bool, rng: &mut R) -> Self {
        let style = conditional.then_some(cfg.embed_dim);
        let res = cfg.resolution;
        let from_rgb = Conv2d::new(3, cfg.channels(res), 1, 1, Activation::Lrelu, rng);
        let mut blocks = Vec::new();
        let mut r = res;
        while r > 4 {
            let (c, c_next) = (cfg.channels(r), cfg.channels(r / 2));
            blocks.push(DBlock {
                resolution: r,
                conv0: DConv::new(c, c, 1, style, rng),
                conv1: DConv::new(c, c_next, 2, style, rng),
            });
            r /= 2;
        }
        let c4 = cfg.channels(4);
        let head = Head {
            conv: DConv::new(c4 + 1, c4, 1, style, rng),
            fc: Dense::new(c4 * 16, c4, Activation::Lrelu, 0.0, 1.0, rng),
            out: Dense::new(c4, 1, Activation::Linear, 0.0, 1.0, rng),
        };
        Self { from_rgb, blocks, head, mbstd_group: cfg.mbstd_group, conditional }
    }

    /// Scores `[n]`. Conditional branches read `te` fine-to-coarse.
    fn forward(&self, y: &Tensor<T>, te: Option<&ScaleEmbeddingSet<T>>) -> Result<Tensor<T>> {
        let n = y.dim(0);
        let at = |res: usize| te.map(|t| t.at(res));
        let mut x = self.from_rgb.forward(y);
        for b in &self.blocks {
            x = b.conv0.forward(&x, at(b.resolution));
            x = b.conv1.forward(&x, at(b.resolution));
        }
        let x = minibatch_stddev(&x, self.mbstd_group, MBSTD_EPS)?;
        let x = self.head.conv.forward(&x, at(4));
        let x = self.head.fc.forward(&x.flatten_from(1));
        Ok(self.head.out.forward(&x).reshape(&[n]))
    }
}

impl<T: Element> Module<T> for Branch<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.from_rgb.visit(&join(prefix, "from_rgb"), f);
        for b in &self.blocks {
            b.visit(&join(prefix, &format!("b{}", b.resolution)), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.from_rgb.visit_mut(&join(prefix, "from_rgb"), f);
        for b in &mut self.blocks {
            let name = join(prefix, &format!("b{}", b.resolution));
            b.visit_mut(&name, f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Conditional and (optionally) unconditional realism scores, each `[n]`.
#[derive(Clone, Debug)]
pub struct ScorePair<T: Element> {
    pub s_c: Tensor<T>,
    pub s_uc: Option<Tensor<T>>,
}

impl<T: Element> ScorePair<T> {
    pub fn new(s_c: Tensor<T>, s_uc: Option<Tensor<T>>) -> Self {
        Self { s_c, s_uc }
    }

    /// Rank-1 score pair from plain numbers.
    pub fn from_values(s_c: &[f64], s_uc: Option<&[f64]>) -> Self {
        Self { s_c: Tensor::from_f64s(s_c, &[s_c.len()]), s_uc: s_uc.map(|v| Tensor::from_f64s(v, &[v.len()])) }
    }

    pub fn all_finite(&self) -> bool {
        self.s_c.all_finite() && self.s_uc.as_ref().is_none_or(Tensor::all_finite)
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator<T: Element> {
    scales: ScaleSet,
    resolution: usize,
    pub conditional: Branch<T>,
    pub unconditional: Option<Branch<T>>,
}

impl<T: Element> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let conditional = Branch::new(cfg, true, rng);
        let unconditional = (!cfg.ablation.disable_uncond).then(|| Branch::new(cfg, false, rng));
        Ok(Self { scales: cfg.scales(), resolution: cfg.resolution, conditional, unconditional })
    }

    fn check_input(&self, y: &Tensor<T>) -> Result<()> {
        let r = self.resolution;
        if y.rank() != 4 || y.shape()[1..] != [3, r, r] {
            return Err(Error::dims("discriminator input", format!("[n, 3, {r}, {r}]"), format!("{:?}", y.shape())));
        }
        Ok(())
    }

    /// `s_c` alone, as used for wrong pairs.
    pub fn forward_conditional(&self, y: &Tensor<T>, te: &ScaleEmbeddingSet<T>) -> Result<Tensor<T>> {
        self.check_input(y)?;
        if te.scales() != &self.scales {
            return Err(Error::dims(
                "embedding scales",
                format!("{:?}", self.scales.scales()),
                format!("{:?}", te.scales().scales()),
            ));
        }
        if te.batch_size() != y.dim(0) {
            return Err(Error::dims("embedding batch", y.dim(0), te.batch_size()));
        }
        self.conditional.forward(y, Some(te))
    }

    /// `s_uc`, or `None` when the unconditional branch is disabled.
    pub fn forward_unconditional(&self, y: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        self.check_input(y)?;
        self.unconditional.as_ref().map(|b| b.forward(y, None)).transpose()
    }

    pub fn forward(&self, y: &Tensor<T>, te: &ScaleEmbeddingSet<T>) -> Result<ScorePair<T>> {
        Ok(ScorePair { s_c: self.forward_conditional(y, te)?, s_uc: self.forward_unconditional(y)? })
    }
}

impl<T: Element> Module<T> for Discriminator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conditional.visit(&join(prefix, "cond"), f);
        self.unconditional.visit(&join(prefix, "uncond"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conditional.visit_mut(&join(prefix, "cond"), f);
        self.unconditional.visit_mut(&join(prefix, "uncond"), f);
    }
}
