//! Layers with equalized learning rate: parameters are stored unit-variance
//! and scaled by a constant gain at runtime.

use mlcgan_autodiff::{ConvGeometry, Element, Tensor};
use rand::Rng;

pub const LRELU_SLOPE: f64 = 0.2;
pub const LRELU_GAIN: f64 = std::f64::consts::SQRT_2;
pub const DEMOD_EPS: f64 = 1e-8;

/// Anything holding named trainable tensors.
pub trait Module<T: Element> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Element, M: Module<T>> Module<T> for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T: Element, M: Module<T>> Module<T> for Option<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Some(m) = self {
            m.visit(prefix, f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(m) = self {
            m.visit_mut(prefix, f);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    /// Leaky ReLU with slope 0.2, scaled by √2.
    Lrelu,
}

impl Activation {
    pub fn apply<T: Element>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Linear => x.clone(),
            Activation::Relu => x.relu(),
            Activation::Lrelu => x.leaky_relu(LRELU_SLOPE).mul_scalar(LRELU_GAIN),
        }
    }
}

pub(crate) fn randn_param<T: Element, R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor<T> {
    Tensor::<T>::randn(shape, rng).mul_scalar(scale).detach_param()
}

pub(crate) fn const_param<T: Element>(shape: &[usize], v: f64) -> Tensor<T> {
    Tensor::<T>::full(shape, v).detach_param()
}

/// Fully connected layer. `weight` is stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Dense<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub weight_gain: f64,
    pub bias_gain: f64,
    pub activation: Activation,
}

impl<T: Element> Dense<T> {
    /// Equalized-lr dense layer; `lr_mul` slows the effective learning rate.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        bias_init: f64,
        lr_mul: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: randn_param(&[in_dim, out_dim], 1.0 / lr_mul, rng),
            bias: const_param(&[out_dim], bias_init / lr_mul),
            weight_gain: lr_mul / (in_dim as f64).sqrt(),
            bias_gain: lr_mul,
            activation,
        }
    }

    /// Layer with explicit effective weights (`[in, out]`) and bias, gains 1.
    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, activation: Activation) -> Self {
        assert_eq!(weight.rank(), 2);
        assert_eq!(bias.shape(), &[weight.dim(1)]);
        Self { weight: weight.detach_param(), bias: bias.detach_param(), weight_gain: 1.0, bias_gain: 1.0, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let w = scaled(&self.weight, self.weight_gain);
        let b = scaled(&self.bias, self.bias_gain);
        self.activation.apply(&x.matmul(&w).add(&b))
    }
}

fn scaled<T: Element>(t: &Tensor<T>, gain: f64) -> Tensor<T> {
    if gain == 1.0 {
        t.clone()
    } else {
        t.mul_scalar(gain)
    }
}

impl<T: Element> Module<T> for Dense<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Plain convolution with bias and activation.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub weight_gain: f64,
    pub geometry: ConvGeometry,
    pub activation: Activation,
}

impl<T: Element> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: randn_param(&[out_ch, in_ch, kernel, kernel], 1.0, rng),
            bias: const_param(&[out_ch], 0.0),
            weight_gain: 1.0 / ((in_ch * kernel * kernel) as f64).sqrt(),
            geometry: ConvGeometry::new(stride, kernel / 2),
            activation,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let w = scaled(&self.weight, self.weight_gain);
        let y = x.conv2d(&w, self.geometry);
        let o = self.weight.dim(0);
        self.activation.apply(&y.add(&self.bias.reshape(&[1, o, 1, 1])))
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-sample modulated (and optionally demodulated) kernels.
///
/// `kernel` is `[out, in, k, k]`, `style` is `[n, in]`; the result is
/// `[n, out, in, k, k]` with `w'' = s_i w_ijk / sqrt(sum_{i,k} (s_i w_ijk)^2 + eps)`.
pub fn modulate_demodulate<T: Element>(kernel: &Tensor<T>, style: &Tensor<T>, eps: f64) -> crate::Result<Tensor<T>> {
    if eps <= 0.0 || eps.is_nan() {
        return Err(crate::Error::InvalidConfig(format!("demodulation epsilon must be positive, got {eps}")));
    }
    if kernel.rank() != 4 {
        return Err(crate::Error::dims("modulation kernel rank", 4, kernel.rank()));
    }
    let [o, c, kh, kw] = [kernel.dim(0), kernel.dim(1), kernel.dim(2), kernel.dim(3)];
    if style.rank() != 2 || style.dim(1) != c {
        return Err(crate::Error::dims("style length", c, format!("{:?}", style.shape())));
    }
    let n = style.dim(0);
    let modulated = kernel
        .reshape(&[1, o, c, kh, kw])
        .mul(&style.reshape(&[n, 1, c, 1, 1]));
    let norm = modulated.square().sum_keepdim(&[2, 3, 4]).add_scalar(eps).rsqrt();
    Ok(modulated.mul(&norm))
}

/// Convolution whose kernel is modulated per sample by a style vector
/// computed from an affine map of the conditioning input.
///
/// Evaluated in the non-fused form: scale the input channels, convolve with the
/// shared kernel, then rescale output channels by the demodulation
/// coefficients. This equals convolving each sample with its own
/// [`modulate_demodulate`] kernel.
#[derive(Clone, Debug)]
pub struct ModulatedConv<T: Element> {
    pub affine: Dense<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub weight_gain: f64,
    pub demodulate: bool,
    pub upsample: bool,
    pub geometry: ConvGeometry,
    pub activation: Activation,
    /// Learned per-layer strength of injected detail noise, when enabled.
    pub noise_strength: Option<Tensor<T>>,
}

/// Construction parameters of a [`ModulatedConv`].
#[derive(Clone, Copy, Debug)]
pub struct ModConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub style_dim: usize,
    pub demodulate: bool,
    pub upsample: bool,
    pub stride: usize,
    pub activation: Activation,
    pub noise: bool,
}

impl<T: Element> ModulatedConv<T> {
    pub fn new<R: Rng + ?Sized>(spec: ModConvSpec, rng: &mut R) -> Self {
        let fan_in = (spec.in_ch * spec.kernel * spec.kernel) as f64;
        Self {
            affine: Dense::new(spec.style_dim, spec.in_ch, Activation::Linear, 1.0, 1.0, rng),
            weight: randn_param(&[spec.out_ch, spec.in_ch, spec.kernel, spec.kernel], 1.0, rng),
            bias: const_param(&[spec.out_ch], 0.0),
            weight_gain: 1.0 / fan_in.sqrt(),
            demodulate: spec.demodulate,
            upsample: spec.upsample,
            geometry: ConvGeometry::new(spec.stride, spec.kernel / 2),
            activation: spec.activation,
            noise_strength: spec.noise.then(|| const_param(&[1], 0.0)),
        }
    }

    pub fn in_ch(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_ch(&self) -> usize {
        self.weight.dim(0)
    }

    /// Per-input-channel style `[n, in]` for a conditioning input `[n, style_dim]`.
    pub fn style(&self, cond: &Tensor<T>) -> Tensor<T> {
        self.affine.forward(cond)
    }

    /// Kernel with the equalized-lr gain applied.
    pub fn effective_weight(&self) -> Tensor<T> {
        scaled(&self.weight, self.weight_gain)
    }

    pub fn forward(&self, x: &Tensor<T>, cond: &Tensor<T>, noise: Option<&Tensor<T>>) -> Tensor<T> {
        let style = self.style(cond);
        self.forward_with_style(x, &style, noise)
    }

    pub fn forward_with_style(&self, x: &Tensor<T>, style: &Tensor<T>, noise: Option<&Tensor<T>>) -> Tensor<T> {
        let n = x.dim(0);
        let (o, c) = (self.out_ch(), self.in_ch());
        let x = if self.upsample { x.upsample2x() } else { x.clone() };
        let w = self.effective_weight();
        let y = x.mul(&style.reshape(&[n, c, 1, 1])).conv2d(&w, self.geometry);
        let y = if self.demodulate {
            // sum_{i,k} (s_i w_oik)^2 = s^2 · (sum_k w_oik^2)^T
            let wsq = w.square().sum_axes(&[2, 3]);
            let d = style.square().matmul(&wsq.t()).add_scalar(DEMOD_EPS).rsqrt();
            y.mul(&d.reshape(&[n, o, 1, 1]))
        } else {
            y
        };
        let y = match (&self.noise_strength, noise) {
            (Some(strength), Some(noise)) => y.add(&noise.mul(&strength.reshape(&[1, 1, 1, 1]))),
            _ => y,
        };
        self.activation.apply(&y.add(&self.bias.reshape(&[1, o, 1, 1])))
    }
}

impl<T: Element> Module<T> for ModulatedConv<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.affine.visit(&join(prefix, "affine"), f);
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
        if let Some(s) = &self.noise_strength {
            f(&join(prefix, "noise_strength"), s);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.affine.visit_mut(&join(prefix, "affine"), f);
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
        if let Some(s) = &mut self.noise_strength {
            f(&join(prefix, "noise_strength"), s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_demodulation() {
        let k = Tensor::<f64>::from_f64s(&[2.0], &[1, 1, 1, 1]);
        let s = Tensor::<f64>::from_f64s(&[3.0], &[1, 1]);
        let w = modulate_demodulate(&k, &s, 1e-8).unwrap();
        let expect = 6.0 / (36.0f64 + 1e-8).sqrt();
        assert!((w.item() - expect).abs() < 1e-15);
        assert!((w.item() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unit_kernel_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Tensor::<f64>::randn(&[3, 4, 3, 3], &mut rng);
        let norm = k.square().sum_keepdim(&[1, 2, 3]).sqrt();
        let unit = k.div(&norm);
        let w = modulate_demodulate(&unit, &Tensor::ones(&[1, 4]), 1e-8).unwrap();
        assert!(w.reshape(&[3, 4, 3, 3]).max_abs_diff(&unit) < 1e-6);
    }

    #[test]
    fn rejects_bad_epsilon_and_style() {
        let k = Tensor::<f64>::ones(&[1, 2, 1, 1]);
        assert!(modulate_demodulate(&k, &Tensor::ones(&[1, 2]), 0.0).is_err());
        assert!(modulate_demodulate(&k, &Tensor::ones(&[1, 3]), 1e-8).is_err());
    }

    /// Grouped evaluation with explicit per-sample kernels equals the non-fused path.
    #[test]
    fn nonfused_matches_explicit_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ModConvSpec {
            in_ch: 3,
            out_ch: 2,
            kernel: 3,
            style_dim: 5,
            demodulate: true,
            upsample: false,
            stride: 1,
            activation: Activation::Linear,
            noise: false,
        };
        let conv = ModulatedConv::<f64>::new(spec, &mut rng);
        let x = Tensor::<f64>::randn(&[2, 3, 5, 5], &mut rng);
        let cond = Tensor::<f64>::randn(&[2, 5], &mut rng);
        let fused = conv.forward(&x, &cond, None);
        let style = conv.style(&cond);
        let kernels = modulate_demodulate(&conv.effective_weight(), &style, DEMOD_EPS).unwrap();
        for b in 0..2 {
            let kb = kernels.narrow(0, b, 1).reshape(&[2, 3, 3, 3]);
            let yb = x.narrow(0, b, 1).conv2d(&kb, conv.geometry);
            assert!(yb.max_abs_diff(&fused.narrow(0, b, 1)) < 1e-12);
        }
    }
}
