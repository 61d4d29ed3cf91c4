use crate::element::{gemm, Element};
use crate::ops::layout::nchw;
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        assert!(self.rank() == 2 && rhs.rank() == 2, "matmul expects matrices");
        let (m, k) = (self.dim(0), self.dim(1));
        let (k2, n) = (rhs.dim(0), rhs.dim(1));
        assert_eq!(k, k2, "matmul inner dimension {:?} x {:?}", self.shape(), rhs.shape());
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.data(), false, rhs.data(), false, &mut out, false);
        Tensor::from_op(out, vec![m, n], "matmul", &[self, rhs], |_, g, inp, needs| {
            vec![
                needs[0].then(|| g.matmul(&inp[1].t())),
                needs[1].then(|| inp[0].t().matmul(g)),
            ]
        })
    }
}

/// Convolution geometry shared by the forward op and its two adjoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        assert!(stride >= 1, "stride must be positive");
        Self { stride, padding }
    }

    pub fn out_size(&self, input: usize, kernel: usize) -> usize {
        let padded = input + 2 * self.padding;
        assert!(padded >= kernel, "kernel {kernel} larger than padded input {padded}");
        (padded - kernel) / self.stride + 1
    }
}

struct Dims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geo: ConvGeometry,
}

impl Dims {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geo.stride == 1 && self.geo.padding == 0
    }
}

/// Unfold one image `[c, h, w]` into columns `[c·kh·kw, ho·wo]`.
fn im2col<T: Element>(x: &[T], d: &Dims, cols: &mut [T]) {
    let (s, p) = (d.geo.stride as isize, d.geo.padding as isize);
    let hw = d.ho * d.wo;
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = oy as isize * s - p + ky as isize;
                    let line = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(c * d.h + iy as usize) * d.w..(c * d.h + iy as usize + 1) * d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        *v = if ix < 0 || ix >= d.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[c, h, w]`.
fn col2im<T: Element>(cols: &[T], d: &Dims, x: &mut [T]) {
    let (s, p) = (d.geo.stride as isize, d.geo.padding as isize);
    let hw = d.ho * d.wo;
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * d.h + iy as usize) * d.w..(c * d.h + iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn dims(input: &[usize], kernel: &[usize], geo: ConvGeometry) -> Dims {
    let (c, h, w) = (input[1], input[2], input[3]);
    let (kh, kw) = (kernel[2], kernel[3]);
    assert_eq!(kernel[1], c, "conv kernel expects {} input channels, got {c}", kernel[1]);
    Dims { c, h, w, kh, kw, ho: geo.out_size(h, kh), wo: geo.out_size(w, kw), geo }
}

impl<T: Element> Tensor<T> {
    /// 2-D cross-correlation of `self` `[n, c, h, w]` with `weight` `[o, c, kh, kw]`.
    pub fn conv2d(&self, weight: &Tensor<T>, geo: ConvGeometry) -> Tensor<T> {
        let [n, _, _, _] = nchw(self);
        assert_eq!(weight.rank(), 4, "conv weight must be [o, c, kh, kw]");
        let d = dims(self.shape(), weight.shape(), geo);
        let o = weight.dim(0);
        let ckk = d.c * d.kh * d.kw;
        let hw = d.ho * d.wo;
        let in_len = d.c * d.h * d.w;
        let mut out = vec![T::zero(); n * o * hw];
        let mut cols = if d.is_pointwise() { Vec::new() } else { vec![T::zero(); ckk * hw] };
        for b in 0..n {
            let x = &self.data()[b * in_len..(b + 1) * in_len];
            let colref: &[T] = if d.is_pointwise() {
                x
            } else {
                im2col(x, &d, &mut cols);
                &cols
            };
            gemm(o, ckk, hw, weight.data(), false, colref, false, &mut out[b * o * hw..(b + 1) * o * hw], false);
        }
        Tensor::from_op(out, vec![n, o, d.ho, d.wo], "conv2d", &[self, weight], move |_, g, inp, needs| {
            vec![
                needs[0].then(|| conv2d_input_grad(g, &inp[1], geo, inp[0].shape())),
                needs[1].then(|| conv2d_weight_grad(&inp[0], g, geo, inp[1].shape())),
            ]
        })
    }
}

/// Gradient of `conv2d` with respect to its input (a transposed convolution).
pub fn conv2d_input_grad<T: Element>(
    grad: &Tensor<T>,
    weight: &Tensor<T>,
    geo: ConvGeometry,
    input_shape: &[usize],
) -> Tensor<T> {
    let d = dims(input_shape, weight.shape(), geo);
    let n = input_shape[0];
    let o = weight.dim(0);
    assert_eq!(grad.shape(), &[n, o, d.ho, d.wo], "conv2d_input_grad: grad shape");
    let ckk = d.c * d.kh * d.kw;
    let hw = d.ho * d.wo;
    let in_len = d.c * d.h * d.w;
    let mut out = vec![T::zero(); n * in_len];
    let mut cols = vec![T::zero(); ckk * hw];
    for b in 0..n {
        let gb = &grad.data()[b * o * hw..(b + 1) * o * hw];
        let xb = &mut out[b * in_len..(b + 1) * in_len];
        if d.is_pointwise() {
            gemm(ckk, o, hw, weight.data(), true, gb, false, xb, false);
        } else {
            gemm(ckk, o, hw, weight.data(), true, gb, false, &mut cols, false);
            col2im(&cols, &d, xb);
        }
    }
    let in_shape = input_shape.to_vec();
    Tensor::from_op(out, in_shape, "conv2d_input_grad", &[grad, weight], move |_, h, inp, needs| {
        vec![
            needs[0].then(|| h.conv2d(&inp[1], geo)),
            needs[1].then(|| conv2d_weight_grad(h, &inp[0], geo, inp[1].shape())),
        ]
    })
}

/// Gradient of `conv2d` with respect to its weight.
pub fn conv2d_weight_grad<T: Element>(
    input: &Tensor<T>,
    grad: &Tensor<T>,
    geo: ConvGeometry,
    weight_shape: &[usize],
) -> Tensor<T> {
    let d = dims(input.shape(), weight_shape, geo);
    let n = input.dim(0);
    let o = weight_shape[0];
    assert_eq!(grad.shape(), &[n, o, d.ho, d.wo], "conv2d_weight_grad: grad shape");
    let ckk = d.c * d.kh * d.kw;
    let hw = d.ho * d.wo;
    let in_len = d.c * d.h * d.w;
    let mut out = vec![T::zero(); o * ckk];
    let mut cols = if d.is_pointwise() { Vec::new() } else { vec![T::zero(); ckk * hw] };
    for b in 0..n {
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let colref: &[T] = if d.is_pointwise() {
            x
        } else {
            im2col(x, &d, &mut cols);
            &cols
        };
        let gb = &grad.data()[b * o * hw..(b + 1) * o * hw];
        gemm(o, hw, ckk, gb, false, colref, true, &mut out, b > 0);
    }
    let w_shape = weight_shape.to_vec();
    Tensor::from_op(out, w_shape, "conv2d_weight_grad", &[input, grad], move |_, h, inp, needs| {
        vec![
            needs[0].then(|| conv2d_input_grad(&inp[1], h, geo, inp[0].shape())),
            needs[1].then(|| inp[0].conv2d(h, geo)),
        ]
    })
}
