use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::element::Element;
use crate::shape::{broadcast_shapes, broadcast_strides, coalesce, contiguous_strides, for_each_run, numel};
use crate::tensor::Tensor;

fn binary_kernel<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> (Vec<T>, Vec<usize>) {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return (data, a.shape().to_vec());
    }
    let out_shape = broadcast_shapes(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
    if b.numel() == 1 {
        let y = b.data()[0];
        return (a.data().iter().map(|&x| f(x, y)).collect(), out_shape);
    }
    if a.numel() == 1 {
        let x = a.data()[0];
        return (b.data().iter().map(|&y| f(x, y)).collect(), out_shape);
    }
    let so = contiguous_strides(&out_shape);
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let (shape, strides) = coalesce(&out_shape, &[so, sa, sb]);
    let mut out = vec![T::zero(); numel(&out_shape)];
    let (ad, bd) = (a.data(), b.data());
    for_each_run(
        &shape,
        [&strides[0], &strides[1], &strides[2]],
        |[o, oa, ob], len, [so, sa, sb]| {
            for i in 0..len {
                out[o + i * so] = f(ad[oa + i * sa], bd[ob + i * sb]);
            }
        },
    );
    (out, out_shape)
}

fn unary_kernel<T: Element>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Vec<T> {
    a.data().iter().map(|&x| f(x)).collect()
}

/// Reduce a broadcast gradient back to `shape`.
fn reduce_grad<T: Element>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        g.clone()
    } else {
        g.sum_to(shape)
    }
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        let (data, shape) = binary_kernel(self, other, |x, y| x + y);
        Tensor::from_op(data, shape, "add", &[self, other], |_, g, inp, needs| {
            vec![
                needs[0].then(|| reduce_grad(g, inp[0].shape())),
                needs[1].then(|| reduce_grad(g, inp[1].shape())),
            ]
        })
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        let (data, shape) = binary_kernel(self, other, |x, y| x - y);
        Tensor::from_op(data, shape, "sub", &[self, other], |_, g, inp, needs| {
            vec![
                needs[0].then(|| reduce_grad(g, inp[0].shape())),
                needs[1].then(|| reduce_grad(&g.neg(), inp[1].shape())),
            ]
        })
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        let (data, shape) = binary_kernel(self, other, |x, y| x * y);
        Tensor::from_op(data, shape, "mul", &[self, other], |_, g, inp, needs| {
            vec![
                needs[0].then(|| reduce_grad(&g.mul(&inp[1]), inp[0].shape())),
                needs[1].then(|| reduce_grad(&g.mul(&inp[0]), inp[1].shape())),
            ]
        })
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        let (data, shape) = binary_kernel(self, other, |x, y| x / y);
        Tensor::from_op(data, shape, "div", &[self, other], |out, g, inp, needs| {
            vec![
                needs[0].then(|| reduce_grad(&g.div(&inp[1]), inp[0].shape())),
                needs[1].then(|| reduce_grad(&g.mul(out).div(&inp[1]).neg(), inp[1].shape())),
            ]
        })
    }

    pub fn neg(&self) -> Tensor<T> {
        let data = unary_kernel(self, |x| -x);
        Tensor::from_op(data, self.shape().to_vec(), "neg", &[self], |_, g, _, _| vec![Some(g.neg())])
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let c = T::from_f64_lossy(s);
        let data = unary_kernel(self, |x| x + c);
        Tensor::from_op(data, self.shape().to_vec(), "add_scalar", &[self], |_, g, _, _| {
            vec![Some(g.clone())]
        })
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor<T> {
        let c = T::from_f64_lossy(s);
        let data = unary_kernel(self, |x| x * c);
        Tensor::from_op(data, self.shape().to_vec(), "mul_scalar", &[self], move |_, g, _, _| {
            vec![Some(g.mul_scalar(s))]
        })
    }

    /// `s - self`
    pub fn rsub_scalar(&self, s: f64) -> Tensor<T> {
        self.neg().add_scalar(s)
    }

    pub fn square(&self) -> Tensor<T> {
        self.mul(self)
    }

    pub fn powf(&self, p: f64) -> Tensor<T> {
        let e = T::from_f64_lossy(p);
        let data = unary_kernel(self, |x| x.powf(e));
        Tensor::from_op(data, self.shape().to_vec(), "powf", &[self], move |_, g, inp, _| {
            vec![Some(g.mul(&inp[0].powf(p - 1.0)).mul_scalar(p))]
        })
    }

    pub fn sqrt(&self) -> Tensor<T> {
        let data = unary_kernel(self, |x| x.sqrt());
        Tensor::from_op(data, self.shape().to_vec(), "sqrt", &[self], |out, g, _, _| {
            vec![Some(g.div(out).mul_scalar(0.5))]
        })
    }

    /// `1 / sqrt(self)`
    pub fn rsqrt(&self) -> Tensor<T> {
        let data = unary_kernel(self, |x| x.sqrt().recip());
        Tensor::from_op(data, self.shape().to_vec(), "rsqrt", &[self], |out, g, _, _| {
            // d/dx x^{-1/2} = -1/2 x^{-3/2} = -1/2 out^3
            vec![Some(g.mul(&out.mul(out).mul(out)).mul_scalar(-0.5))]
        })
    }

    pub fn exp(&self) -> Tensor<T> {
        let data = unary_kernel(self, |x| x.exp());
        Tensor::from_op(data, self.shape().to_vec(), "exp", &[self], |out, g, _, _| vec![Some(g.mul(out))])
    }

    pub fn ln(&self) -> Tensor<T> {
        let data = unary_kernel(self, |x| x.ln());
        Tensor::from_op(data, self.shape().to_vec(), "ln", &[self], |_, g, inp, _| {
            vec![Some(g.div(&inp[0]))]
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data = unary_kernel(self, stable_sigmoid);
        Tensor::from_op(data, self.shape().to_vec(), "sigmoid", &[self], |out, g, _, _| {
            vec![Some(g.mul(&out.mul(&out.rsub_scalar(1.0))))]
        })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor<T> {
        let data = unary_kernel(self, stable_softplus);
        Tensor::from_op(data, self.shape().to_vec(), "softplus", &[self], |_, g, inp, _| {
            vec![Some(g.mul(&inp[0].sigmoid()))]
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        self.leaky_relu(0.0)
    }

    /// `x` for `x > 0`, `slope·x` otherwise.
    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let a = T::from_f64_lossy(slope);
        let data = unary_kernel(self, |x| if x > T::zero() { x } else { x * a });
        Tensor::from_op(data, self.shape().to_vec(), "leaky_relu", &[self], move |_, g, inp, _| {
            let a = T::from_f64_lossy(slope);
            let mask = Tensor::from_vec(
                unary_kernel(&inp[0], |x| if x > T::zero() { T::one() } else { a }),
                inp[0].shape(),
            );
            vec![Some(g.mul(&mask))]
        })
    }

    pub fn tanh(&self) -> Tensor<T> {
        let data = unary_kernel(self, |x| x.tanh());
        Tensor::from_op(data, self.shape().to_vec(), "tanh", &[self], |out, g, _, _| {
            vec![Some(g.mul(&out.mul(out).rsub_scalar(1.0)))]
        })
    }

    /// Elementwise map on raw values; the result is a constant.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor::from_vec(unary_kernel(self, f), self.shape())
    }
}

fn stable_sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn stable_softplus<T: Element>(x: T) -> T {
    // max(x, 0) + ln(1 + e^{-|x|})
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

macro_rules! impl_binop {
    ($tr:ident, $method:ident) => {
        impl<T: Element> $tr<&Tensor<T>> for &Tensor<T> {
            type Output = Tensor<T>;
            fn $method(self, rhs: &Tensor<T>) -> Tensor<T> {
                Tensor::$method(self, rhs)
            }
        }
        impl<T: Element> $tr<Tensor<T>> for Tensor<T> {
            type Output = Tensor<T>;
            fn $method(self, rhs: Tensor<T>) -> Tensor<T> {
                Tensor::$method(&self, &rhs)
            }
        }
        impl<T: Element> $tr<&Tensor<T>> for Tensor<T> {
            type Output = Tensor<T>;
            fn $method(self, rhs: &Tensor<T>) -> Tensor<T> {
                Tensor::$method(&self, rhs)
            }
        }
    };
}

impl_binop!(Add, add);
impl_binop!(Sub, sub);
impl_binop!(Mul, mul);
impl_binop!(Div, div);

impl<T: Element> Neg for &Tensor<T> {
    type Output = Tensor<T>;
    fn neg(self) -> Tensor<T> {
        Tensor::neg(self)
    }
}

impl<T: Element> Neg for Tensor<T> {
    type Output = Tensor<T>;
    fn neg(self) -> Tensor<T> {
        Tensor::neg(&self)
    }
}
