use std::sync::Arc;

use crate::element::Element;
use crate::shape::{contiguous_strides, for_each_run, numel};
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            numel(shape),
            self.numel(),
            "reshape {:?} -> {shape:?} changes element count",
            self.shape()
        );
        if shape == self.shape() {
            return self.clone();
        }
        Tensor::from_op_arc(Arc::clone(&self.0.data), shape.to_vec(), "reshape", &[self], |_, g, inp, _| {
            vec![Some(g.reshape(inp[0].shape()))]
        })
    }

    pub fn flatten_from(&self, axis: usize) -> Tensor<T> {
        let mut shape: Vec<usize> = self.shape()[..axis].to_vec();
        shape.push(self.shape()[axis..].iter().product());
        self.reshape(&shape)
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Tensor<T> {
        let rank = self.rank();
        assert_eq!(perm.len(), rank, "permute rank");
        let mut seen = vec![false; rank];
        for &p in perm {
            assert!(p < rank && !seen[p], "invalid permutation {perm:?}");
            seen[p] = true;
        }
        let in_strides = contiguous_strides(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.dim(p)).collect();
        let read_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let out_strides = contiguous_strides(&out_shape);
        let mut out = vec![T::zero(); self.numel()];
        let d = self.data();
        for_each_run(&out_shape, [&out_strides, &read_strides], |[o, i], len, [so, si]| {
            for k in 0..len {
                out[o + k * so] = d[i + k * si];
            }
        });
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Tensor::from_op(out, out_shape, "permute", &[self], move |_, g, _, _| {
            vec![Some(g.permute(&inverse))]
        })
    }

    /// Swap the two axes of a matrix.
    pub fn t(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "t() expects a matrix");
        self.permute(&[1, 0])
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let full = self.dim(axis);
        assert!(start + len <= full, "narrow out of range");
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        let d = self.data();
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(out, shape, "narrow", &[self], move |_, g, _, _| {
            vec![Some(g.pad_axis(axis, start, full))]
        })
    }

    /// Embed `self` into zeros of size `total` along `axis`, starting at
    /// `start`; adjoint of [`Tensor::narrow`].
    pub fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Tensor<T> {
        let len = self.dim(axis);
        assert!(start + len <= total, "pad_axis out of range");
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut out = vec![T::zero(); outer * total * inner];
        let d = self.data();
        for o in 0..outer {
            let dst = o * total * inner + start * inner;
            out[dst..dst + len * inner].copy_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = total;
        Tensor::from_op(out, shape, "pad_axis", &[self], move |_, g, _, _| {
            vec![Some(g.narrow(axis, start, len))]
        })
    }

    /// Concatenate along `axis`.
    pub fn cat(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "cat of nothing");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.rank(), first.len(), "cat rank mismatch");
            for (i, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
                assert!(i == axis || a == b, "cat shape mismatch {:?} vs {:?}", p.shape(), first);
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &s) in parts.iter().zip(&sizes) {
                out.extend_from_slice(&p.data()[o * s * inner..(o + 1) * s * inner]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        Tensor::from_op(out, shape, "cat", parts, move |_, g, _, needs| {
            let mut start = 0;
            sizes
                .iter()
                .zip(needs)
                .map(|(&s, &need)| {
                    let r = need.then(|| g.narrow(axis, start, s));
                    start += s;
                    r
                })
                .collect()
        })
    }

    /// Nearest-neighbour 2× upsampling of the last two axes of an NCHW tensor.
    pub fn upsample2x(&self) -> Tensor<T> {
        let [n, c, h, w] = nchw(self);
        let mut out = vec![T::zero(); n * c * h * w * 4];
        let d = self.data();
        let w2 = w * 2;
        for p in 0..n * c {
            for y in 0..h {
                for x in 0..w {
                    let v = d[(p * h + y) * w + x];
                    let base = (p * h * 2 + y * 2) * w2 + x * 2;
                    out[base] = v;
                    out[base + 1] = v;
                    out[base + w2] = v;
                    out[base + w2 + 1] = v;
                }
            }
        }
        Tensor::from_op(out, vec![n, c, h * 2, w * 2], "upsample2x", &[self], |_, g, _, _| {
            vec![Some(g.sum_pool2x())]
        })
    }

    /// Sum over non-overlapping 2×2 windows; adjoint of [`Tensor::upsample2x`].
    pub fn sum_pool2x(&self) -> Tensor<T> {
        let [n, c, h, w] = nchw(self);
        assert!(h % 2 == 0 && w % 2 == 0, "sum_pool2x needs even spatial size");
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![T::zero(); n * c * ho * wo];
        let d = self.data();
        for p in 0..n * c {
            for y in 0..ho {
                for x in 0..wo {
                    let base = (p * h + y * 2) * w + x * 2;
                    out[(p * ho + y) * wo + x] = d[base] + d[base + 1] + d[base + w] + d[base + w + 1];
                }
            }
        }
        Tensor::from_op(out, vec![n, c, ho, wo], "sum_pool2x", &[self], |_, g, _, _| {
            vec![Some(g.upsample2x())]
        })
    }

    pub fn avg_pool2x(&self) -> Tensor<T> {
        self.sum_pool2x().mul_scalar(0.25)
    }
}

pub(crate) fn nchw<T: Element>(t: &Tensor<T>) -> [usize; 4] {
    assert_eq!(t.rank(), 4, "expected NCHW tensor, got {:?}", t.shape());
    [t.dim(0), t.dim(1), t.dim(2), t.dim(3)]
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn permute_transposes() {
        let t = Tensor::<f64>::from_f64s(&[1., 2., 3., 4., 5., 6.], &[2, 3]);
        assert_eq!(t.t().to_f64_vec(), vec![1., 4., 2., 5., 3., 6.]);
        assert_eq!(t.t().shape(), &[3, 2]);
    }

    #[test]
    fn narrow_and_cat_are_inverse() {
        let t = Tensor::<f64>::from_f64s(&(0..12).map(f64::from).collect::<Vec<_>>(), &[2, 3, 2]);
        let a = t.narrow(1, 0, 1);
        let b = t.narrow(1, 1, 2);
        assert!(Tensor::cat(&[&a, &b], 1).bit_eq(&t));
    }

    #[test]
    fn upsample_then_pool_scales_by_four() {
        let t = Tensor::<f64>::from_f64s(&[1., 2., 3., 4.], &[1, 1, 2, 2]);
        let u = t.upsample2x();
        assert_eq!(u.shape(), &[1, 1, 4, 4]);
        assert_eq!(u.sum_pool2x().to_f64_vec(), vec![4., 8., 12., 16.]);
    }
}
