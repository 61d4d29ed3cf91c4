use crate::element::Element;
use crate::shape::{broadcast_shapes, broadcast_strides, coalesce, contiguous_strides, for_each_run, numel};
use crate::tensor::Tensor;

impl<T: Element> Tensor<T> {
    /// Sum over broadcast axes so the result has `shape`; inverse of [`Tensor::broadcast_to`].
    ///
    /// `shape` must broadcast to `self.shape()`.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor<T> {
        let src = self.shape().to_vec();
        assert_eq!(
            broadcast_shapes(shape, &src).as_deref(),
            Some(&src[..]),
            "sum_to: {shape:?} does not broadcast to {src:?}"
        );
        let mut out = vec![T::zero(); numel(shape)];
        if numel(shape) == 1 {
            out[0] = self.data().iter().copied().sum();
        } else {
            let si = contiguous_strides(&src);
            let so = broadcast_strides(shape, &src);
            let (cs, st) = coalesce(&src, &[si, so]);
            let d = self.data();
            for_each_run(&cs, [&st[0], &st[1]], |[oi, oo], len, [si, so]| {
                if so == 0 {
                    let mut acc = T::zero();
                    for i in 0..len {
                        acc += d[oi + i * si];
                    }
                    out[oo] += acc;
                } else {
                    for i in 0..len {
                        out[oo + i * so] += d[oi + i * si];
                    }
                }
            });
        }
        Tensor::from_op(out, shape.to_vec(), "sum_to", &[self], |_, g, inp, _| {
            vec![Some(g.broadcast_to(inp[0].shape()))]
        })
    }

    /// Materialize a broadcast of `self` to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor<T> {
        if self.shape() == shape {
            return self.clone();
        }
        let so = contiguous_strides(shape);
        let si = broadcast_strides(self.shape(), shape);
        let (cs, st) = coalesce(shape, &[so, si]);
        let mut out = vec![T::zero(); numel(shape)];
        let d = self.data();
        for_each_run(&cs, [&st[0], &st[1]], |[oo, oi], len, [so, si]| {
            for i in 0..len {
                out[oo + i * so] = d[oi + i * si];
            }
        });
        Tensor::from_op(out, shape.to_vec(), "broadcast_to", &[self], |_, g, inp, _| {
            vec![Some(g.sum_to(inp[0].shape()))]
        })
    }

    /// Maximum over the trailing two axes: `[.., h, w] -> [..]`. The gradient
    /// goes to the first maximal element of each window.
    pub fn max_spatial(&self) -> Tensor<T> {
        let r = self.rank();
        assert!(r >= 2, "max_spatial needs rank >= 2, got {:?}", self.shape());
        let outer = self.shape()[..r - 2].to_vec();
        let inner = self.shape()[r - 2] * self.shape()[r - 1];
        assert!(inner > 0, "max_spatial over an empty window");
        let mut out = Vec::with_capacity(numel(&outer));
        let mut mask = vec![T::zero(); self.numel()];
        for (k, win) in self.data().chunks_exact(inner).enumerate() {
            let mut best = 0;
            for (i, &v) in win.iter().enumerate() {
                if v > win[best] {
                    best = i;
                }
            }
            out.push(win[best]);
            mask[k * inner + best] = T::one();
        }
        let mask = Tensor::from_vec(mask, self.shape());
        let mut keep = outer.clone();
        keep.extend([1, 1]);
        Tensor::from_op(out, outer, "max_spatial", &[self], move |_, g, _, _| {
            vec![Some(mask.mul(&g.reshape(&keep)))]
        })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        self.sum_to(&[])
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel().max(1) as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_keepdim(&self, axes: &[usize]) -> Tensor<T> {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_keepdim(&self, axes: &[usize]) -> Tensor<T> {
        let n: usize = axes.iter().map(|&a| self.dim(a)).product();
        self.sum_keepdim(axes).mul_scalar(1.0 / n.max(1) as f64)
    }

    /// Sum over `axes`, removing them.
    pub fn sum_axes(&self, axes: &[usize]) -> Tensor<T> {
        let kept: Vec<usize> = self
            .shape()
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        self.sum_keepdim(axes).reshape(&kept)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Tensor<T> {
        let n: usize = axes.iter().map(|&a| self.dim(a)).product();
        self.sum_axes(axes).mul_scalar(1.0 / n.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn sum_to_reduces_broadcast_axes() {
        let t = Tensor::<f64>::from_f64s(&[1., 2., 3., 4., 5., 6.], &[2, 3]);
        assert_eq!(t.sum_to(&[3]).to_f64_vec(), vec![5., 7., 9.]);
        assert_eq!(t.sum_to(&[2, 1]).to_f64_vec(), vec![6., 15.]);
        assert_eq!(t.sum_all().item(), 21.0);
    }

    #[test]
    fn broadcast_round_trip_shapes() {
        let t = Tensor::<f64>::from_f64s(&[1., 2.], &[2, 1]);
        let b = t.broadcast_to(&[3, 2, 4]);
        assert_eq!(b.shape(), &[3, 2, 4]);
        assert_eq!(b.data()[4], 2.0);
        assert_eq!(b.sum_to(&[2, 1]).to_f64_vec(), vec![12., 24.]);
    }

    #[test]
    fn max_spatial_routes_gradient_to_argmax() {
        let t = Tensor::<f64>::param(vec![1., 5., 5., 2., -1., -3., -2., -4.], &[2, 1, 2, 2]);
        let m = t.max_spatial();
        assert_eq!(m.shape(), &[2, 1]);
        assert_eq!(m.to_f64_vec(), vec![5., -1.]);
        let g = m.mul_scalar(3.0).sum_all().backward();
        assert_eq!(g.get(&t).unwrap().to_f64_vec(), vec![0., 3., 0., 0., 3., 0., 0., 0.]);
    }
}
