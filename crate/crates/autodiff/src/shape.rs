//! Shape arithmetic and strided iteration helpers.

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Numpy-style broadcast of two shapes, right aligned.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides for reading a tensor of `src` shape as if broadcast to `dst`
/// (stride 0 along broadcast axes). `src` must be broadcast-compatible.
pub fn broadcast_strides(src: &[usize], dst: &[usize]) -> Vec<usize> {
    assert!(src.len() <= dst.len(), "broadcast source rank exceeds target");
    let base = contiguous_strides(src);
    let offset = dst.len() - src.len();
    (0..dst.len())
        .map(|i| {
            if i < offset {
                0
            } else {
                let d = src[i - offset];
                assert!(
                    d == dst[i] || d == 1,
                    "shape {src:?} does not broadcast to {dst:?}"
                );
                if d == 1 && dst[i] != 1 {
                    0
                } else {
                    base[i - offset]
                }
            }
        })
        .collect()
}

/// Merge adjacent axes that are contiguous for every operand so inner loops
/// run as long as possible.
pub fn coalesce(shape: &[usize], strides: &[Vec<usize>]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut out_shape: Vec<usize> = Vec::with_capacity(shape.len());
    let mut out_strides: Vec<Vec<usize>> = vec![Vec::with_capacity(shape.len()); strides.len()];
    for (axis, &d) in shape.iter().enumerate() {
        if d == 1 {
            continue;
        }
        if let Some(&last) = out_shape.last() {
            let mergeable = strides
                .iter()
                .zip(&out_strides)
                .all(|(s, os)| *os.last().unwrap() == s[axis] * d);
            if mergeable {
                let n = out_shape.len() - 1;
                out_shape[n] = last * d;
                for (s, os) in strides.iter().zip(out_strides.iter_mut()) {
                    *os.last_mut().unwrap() = s[axis];
                }
                continue;
            }
        }
        out_shape.push(d);
        for (s, os) in strides.iter().zip(out_strides.iter_mut()) {
            os.push(s[axis]);
        }
    }
    if out_shape.is_empty() {
        out_shape.push(1);
        for os in out_strides.iter_mut() {
            os.push(0);
        }
    }
    (out_shape, out_strides)
}

/// Visit every index of `shape` in row-major order, calling `f(offsets, inner_len, inner_strides)`
/// once per innermost run, where `offsets[j]` is the starting offset for operand `j`.
pub fn for_each_run<const N: usize>(
    shape: &[usize],
    strides: [&[usize]; N],
    mut f: impl FnMut([usize; N], usize, [usize; N]),
) {
    let rank = shape.len();
    if shape.iter().any(|&d| d == 0) {
        return;
    }
    if rank == 0 {
        f([0; N], 1, [0; N]);
        return;
    }
    let inner = shape[rank - 1];
    let inner_strides: [usize; N] = std::array::from_fn(|j| strides[j][rank - 1]);
    let outer_rank = rank - 1;
    let mut idx = vec![0usize; outer_rank];
    let mut offs = [0usize; N];
    loop {
        f(offs, inner, inner_strides);
        // advance odometer over the outer axes
        let mut axis = outer_rank;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            for j in 0..N {
                offs[j] += strides[j][axis];
            }
            if idx[axis] < shape[axis] {
                break;
            }
            for j in 0..N {
                offs[j] -= strides[j][axis] * shape[axis];
            }
            idx[axis] = 0;
        }
    }
}
