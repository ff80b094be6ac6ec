//! NumPy-style broadcasting over right-aligned shapes.

use crate::real::Real;
use crate::tensor::strides;

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed at the rank of `out`; broadcast dims get 0.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Visits every element of `out` in row-major order, passing the offsets of
/// the matching elements in each operand.
fn walk(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let outer: usize = out[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    for _ in 0..outer {
        for j in 0..last {
            f(o + j, oa + j * la, ob + j * lb);
        }
        o += last;
        // odometer over the leading dims
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn zip_map<T: Real>(
    out_shape: &[usize],
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let n: usize = out_shape.iter().product();
    if a_shape == out_shape && b_shape == out_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let sa = aligned_strides(a_shape, out_shape);
    let sb = aligned_strides(b_shape, out_shape);
    let mut out = vec![T::zero(); n];
    walk(out_shape, &sa, &sb, |o, ia, ib| out[o] = f(a[ia], b[ib]));
    out
}

/// Sums a gradient of shape `out_shape` down to `target` (undoes broadcasting).
pub(crate) fn reduce_to<T: Real>(grad: &[T], out_shape: &[usize], target: &[usize]) -> Vec<T> {
    if out_shape == target {
        return grad.to_vec();
    }
    let st = aligned_strides(target, out_shape);
    let zeros = vec![0; out_shape.len()];
    let mut acc = vec![T::zero(); target.iter().product()];
    walk(out_shape, &st, &zeros, |o, it, _| acc[it] += grad[o]);
    acc
}
