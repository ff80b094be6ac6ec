//! Bilinear interpolation with the align-corners=false convention.

use crate::real::Real;

/// Source taps `(lo, hi, weight_of_hi)` for each output coordinate.
pub(crate) fn taps<T: Real>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, T::lit(src - lo as f64))
        })
        .collect()
}

/// Resizes one `h x w` plane into `out` (`oh x ow`).
pub(crate) fn resize_plane<T: Real>(
    x: &[T],
    w: usize,
    rows: &[(usize, usize, T)],
    cols: &[(usize, usize, T)],
    out: &mut [T],
) {
    let ow = cols.len();
    for (oy, &(y0, y1, ly)) in rows.iter().enumerate() {
        let r0 = &x[y0 * w..y0 * w + w];
        let r1 = &x[y1 * w..y1 * w + w];
        let dst = &mut out[oy * ow..oy * ow + ow];
        for (d, &(x0, x1, lx)) in dst.iter_mut().zip(cols) {
            let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
            *d = top + (bot - top) * ly;
        }
    }
}

/// Adjoint of [`resize_plane`]: scatters `g` back into `dx` (accumulating).
pub(crate) fn resize_plane_backward<T: Real>(
    g: &[T],
    w: usize,
    rows: &[(usize, usize, T)],
    cols: &[(usize, usize, T)],
    dx: &mut [T],
) {
    let ow = cols.len();
    for (oy, &(y0, y1, ly)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, lx)) in cols.iter().enumerate() {
            let v = g[oy * ow + ox];
            let top = v * (T::one() - ly);
            let bot = v * ly;
            dx[y0 * w + x0] += top * (T::one() - lx);
            dx[y0 * w + x1] += top * lx;
            dx[y1 * w + x0] += bot * (T::one() - lx);
            dx[y1 * w + x1] += bot * lx;
        }
    }
}
