use crate::parallel;
use crate::real::Real;

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn in_bounds(&self) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }

    /// Rows `start..start + len` as a new view.
    fn rows_slice(self, start: usize, len: usize) -> Self {
        let off = start * self.rs;
        Self {
            data: &self.data[off..],
            rows: len,
            ..self
        }
    }
}

/// `c <- a * b + beta * c`, with `c` a contiguous row-major `a.rows x b.cols` buffer.
pub(crate) fn gemm<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, c: &mut [T], beta: T) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output size");
    assert!(a.in_bounds() && b.in_bounds(), "gemm view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    let work = m * k * n;
    // Row blocks are independent, so splitting them keeps results bit-identical.
    let block = if work >= parallel::PARALLEL_THRESHOLD * 4 && parallel::is_enabled() {
        m.div_ceil(8).max(16)
    } else {
        m
    };
    parallel::for_each_chunk(c, block * n, work, |i, out| {
        let rows = out.len() / n;
        let sub = a.rows_slice(i * block, rows);
        gemm_serial(sub, b, out, beta);
    });
}

fn gemm_serial<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, c: &mut [T], beta: T) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    debug_assert!(a.in_bounds() && b.in_bounds());
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: both views were bounds-checked above and `c` holds exactly m*n
    // contiguous row-major values.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
