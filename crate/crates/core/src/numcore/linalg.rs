//! Strided GEMM wrapper. All matrix products in the tape route through here.

/// Row/column strides of a logical matrix view over a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides {
    pub rs: usize,
    pub cs: usize,
}

impl Strides {
    /// Row-major `rows x cols` storage read as-is.
    pub fn row_major(cols: usize) -> Self {
        Strides { rs: cols, cs: 1 }
    }

    /// Row-major `rows x cols` storage read transposed.
    pub fn transposed(cols: usize) -> Self {
        Strides { rs: 1, cs: cols }
    }

    pub fn t(self) -> Self {
        Strides {
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha * a @ b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` under the given strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            for i in 0..m {
                for j in 0..n {
                    c[i * sc.rs + j * sc.cs] = 0.0;
                }
            }
        }
        return;
    }
    debug_assert!((m - 1) * sa.rs + (k - 1) * sa.cs < a.len());
    debug_assert!((k - 1) * sb.rs + (n - 1) * sb.cs < b.len());
    debug_assert!((m - 1) * sc.rs + (n - 1) * sc.cs < c.len());
    // SAFETY: the debug assertions above bound every index the kernel touches;
    // callers derive strides from the same shapes used to size the buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.rs as isize,
            sa.cs as isize,
            b.as_ptr(),
            sb.rs as isize,
            sb.cs as isize,
            beta,
            c.as_mut_ptr(),
            sc.rs as isize,
            sc.cs as isize,
        );
    }
}
