//! Thin safe wrapper over the strided `f64` GEMM kernel.

/// Row/column strides of a matrix operand, in elements.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Strides {
    pub row: usize,
    pub col: usize,
}

impl Strides {
    pub const fn row_major(cols: usize) -> Self {
        Self { row: cols, col: 1 }
    }

    /// Strides that read a row-major `rows x cols` buffer as its transpose.
    pub const fn transposed(cols: usize) -> Self {
        Self { row: 1, col: cols }
    }
}

fn max_offset(rows: usize, cols: usize, s: Strides) -> usize {
    (rows - 1) * s.row + (cols - 1) * s.col
}

/// `c = a · b + beta · c` where `a` is `m x k`, `b` is `k x n` and `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
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
        for i in 0..m {
            for j in 0..n {
                let v = &mut c[i * sc.row + j * sc.col];
                *v *= beta;
            }
        }
        return;
    }
    assert!(max_offset(m, k, sa) < a.len(), "gemm: lhs out of bounds");
    assert!(max_offset(k, n, sb) < b.len(), "gemm: rhs out of bounds");
    assert!(max_offset(m, n, sc) < c.len(), "gemm: output out of bounds");
    // SAFETY: every index the kernel touches is bounded by the asserts above, and
    // `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.row as isize,
            sa.col as isize,
            b.as_ptr(),
            sb.row as isize,
            sb.col as isize,
            beta,
            c.as_mut_ptr(),
            sc.row as isize,
            sc.col as isize,
        );
    }
}
