use super::Scalar;

/// Borrowed strided matrix view.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: isize,
    pub cs: isize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols`.
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        Self {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transpose of a row-major `rows x cols` buffer, i.e. a `cols x rows` view.
    pub fn rows_t(data: &'a [T], cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }
}

fn extent(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    assert!(rs >= 0 && cs >= 0, "negative strides unsupported");
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c`, with `c` row-major.
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
) {
    assert!(extent(m, k, a.rs, a.cs) <= a.data.len(), "gemm: lhs too small");
    assert!(extent(k, n, b.rs, b.cs) <= b.data.len(), "gemm: rhs too small");
    assert!(m * n <= c.len(), "gemm: output too small");
    if m == 0 || n == 0 {
        return;
    }
    T::gemm_raw(m, k, n, alpha, a, b, beta, c, n as isize, 1);
}
