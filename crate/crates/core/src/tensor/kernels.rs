/// Strided view description for a row-major or transposed operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides {
    pub row: isize,
    pub col: isize,
}

impl Strides {
    /// Row-major `rows x cols` matrix read as stored.
    pub fn normal(cols: usize) -> Self {
        Self { row: cols as isize, col: 1 }
    }

    /// Row-major matrix with `cols` stored columns, read transposed.
    pub fn transposed(cols: usize) -> Self {
        Self { row: 1, col: cols as isize }
    }
}

/// `c = a * b + beta * c` where `a` is `m x k` and `b` is `k x n` under the given strides.
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
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: extents and strides describe regions inside the provided slices:
    // the maximum index touched in `a` is (m-1)*row + (k-1)*col, which is the
    // last element of a row-major m x k (or transposed k x m) buffer, and the
    // same holds for `b` and `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.row,
            sa.col,
            b.as_ptr(),
            sb.row,
            sb.col,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product_with_transposes() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, Strides::normal(3), &b, Strides::normal(2), 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // a * a^T using the transposed view of `a`
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, Strides::normal(3), &a, Strides::transposed(3), 0.0, &mut c);
        assert_eq!(c, [14.0, 32.0, 32.0, 77.0]);
    }
}
