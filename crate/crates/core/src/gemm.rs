//! Thin safe wrappers around the dense single-precision GEMM used by the
//! convolution kernels. All matrices are row-major slices.

/// `c = alpha * a(m x k) * b(k x n) + beta * c(m x n)`.
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    b: &[f32],
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = alpha * a(m x k) * b^T + beta * c(m x n)` where `b` is stored
/// row-major as `(n x k)`.
pub fn sgemm_b_transposed(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    b: &[f32],
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = alpha * a^T * b(k x n) + beta * c(m x n)` where `a` is stored
/// row-major as `(k x m)`.
pub fn sgemm_a_transposed(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    b: &[f32],
    beta: f32,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
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
    fn multiplies_small_matrices() {
        // a = [[1, 2], [3, 4]], b = [[5, 6], [7, 8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0f32; 4];
        sgemm(2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let a = [1.0, -2.0, 0.5, 3.0, 2.0, 1.0]; // 2x3
        let b = [1.0, 0.0, 2.0, -1.0, 1.0, 1.0]; // 3x2
        let mut c0 = [0.0f32; 4];
        sgemm(2, 3, 2, 1.0, &a, &b, 0.0, &mut c0);

        // b stored as its transpose (2x3), multiply as b^T
        let bt = [1.0, 2.0, 1.0, 0.0, -1.0, 1.0];
        let mut c1 = [0.0f32; 4];
        sgemm_b_transposed(2, 3, 2, 1.0, &a, &bt, 0.0, &mut c1);
        assert_eq!(c0, c1);

        // a stored as its transpose (3x2), multiply as a^T
        let at = [1.0, 3.0, -2.0, 2.0, 0.5, 1.0];
        let mut c2 = [0.0f32; 4];
        sgemm_a_transposed(2, 3, 2, 1.0, &at, &b, 0.0, &mut c2);
        assert_eq!(c0, c2);
    }
}
