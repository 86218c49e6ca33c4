//! Thin safe wrapper over the workspace GEMM kernel.
//!
//! All matrix products in the crate funnel through [`Elem::gemm_strided`];
//! this module adds bounds checking and the common row-major entry point.

use super::Elem;

/// Panic unless every addressed element of a, b, c lies in bounds.
///
/// The highest linear index touched by an (m,k,n) product with strides
/// (rs, cs) is max over the corner indices; strides may be negative in
/// principle but this crate only ever passes non-negative ones.
#[allow(clippy::too_many_arguments)]
pub fn check_strides(
    m: usize,
    k: usize,
    n: usize,
    alen: usize,
    rsa: isize,
    csa: isize,
    blen: usize,
    rsb: isize,
    csb: isize,
    clen: usize,
    rsc: isize,
    csc: isize,
) {
    fn max_index(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
        assert!(rs >= 0 && cs >= 0, "negative strides are not used");
        if rows == 0 || cols == 0 {
            return 0;
        }
        (rows - 1) * rs as usize + (cols - 1) * cs as usize
    }
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(max_index(m, k, rsa, csa) < alen, "gemm A out of bounds");
        assert!(max_index(k, n, rsb, csb) < blen, "gemm B out of bounds");
    }
    assert!(max_index(m, n, rsc, csc) < clen, "gemm C out of bounds");
}

/// c = alpha · a(m×k) · b(k×n) + beta · c, all row-major contiguous.
pub fn gemm<T: Elem>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    T::gemm_strided(
        m, k, n, alpha, a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1,
    );
}

/// c = alpha · aᵀ(m×k) · b(k×n) + beta · c, where `a` is stored row-major k×m.
pub fn gemm_at<T: Elem>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    T::gemm_strided(
        m, k, n, alpha, a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1,
    );
}

/// c = alpha · a(m×k) · bᵀ(k×n) + beta · c, where `b` is stored row-major n×k.
pub fn gemm_bt<T: Elem>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    T::gemm_strided(
        m, k, n, alpha, a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1,
    );
}
