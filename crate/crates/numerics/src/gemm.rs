//! Thin wrappers over `matrixmultiply::sgemm`. All matrices are row-major
//! slices; the result is accumulated into `c` (`c += a * b` style) so that
//! backward passes can sum into existing gradient buffers.

/// `c[n,m] += a[n,k] * b[k,m]`
pub fn matmul(a: &[f32], b: &[f32], c: &mut [f32], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * m);
    if n == 0 || m == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            m as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `c[n,m] += a[n,k] * b[m,k]^T`
pub fn matmul_nt(a: &[f32], b: &[f32], c: &mut [f32], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), m * k);
    debug_assert_eq!(c.len(), n * m);
    if n == 0 || m == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            1.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `c[k,m] += a[n,k]^T * b[n,m]`
pub fn matmul_tn(a: &[f32], b: &[f32], c: &mut [f32], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(c.len(), k * m);
    if n == 0 || m == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            k,
            n,
            m,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            m as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// Strided variant used by attention heads: `c += alpha * op(a) * op(b)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm_strided(
    n: usize,
    k: usize,
    m: usize,
    alpha: f32,
    a: *const f32,
    rsa: isize,
    csa: isize,
    b: *const f32,
    rsb: isize,
    csb: isize,
    c: *mut f32,
    rsc: isize,
    csc: isize,
) {
    if n == 0 || m == 0 || k == 0 {
        return;
    }
    unsafe { matrixmultiply::sgemm(n, k, m, alpha, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, csc) }
}
