//! Safe row-major wrapper over the `matrixmultiply` f64 kernel.

/// Row-major operand, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn n(data: &'a [f64]) -> Self {
        Mat {
            data,
            transposed: false,
        }
    }

    pub fn t(data: &'a [f64]) -> Self {
        Mat {
            data,
            transposed: true,
        }
    }
}

/// `c = op(a) · op(b) + beta · c` with `op(a)` of shape m×k and `op(b)` k×n.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.data.len(), m * k, "gemm: lhs length");
    assert_eq!(b.data.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a.transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b.transposed { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above guarantee every index the kernel touches,
    // (m-1)*rs + (k-1)*cs and friends, lies inside the borrowed slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
