//! Bounds-checked strided matrix product on top of `matrixmultiply`.

use super::Real;

#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

pub(crate) struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

fn last_index(offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    offset + (rows - 1) * rs + (cols - 1) * cs
}

/// `c = alpha·a·b + beta·c` with `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: MatMut<'_, T>,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(last_index(c.offset, m, n, c.rs, c.cs) < c.data.len(), "gemm: c out of bounds");
    if k > 0 {
        assert!(last_index(a.offset, m, k, a.rs, a.cs) < a.data.len(), "gemm: a out of bounds");
        assert!(last_index(b.offset, k, n, b.rs, b.cs) < b.data.len(), "gemm: b out of bounds");
    }
    // SAFETY: every index touched lies within the slices, checked above;
    // `c` is exclusively borrowed and cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        )
    }
}
