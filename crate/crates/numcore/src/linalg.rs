//! Strided general matrix multiply.

/// Placement of an `r × c` matrix inside a flat slice:
/// element `(i, j)` lives at `offset + i·rs + j·cs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    /// Dense row-major matrix with `cols` columns.
    pub const fn rows(cols: usize) -> Self {
        Self {
            offset: 0,
            rs: cols,
            cs: 1,
        }
    }

    /// Transposed view of a dense row-major matrix that has `cols` columns.
    pub const fn transposed(cols: usize) -> Self {
        Self {
            offset: 0,
            rs: 1,
            cs: cols,
        }
    }

    pub const fn strided(offset: usize, rs: usize, cs: usize) -> Self {
        Self { offset, rs, cs }
    }

    pub const fn at(self, offset: usize) -> Self {
        Self { offset, ..self }
    }

    fn last(&self, r: usize, c: usize) -> usize {
        self.offset + (r - 1) * self.rs + (c - 1) * self.cs
    }
}

/// `C ← alpha·A·B + beta·C` for `A: m×k`, `B: k×n`, `C: m×n`.
///
/// `A` and `B` may use overlapping strides (sliding windows); the caller must
/// make sure distinct elements of `C` map to distinct positions.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(lc.last(m, n) < c.len(), "gemm: C out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let p = lc.offset + i * lc.rs + j * lc.cs;
                c[p] *= beta;
            }
        }
        return;
    }
    assert!(la.last(m, k) < a.len(), "gemm: A out of bounds");
    assert!(lb.last(k, n) < b.len(), "gemm: B out of bounds");
    // SAFETY: every accessed element was bounds-checked above through the
    // maximal index of each strided view; strides are non-negative.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(la.offset),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr().add(lb.offset),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}
