//! AVX-512 `f32` matrix product for the shapes the convolutions produce: one
//! operand with few rows or columns and no benefit from packing. Used when the
//! right operand and the output have contiguous rows; everything else goes to
//! `matrixmultiply`.

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    /// Rows of the output per micro-tile.
    const MR: usize = 6;
    /// Vectors of 16 lanes per micro-tile row.
    const NV: usize = 4;
    const NR: usize = NV * 16;
    /// Depth of one pass; a `KC x NR` panel of `b` is copied out so it stays in L1.
    const KC: usize = 128;

    #[inline]
    fn lane_masks(width: usize) -> [__mmask16; NV] {
        let mut m = [0; NV];
        for (v, mask) in m.iter_mut().enumerate() {
            let lanes = width.saturating_sub(v * 16).min(16);
            *mask = ((1u32 << lanes) - 1) as __mmask16;
        }
        m
    }

    /// One `R x NR` block of `c` over `kc` inner steps. `arows[i]` points at the
    /// first inner element of row `i` of `a`; `b` is a packed `kc x NR` panel.
    #[inline]
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    unsafe fn tile<const R: usize>(
        kc: usize,
        arows: [*const f32; R],
        csa: isize,
        b: *const f32,
        c: *mut f32,
        rsc: isize,
        masks: [__mmask16; NV],
        load_c: bool,
    ) {
        let mut acc = [[_mm512_setzero_ps(); NV]; R];
        if load_c {
            for (i, row) in acc.iter_mut().enumerate() {
                for (v, x) in row.iter_mut().enumerate() {
                    *x = _mm512_maskz_loadu_ps(masks[v], c.offset(i as isize * rsc).add(v * 16));
                }
            }
        }
        for p in 0..kc {
            let brow = b.add(p * NR);
            let mut bv = [_mm512_setzero_ps(); NV];
            for (v, x) in bv.iter_mut().enumerate() {
                *x = _mm512_loadu_ps(brow.add(v * 16));
            }
            for (row, ap) in acc.iter_mut().zip(&arows) {
                let av = _mm512_set1_ps(*ap.offset(p as isize * csa));
                for (x, &bx) in row.iter_mut().zip(&bv) {
                    *x = _mm512_fmadd_ps(av, bx, *x);
                }
            }
        }
        for (i, row) in acc.iter().enumerate() {
            for (v, &x) in row.iter().enumerate() {
                _mm512_mask_storeu_ps(c.offset(i as isize * rsc).add(v * 16), masks[v], x);
            }
        }
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    unsafe fn block<const R: usize>(
        i0: usize,
        k0: usize,
        kc: usize,
        a_row: &impl Fn(usize) -> *const f32,
        csa: isize,
        panel: *const f32,
        c: *mut f32,
        rsc: isize,
        masks: [__mmask16; NV],
        load_c: bool,
    ) {
        let arows: [*const f32; R] = std::array::from_fn(|i| a_row(i0 + i).offset(k0 as isize * csa));
        tile::<R>(kc, arows, csa, panel, c.offset(i0 as isize * rsc), rsc, masks, load_c);
    }

    /// `c = a * b (+ c when accumulate)` with rows of `a` and `b` located by
    /// the given functions; `b` and `c` rows are contiguous.
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_with(
        m: usize,
        k: usize,
        n: usize,
        a_row: impl Fn(usize) -> *const f32,
        csa: isize,
        b_row: impl Fn(usize) -> *const f32,
        c: *mut f32,
        rsc: isize,
        accumulate: bool,
    ) {
        let mut panel = vec![0.0f32; KC * NR];
        for j0 in (0..n).step_by(NR) {
            let width = (n - j0).min(NR);
            let masks = lane_masks(width);
            let cj = c.add(j0);
            if k == 0 && !accumulate {
                for i in 0..m {
                    for (v, &mask) in masks.iter().enumerate() {
                        _mm512_mask_storeu_ps(cj.offset(i as isize * rsc).add(v * 16), mask, _mm512_setzero_ps());
                    }
                }
            }
            for k0 in (0..k).step_by(KC) {
                let kc = (k - k0).min(KC);
                let load_c = accumulate || k0 > 0;
                for p in 0..kc {
                    std::ptr::copy_nonoverlapping(b_row(k0 + p).add(j0), panel.as_mut_ptr().add(p * NR), width);
                }
                let bp = panel.as_ptr();
                let mut i0 = 0;
                while i0 < m {
                    let rows = (m - i0).min(MR);
                    match rows {
                        6 => block::<6>(i0, k0, kc, &a_row, csa, bp, cj, rsc, masks, load_c),
                        5 => block::<5>(i0, k0, kc, &a_row, csa, bp, cj, rsc, masks, load_c),
                        4 => block::<4>(i0, k0, kc, &a_row, csa, bp, cj, rsc, masks, load_c),
                        3 => block::<3>(i0, k0, kc, &a_row, csa, bp, cj, rsc, masks, load_c),
                        2 => block::<2>(i0, k0, kc, &a_row, csa, bp, cj, rsc, masks, load_c),
                        _ => block::<1>(i0, k0, kc, &a_row, csa, bp, cj, rsc, masks, load_c),
                    }
                    i0 += rows;
                }
            }
        }
    }

    /// Strided `a`, `b` and `c` with unit column stride.
    ///
    /// # Safety
    /// The caller guarantees AVX-512F support and that every strided access
    /// implied by the dimensions lies inside the buffers.
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    pub unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        c: *mut f32,
        rsc: isize,
        accumulate: bool,
    ) {
        gemm_with(m, k, n, |i| a.offset(i as isize * rsa), csa, |p| b.offset(p as isize * rsb), c, rsc, accumulate);
    }

    /// Rows of `a` and `b` at explicit offsets.
    ///
    /// # Safety
    /// As for [`gemm`]; every offset row must lie inside its buffer.
    #[target_feature(enable = "avx512f")]
    #[allow(clippy::too_many_arguments)]
    pub unsafe fn gemm_rows(
        k: usize,
        n: usize,
        a: *const f32,
        a_rows: &[usize],
        b: *const f32,
        b_rows: &[usize],
        c: *mut f32,
        rsc: isize,
        accumulate: bool,
    ) {
        gemm_with(a_rows.len(), k, n, |i| a.add(a_rows[i]), 1, |p| b.add(b_rows[p]), c, rsc, accumulate);
    }
}

#[cfg(target_arch = "x86_64")]
fn avx512_available() -> bool {
    std::arch::is_x86_feature_detected!("avx512f")
}

/// Drop-in for `matrixmultiply::sgemm` that takes the AVX-512 path when it applies.
///
/// # Safety
/// Same contract as `matrixmultiply::sgemm`.
#[allow(clippy::too_many_arguments)]
pub(crate) unsafe fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: *const f32,
    rsa: isize,
    csa: isize,
    b: *const f32,
    rsb: isize,
    csb: isize,
    beta: f32,
    c: *mut f32,
    rsc: isize,
    csc: isize,
) {
    #[cfg(target_arch = "x86_64")]
    if csb == 1 && csc == 1 && alpha == 1.0 && (beta == 0.0 || beta == 1.0) && avx512_available() {
        avx512::gemm(m, k, n, a, rsa, csa, b, rsb, c, rsc, beta == 1.0);
        return;
    }
    matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
}

/// [`crate::net3d::Real::gemm_rows`] for `f32`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm_rows(
    k: usize,
    n: usize,
    a: &[f32],
    a_rows: &[usize],
    b: &[f32],
    b_rows: &[usize],
    c: &mut [f32],
    rsc: usize,
    accumulate: bool,
) {
    #[cfg(target_arch = "x86_64")]
    if avx512_available() {
        let m = a_rows.len();
        assert_eq!(b_rows.len(), k, "gemm_rows: b needs one row per inner index");
        assert!(a_rows.iter().all(|&r| r + k <= a.len()), "gemm_rows: lhs row out of range");
        assert!(b_rows.iter().all(|&r| r + n <= b.len()), "gemm_rows: rhs row out of range");
        assert!(m == 0 || n == 0 || (m - 1) * rsc + n <= c.len(), "gemm_rows: output too short");
        // SAFETY: the asserts above bound every row access.
        unsafe {
            avx512::gemm_rows(k, n, a.as_ptr(), a_rows, b.as_ptr(), b_rows, c.as_mut_ptr(), rsc as isize, accumulate);
        }
        return;
    }
    super::tensor::gemm_rows_gathered(k, n, a, a_rows, b, b_rows, c, rsc, accumulate);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_reference_product_on_ragged_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, k, n) in &[(1, 1, 1), (7, 3, 5), (13, 130, 70), (50, 300, 343), (6, 257, 64), (2, 0, 9)] {
            for beta in [0.0f32, 1.0] {
                // a stored column-major to exercise general strides
                let a: Vec<f32> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let b: Vec<f32> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let c0: Vec<f32> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut got = c0.clone();
                unsafe {
                    sgemm(m, k, n, 1.0, a.as_ptr(), 1, m as isize, b.as_ptr(), n as isize, 1, beta, got.as_mut_ptr(), n as isize, 1);
                }
                for i in 0..m {
                    for j in 0..n {
                        let dot: f64 = (0..k).map(|p| f64::from(a[i + p * m]) * f64::from(b[p * n + j])).sum();
                        let want = dot + f64::from(beta) * f64::from(c0[i * n + j]);
                        let err = (f64::from(got[i * n + j]) - want).abs();
                        assert!(err < 1e-4 * (1.0 + k as f64).sqrt(), "({m},{k},{n}) beta {beta}: {err}");
                    }
                }
            }
        }
    }

    #[test]
    fn row_offsets_match_gathered_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f32> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..900).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for &(m, k, n) in &[(1, 1, 1), (7, 9, 70), (13, 130, 17)] {
            let a_rows: Vec<usize> = (0..m).map(|i| (i * 37) % (400 - k)).collect();
            let b_rows: Vec<usize> = (0..k).map(|p| (p * 53) % (900 - n)).collect();
            for acc in [false, true] {
                let mut got = vec![0.5f32; m * (n + 3)];
                let mut want = got.clone();
                sgemm_rows(k, n, &a, &a_rows, &b, &b_rows, &mut got, n + 3, acc);
                crate::net3d::tensor::gemm_rows_gathered(k, n, &a, &a_rows, &b, &b_rows, &mut want, n + 3, acc);
                for (x, y) in got.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-4, "({m},{k},{n}) {x} vs {y}");
                }
            }
        }
    }
}
