//! Floating point element types.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Element type of every tensor: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Size of one element in bytes.
    const BYTES: usize;
    /// Short name used in reports ("f32" / "f64").
    const NAME: &'static str;

    /// `c = alpha * op(a) * op(b) + beta * c` over strided row/column layouts.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-aliasing (for `c`)
    /// matrices of the stated sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Elementwise `exp` in place.
    fn exp_slice(xs: &mut [Self]) {
        for x in xs {
            *x = x.exp();
        }
    }
}

/// Branch-free `exp` for `f32` that the compiler can vectorise: range
/// reduction by `ln 2` (split in two parts) and a degree-6 polynomial on
/// `[-ln2/2, ln2/2]`. Relative error is a few ulp; inputs are clamped to
/// `[-87, 88]`, so results stay normal and finite.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // adding 1.5 * 2^23 rounds to the nearest integer in the low mantissa bits
    const ROUND: f32 = 12_582_912.0;
    let x = if x < -87.0 { -87.0 } else { x };
    let x = if x > 88.0 { 88.0 } else { x };
    let shifted = x * LOG2E + ROUND;
    let n = shifted - ROUND;
    let k = shifted.to_bits() as i32 - ROUND.to_bits() as i32;
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.987_569_1e-4;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_5e-1;
    let p = p * r + 5e-1;
    let y = p * r * r + r + 1.0;
    y * f32::from_bits(((k + 127) as u32) << 23)
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn exp_slice(xs: &mut [f32]) {
        for x in xs {
            *x = exp_f32(*x);
        }
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided view of a matrix inside a slice.
#[derive(Debug, Clone, Copy)]
pub struct MatView {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatView {
    pub fn row_major(offset: usize, rows: usize, cols: usize) -> Self {
        Self { offset, rows, cols, row_stride: cols, col_stride: 1 }
    }

    pub fn with_row_stride(offset: usize, rows: usize, cols: usize, row_stride: usize) -> Self {
        Self { offset, rows, cols, row_stride, col_stride: 1 }
    }

    /// The transposed view of the same memory.
    pub fn t(self) -> Self {
        Self {
            offset: self.offset,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// Safe strided gemm: `c = alpha * a * b + beta * c`.
///
/// Panics if any view falls outside its slice or the inner dimensions disagree.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    alpha: S,
    a: &[S],
    av: MatView,
    b: &[S],
    bv: MatView,
    beta: S,
    c: &mut [S],
    cv: MatView,
) {
    assert_eq!(av.cols, bv.rows, "gemm inner dimension");
    assert_eq!(av.rows, cv.rows, "gemm output rows");
    assert_eq!(bv.cols, cv.cols, "gemm output cols");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    assert!(av.rows == 0 || av.cols == 0 || av.last_index() < a.len());
    assert!(bv.rows == 0 || bv.cols == 0 || bv.last_index() < b.len());
    assert!(cv.last_index() < c.len());
    // SAFETY: bounds checked above; `c` is a unique borrow so it cannot alias a or b.
    unsafe {
        S::gemm_raw(
            av.rows,
            av.cols,
            bv.cols,
            alpha,
            a.as_ptr().add(av.offset),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr().add(bv.offset),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.row_stride as isize,
            cv.col_stride as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_exp_is_within_a_few_ulp() {
        let mut xs: Vec<f32> = (0..=20_000).map(|i| -86.0 + i as f32 * 0.0087).collect();
        let want: Vec<f64> = xs.iter().map(|&x| (x as f64).exp()).collect();
        f32::exp_slice(&mut xs);
        for (got, want) in xs.iter().zip(&want) {
            assert!(((*got as f64 - want) / want).abs() < 4e-7, "{got} vs {want}");
        }
        let mut edge = [0.0f32, -1e-8, -200.0, 200.0];
        f32::exp_slice(&mut edge);
        assert_eq!(edge[0], 1.0);
        assert!(edge[2] > 0.0 && edge[2] < 1e-37 && edge[3].is_finite());
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        // a: 2x3, b^T stored as 4x3
        let a: Vec<f64> = (0..6).map(|v| v as f64 + 1.0).collect();
        let bt: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 2.0).collect();
        let mut c = vec![0.0; 8];
        gemm(
            1.0,
            &a,
            MatView::row_major(0, 2, 3),
            &bt,
            MatView::row_major(0, 4, 3).t(),
            0.0,
            &mut c,
            MatView::row_major(0, 2, 4),
        );
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * bt[j * 3 + p]).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }
}
