use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Row/column strides of a matrix operand, in elements.
pub type Strides = (isize, isize);

/// Floating point element type of a [`Tensor`](crate::Tensor).
///
/// Implemented for `f32` (training) and `f64` (finite-difference oracles).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// `c = alpha * a·b + beta * c` for an `m×k` by `k×n` product.
    ///
    /// Strides may describe transposed views. When `beta` is zero `c` is not read.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: Strides,
        b: &[Self],
        b_strides: Strides,
        beta: Self,
        c: &mut [Self],
        c_strides: Strides,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

fn extent(rows: usize, cols: usize, (rs, cs): Strides) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: Strides,
                b: &[Self],
                b_strides: Strides,
                beta: Self,
                c: &mut [Self],
                c_strides: Strides,
            ) {
                assert!(extent(m, k, a_strides) <= a.len(), "gemm: lhs out of bounds");
                assert!(extent(k, n, b_strides) <= b.len(), "gemm: rhs out of bounds");
                assert!(extent(m, n, c_strides) <= c.len(), "gemm: output out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: all three operands were bounds-checked above against
                // their strided extents; `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
