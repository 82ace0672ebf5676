//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All signal-processing and estimation code is written against [`Real`],
//! which is implemented for `f32` and `f64`. The Hermitian eigensolver is
//! routed through the trait so that the generic code never has to mix the
//! `num_traits` and `nalgebra` method namespaces.

use std::fmt::{Debug, Display};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use num_traits::{Float, FloatConst};
use rustfft::FftNum;

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FftNum + Default + Debug + Display + Send + Sync + 'static
{
    /// Eigen-decomposition of a dense Hermitian matrix stored row-major.
    ///
    /// Returns unsorted eigenvalues and the eigenvectors as columns of a
    /// row-major `n x n` matrix.
    fn hermitian_eigh(n: usize, matrix: &[Complex<Self>]) -> (Vec<Self>, Vec<Complex<Self>>);

    /// Eigen-decomposition of a dense real symmetric matrix stored row-major.
    fn symmetric_eigh(n: usize, matrix: &[Self]) -> (Vec<Self>, Vec<Self>);
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            fn hermitian_eigh(
                n: usize,
                matrix: &[Complex<Self>],
            ) -> (Vec<Self>, Vec<Complex<Self>>) {
                let m = DMatrix::from_row_slice(n, n, matrix);
                let eig = SymmetricEigen::new(m);
                let vectors = eig.eigenvectors.transpose();
                (
                    eig.eigenvalues.iter().copied().collect(),
                    // column-major storage of the transpose is row-major of the original
                    vectors.as_slice().to_vec(),
                )
            }

            fn symmetric_eigh(n: usize, matrix: &[Self]) -> (Vec<Self>, Vec<Self>) {
                let m = DMatrix::from_row_slice(n, n, matrix);
                let eig = SymmetricEigen::new(m);
                let vectors = eig.eigenvectors.transpose();
                (
                    eig.eigenvalues.iter().copied().collect(),
                    vectors.as_slice().to_vec(),
                )
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from(x).expect("literal representable in scalar type")
}

/// Converts a count into the working scalar.
#[inline]
pub fn count<T: Real>(n: usize) -> T {
    T::from(n).expect("count representable in scalar type")
}

/// Wraps an angle to `[-pi, pi)`.
pub fn wrap_angle<T: Real>(angle: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut a = (angle + T::PI()) % two_pi;
    if a < T::zero() {
        a = a + two_pi;
    }
    a - T::PI()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert!((wrap_angle(PI) + PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-PI) + PI).abs() < 1e-12);
        assert!((wrap_angle(0.25_f64) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn eigh_returns_row_major_columns() {
        // diag(2, 1) rotated: [[1.5, 0.5], [0.5, 1.5]] has eigvecs (1,1)/sqrt2, (1,-1)/sqrt2
        let m = [1.5, 0.5, 0.5, 1.5].map(|x: f64| Complex::new(x, 0.0));
        let (vals, vecs) = f64::hermitian_eigh(2, &m);
        for k in 0..2 {
            // A v = lambda v for column k
            for i in 0..2 {
                let av: Complex<f64> = (0..2).map(|j| m[i * 2 + j] * vecs[j * 2 + k]).sum();
                assert!((av - vecs[i * 2 + k] * vals[k]).norm() < 1e-12);
            }
        }
    }
}
