//! What the per-receiver estimator needs from received data.
//!
//! An observation may be an explicit sampled frame, the factored form used by
//! the Monte Carlo engine, or either of those seen through a hybrid front-end.
//! Its "channel" space is the antenna space for a digital receiver and the RF
//! chain space for a hybrid one.

use std::borrow::Cow;

use num_complex::Complex;

use crate::scalar::Real;

pub trait EchoObservation<T: Real> {
    /// Dimension of one snapshot.
    fn n_channels(&self) -> usize;

    /// `(N symbols, M subcarriers)`.
    fn grid_dims(&self) -> (usize, usize);

    /// `(1/NM) sum y y^H`, row-major.
    fn covariance_matrix(&self) -> Vec<Complex<T>>;

    /// `w^H y[n, m]` for every resource element, row-major over `(n, m)`.
    fn beamform(&self, w: &[Complex<T>]) -> Vec<Complex<T>>;

    /// Maps an antenna-domain steering vector into channel space.
    fn project_steering<'a>(&self, b: &'a [Complex<T>]) -> Cow<'a, [Complex<T>]> {
        Cow::Borrowed(b)
    }

    /// Antenna-domain weights equivalent to channel-space weights `w`.
    fn lift_weights<'a>(&self, w: &'a [Complex<T>]) -> Cow<'a, [Complex<T>]> {
        Cow::Borrowed(w)
    }
}

/// Row-major `rows x cols` complex matrix times a vector.
pub fn mat_vec<T: Real>(
    m: &[Complex<T>],
    rows: usize,
    cols: usize,
    v: &[Complex<T>],
) -> Vec<Complex<T>> {
    (0..rows)
        .map(|r| {
            m[r * cols..(r + 1) * cols]
                .iter()
                .zip(v)
                .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + *a * *b)
        })
        .collect()
}

/// `v^H A v` for Hermitian `A`; the imaginary residue is dropped.
pub fn quadratic_form<T: Real>(a: &[Complex<T>], v: &[Complex<T>]) -> T {
    let n = v.len();
    mat_vec(a, n, n, v)
        .iter()
        .zip(v)
        .fold(T::zero(), |acc, (av, x)| acc + (x.conj() * av).re)
}
