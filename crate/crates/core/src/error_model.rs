//! Measurement error bounds, SNR estimation from data, and their mapping to
//! a positional covariance.

use crate::error::EstimateError;
use crate::geom::{Mat2, Vec2};
use crate::scalar::{count, lit, Real};
use crate::scenario::{AoaCrlbVariant, SPEED_OF_LIGHT};

/// AoA bound as printed: `(1/(rho0 N M)) (1 + 1/(N_r rho0)) 6/(N_r (N_r^2 - 1))`.
pub fn crlb_aoa<T: Real>(rho0: T, n_symbols: usize, n_subcarriers: usize, n_rx: usize) -> T {
    let nr = count::<T>(n_rx);
    let nm = count::<T>(n_symbols * n_subcarriers);
    T::one() / (rho0 * nm) * (T::one() + T::one() / (nr * rho0)) * lit::<T>(6.0)
        / (nr * (nr * nr - T::one()))
}

/// [`crlb_aoa`] read as a bound on the electrical angle `pi sin(phi)` and
/// mapped to the physical angle.
pub fn crlb_aoa_spatial<T: Real>(
    rho0: T,
    n_symbols: usize,
    n_subcarriers: usize,
    n_rx: usize,
    phi_rad: T,
) -> T {
    let d = T::PI() * phi_rad.cos();
    crlb_aoa(rho0, n_symbols, n_subcarriers, n_rx) / (d * d)
}

pub fn crlb_aoa_variant<T: Real>(
    variant: AoaCrlbVariant,
    rho0: T,
    n_symbols: usize,
    n_subcarriers: usize,
    n_rx: usize,
    phi_rad: T,
) -> T {
    match variant {
        AoaCrlbVariant::AsPrinted => crlb_aoa(rho0, n_symbols, n_subcarriers, n_rx),
        AoaCrlbVariant::SpatialAngle => {
            crlb_aoa_spatial(rho0, n_symbols, n_subcarriers, n_rx, phi_rad)
        }
    }
}

/// Delay bound as printed: `3 / (2 pi^2 S^2 (M df)^2 rho1 N T_o)`.
pub fn crlb_delay<T: Real>(
    rho1: T,
    oversampling: usize,
    n_subcarriers: usize,
    subcarrier_spacing_hz: T,
    n_symbols: usize,
    symbol_period_s: T,
) -> T {
    let s = count::<T>(oversampling);
    let bw = count::<T>(n_subcarriers) * subcarrier_spacing_hz;
    lit::<T>(3.0)
        / (lit::<T>(2.0) * T::PI() * T::PI() * s * s * bw * bw * rho1 * count::<T>(n_symbols)
            * symbol_period_s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrEstimates<T> {
    pub rho0_est: T,
    pub rho1_est: T,
    pub sigma2_est: T,
}

/// Noise floor from the trailing eigenvalues, per-antenna SNR from the
/// largest one, and beamformed SNR from the equalized grid `r = y_bf / zeta`
/// as the squared mean magnitude.
///
/// `eigenvalues` must be sorted in descending order. `n_rx` is the antenna
/// count used to normalize the largest eigenvalue.
pub fn estimate_snrs<T: Real>(
    eigenvalues: &[T],
    n_sources: usize,
    n_rx: usize,
    equalized: &[num_complex::Complex<T>],
    tx_power_w: T,
    n_users: usize,
) -> Result<SnrEstimates<T>, EstimateError> {
    if eigenvalues.len() <= n_sources || equalized.is_empty() {
        return Err(EstimateError::NoNoiseFloor);
    }
    let tail = &eigenvalues[n_sources..];
    let sigma2 = tail.iter().fold(T::zero(), |a, v| a + *v) / count::<T>(tail.len());
    if !(sigma2 > T::zero()) {
        return Err(EstimateError::NoNoiseFloor);
    }
    let rho0 = eigenvalues[0] / (count::<T>(n_rx) * sigma2);
    let mean_mag =
        equalized.iter().fold(T::zero(), |a, v| a + v.norm()) / count::<T>(equalized.len());
    let rho1 = tx_power_w / (count::<T>(n_users) * sigma2) * mean_mag * mean_mag;
    if !(rho0 > T::zero() && rho1 > T::zero() && rho0.is_finite() && rho1.is_finite()) {
        return Err(EstimateError::NonFinite);
    }
    Ok(SnrEstimates {
        rho0_est: rho0,
        rho1_est: rho1,
        sigma2_est: sigma2,
    })
}

/// Per-antenna SNR from the link budget: `P_T |h|^2 |a^H f|^2 / (K sigma^2)`.
pub fn link_snr<T: Real>(
    tx_power_w: T,
    h_mag_sqr: T,
    tx_gain: T,
    n_users: usize,
    noise_variance_w: T,
) -> T {
    tx_power_w * h_mag_sqr * tx_gain / (count::<T>(n_users) * noise_variance_w)
}

/// Diagonal measurement covariance of `(tau, phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementCovariance<T> {
    pub c_tau: T,
    pub c_phi: T,
}

impl<T: Real> MeasurementCovariance<T> {
    pub fn matrix(&self) -> Mat2<T> {
        Mat2::diag(self.c_tau, self.c_phi)
    }
}

/// Derivatives of `(tau, phi)` with respect to target `(x, y)`.
///
/// The delay row is the sum of the unit vectors from each node toward the
/// target over `c`; the angle row is the gradient of the receiver's bearing,
/// to which the array orientation adds only a constant.
pub fn jacobian<T: Real>(target: Vec2<T>, tx: Vec2<T>, rx: Vec2<T>) -> Mat2<T> {
    let c = lit::<T>(SPEED_OF_LIGHT);
    let u1 = (target - tx).unit().unwrap_or_else(Vec2::zero);
    let u2 = (target - rx).unit().unwrap_or_else(Vec2::zero);
    let grad_tau = (u1 + u2).scale(T::one() / c);
    let d = target - rx;
    let d2 = d.norm_sqr();
    let grad_phi = Vec2::new(-d.y / d2, d.x / d2);
    Mat2::from_rows(grad_tau, grad_phi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionCovariance<T> {
    pub sigma: Mat2<T>,
    pub jacobian: Mat2<T>,
    pub gdop: T,
}

/// `Sigma = B C B^T` with `B = (J^T J)^-1 J^T`, and `GDOP = sqrt(trace Sigma)`.
/// Fails when `cond(J)` exceeds `max_condition`.
pub fn position_covariance<T: Real>(
    j: Mat2<T>,
    c: &MeasurementCovariance<T>,
    max_condition: T,
) -> Result<PositionCovariance<T>, EstimateError> {
    let cond = j.condition_number();
    if !(cond <= max_condition) {
        return Err(EstimateError::IllConditioned(cond.to_f64().unwrap_or(f64::INFINITY)));
    }
    // J is square, so (J^T J)^-1 J^T is J^-1; forming J^T J would square a
    // condition number that is already ~1e6 in SI units.
    let b = j
        .inverse()
        .ok_or(EstimateError::IllConditioned(f64::INFINITY))?;
    let sigma = (b * c.matrix() * b.transpose()).symmetrized();
    let gdop = sigma.trace().sqrt();
    if !gdop.is_finite() {
        return Err(EstimateError::NonFinite);
    }
    Ok(PositionCovariance {
        sigma,
        jacobian: j,
        gdop,
    })
}
