//! Hybrid receiver front-end: an orthonormal beamspace `U` (`N_r x N_rf`)
//! built from discrete prolate spheroidal sequences and steered to a bearing.

use std::borrow::Cow;

use num_complex::Complex;

use crate::channel::RxFrame;
use crate::observation::{mat_vec, EchoObservation};
use crate::scalar::{count, lit, Real};
use crate::signal::{inner, steering_elements};

/// The `k` most concentrated DPSS of length `n` with time-half-bandwidth `nw`,
/// from the eigenvectors of the commuting tridiagonal matrix. Each sequence is
/// unit-norm and signed so that its sum (even orders) or first moment (odd
/// orders) is positive.
pub fn dpss<T: Real>(n: usize, nw: T, k: usize) -> Vec<Vec<T>> {
    let w = nw / count::<T>(n);
    let cos = (lit::<T>(2.0) * T::PI() * w).cos();
    let mut a = vec![T::zero(); n * n];
    for i in 0..n {
        let c = (count::<T>(n) - T::one() - lit::<T>(2.0) * count::<T>(i)) / lit(2.0);
        a[i * n + i] = c * c * cos;
        if i + 1 < n {
            let off = count::<T>((i + 1) * (n - i - 1)) / lit(2.0);
            a[i * n + i + 1] = off;
            a[(i + 1) * n + i] = off;
        }
    }
    let (values, vectors) = T::symmetric_eigh(n, &a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| values[y].partial_cmp(&values[x]).unwrap());
    order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(rank, col)| {
            let mut v: Vec<T> = (0..n).map(|i| vectors[i * n + col]).collect();
            let centre = (count::<T>(n) - T::one()) / lit(2.0);
            let moment = v.iter().enumerate().fold(T::zero(), |acc, (i, x)| {
                acc + if rank % 2 == 0 {
                    *x
                } else {
                    *x * (count::<T>(i) - centre)
                }
            });
            if moment < T::zero() {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            let norm = v.iter().fold(T::zero(), |acc, x| acc + *x * *x).sqrt();
            v.iter_mut().for_each(|x| *x = *x / norm);
            v
        })
        .collect()
}

/// Orthonormal `N_r x N_rf` reduction, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionMatrix<T> {
    pub n_rx: usize,
    pub n_rf: usize,
    pub u: Vec<Complex<T>>,
    pub center_rad: T,
    pub thbw: T,
}

impl<T: Real> ReductionMatrix<T> {
    pub fn identity(n: usize) -> Self {
        let mut u = vec![Complex::new(T::zero(), T::zero()); n * n];
        for i in 0..n {
            u[i * n + i] = Complex::new(T::one(), T::zero());
        }
        Self {
            n_rx: n,
            n_rf: n,
            u,
            center_rad: T::zero(),
            thbw: T::zero(),
        }
    }

    pub fn column(&self, k: usize) -> Vec<Complex<T>> {
        (0..self.n_rx).map(|i| self.u[i * self.n_rf + k]).collect()
    }

    /// `U^H v` for an antenna-domain vector.
    pub fn reduce(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.n_rf];
        for (i, vi) in v.iter().enumerate() {
            let row = &self.u[i * self.n_rf..(i + 1) * self.n_rf];
            for (o, e) in out.iter_mut().zip(row) {
                *o = *o + e.conj() * *vi;
            }
        }
        out
    }

    /// `U w` for a channel-space vector.
    pub fn lift(&self, w: &[Complex<T>]) -> Vec<Complex<T>> {
        mat_vec(&self.u, self.n_rx, self.n_rf, w)
    }

    /// `U^H A U` for an `N_r x N_r` matrix.
    pub fn reduce_matrix(&self, a: &[Complex<T>]) -> Vec<Complex<T>> {
        let (n, r) = (self.n_rx, self.n_rf);
        // A U, then U^H (A U)
        let mut au = vec![Complex::new(T::zero(), T::zero()); n * r];
        for i in 0..n {
            for l in 0..n {
                let x = a[i * n + l];
                let urow = &self.u[l * r..(l + 1) * r];
                for (o, e) in au[i * r..(i + 1) * r].iter_mut().zip(urow) {
                    *o = *o + x * *e;
                }
            }
        }
        let mut out = vec![Complex::new(T::zero(), T::zero()); r * r];
        for i in 0..n {
            let urow = &self.u[i * r..(i + 1) * r];
            let arow = &au[i * r..(i + 1) * r];
            for p in 0..r {
                let c = urow[p].conj();
                for q in 0..r {
                    out[p * r + q] = out[p * r + q] + c * arow[q];
                }
            }
        }
        out
    }
}

/// DPSS beamspace reused across bearings; only the modulation changes.
#[derive(Debug, Clone)]
pub struct BeamspaceBasis<T> {
    pub n_rx: usize,
    pub n_rf: usize,
    pub thbw: T,
    tapers: Vec<Vec<T>>,
}

impl<T: Real> BeamspaceBasis<T> {
    pub fn new(n_rx: usize, n_rf: usize, thbw: T) -> Self {
        assert!(n_rf >= 1 && n_rf <= n_rx, "need 1 <= N_rf <= N_r");
        assert!(thbw > T::zero(), "thbw must be positive");
        Self {
            n_rx,
            n_rf,
            thbw,
            tapers: dpss(n_rx, thbw, n_rf),
        }
    }

    /// Tapers modulated by the steering phase of `center_rad`, then
    /// re-orthonormalized by modified Gram-Schmidt.
    pub fn steer(&self, center_rad: T) -> ReductionMatrix<T> {
        let phase = steering_elements(center_rad, self.n_rx);
        let mut cols: Vec<Vec<Complex<T>>> = self
            .tapers
            .iter()
            .map(|t| t.iter().zip(&phase).map(|(a, p)| *p * *a).collect())
            .collect();
        for j in 0..cols.len() {
            let (done, rest) = cols.split_at_mut(j);
            let v = &mut rest[0];
            for u in done.iter() {
                let c = inner(u, v);
                v.iter_mut().zip(u).for_each(|(x, y)| *x = *x - *y * c);
            }
            let norm = v.iter().fold(T::zero(), |a, x| a + x.norm_sqr()).sqrt();
            v.iter_mut().for_each(|x| *x = *x / norm);
        }
        let mut u = vec![Complex::new(T::zero(), T::zero()); self.n_rx * self.n_rf];
        for (k, c) in cols.iter().enumerate() {
            for (i, x) in c.iter().enumerate() {
                u[i * self.n_rf + k] = *x;
            }
        }
        ReductionMatrix {
            n_rx: self.n_rx,
            n_rf: self.n_rf,
            u,
            center_rad,
            thbw: self.thbw,
        }
    }
}

pub fn build_reduction<T: Real>(center_rad: T, n_rx: usize, n_rf: usize, thbw: T) -> ReductionMatrix<T> {
    BeamspaceBasis::new(n_rx, n_rf, thbw).steer(center_rad)
}

/// `y_red[n, m] = U^H y[n, m]` for every snapshot.
pub fn reduce_frame<T: Real>(frame: &RxFrame<T>, u: &ReductionMatrix<T>) -> RxFrame<T> {
    assert_eq!(frame.n_rx, u.n_rx, "frame and reduction disagree on N_r");
    let mut out = RxFrame::zeros(u.n_rf, frame.n_symbols, frame.n_subcarriers);
    out.epoch_index = frame.epoch_index;
    out.receiver_index = frame.receiver_index;
    for (dst, src) in out.samples.chunks_mut(u.n_rf).zip(frame.snapshots()) {
        dst.copy_from_slice(&u.reduce(src));
    }
    out
}

/// An antenna-domain observation seen through the RF chains.
#[derive(Debug, Clone, Copy)]
pub struct Reduced<'a, T, O: ?Sized> {
    pub inner: &'a O,
    pub reduction: &'a ReductionMatrix<T>,
}

impl<T: Real, O: EchoObservation<T> + ?Sized> EchoObservation<T> for Reduced<'_, T, O> {
    fn n_channels(&self) -> usize {
        self.reduction.n_rf
    }

    fn grid_dims(&self) -> (usize, usize) {
        self.inner.grid_dims()
    }

    fn covariance_matrix(&self) -> Vec<Complex<T>> {
        self.reduction.reduce_matrix(&self.inner.covariance_matrix())
    }

    fn beamform(&self, w: &[Complex<T>]) -> Vec<Complex<T>> {
        self.inner.beamform(&self.reduction.lift(w))
    }

    fn project_steering<'a>(&self, b: &'a [Complex<T>]) -> Cow<'a, [Complex<T>]> {
        Cow::Owned(self.reduction.reduce(b))
    }

    fn lift_weights<'a>(&self, w: &'a [Complex<T>]) -> Cow<'a, [Complex<T>]> {
        Cow::Owned(self.reduction.lift(w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_rx_frame, EchoParams, UserEcho};
    use crate::estimator::{music_aoa, sample_covariance, SteeringGrid};
    use crate::scenario::ScenarioConfig;
    use crate::signal::{generate_qpsk_grid, make_beamformer, BeamKind};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram_error(u: &ReductionMatrix<f64>) -> f64 {
        let mut worst = 0.0f64;
        for p in 0..u.n_rf {
            for q in 0..u.n_rf {
                let g = inner(&u.column(p), &u.column(q));
                let target = if p == q { 1.0 } else { 0.0 };
                worst = worst.max((g - Complex::new(target, 0.0)).norm());
            }
        }
        worst
    }

    fn capture(u: &ReductionMatrix<f64>, angle: f64) -> f64 {
        let b = steering_elements(angle, u.n_rx);
        u.reduce(&b).iter().map(|x| x.norm_sqr()).sum::<f64>() / u.n_rx as f64
    }

    #[test]
    fn dpss_matches_known_properties() {
        // the tridiagonal eigenvectors commute with the time-frequency
        // concentration problem: check the concentration ratio directly
        let n = 64;
        let nw = 1.0;
        let w = nw / n as f64;
        let tapers = dpss(n, nw, 4);
        let conc = |v: &[f64]| {
            // lambda = v^T S v with S_ij = sin(2 pi W (i-j)) / (pi (i-j)), S_ii = 2W
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let d = i as f64 - j as f64;
                    let k = if i == j {
                        2.0 * w
                    } else {
                        (2.0 * std::f64::consts::PI * w * d).sin() / (std::f64::consts::PI * d)
                    };
                    s += v[i] * k * v[j];
                }
            }
            s
        };
        let lambdas: Vec<f64> = tapers.iter().map(|t| conc(t)).collect();
        for l in lambdas.windows(2) {
            assert!(l[0] > l[1]);
        }
        // about 2NW tapers are well concentrated
        assert!(lambdas[0] > 0.7 && lambdas[3] < 0.2, "{lambdas:?}");
        // even tapers symmetric, odd antisymmetric
        for (k, t) in tapers.iter().enumerate() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for i in 0..n {
                assert!((t[i] - sign * t[n - 1 - i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reduction_orthonormal_and_concentrated() {
        let u = build_reduction(0.3f64, 64, 4, 1.0);
        assert!(gram_error(&u) < 1e-10);
        assert!(capture(&u, 0.3) >= 0.95, "{}", capture(&u, 0.3));
        // far outside the sector
        assert!(capture(&u, -0.5) <= 0.05);
    }

    #[test]
    fn center_shift_is_modulation() {
        let base = build_reduction(0.0f64, 64, 4, 1.0);
        let phi = 0.4f64;
        let shifted = build_reduction(phi, 64, 4, 1.0);
        let phase = steering_elements(phi, 64);
        for k in 0..4 {
            let a = base.column(k);
            let b = shifted.column(k);
            for i in 0..64 {
                assert!((a[i] * phase[i] - b[i]).norm() < 1e-8);
            }
        }
    }

    fn frame(phi: f64, noise: bool) -> (RxFrame<f64>, crate::scenario::SystemParams<f64>) {
        let mut p = ScenarioConfig::default().system_params::<f64>().unwrap();
        p.n_symbols = 8;
        p.n_subcarriers = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let qpsk = generate_qpsk_grid(8, 64, 1e-3, &mut rng);
        let f = make_beamformer(0.0, 64, BeamKind::Transmit);
        let echo = EchoParams {
            h: Complex::new(if noise { 0.0 } else { 1e-3 }, 0.0),
            theta_rad: 0.0,
            phi_rad: phi,
            tau_s: 0.0,
            doppler_hz: 0.0,
        };
        let users = [UserEcho { echo, qpsk: &qpsk, tx_beam: &f }];
        let fr = if noise {
            synthesize_rx_frame(&users, &p, false, Some(&mut rng), 0, 0)
        } else {
            synthesize_rx_frame(&users, &p, false, None, 0, 0)
        };
        (fr.unwrap(), p)
    }

    #[test]
    fn music_in_reduced_space_recovers_sector_source() {
        let center = 0.2f64;
        let phi = center + 0.01;
        let (fr, _) = frame(phi, false);
        let u = build_reduction(center, 64, 4, 1.0);
        let red = reduce_frame(&fr, &u);
        let cov = sample_covariance(&red);
        let eig = crate::estimator::hermitian_eigendecomposition(4, &cov.matrix).unwrap();
        let grid = SteeringGrid::from_degrees(0.02, 64);
        let peak = crate::estimator::music_search(
            &[eig.vector(0)],
            &grid,
            |b: &[Complex<f64>]| -> Cow<'_, [Complex<f64>]> { Cow::Owned(u.reduce(b)) },
            center,
            &crate::estimator::MusicSettings::default(),
        )
        .unwrap();
        assert!((peak.angle_rad - phi).abs().to_degrees() <= 0.1);
        // the reduced frame and the wrapper see the same covariance
        let wrapped = Reduced { inner: &fr, reduction: &u }.covariance_matrix();
        for (a, b) in wrapped.iter().zip(&cov.matrix) {
            assert!((a - b).norm() <= 1e-12 * cov.matrix[0].norm());
        }
    }

    #[test]
    fn reduced_noise_stays_white() {
        let (fr, p) = frame(0.0, true);
        let u = build_reduction(-0.3f64, 64, 4, 1.0);
        let cov = sample_covariance(&reduce_frame(&fr, &u));
        let s2 = p.noise_variance_w();
        let n = (8 * 64) as f64;
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { s2 } else { 0.0 };
                assert!((cov.get(i, j) - Complex::new(target, 0.0)).norm() <= 5.0 * s2 / n.sqrt());
            }
        }
    }

    #[test]
    fn identity_reduction_is_transparent() {
        let (fr, _) = frame(0.3, true);
        let id = ReductionMatrix::identity(64);
        let r = Reduced { inner: &fr, reduction: &id };
        assert_eq!(r.covariance_matrix(), fr.covariance_matrix());
        let w = make_beamformer(0.3, 64, BeamKind::Receive).weights;
        assert_eq!(r.beamform(&w), fr.beamform(&w));
        let grid = SteeringGrid::from_degrees(0.1, 64);
        let a = music_aoa(&sample_covariance(&fr), 1, &grid, 0.0);
        let b = music_aoa(&sample_covariance(&r), 1, &grid, 0.0);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn orthonormal_for_any_center(center in -1.5..1.5f64, n_rf in 1usize..8, thbw in 0.5..4.0f64) {
            let u = build_reduction(center, 32, n_rf, thbw);
            prop_assert!(gram_error(&u) < 1e-10);
        }
    }
}
