//! Array steering vectors, unit-norm beams and the transmitted symbol grid.

use num_complex::Complex;
use rand::Rng;

use crate::scalar::{count, Real};

/// Response of a half-wavelength ULA: element `i` is `exp(j pi i sin(angle))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector<T> {
    pub elements: Vec<Complex<T>>,
    pub angle_rad: T,
}

pub fn steering_vector<T: Real>(angle_rad: T, n: usize) -> SteeringVector<T> {
    SteeringVector {
        elements: steering_elements(angle_rad, n),
        angle_rad,
    }
}

/// Elements of [`steering_vector`] without the wrapper.
pub fn steering_elements<T: Real>(angle_rad: T, n: usize) -> Vec<Complex<T>> {
    let k = T::PI() * angle_rad.sin();
    (0..n)
        .map(|i| Complex::from_polar(T::one(), k * count::<T>(i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamKind {
    Transmit,
    Receive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer<T> {
    pub weights: Vec<Complex<T>>,
    pub kind: BeamKind,
}

/// Steering vector normalized to unit norm.
pub fn make_beamformer<T: Real>(angle_rad: T, n: usize, kind: BeamKind) -> Beamformer<T> {
    let scale = T::one() / count::<T>(n).sqrt();
    Beamformer {
        weights: steering_elements(angle_rad, n)
            .into_iter()
            .map(|a| a * scale)
            .collect(),
        kind,
    }
}

impl<T: Real> Beamformer<T> {
    /// `w^H v`.
    pub fn apply(&self, v: &[Complex<T>]) -> Complex<T> {
        inner(&self.weights, v)
    }
}

/// Conjugate-linear inner product `a^H b`.
pub fn inner<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter()
        .zip(b)
        .fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| {
            acc + x.conj() * y
        })
}

/// Transmitted symbols of one user, row-major over `(symbol n, subcarrier m)`.
///
/// Symbol index `q` in `0..4` maps to `sqrt(P) exp(j (pi/4 + q pi/2))`, so bit
/// pairs are not Gray coded; the receiver knows the data, which makes the
/// labeling irrelevant.
#[derive(Debug, Clone, PartialEq)]
pub struct QpskGrid<T> {
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub symbols: Vec<Complex<T>>,
    pub per_symbol_power_w: T,
}

impl<T: Real> QpskGrid<T> {
    pub fn get(&self, n: usize, m: usize) -> Complex<T> {
        self.symbols[n * self.n_subcarriers + m]
    }
}

pub fn qpsk_constellation<T: Real>(power_w: T) -> [Complex<T>; 4] {
    let amp = power_w.sqrt();
    let quarter = T::FRAC_PI_4();
    let step = T::FRAC_PI_2();
    [0usize, 1, 2, 3].map(|q| Complex::from_polar(amp, quarter + step * count::<T>(q)))
}

pub fn generate_qpsk_grid<T: Real, R: Rng + ?Sized>(
    n_symbols: usize,
    n_subcarriers: usize,
    power_w: T,
    rng: &mut R,
) -> QpskGrid<T> {
    let points = qpsk_constellation(power_w);
    let symbols = (0..n_symbols * n_subcarriers)
        .map(|_| points[rng.random_range(0..4usize)])
        .collect();
    QpskGrid {
        n_symbols,
        n_subcarriers,
        symbols,
        per_symbol_power_w: power_w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: Complex<f64>, b: Complex<f64>) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn steering_examples() {
        let a = steering_vector(0.0f64, 4);
        assert!(a.elements.iter().all(|e| close(*e, Complex::new(1.0, 0.0))));
        let a = steering_vector(90f64.to_radians(), 3).elements;
        assert!(close(a[0], Complex::new(1.0, 0.0)));
        assert!(close(a[1], Complex::new(-1.0, 0.0)));
        assert!(close(a[2], Complex::new(1.0, 0.0)));
        let a = steering_vector(30f64.to_radians(), 2).elements;
        assert!(close(a[1], Complex::new(0.0, 1.0)));
    }

    #[test]
    fn matched_gain_equals_array_size() {
        let a = steering_elements(0.3f64, 64);
        let f = make_beamformer(0.3f64, 64, BeamKind::Transmit);
        let g = inner(&a, &f.weights).norm_sqr();
        assert!((g - 64.0).abs() < 1e-9);
        assert!((10.0 * g.log10() - 18.06).abs() < 0.01);
    }

    #[test]
    fn qpsk_power_and_determinism() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let g1 = generate_qpsk_grid(64, 512, 3.16e-3f64, &mut r1);
        let g2 = generate_qpsk_grid(64, 512, 3.16e-3f64, &mut r2);
        assert_eq!(g1, g2);
        assert!(g1
            .symbols
            .iter()
            .all(|z| (z.norm_sqr() - 3.16e-3).abs() < 1e-15));
        let n = g1.symbols.len() as f64;
        let mean: Complex<f64> = g1.symbols.iter().sum::<Complex<f64>>() / n;
        // per-component std of the mean is sqrt(P/2/n)
        let sigma = (3.16e-3 / n).sqrt();
        assert!(mean.norm() <= 5.0 * sigma);
    }

    #[test]
    fn cross_beam_leakage_small_when_separated() {
        let n = 64;
        for i in 0..90 {
            let t1 = (-1.5f64 + i as f64 * 3.0 / 90.0).clamp(-1.5, 1.5);
            for j in 0..90 {
                let t2 = -1.5f64 + j as f64 * 3.0 / 90.0;
                // separation in electrical angle, wrapped: sin difference 2 is a grating lobe
                let d = (t1.sin() - t2.sin()).abs();
                if d.min(2.0 - d) < 4.0 / n as f64 {
                    continue;
                }
                let a = steering_elements(t1, n);
                let f = make_beamformer(t2, n, BeamKind::Transmit);
                assert!(inner(&a, &f.weights).norm_sqr() / n as f64 <= 0.05);
            }
        }
    }

    proptest! {
        #[test]
        fn conjugate_symmetry(angle in -1.6f64..1.6, n in 1usize..80) {
            let a = steering_elements(angle, n);
            let b = steering_elements(-angle, n);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.conj() - y).norm() < 1e-12);
            }
            prop_assert!((a.iter().map(|e| e.norm_sqr()).sum::<f64>() - n as f64).abs() < 1e-9);
        }

        #[test]
        fn beamformer_unit_norm(angle in -3.2f64..3.2, n in 1usize..128) {
            let w = make_beamformer(angle, n, BeamKind::Receive);
            let norm: f64 = w.weights.iter().map(|e| e.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
