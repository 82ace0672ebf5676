//! Echo synthesis at the post-OFDM sampled level.
//!
//! Two representations of the received grid are provided. [`RxFrame`] holds
//! every sample explicitly. [`FactoredEcho`] holds only the statistics the
//! estimator consumes, drawn from their exact joint distribution, which is
//! several hundred times cheaper and is what the Monte Carlo engine uses.

use std::io::{self, Read, Write};

use num_complex::Complex;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::ModelError;
use crate::geom::Vec2;
use crate::observation::{quadratic_form, EchoObservation};
use crate::scalar::{count, lit, Real};
use crate::scenario::{BistaticGeometry, SystemParams, SPEED_OF_LIGHT};
use crate::signal::{inner, steering_elements, Beamformer, QpskGrid};

/// Per-user echo parameters at one receiver and epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoParams<T> {
    pub h: Complex<T>,
    /// True departure angle at the transmit array.
    pub theta_rad: T,
    /// True arrival angle at the receive array.
    pub phi_rad: T,
    pub tau_s: T,
    pub doppler_hz: T,
}

/// Bistatic radar equation magnitude with a uniform random phase.
pub fn reflection_coefficient<T: Real, R: Rng + ?Sized>(
    d1_m: T,
    d2_m: T,
    wavelength_m: T,
    rcs_m2: T,
    rng: &mut R,
) -> Complex<T> {
    let phase = lit::<T>(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    Complex::from_polar(reflection_magnitude(d1_m, d2_m, wavelength_m, rcs_m2), phase)
}

/// `|h| = sqrt(lambda^2 rcs / ((4 pi)^3 d1^2 d2^2))`.
pub fn reflection_magnitude<T: Real>(d1_m: T, d2_m: T, wavelength_m: T, rcs_m2: T) -> T {
    let four_pi = lit::<T>(4.0) * T::PI();
    (wavelength_m * wavelength_m * rcs_m2 / (four_pi * four_pi * four_pi)).sqrt() / (d1_m * d2_m)
}

/// Doppler shift `-(1/lambda) d(sum range)/dt`, positive while the path shortens.
pub fn bistatic_doppler<T: Real>(
    velocity: Vec2<T>,
    target: Vec2<T>,
    tx: Vec2<T>,
    rx: Vec2<T>,
    wavelength_m: T,
) -> T {
    let range_rate = [tx, rx]
        .iter()
        .map(|node| {
            (target - *node)
                .unit()
                .map_or(T::zero(), |u| velocity.dot(u))
        })
        .fold(T::zero(), |a, b| a + b);
    -range_rate / wavelength_m
}

/// Assembles the echo parameters from exact geometry; `h` is drawn here.
pub fn echo_params<T: Real, R: Rng + ?Sized>(
    geometry: &BistaticGeometry<T>,
    doppler_hz: T,
    params: &SystemParams<T>,
    rng: &mut R,
) -> EchoParams<T> {
    EchoParams {
        h: reflection_coefficient(
            geometry.d1_m,
            geometry.d2_m,
            params.wavelength_m(),
            params.rcs_m2,
            rng,
        ),
        theta_rad: geometry.tx_aod_rad,
        phi_rad: geometry.rx_local_aoa_rad,
        tau_s: geometry.sum_range_m / lit(SPEED_OF_LIGHT),
        doppler_hz,
    }
}

/// Rejects echoes that break the sampled-grid model: delay past the cyclic
/// prefix or Doppler not small against the subcarrier spacing.
pub fn check_model_validity<T: Real>(
    echo: &EchoParams<T>,
    params: &SystemParams<T>,
) -> Result<(), ModelError> {
    if echo.tau_s > params.cyclic_prefix_s * (T::one() + lit(1e-12)) {
        return Err(ModelError::DelayBeyondCyclicPrefix {
            tau_s: echo.tau_s.to_f64().unwrap(),
            t_cp_s: params.cyclic_prefix_s.to_f64().unwrap(),
        });
    }
    if echo.doppler_hz.abs() >= params.subcarrier_spacing_hz / lit(10.0) {
        return Err(ModelError::DopplerTooLarge {
            doppler_hz: echo.doppler_hz.to_f64().unwrap(),
        });
    }
    Ok(())
}

/// Delay and Doppler phase `exp(j 2 pi (n T_o gamma - m df tau))`, row-major over `(n, m)`.
pub fn delay_doppler_phases<T: Real>(
    tau_s: T,
    doppler_hz: T,
    params: &SystemParams<T>,
) -> Vec<Complex<T>> {
    let two_pi = T::PI() + T::PI();
    let t_o = params.symbol_period_s();
    let per_symbol: Vec<Complex<T>> = (0..params.n_symbols)
        .map(|n| Complex::from_polar(T::one(), two_pi * count::<T>(n) * t_o * doppler_hz))
        .collect();
    let per_subcarrier: Vec<Complex<T>> = (0..params.n_subcarriers)
        .map(|m| {
            Complex::from_polar(
                T::one(),
                -two_pi * count::<T>(m) * params.subcarrier_spacing_hz * tau_s,
            )
        })
        .collect();
    let mut out = Vec::with_capacity(per_symbol.len() * per_subcarrier.len());
    for s in &per_symbol {
        out.extend(per_subcarrier.iter().map(|c| *s * *c));
    }
    out
}

/// Circular complex Gaussian sample with total variance `variance`.
pub fn complex_normal<T: Real, R: Rng + ?Sized>(variance: T, rng: &mut R) -> Complex<T> {
    let s = (variance / lit(2.0)).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(lit::<T>(re) * s, lit::<T>(im) * s)
}

/// Sampled echo grid at one receiver: `N_r` complex samples per `(n, m)`.
///
/// Sample `i` of snapshot `(n, m)` is stored at `(n * M + m) * N_r + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RxFrame<T> {
    pub n_rx: usize,
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub samples: Vec<Complex<T>>,
    pub epoch_index: usize,
    pub receiver_index: usize,
}

impl<T: Real> RxFrame<T> {
    pub fn zeros(n_rx: usize, n_symbols: usize, n_subcarriers: usize) -> Self {
        Self {
            n_rx,
            n_symbols,
            n_subcarriers,
            samples: vec![Complex::new(T::zero(), T::zero()); n_rx * n_symbols * n_subcarriers],
            epoch_index: 0,
            receiver_index: 0,
        }
    }

    pub fn snapshot(&self, n: usize, m: usize) -> &[Complex<T>] {
        let start = (n * self.n_subcarriers + m) * self.n_rx;
        &self.samples[start..start + self.n_rx]
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &[Complex<T>]> {
        self.samples.chunks_exact(self.n_rx)
    }
}

impl<T: Real> EchoObservation<T> for RxFrame<T> {
    fn n_channels(&self) -> usize {
        self.n_rx
    }

    fn grid_dims(&self) -> (usize, usize) {
        (self.n_symbols, self.n_subcarriers)
    }

    fn covariance_matrix(&self) -> Vec<Complex<T>> {
        let n = self.n_rx;
        let mut acc = vec![Complex::new(T::zero(), T::zero()); n * n];
        for y in self.snapshots() {
            for i in 0..n {
                let yi = y[i];
                let row = &mut acc[i * n..(i + 1) * n];
                for j in i..n {
                    row[j] = row[j] + yi * y[j].conj();
                }
            }
        }
        let scale = T::one() / count::<T>(self.n_symbols * self.n_subcarriers);
        for i in 0..n {
            for j in i..n {
                let v = acc[i * n + j] * scale;
                acc[i * n + j] = v;
                acc[j * n + i] = v.conj();
            }
            acc[i * n + i].im = T::zero();
        }
        acc
    }

    fn beamform(&self, w: &[Complex<T>]) -> Vec<Complex<T>> {
        self.snapshots().map(|y| inner(w, y)).collect()
    }
}

/// One user's contribution to a frame.
#[derive(Debug, Clone, Copy)]
pub struct UserEcho<'a, T> {
    pub echo: EchoParams<T>,
    pub qpsk: &'a QpskGrid<T>,
    pub tx_beam: &'a Beamformer<T>,
}

/// Evaluates the sampled echo model. Each user's echo carries its own
/// symbols through `a(theta_k)^H f(theta_hat_k)`; with `cross_gain` it also
/// carries every other user's symbols through `a(theta_k)^H f(theta_hat_l)`.
/// `rng = None` gives a noiseless frame.
pub fn synthesize_rx_frame<T: Real>(
    users: &[UserEcho<'_, T>],
    params: &SystemParams<T>,
    cross_gain: bool,
    rng: Option<&mut dyn RngCore>,
    epoch_index: usize,
    receiver_index: usize,
) -> Result<RxFrame<T>, ModelError> {
    let (n_sym, n_sc, n_rx) = (params.n_symbols, params.n_subcarriers, params.n_rx_antennas);
    for u in users {
        check_model_validity(&u.echo, params)?;
        if u.qpsk.n_symbols != n_sym || u.qpsk.n_subcarriers != n_sc {
            return Err(ModelError::Dimensions("symbol grid does not match N x M"));
        }
        if u.tx_beam.weights.len() != params.n_tx_antennas {
            return Err(ModelError::Dimensions("transmit beam length is not N_t"));
        }
    }
    let mut frame = RxFrame::zeros(n_rx, n_sym, n_sc);
    frame.epoch_index = epoch_index;
    frame.receiver_index = receiver_index;
    for (k, u) in users.iter().enumerate() {
        let b = steering_elements(u.echo.phi_rad, n_rx);
        let a = steering_elements(u.echo.theta_rad, params.n_tx_antennas);
        let gains: Vec<(usize, Complex<T>)> = users
            .iter()
            .enumerate()
            .filter(|(l, _)| cross_gain || *l == k)
            .map(|(l, other)| (l, u.echo.h * inner(&a, &other.tx_beam.weights)))
            .collect();
        let phases = delay_doppler_phases(u.echo.tau_s, u.echo.doppler_hz, params);
        for (re, y) in frame.samples.chunks_exact_mut(n_rx).enumerate() {
            let data = gains
                .iter()
                .fold(Complex::new(T::zero(), T::zero()), |acc, (l, g)| {
                    acc + *g * users[*l].qpsk.symbols[re]
                });
            let s = data * phases[re];
            for (yi, bi) in y.iter_mut().zip(&b) {
                *yi = *yi + *bi * s;
            }
        }
    }
    if let Some(rng) = rng {
        let var = params.noise_variance_w();
        for y in frame.samples.iter_mut() {
            *y = *y + complex_normal(var, rng);
        }
    }
    Ok(frame)
}

/// Writes a frame as a little-endian binary dump: three `u32` values
/// `N_r, N, M`, then every sample as two `f32` values (real, imaginary) in
/// the frame's storage order.
pub fn write_frame_dump<T: Real, W: Write>(frame: &RxFrame<T>, mut out: W) -> io::Result<()> {
    for d in [frame.n_rx, frame.n_symbols, frame.n_subcarriers] {
        let d = u32::try_from(d).map_err(|_| io::Error::other("dimension exceeds u32"))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(frame.samples.len() * 8);
    for s in &frame.samples {
        buf.extend_from_slice(&s.re.to_f32().unwrap().to_le_bytes());
        buf.extend_from_slice(&s.im.to_f32().unwrap().to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_frame_dump<R: Read>(mut input: R) -> io::Result<RxFrame<f32>> {
    let mut header = [0u8; 12];
    input.read_exact(&mut header)?;
    let dim = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (n_rx, n_symbols, n_subcarriers) = (dim(0), dim(1), dim(2));
    let total = n_rx
        .checked_mul(n_symbols)
        .and_then(|x| x.checked_mul(n_subcarriers))
        .ok_or_else(|| io::Error::other("dimensions overflow"))?;
    let mut body = vec![0u8; total * 8];
    input.read_exact(&mut body)?;
    let samples = body
        .chunks_exact(8)
        .map(|c| {
            Complex::new(
                f32::from_le_bytes(c[0..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..8].try_into().unwrap()),
            )
        })
        .collect();
    Ok(RxFrame {
        n_rx,
        n_symbols,
        n_subcarriers,
        samples,
        epoch_index: 0,
        receiver_index: 0,
    })
}

/// Single-user echo shape across the grid, `p[n, m] = zeta[n, m] exp(j 2 pi (n T_o gamma - m df tau))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoPattern<T> {
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub values: Vec<Complex<T>>,
    pub norm: T,
}

impl<T: Real> EchoPattern<T> {
    pub fn new(qpsk: &QpskGrid<T>, tau_s: T, doppler_hz: T, params: &SystemParams<T>) -> Self {
        let phases = delay_doppler_phases(tau_s, doppler_hz, params);
        let values: Vec<Complex<T>> = qpsk
            .symbols
            .iter()
            .zip(&phases)
            .map(|(z, p)| *z * *p)
            .collect();
        let norm = values
            .iter()
            .fold(T::zero(), |a, v| a + v.norm_sqr())
            .sqrt();
        Self {
            n_symbols: qpsk.n_symbols,
            n_subcarriers: qpsk.n_subcarriers,
            values,
            norm,
        }
    }
}

/// Noise of one frame reduced to the parts the estimator can see.
///
/// Write the noise as an `N_r x NM` matrix `Z` and let `u = conj(p)/|p|`.
/// `along = Z u` is white with variance `sigma^2`; the remainder
/// `Z (I - u u^H)` enters the covariance only through its Gram matrix, a
/// complex Wishart matrix with `NM - 1` degrees of freedom independent of
/// `along`. Any beamformed projection `w^H Z (I - u u^H)` has squared norm
/// `w^H G w` and, by rotational invariance, a direction uniform on the
/// sphere orthogonal to `p` and independent of `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<T> {
    pub along: Vec<Complex<T>>,
    /// `Z_perp Z_perp^H`, row-major, not normalized by `NM`.
    pub gram_perp: Vec<Complex<T>>,
    /// Unit vector over the grid, orthogonal to the pattern.
    pub direction_perp: Vec<Complex<T>>,
}

impl<T: Real> NoiseDraw<T> {
    pub fn zero(n_rx: usize, n_re: usize) -> Self {
        let z = Complex::new(T::zero(), T::zero());
        Self {
            along: vec![z; n_rx],
            gram_perp: vec![z; n_rx * n_rx],
            direction_perp: vec![z; n_re],
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        pattern: &EchoPattern<T>,
        n_rx: usize,
        noise_variance: T,
        rng: &mut R,
    ) -> Self {
        let n_re = pattern.values.len();
        let along = (0..n_rx)
            .map(|_| complex_normal(noise_variance, rng))
            .collect();
        let gram_perp = complex_wishart(n_rx, n_re - 1, noise_variance, rng);
        let mut direction: Vec<Complex<T>> = (0..n_re)
            .map(|_| complex_normal(T::one(), rng))
            .collect();
        let p2 = pattern.norm * pattern.norm;
        if p2 > T::zero() {
            let proj = inner(&pattern.values, &direction) / p2;
            for (d, p) in direction.iter_mut().zip(&pattern.values) {
                *d = *d - *p * proj;
            }
        }
        let norm = direction
            .iter()
            .fold(T::zero(), |a, v| a + v.norm_sqr())
            .sqrt();
        for d in direction.iter_mut() {
            *d = *d / norm;
        }
        Self {
            along,
            gram_perp,
            direction_perp: direction,
        }
    }
}

/// `sigma^2 L L^H` with the complex Bartlett factor `L`: squared diagonal
/// entries are Gamma(dof - i) and the strictly lower part is standard
/// circular Gaussian.
pub fn complex_wishart<T: Real, R: Rng + ?Sized>(
    p: usize,
    dof: usize,
    scale: T,
    rng: &mut R,
) -> Vec<Complex<T>> {
    assert!(dof >= p, "Wishart needs at least as many degrees of freedom as dimensions");
    let zero = Complex::new(T::zero(), T::zero());
    let mut l = vec![zero; p * p];
    for i in 0..p {
        let g: f64 = Gamma::new((dof - i) as f64, 1.0)
            .expect("positive shape")
            .sample(rng);
        l[i * p + i] = Complex::new(lit(g.sqrt()), T::zero());
        for j in 0..i {
            l[i * p + j] = complex_normal(T::one(), rng);
        }
    }
    let mut w = vec![zero; p * p];
    for i in 0..p {
        for j in 0..=i {
            // (L L^H)_{ij} = sum_k L_ik conj(L_jk), k <= min(i, j) = j
            let mut s = zero;
            for k in 0..=j {
                s = s + l[i * p + k] * l[j * p + k].conj();
            }
            s = s * scale;
            w[i * p + j] = s;
            w[j * p + i] = s.conj();
        }
        w[i * p + i].im = T::zero();
    }
    w
}

/// Single-user received grid in factored form:
/// `y[n, m] = amplitude * p[n, m] * b + z[n, m]`, where `amplitude` is
/// `h a(theta)^H f(theta_hat)` and the noise is represented by a [`NoiseDraw`].
#[derive(Debug, Clone, Copy)]
pub struct FactoredEcho<'a, T> {
    pub pattern: &'a EchoPattern<T>,
    pub noise: &'a NoiseDraw<T>,
    pub steering: &'a [Complex<T>],
    pub amplitude: Complex<T>,
}

impl<T: Real> FactoredEcho<'_, T> {
    /// `Y u = amplitude |p| b + along`.
    fn along_signal(&self) -> Vec<Complex<T>> {
        let a = self.amplitude * self.pattern.norm;
        self.steering
            .iter()
            .zip(&self.noise.along)
            .map(|(b, c)| *b * a + *c)
            .collect()
    }
}

impl<T: Real> EchoObservation<T> for FactoredEcho<'_, T> {
    fn n_channels(&self) -> usize {
        self.steering.len()
    }

    fn grid_dims(&self) -> (usize, usize) {
        (self.pattern.n_symbols, self.pattern.n_subcarriers)
    }

    fn covariance_matrix(&self) -> Vec<Complex<T>> {
        let n = self.steering.len();
        let v = self.along_signal();
        let scale = T::one() / count::<T>(self.pattern.values.len());
        let mut r = vec![Complex::new(T::zero(), T::zero()); n * n];
        for i in 0..n {
            for j in i..n {
                let e = (v[i] * v[j].conj() + self.noise.gram_perp[i * n + j]) * scale;
                r[i * n + j] = e;
                r[j * n + i] = e.conj();
            }
            r[i * n + i].im = T::zero();
        }
        r
    }

    fn beamform(&self, w: &[Complex<T>]) -> Vec<Complex<T>> {
        let coherent = inner(w, &self.along_signal()) / self.pattern.norm;
        let spread = quadratic_form(&self.noise.gram_perp, w).max(T::zero()).sqrt();
        self.pattern
            .values
            .iter()
            .zip(&self.noise.direction_perp)
            .map(|(p, d)| *p * coherent + *d * spread)
            .collect()
    }
}
