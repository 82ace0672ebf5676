//! Per-receiver estimation: covariance and eigenstructure, MUSIC arrival
//! angle, receive beamforming with data removal, delay-Doppler peak search
//! and the bistatic position solve.

use std::borrow::Cow;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::EstimateError;
use crate::error_model::{
    crlb_aoa_variant, crlb_delay, estimate_snrs, jacobian, position_covariance,
    MeasurementCovariance, SnrEstimates,
};
use crate::geom::{Mat2, Vec2};
use crate::observation::EchoObservation;
use crate::scalar::{count, lit, Real};
use crate::scenario::{AoaCrlbVariant, Node, SystemParams, SPEED_OF_LIGHT};
use crate::signal::{inner, steering_elements, QpskGrid};

/// `(1/NM) sum y y^H` as a dense Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance<T> {
    pub n: usize,
    pub matrix: Vec<Complex<T>>,
    pub n_snapshots: usize,
}

pub fn sample_covariance<T: Real, O: EchoObservation<T> + ?Sized>(obs: &O) -> SampleCovariance<T> {
    let (n_sym, n_sc) = obs.grid_dims();
    SampleCovariance {
        n: obs.n_channels(),
        matrix: obs.covariance_matrix(),
        n_snapshots: n_sym * n_sc,
    }
}

impl<T: Real> SampleCovariance<T> {
    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.matrix[i * self.n + j]
    }

    pub fn trace(&self) -> T {
        (0..self.n).fold(T::zero(), |a, i| a + self.get(i, i).re)
    }
}

/// Eigenpairs sorted by descending eigenvalue; `vectors` holds the
/// eigenvectors as columns of a row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition<T> {
    pub n: usize,
    pub values: Vec<T>,
    pub vectors: Vec<Complex<T>>,
}

impl<T: Real> EigenDecomposition<T> {
    pub fn vector(&self, k: usize) -> Vec<Complex<T>> {
        (0..self.n).map(|i| self.vectors[i * self.n + k]).collect()
    }
}

/// Largest `|A - A^H|` entry relative to the largest `|A|` entry.
pub fn hermitian_asymmetry<T: Real>(n: usize, a: &[Complex<T>]) -> T {
    let mut scale = T::zero();
    let mut worst = T::zero();
    for i in 0..n {
        for j in 0..n {
            scale = scale.max(a[i * n + j].norm());
            worst = worst.max((a[i * n + j] - a[j * n + i].conj()).norm());
        }
    }
    if scale > T::zero() {
        worst / scale
    } else {
        T::zero()
    }
}

pub fn hermitian_eigendecomposition<T: Real>(
    n: usize,
    matrix: &[Complex<T>],
) -> Result<EigenDecomposition<T>, EstimateError> {
    let asym = hermitian_asymmetry(n, matrix);
    if asym > lit(1e-10) {
        return Err(EstimateError::NotHermitian(asym.to_f64().unwrap()));
    }
    if matrix.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(EstimateError::NonFinite);
    }
    let (values, vectors) = T::hermitian_eigh(n, matrix);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let mut sorted = vec![Complex::new(T::zero(), T::zero()); n * n];
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            sorted[i * n + dst] = vectors[i * n + src];
        }
    }
    Ok(EigenDecomposition {
        n,
        values: order.iter().map(|&k| values[k]).collect(),
        vectors: sorted,
    })
}

/// Leading eigenpairs of a Hermitian matrix and the mean of the remaining
/// eigenvalues, which is all MUSIC and the SNR estimates consume.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSubspace<T> {
    pub values: Vec<T>,
    pub vectors: Vec<Vec<Complex<T>>>,
    /// Mean of the `n - k` trailing eigenvalues, from the trace.
    pub noise_floor: T,
    pub n: usize,
}

impl<T: Real> SignalSubspace<T> {
    /// Eigenvalues in descending order with the trailing ones replaced by their mean.
    pub fn spectrum(&self) -> Vec<T> {
        let mut v = self.values.clone();
        v.resize(self.n, self.noise_floor);
        v
    }

    fn from_full(e: &EigenDecomposition<T>, k: usize) -> Self {
        let tail = &e.values[k..];
        Self {
            values: e.values[..k].to_vec(),
            vectors: (0..k).map(|j| e.vector(j)).collect(),
            noise_floor: tail.iter().fold(T::zero(), |a, v| a + *v) / count::<T>(tail.len()),
            n: e.n,
        }
    }
}

fn orthonormalize<T: Real>(vs: &mut [Vec<Complex<T>>]) -> bool {
    for j in 0..vs.len() {
        let (done, rest) = vs.split_at_mut(j);
        let v = &mut rest[0];
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for u in done.iter() {
                let c = inner(u, v);
                for (x, y) in v.iter_mut().zip(u) {
                    *x = *x - *y * c;
                }
            }
        }
        let norm = v.iter().fold(T::zero(), |a, x| a + x.norm_sqr()).sqrt();
        if !(norm > T::zero()) {
            return false;
        }
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
    true
}

/// Top-`k` eigenpairs by subspace iteration with Rayleigh-Ritz extraction,
/// started from the `k` strongest columns. Falls back to the full
/// decomposition when the iteration stalls, as it does without a spectral gap.
pub fn signal_subspace<T: Real>(
    n: usize,
    matrix: &[Complex<T>],
    k: usize,
) -> Result<SignalSubspace<T>, EstimateError> {
    let asym = hermitian_asymmetry(n, matrix);
    if asym > lit(1e-10) {
        return Err(EstimateError::NotHermitian(asym.to_f64().unwrap()));
    }
    if matrix.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(EstimateError::NonFinite);
    }
    if k == 0 || k >= n {
        return Err(EstimateError::NoNoiseFloor);
    }
    let full = || hermitian_eigendecomposition(n, matrix).map(|e| SignalSubspace::from_full(&e, k));
    let apply = |v: &[Complex<T>]| crate::observation::mat_vec(matrix, n, n, v);
    let trace = (0..n).fold(T::zero(), |a, i| a + matrix[i * n + i].re);

    let mut cols: Vec<usize> = (0..n).collect();
    let col_norm = |c: usize| (0..n).fold(T::zero(), |a, i| a + matrix[i * n + c].norm_sqr());
    cols.sort_by(|&a, &b| col_norm(b).partial_cmp(&col_norm(a)).unwrap().then(a.cmp(&b)));
    let mut x: Vec<Vec<Complex<T>>> = cols[..k]
        .iter()
        .map(|&c| (0..n).map(|i| matrix[i * n + c]).collect())
        .collect();
    if !orthonormalize(&mut x) {
        return full();
    }
    let tol = lit::<T>(1e-11);
    for _ in 0..500 {
        let y: Vec<Vec<Complex<T>>> = x.iter().map(|v| apply(v)).collect();
        // Rayleigh-Ritz on span(x)
        let mut h = vec![Complex::new(T::zero(), T::zero()); k * k];
        for a in 0..k {
            for b in 0..k {
                h[a * k + b] = inner(&x[a], &y[b]);
            }
        }
        for a in 0..k {
            for b in a + 1..k {
                let avg = (h[a * k + b] + h[b * k + a].conj()) * lit::<T>(0.5);
                h[a * k + b] = avg;
                h[b * k + a] = avg.conj();
            }
            h[a * k + a].im = T::zero();
        }
        let (theta, q) = T::hermitian_eigh(k, &h);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| theta[b].partial_cmp(&theta[a]).unwrap().then(a.cmp(&b)));
        let combine = |basis: &[Vec<Complex<T>>], j: usize| -> Vec<Complex<T>> {
            let mut out = vec![Complex::new(T::zero(), T::zero()); n];
            for (a, u) in basis.iter().enumerate() {
                let c = q[a * k + j];
                for (o, e) in out.iter_mut().zip(u) {
                    *o = *o + *e * c;
                }
            }
            out
        };
        let ritz: Vec<_> = order.iter().map(|&j| combine(&x, j)).collect();
        let images: Vec<_> = order.iter().map(|&j| combine(&y, j)).collect();
        let values: Vec<T> = order.iter().map(|&j| theta[j]).collect();
        let scale = values[0].abs().max(T::min_positive_value());
        let residual = ritz
            .iter()
            .zip(&images)
            .zip(&values)
            .map(|((v, av), l)| {
                v.iter()
                    .zip(av)
                    .fold(T::zero(), |a, (vi, ai)| a + (*ai - *vi * *l).norm_sqr())
                    .sqrt()
            })
            .fold(T::zero(), |a, r| a.max(r));
        if residual <= tol * scale {
            let top = values.iter().fold(T::zero(), |a, v| a + *v);
            return Ok(SignalSubspace {
                noise_floor: (trace - top) / count::<T>(n - k),
                values,
                vectors: ritz,
                n,
            });
        }
        x = images;
        if !orthonormalize(&mut x) {
            return full();
        }
    }
    full()
}

/// Search angles over the open interval `(-90, 90)` degrees with their
/// antenna-domain steering vectors precomputed.
#[derive(Debug, Clone)]
pub struct SteeringGrid<T> {
    pub angles: Vec<T>,
    pub step_rad: T,
    pub n_rx: usize,
    steering: Vec<Complex<T>>,
}

impl<T: Real> SteeringGrid<T> {
    pub fn new(step_rad: T, n_rx: usize) -> Self {
        let half = T::FRAC_PI_2();
        let n_steps = (T::PI() / step_rad).floor().to_usize().unwrap_or(0);
        let angles: Vec<T> = (1..n_steps)
            .map(|k| -half + step_rad * count::<T>(k))
            .filter(|a| *a < half)
            .collect();
        let mut steering = Vec::with_capacity(angles.len() * n_rx);
        for a in &angles {
            steering.extend(steering_elements(*a, n_rx));
        }
        Self {
            angles,
            step_rad,
            n_rx,
            steering,
        }
    }

    pub fn from_degrees(step_deg: f64, n_rx: usize) -> Self {
        Self::new(lit(step_deg.to_radians()), n_rx)
    }

    pub fn steering(&self, k: usize) -> &[Complex<T>] {
        &self.steering[k * self.n_rx..(k + 1) * self.n_rx]
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MusicSettings<T> {
    pub n_sources: usize,
    /// Minimum ratio of the median null-spectrum level to the chosen peak's level.
    pub min_dominance: T,
    /// Grid points whose channel-space steering energy falls below this
    /// fraction of the maximum are excluded from the search.
    pub min_steering_energy: T,
    /// Grid points per step of the first pass; 1 scans every point.
    pub coarse_stride: usize,
}

impl<T: Real> Default for MusicSettings<T> {
    fn default() -> Self {
        Self {
            n_sources: 1,
            min_dominance: lit(2.0),
            min_steering_energy: lit(0.5),
            coarse_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MusicPeak<T> {
    pub angle_rad: T,
    /// Normalized null-spectrum level `|E_n^H b|^2 / |b|^2` at the grid peak.
    pub null_level: T,
    pub dominance: T,
}

/// Null-spectrum levels evaluated on demand.
struct NullSpectrum<'g, T, F> {
    signal: &'g [Vec<Complex<T>>],
    grid: &'g SteeringGrid<T>,
    project: F,
    level: Vec<T>,
    energy: Vec<T>,
}

impl<T: Real, F> NullSpectrum<'_, T, F>
where
    F: for<'a> Fn(&'a [Complex<T>]) -> Cow<'a, [Complex<T>]>,
{
    fn eval(&mut self, k: usize) -> T {
        if self.energy[k] < T::zero() {
            let b = (self.project)(self.grid.steering(k));
            let nb = b.iter().fold(T::zero(), |a, v| a + v.norm_sqr());
            let s = self
                .signal
                .iter()
                .fold(T::zero(), |a, e| a + inner(e, &b).norm_sqr());
            self.energy[k] = nb;
            self.level[k] = if nb > T::zero() { (nb - s) / nb } else { T::one() };
        }
        self.level[k]
    }
}

/// MUSIC search given the signal subspace in channel space.
///
/// The pseudo-spectrum `1/|E_n^H b|^2` is handled through its normalized
/// reciprocal `D = 1 - sum_s |e_s^H b|^2 / |b|^2`, which is smooth at the
/// peaks, so the 3-point quadratic refinement is applied to `D`. Among the
/// `n_sources` deepest local minima the one nearest `predicted_rad` wins,
/// ties going to the deeper one.
///
/// With `coarse_stride > 1` minima are located on every `coarse_stride`-th
/// grid point, and each of the deepest few is then settled on the full grid
/// within one coarse step. The dominance median is taken over the coarse pass.
pub fn music_search<T, F>(
    signal: &[Vec<Complex<T>>],
    grid: &SteeringGrid<T>,
    project: F,
    predicted_rad: T,
    settings: &MusicSettings<T>,
) -> Result<MusicPeak<T>, EstimateError>
where
    T: Real,
    F: for<'a> Fn(&'a [Complex<T>]) -> Cow<'a, [Complex<T>]>,
{
    let n = grid.len();
    if n < 3 || signal.is_empty() {
        return Err(EstimateError::NoPeak);
    }
    let stride = settings.coarse_stride.clamp(1, n - 1);
    let mut spec = NullSpectrum {
        signal,
        grid,
        project,
        level: vec![T::one(); n],
        energy: vec![-T::one(); n],
    };
    let mut coarse: Vec<usize> = (0..n).step_by(stride).collect();
    if *coarse.last().unwrap() != n - 1 {
        coarse.push(n - 1);
    }
    for &k in &coarse {
        spec.eval(k);
    }
    let e_max = coarse.iter().fold(T::zero(), |a, &k| a.max(spec.energy[k]));
    let threshold = settings.min_steering_energy * e_max;
    let usable = |spec: &NullSpectrum<'_, T, F>, k: usize| {
        spec.energy[k] >= threshold && spec.energy[k] > T::zero()
    };

    let mut minima: Vec<usize> = (0..coarse.len())
        .filter(|&i| {
            let k = coarse[i];
            let lower = |j: usize| !usable(&spec, coarse[j]) || spec.level[k] < spec.level[coarse[j]];
            let lower_eq =
                |j: usize| !usable(&spec, coarse[j]) || spec.level[k] <= spec.level[coarse[j]];
            usable(&spec, k) && (i == 0 || lower(i - 1)) && (i + 1 == coarse.len() || lower_eq(i + 1))
        })
        .map(|i| coarse[i])
        .collect();
    if minima.is_empty() {
        return Err(EstimateError::NoPeak);
    }
    let by_level = |spec: &NullSpectrum<'_, T, F>, v: &mut Vec<usize>| {
        v.sort_by(|&a, &b| {
            spec.level[a]
                .partial_cmp(&spec.level[b])
                .unwrap()
                .then(a.cmp(&b))
        })
    };
    by_level(&spec, &mut minima);
    let keep = settings.n_sources.max(1);
    if stride > 1 {
        minima.truncate(keep + 2);
        for k in minima.iter_mut() {
            let lo = k.saturating_sub(stride - 1);
            let hi = (*k + stride - 1).min(n - 1);
            let mut best = *k;
            for j in lo..=hi {
                spec.eval(j);
                if usable(&spec, j) && spec.level[j] < spec.level[best] {
                    best = j;
                }
            }
            *k = best;
        }
        minima.dedup();
        by_level(&spec, &mut minima);
        minima.dedup();
    }
    minima.truncate(keep);
    let best = *minima
        .iter()
        .min_by(|&&a, &&b| {
            let da = (grid.angles[a] - predicted_rad).abs();
            let db = (grid.angles[b] - predicted_rad).abs();
            da.partial_cmp(&db)
                .unwrap()
                .then(spec.level[a].partial_cmp(&spec.level[b]).unwrap())
        })
        .unwrap();

    let mut usable_levels: Vec<T> = coarse
        .iter()
        .filter(|&&k| usable(&spec, k))
        .map(|&k| spec.level[k])
        .collect();
    usable_levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = usable_levels[usable_levels.len() / 2];
    let floor = spec.level[best].max(T::min_positive_value());
    let dominance = median / floor;
    if !(dominance >= settings.min_dominance) {
        return Err(EstimateError::NoPeak);
    }
    let mut angle = grid.angles[best];
    if best > 0 && best + 1 < n {
        spec.eval(best - 1);
        spec.eval(best + 1);
        if usable(&spec, best - 1) && usable(&spec, best + 1) {
            let (l, c, r) = (spec.level[best - 1], spec.level[best], spec.level[best + 1]);
            let curvature = l - c - c + r;
            if curvature > T::zero() {
                let half = lit::<T>(0.5);
                let delta = (half * (l - r) / curvature).max(-half).min(half);
                angle = angle + delta * grid.step_rad;
            }
        }
    }
    Ok(MusicPeak {
        angle_rad: angle,
        null_level: spec.level[best],
        dominance,
    })
}

/// Pins a closure to the higher-ranked signature [`music_search`] expects.
fn projector<T: Clone, F>(f: F) -> F
where
    F: for<'a> Fn(&'a [Complex<T>]) -> Cow<'a, [Complex<T>]>,
{
    f
}

/// MUSIC on a fully digital covariance.
pub fn music_aoa<T: Real>(
    cov: &SampleCovariance<T>,
    n_sources: usize,
    grid: &SteeringGrid<T>,
    predicted_rad: T,
) -> Result<T, EstimateError> {
    let eig = hermitian_eigendecomposition(cov.n, &cov.matrix)?;
    let signal: Vec<_> = (0..n_sources.min(cov.n)).map(|k| eig.vector(k)).collect();
    let settings = MusicSettings {
        n_sources,
        ..MusicSettings::default()
    };
    music_search(&signal, grid, projector(|b| Cow::Borrowed(b)), predicted_rad, &settings).map(|p| p.angle_rad)
}

/// `r[n, m] = y_bf[n, m] / zeta[n, m]`.
pub fn equalize<T: Real>(beamformed: &[Complex<T>], qpsk: &QpskGrid<T>) -> Vec<Complex<T>> {
    beamformed
        .iter()
        .zip(&qpsk.symbols)
        .map(|(y, z)| *y / *z)
        .collect()
}

/// Receive-beamforms an observation and removes the known data.
pub fn equalized_grid<T: Real, O: EchoObservation<T> + ?Sized>(
    obs: &O,
    w: &[Complex<T>],
    qpsk: &QpskGrid<T>,
) -> Vec<Complex<T>> {
    equalize(&obs.beamform(w), qpsk)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayDopplerEstimate<T> {
    pub tau_hat_s: T,
    pub gamma_hat_hz: T,
    pub peak_power: T,
    pub delay_bin: usize,
    /// Signed Doppler bin after negative-frequency wrapping.
    pub doppler_bin: i64,
    /// Peak on the last delay bin (a wrapped negative delay) or the Nyquist Doppler bin.
    pub at_edge: bool,
}

/// 2-D periodogram over an `N x M` equalized grid with oversampling `S`:
/// length-`SM` inverse transforms across subcarriers, then length-`SN`
/// forward transforms across symbols.
pub struct DelayDopplerProcessor<T: Real> {
    n_symbols: usize,
    n_subcarriers: usize,
    oversampling: usize,
    delay_fft: Arc<dyn Fft<T>>,
    doppler_fft: Arc<dyn Fft<T>>,
    rows: Vec<Complex<T>>,
    column: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Real> DelayDopplerProcessor<T> {
    pub fn new(n_symbols: usize, n_subcarriers: usize, oversampling: usize) -> Self {
        let s = oversampling.max(1);
        let mut planner = FftPlanner::new();
        let delay_fft = planner.plan_fft_inverse(s * n_subcarriers);
        let doppler_fft = planner.plan_fft_forward(s * n_symbols);
        let scratch_len = delay_fft
            .get_inplace_scratch_len()
            .max(doppler_fft.get_inplace_scratch_len());
        let zero = Complex::new(T::zero(), T::zero());
        Self {
            n_symbols,
            n_subcarriers,
            oversampling: s,
            delay_fft,
            doppler_fft,
            rows: vec![zero; n_symbols * s * n_subcarriers],
            column: vec![zero; s * n_symbols],
            scratch: vec![zero; scratch_len],
        }
    }

    pub fn estimate(
        &mut self,
        grid: &[Complex<T>],
        subcarrier_spacing_hz: T,
        symbol_period_s: T,
    ) -> DelayDopplerEstimate<T> {
        let (n, m, s) = (self.n_symbols, self.n_subcarriers, self.oversampling);
        let (sm, sn) = (s * m, s * n);
        let zero = Complex::new(T::zero(), T::zero());
        assert_eq!(grid.len(), n * m, "equalized grid has the wrong size");
        for sym in 0..n {
            let row = &mut self.rows[sym * sm..(sym + 1) * sm];
            row[..m].copy_from_slice(&grid[sym * m..(sym + 1) * m]);
            row[m..].fill(zero);
            self.delay_fft.process_with_scratch(row, &mut self.scratch);
        }
        let mut best = (0usize, 0usize, T::neg_infinity());
        for k in 0..sm {
            for sym in 0..n {
                self.column[sym] = self.rows[sym * sm + k];
            }
            self.column[n..].fill(zero);
            self.doppler_fft
                .process_with_scratch(&mut self.column, &mut self.scratch);
            for (l, v) in self.column.iter().enumerate() {
                let p = v.norm_sqr();
                if p > best.2 {
                    best = (k, l, p);
                }
            }
        }
        let (k, l, peak) = best;
        let doppler_bin = if l > sn / 2 { l as i64 - sn as i64 } else { l as i64 };
        let tau = count::<T>(k) / (count::<T>(sm) * subcarrier_spacing_hz);
        let gamma = lit::<T>(doppler_bin as f64) / (count::<T>(sn) * symbol_period_s);
        DelayDopplerEstimate {
            tau_hat_s: tau,
            gamma_hat_hz: gamma,
            peak_power: peak,
            delay_bin: k,
            doppler_bin,
            at_edge: k + 1 == sm || 2 * l == sn,
        }
    }
}

/// Solves the bistatic triangle for the receiver-to-target range and places
/// the target along the estimated arrival direction.
///
/// `d2 = (dR^2 - L^2) / (2 (dR - L cos psi))`, with `psi` the angle at the
/// receiver between the baseline and the estimated arrival direction.
pub fn bistatic_position<T: Real>(
    tau_s: T,
    local_aoa_rad: T,
    rx: &Node<T>,
    tx: Vec2<T>,
) -> Result<(Vec2<T>, T), EstimateError> {
    let sum_range = tau_s * lit(SPEED_OF_LIGHT);
    let to_tx = tx - rx.position;
    let baseline = to_tx.norm();
    if !(sum_range > baseline) {
        return Err(EstimateError::InsideBaseline);
    }
    let dir = Vec2::from_bearing(rx.global_bearing(local_aoa_rad));
    let cos_psi = dir.dot(to_tx) / baseline;
    let denom = sum_range - baseline * cos_psi;
    if !(denom >= lit::<T>(1e-6) * sum_range) {
        return Err(EstimateError::BaselineSingularity);
    }
    let d2 = (sum_range * sum_range - baseline * baseline) / (lit::<T>(2.0) * denom);
    let pos = rx.position + dir.scale(d2);
    if !(pos.x.is_finite() && pos.y.is_finite()) {
        return Err(EstimateError::NonFinite);
    }
    Ok((pos, d2))
}

/// One receiver's position estimate with its estimated error covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate<T> {
    pub receiver_index: usize,
    pub position: Vec2<T>,
    pub aoa_est_rad: T,
    pub tau_est_s: T,
    pub d2_m: T,
    /// `None` when the measurement Jacobian is too ill-conditioned.
    pub covariance: Option<Mat2<T>>,
    pub gdop: Option<T>,
    pub valid: bool,
}

/// Everything fixed about one receiver for the duration of a run.
#[derive(Debug, Clone, Copy)]
pub struct ReceiverSetup<'a, T: Real> {
    pub params: &'a SystemParams<T>,
    pub tx: &'a Node<T>,
    pub rx: &'a Node<T>,
    pub receiver_index: usize,
    pub grid: &'a SteeringGrid<T>,
    pub music: MusicSettings<T>,
    pub aoa_crlb: AoaCrlbVariant,
    pub max_condition: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverOutput<T> {
    pub estimate: PositionEstimate<T>,
    /// `None` when the observation has no noise floor to measure against.
    pub snr: Option<SnrEstimates<T>>,
    pub delay_doppler: DelayDopplerEstimate<T>,
    pub measurement: Option<MeasurementCovariance<T>>,
    /// Unit-norm receive weights in the antenna domain.
    pub rx_weights: Vec<Complex<T>>,
    pub music: MusicPeak<T>,
}

/// Runs the full chain on one observation. An ill-conditioned Jacobian or a
/// zero noise floor yields an estimate without covariance, marked invalid;
/// earlier failures are errors.
pub fn process_receiver<T: Real, O: EchoObservation<T> + ?Sized>(
    obs: &O,
    qpsk: &QpskGrid<T>,
    predicted_aoa_rad: T,
    setup: &ReceiverSetup<'_, T>,
    delay_doppler: &mut DelayDopplerProcessor<T>,
) -> Result<ReceiverOutput<T>, EstimateError> {
    let p = setup.params;
    let n_ch = obs.n_channels();
    let n_sources = setup.music.n_sources;
    if n_sources >= n_ch {
        return Err(EstimateError::NoNoiseFloor);
    }
    let sub = signal_subspace(n_ch, &obs.covariance_matrix(), n_sources)?;
    let music = music_search(
        &sub.vectors,
        setup.grid,
        projector(|b| obs.project_steering(b)),
        predicted_aoa_rad,
        &setup.music,
    )?;
    let phi = music.angle_rad;

    let b = steering_elements(phi, p.n_rx_antennas);
    let b_ch = obs.project_steering(&b);
    let norm = b_ch.iter().fold(T::zero(), |a, v| a + v.norm_sqr()).sqrt();
    if !(norm > T::zero()) {
        return Err(EstimateError::NonFinite);
    }
    let w: Vec<Complex<T>> = b_ch.iter().map(|v| *v / norm).collect();
    let equalized = equalized_grid(obs, &w, qpsk);
    let snr = match estimate_snrs(
        &sub.spectrum(),
        n_sources,
        p.n_rx_antennas,
        &equalized,
        p.tx_power_w,
        p.n_users,
    ) {
        Ok(s) => Some(s),
        // a noise-free observation still locates the target
        Err(EstimateError::NoNoiseFloor) => None,
        Err(e) => return Err(e),
    };
    let dd = delay_doppler.estimate(&equalized, p.subcarrier_spacing_hz, p.symbol_period_s());
    let (position, d2) = bistatic_position(dd.tau_hat_s, phi, setup.rx, setup.tx.position)?;

    let measurement = snr.map(|snr| MeasurementCovariance {
        c_tau: crlb_delay(
            snr.rho1_est,
            p.fft_oversampling,
            p.n_subcarriers,
            p.subcarrier_spacing_hz,
            p.n_symbols,
            p.symbol_period_s(),
        ),
        c_phi: crlb_aoa_variant(
            setup.aoa_crlb,
            snr.rho0_est,
            p.n_symbols,
            p.n_subcarriers,
            n_ch,
            phi,
        ),
    });
    let j = jacobian(position, setup.tx.position, setup.rx.position);
    let cov = measurement.and_then(|m| position_covariance(j, &m, setup.max_condition).ok());
    let rx_weights = obs.lift_weights(&w).into_owned();
    Ok(ReceiverOutput {
        estimate: PositionEstimate {
            receiver_index: setup.receiver_index,
            position,
            aoa_est_rad: phi,
            tau_est_s: dd.tau_hat_s,
            d2_m: d2,
            covariance: cov.map(|c| c.sigma),
            gdop: cov.map(|c| c.gdop),
            valid: cov.is_some(),
        },
        snr,
        delay_doppler: dd,
        measurement,
        rx_weights,
        music,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_rx_frame, EchoParams, RxFrame, UserEcho};
    use crate::scenario::{bistatic_geometry, ScenarioConfig};
    use crate::signal::{generate_qpsk_grid, make_beamformer, BeamKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn outer(b: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let n = b.len();
        let mut r = vec![Complex::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                r[i * n + j] = b[i] * b[j].conj();
            }
        }
        r
    }

    fn cov_of(n: usize, matrix: Vec<Complex<f64>>) -> SampleCovariance<f64> {
        SampleCovariance {
            n,
            matrix,
            n_snapshots: 1,
        }
    }

    /// Cyclic Jacobi for Hermitian matrices; slow but independent of nalgebra.
    fn jacobi_eigenvalues(n: usize, a: &[Complex<f64>]) -> Vec<f64> {
        let mut m = a.to_vec();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i * n + j].norm_sqr())
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[p * n + q];
                    if apq.norm() < 1e-300 {
                        continue;
                    }
                    let app = m[p * n + p].re;
                    let aqq = m[q * n + q].re;
                    let phase = apq / apq.norm();
                    let theta = 0.5 * (2.0 * apq.norm()).atan2(aqq - app);
                    let (c, s) = (theta.cos(), theta.sin());
                    // rotation G acting on columns p, q
                    let gpp = Complex::new(c, 0.0);
                    let gpq = phase * s;
                    let gqp = -phase.conj() * s;
                    let gqq = Complex::new(c, 0.0);
                    for k in 0..n {
                        let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                        m[k * n + p] = mkp * gpp + mkq * gqp;
                        m[k * n + q] = mkp * gpq + mkq * gqq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                        m[p * n + k] = gpp.conj() * mpk + gqp.conj() * mqk;
                        m[q * n + k] = gpq.conj() * mpk + gqq.conj() * mqk;
                    }
                }
            }
        }
        let mut v: Vec<f64> = (0..n).map(|i| m[i * n + i].re).collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex<f64>> {
        let mut a = vec![Complex::new(0.0, 0.0); n * n];
        for i in 0..n {
            a[i * n + i] = Complex::new(rng.random_range(-1.0..1.0), 0.0);
            for j in i + 1..n {
                let v = Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                a[i * n + j] = v;
                a[j * n + i] = v.conj();
            }
        }
        a
    }

    #[test]
    fn eigen_identity_and_rank_one() {
        let n = 64;
        let mut id = vec![Complex::new(0.0f64, 0.0); n * n];
        for i in 0..n {
            id[i * n + i] = Complex::new(1.0, 0.0);
        }
        let e = hermitian_eigendecomposition(n, &id).unwrap();
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let b = steering_elements(0.3, n);
        let e = hermitian_eigendecomposition(n, &outer(&b)).unwrap();
        assert!((e.values[0] - 64.0).abs() < 1e-9);
        assert!(e.values[1..].iter().all(|v| v.abs() < 1e-9));
        let v = e.vector(0);
        assert!((inner(&v, &b).norm() - 8.0).abs() < 1e-9);
    }

    #[test]
    fn eigen_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let a = random_hermitian(8, &mut rng);
            let e = hermitian_eigendecomposition(8, &a).unwrap();
            let oracle = jacobi_eigenvalues(8, &a);
            for (x, y) in e.values.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
            // reconstruction and descending order
            for w in e.values.windows(2) {
                assert!(w[0] >= w[1]);
            }
            let n = 8;
            let mut err = 0.0;
            let mut norm = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let r: Complex<f64> = (0..n)
                        .map(|k| e.vectors[i * n + k] * e.values[k] * e.vectors[j * n + k].conj())
                        .sum();
                    err += (r - a[i * n + j]).norm_sqr();
                    norm += a[i * n + j].norm_sqr();
                }
            }
            assert!(err.sqrt() <= 1e-8 * norm.sqrt());
        }
    }

    fn noisy_rank_one(n: usize, angle: f64, snr: f64, rng: &mut ChaCha8Rng) -> Vec<Complex<f64>> {
        let b = steering_elements(angle, n);
        let w = crate::channel::complex_wishart(n, 4 * n, 1.0 / (4 * n) as f64, rng);
        outer(&b)
            .into_iter()
            .zip(w)
            .map(|(x, y)| x * snr + y)
            .collect()
    }

    #[test]
    fn subspace_iteration_matches_full_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for (k, snr) in [(1usize, 0.03), (1, 0.3), (1, 30.0), (2, 0.5)] {
            let mut r = noisy_rank_one(16, 0.4, snr, &mut rng);
            if k == 2 {
                for (x, y) in r.iter_mut().zip(outer(&steering_elements(-0.5, 16))) {
                    *x += y * snr;
                }
            }
            let full = hermitian_eigendecomposition(16, &r).unwrap();
            let sub = signal_subspace(16, &r, k).unwrap();
            let tail: f64 = full.values[k..].iter().sum::<f64>() / (16 - k) as f64;
            assert!((sub.noise_floor - tail).abs() < 1e-10 * full.values[0]);
            for j in 0..k {
                assert!((sub.values[j] - full.values[j]).abs() < 1e-9 * full.values[0]);
            }
            // same subspace: projector distance
            for j in 0..k {
                let v = &sub.vectors[j];
                let captured: f64 = (0..k).map(|i| inner(&full.vector(i), v).norm_sqr()).sum();
                assert!((captured - 1.0).abs() < 1e-8, "k={k} snr={snr} {captured}");
            }
        }
        // no gap at all: falls back and still reports the exact floor
        let mut id = vec![Complex::new(0.0f64, 0.0); 9];
        for i in 0..3 {
            id[i * 4] = Complex::new(2.0, 0.0);
        }
        let sub = signal_subspace(3, &id, 1).unwrap();
        assert!((sub.values[0] - 2.0).abs() < 1e-12 && (sub.noise_floor - 2.0).abs() < 1e-12);
    }

    #[test]
    fn coarse_music_agrees_with_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 64;
        let grid = SteeringGrid::from_degrees(0.02, n);
        for i in 0..40 {
            let angle = rng.random_range(-1.4..1.4);
            let snr = [0.02, 0.05, 0.3, 3.0][i % 4];
            let r = noisy_rank_one(n, angle, snr, &mut rng);
            let sub = signal_subspace(n, &r, 1).unwrap();
            let exhaustive = MusicSettings::default();
            let coarse = MusicSettings {
                coarse_stride: 10,
                ..exhaustive
            };
            let a = music_search(&sub.vectors, &grid, projector(|b| Cow::Borrowed(b)), 0.0, &exhaustive);
            let c = music_search(&sub.vectors, &grid, projector(|b| Cow::Borrowed(b)), 0.0, &coarse);
            match (a, c) {
                (Ok(a), Ok(c)) => {
                    assert_eq!(a.angle_rad, c.angle_rad);
                    assert!((a.dominance / c.dominance - 1.0).abs() < 0.1);
                }
                (Err(a), Err(c)) => assert_eq!(a, c),
                (a, c) => panic!("exhaustive {a:?} vs coarse {c:?}"),
            }
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let a = [1.0, 2.0, 0.0, 1.0].map(|x| Complex::new(x, 0.0));
        assert!(matches!(
            hermitian_eigendecomposition(2, &a),
            Err(EstimateError::NotHermitian(_))
        ));
    }

    #[test]
    fn music_noiseless_single_source() {
        let n = 64;
        let grid = SteeringGrid::from_degrees(0.1, n);
        let b = steering_elements(20f64.to_radians(), n);
        let phi = music_aoa(&cov_of(n, outer(&b)), 1, &grid, 0.0).unwrap();
        assert!((phi.to_degrees() - 20.0).abs() <= 0.05);
    }

    #[test]
    fn music_noise_only_has_no_peak() {
        let n = 16;
        let mut r = vec![Complex::new(0.0, 0.0); n * n];
        for i in 0..n {
            r[i * n + i] = Complex::new(2.0, 0.0);
        }
        let grid = SteeringGrid::from_degrees(0.1, n);
        assert_eq!(
            music_aoa(&cov_of(n, r), 1, &grid, 0.0),
            Err(EstimateError::NoPeak)
        );
    }

    #[test]
    fn music_two_sources_nearest_prediction() {
        let n = 32;
        let grid = SteeringGrid::from_degrees(0.05, n);
        let b1 = steering_elements(30f64.to_radians(), n);
        let b2 = steering_elements(-30f64.to_radians(), n);
        let mut r = outer(&b1);
        for (x, y) in r.iter_mut().zip(outer(&b2)) {
            *x += y;
        }
        for i in 0..n {
            r[i * n + i] += Complex::new(1e-3, 0.0);
        }
        let phi = music_aoa(&cov_of(n, r.clone()), 2, &grid, -30f64.to_radians()).unwrap();
        assert!((phi.to_degrees() + 30.0).abs() < 0.05);
        let phi = music_aoa(&cov_of(n, r), 2, &grid, 25f64.to_radians()).unwrap();
        assert!((phi.to_degrees() - 30.0).abs() < 0.05);
    }

    #[test]
    fn equalized_grid_removes_data() {
        let mut p = ScenarioConfig::default().system_params::<f64>().unwrap();
        p.n_rx_antennas = 8;
        p.n_tx_antennas = 8;
        p.n_symbols = 4;
        p.n_subcarriers = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let qpsk = generate_qpsk_grid(4, 8, 1e-3, &mut rng);
        let f = make_beamformer(0.0, 8, BeamKind::Transmit);
        let echo = EchoParams {
            h: Complex::new(1e-3, 0.0),
            theta_rad: 0.0,
            phi_rad: 0.4,
            tau_s: 0.0,
            doppler_hz: 0.0,
        };
        let frame = synthesize_rx_frame(&[UserEcho { echo, qpsk: &qpsk, tx_beam: &f }], &p, false, None, 0, 0)
            .unwrap();
        let w = make_beamformer(0.4, 8, BeamKind::Receive).weights;
        let r = equalized_grid(&frame, &w, &qpsk);
        // h sqrt(N_t) sqrt(N_r) for matched beams, constant across the grid
        let expected = Complex::new(1e-3 * 8f64.sqrt() * 8f64.sqrt(), 0.0);
        for v in &r {
            assert!((*v - expected).norm() < 1e-15);
        }
    }

    fn exponential_grid(n: usize, m: usize, tau: f64, gamma: f64, df: f64, t_o: f64) -> Vec<Complex<f64>> {
        let mut g = Vec::with_capacity(n * m);
        for s in 0..n {
            for k in 0..m {
                let ph = 2.0 * std::f64::consts::PI * (s as f64 * t_o * gamma - k as f64 * df * tau);
                g.push(Complex::from_polar(1.0, ph));
            }
        }
        g
    }

    #[test]
    fn delay_doppler_on_grid_exact() {
        let (n, m, df, t_o) = (64, 512, 1e6, 1.3333e-6);
        let mut dd = DelayDopplerProcessor::new(n, m, 1);
        let tau = 16.0 / (m as f64 * df);
        let gamma = 4.0 / (n as f64 * t_o);
        let est = dd.estimate(&exponential_grid(n, m, tau, gamma, df, t_o), df, t_o);
        assert_eq!((est.delay_bin, est.doppler_bin), (16, 4));
        assert!((est.tau_hat_s - tau).abs() < 1e-18);
        assert!((est.gamma_hat_hz - gamma).abs() < 1e-6);
        let est = dd.estimate(&exponential_grid(n, m, 0.0, 0.0, df, t_o), df, t_o);
        assert_eq!((est.delay_bin, est.doppler_bin), (0, 0));
        let gamma = -3.0 / (n as f64 * t_o);
        let est = dd.estimate(&exponential_grid(n, m, tau, gamma, df, t_o), df, t_o);
        assert_eq!(est.doppler_bin, -3);
        assert!(!est.at_edge);
    }

    #[test]
    fn delay_off_grid_with_oversampling() {
        let (n, m, df, t_o, s) = (16, 512, 1e6, 1.3333e-6, 4);
        let mut dd = DelayDopplerProcessor::new(n, m, s);
        let tau = 16.5 / (m as f64 * df);
        let est = dd.estimate(&exponential_grid(n, m, tau, 0.0, df, t_o), df, t_o);
        assert!((est.tau_hat_s - tau).abs() <= 0.5 / (s as f64 * m as f64 * df) + 1e-18);
    }

    #[test]
    fn bistatic_solve_examples() {
        let tx = Node::new(Vec2::new(0.0, 0.0), 0.0);
        let rx = Node::new(Vec2::new(0.0, 25.0), 0.0);
        let t = Vec2::new(27.5, 12.5);
        let g = bistatic_geometry(&tx, &rx, t).unwrap();
        let (pos, d2) = bistatic_position(g.sum_range_m / SPEED_OF_LIGHT, g.rx_local_aoa_rad, &rx, tx.position)
            .unwrap();
        assert!((d2 - 30.2077).abs() < 1e-4);
        assert!(pos.distance(t) < 1e-4);
        // perpendicular bisector of the baseline
        let t = Vec2::new(10.0, 12.5);
        let g = bistatic_geometry(&tx, &rx, t).unwrap();
        let (_, d2) = bistatic_position(g.sum_range_m / SPEED_OF_LIGHT, g.rx_local_aoa_rad, &rx, tx.position)
            .unwrap();
        assert!((d2 - g.sum_range_m / 2.0).abs() < 1e-9);
        // on the baseline segment
        assert_eq!(
            bistatic_position(25.0 / SPEED_OF_LIGHT, -std::f64::consts::FRAC_PI_2, &rx, tx.position),
            Err(EstimateError::InsideBaseline)
        );
    }

    #[test]
    fn music_scale_invariant() {
        let n = 16;
        let grid = SteeringGrid::from_degrees(0.05, n);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let b = steering_elements(0.2, n);
        let mut r = outer(&b);
        let noise = random_hermitian(n, &mut rng);
        for (i, (x, y)) in r.iter_mut().zip(&noise).enumerate() {
            *x += *y * 0.05;
            if i % (n + 1) == 0 {
                *x += Complex::new(1.0, 0.0);
            }
        }
        let a = music_aoa(&cov_of(n, r.clone()), 1, &grid, 0.0).unwrap();
        let scaled: Vec<_> = r.iter().map(|v| *v * 37.5).collect();
        let b2 = music_aoa(&cov_of(n, scaled), 1, &grid, 0.0).unwrap();
        assert!((a - b2).abs() < 1e-12);
    }

    #[test]
    fn noise_only_frame_covariance_concentrates() {
        let mut p = ScenarioConfig::default().system_params::<f64>().unwrap();
        p.n_rx_antennas = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let qpsk = generate_qpsk_grid(p.n_symbols, p.n_subcarriers, 1e-3, &mut rng);
        let f = make_beamformer(0.0, p.n_tx_antennas, BeamKind::Transmit);
        let echo = EchoParams {
            h: Complex::new(0.0, 0.0),
            theta_rad: 0.0,
            phi_rad: 0.0,
            tau_s: 0.0,
            doppler_hz: 0.0,
        };
        let frame: RxFrame<f64> = synthesize_rx_frame(
            &[UserEcho { echo, qpsk: &qpsk, tx_beam: &f }],
            &p,
            false,
            Some(&mut rng),
            0,
            0,
        )
        .unwrap();
        let cov = sample_covariance(&frame);
        let s2 = p.noise_variance_w();
        for i in 0..4 {
            assert!((cov.get(i, i).re / s2 - 1.0).abs() < 0.05);
            for j in 0..4 {
                if i != j {
                    assert!(cov.get(i, j).norm() <= 5.0 * s2 / (32768f64).sqrt());
                }
            }
        }
    }

    proptest! {
        #[test]
        fn bistatic_round_trip(x in 2.0..70.0f64, y in -50.0..50.0f64) {
            let tx = Node::new(Vec2::new(0.0, 0.0), 0.0);
            let rx = Node::new(Vec2::new(55.0, 0.0), std::f64::consts::PI);
            prop_assume!(y.abs() > 0.5 && x < 54.0);
            let t = Vec2::new(x, y);
            let g = bistatic_geometry(&tx, &rx, t).unwrap();
            let (pos, _) = bistatic_position(g.sum_range_m / SPEED_OF_LIGHT, g.rx_local_aoa_rad, &rx, tx.position).unwrap();
            prop_assert!(pos.distance(t) < 1e-6);
        }
    }
}
