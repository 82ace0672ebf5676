//! Experiment description: system parameters, node layout, target path and
//! exact bistatic geometry.

mod config;
mod trajectory;

pub use config::{
    load_config, Architecture, AoaCrlbVariant, EstimationSection, GeometrySection, HdaSection,
    NodeSpec, ReceiverSection, ScenarioConfig, SeedSection, SegmentSpec, SweepSection,
    SystemSection, TrajectorySection,
};
pub use trajectory::{
    build_paper_trajectory, sample_waypoints, Segment, SegmentKind, TrajectorySpec, WaypointState,
};

use crate::error::{ConfigError, GeometryError};
use crate::geom::Vec2;
use crate::scalar::{count, lit, wrap_angle, Real};

/// Propagation speed used throughout (rounded, matching the reference parameter set).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Link, waveform and tracker constants for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams<T> {
    pub n_tx_antennas: usize,
    pub n_rx_antennas: usize,
    pub carrier_freq_hz: T,
    pub subcarrier_spacing_hz: T,
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub cyclic_prefix_s: T,
    pub tx_power_w: T,
    pub n_users: usize,
    pub noise_psd_w_per_hz: T,
    pub rcs_m2: T,
    pub refresh_period_s: T,
    pub gate_radius_m: T,
    pub fft_oversampling: usize,
    pub max_range_m: T,
    pub max_speed_mps: T,
    pub n_select: usize,
    pub n_receivers: usize,
}

impl<T: Real> SystemParams<T> {
    /// OFDM symbol duration including the cyclic prefix.
    pub fn symbol_period_s(&self) -> T {
        T::one() / self.subcarrier_spacing_hz + self.cyclic_prefix_s
    }

    pub fn wavelength_m(&self) -> T {
        lit::<T>(SPEED_OF_LIGHT) / self.carrier_freq_hz
    }

    pub fn bandwidth_hz(&self) -> T {
        count::<T>(self.n_subcarriers) * self.subcarrier_spacing_hz
    }

    /// Per-antenna noise variance over the occupied band.
    pub fn noise_variance_w(&self) -> T {
        self.noise_psd_w_per_hz * self.bandwidth_hz()
    }

    /// Power carried by each user's symbols.
    pub fn per_user_power_w(&self) -> T {
        self.tx_power_w / count::<T>(self.n_users)
    }

    pub fn with_tx_power_dbm(&self, dbm: f64) -> Self {
        Self {
            tx_power_w: lit(dbm_to_watts(dbm)),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive_counts = [
            ("system.n_tx_antennas", self.n_tx_antennas),
            ("system.n_rx_antennas", self.n_rx_antennas),
            ("system.n_subcarriers", self.n_subcarriers),
            ("system.n_symbols", self.n_symbols),
            ("system.n_users", self.n_users),
            ("system.fft_oversampling", self.fft_oversampling),
            ("system.n_select", self.n_select),
            ("geometry.receivers", self.n_receivers),
        ];
        for (field, n) in positive_counts {
            if n == 0 {
                return Err(ConfigError::invalid(field, "must be positive"));
            }
        }
        let positive_reals = [
            ("system.carrier_freq_hz", self.carrier_freq_hz),
            ("system.subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("system.tx_power", self.tx_power_w),
            ("system.noise_psd_w_per_hz", self.noise_psd_w_per_hz),
            ("system.rcs", self.rcs_m2),
            ("system.refresh_period_s", self.refresh_period_s),
            ("system.gate_radius_m", self.gate_radius_m),
            ("system.max_range_m", self.max_range_m),
            ("system.max_speed_mps", self.max_speed_mps),
        ];
        for (field, v) in positive_reals {
            if !(v > T::zero() && v.is_finite()) {
                return Err(ConfigError::invalid(field, "must be positive and finite"));
            }
        }
        if self.cyclic_prefix_s < T::zero() {
            return Err(ConfigError::invalid("system.cyclic_prefix_s", "negative"));
        }
        let min_cp = self.max_range_m / lit(SPEED_OF_LIGHT);
        if self.cyclic_prefix_s < min_cp * (T::one() - lit(1e-12)) {
            return Err(ConfigError::invalid(
                "system.cyclic_prefix_s",
                format!(
                    "{:e} s is shorter than d_max/c = {:e} s",
                    self.cyclic_prefix_s.to_f64().unwrap(),
                    min_cp.to_f64().unwrap()
                ),
            ));
        }
        if self.n_select > self.n_receivers {
            return Err(ConfigError::invalid(
                "system.n_select",
                "cannot exceed the number of receivers",
            ));
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// A node with a uniform linear array; `broadside` is the global bearing the
/// array faces, in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node<T> {
    pub position: Vec2<T>,
    pub broadside: T,
}

impl<T: Real> Node<T> {
    pub fn new(position: Vec2<T>, broadside: T) -> Self {
        Self {
            position,
            broadside: wrap_angle(broadside),
        }
    }

    /// Angle of `global_bearing` relative to broadside, folded onto the
    /// half-plane the array can distinguish.
    pub fn local_angle(&self, global_bearing: T) -> T {
        ula_local_angle(global_bearing, self.broadside)
    }

    /// Inverse of [`Node::local_angle`] for directions in front of the array.
    pub fn global_bearing(&self, local_angle: T) -> T {
        wrap_angle(self.broadside + local_angle)
    }
}

/// Bearing relative to broadside, mapped to `[-pi/2, pi/2]`. A ULA cannot
/// tell front from back, so directions behind the array are mirrored.
pub fn ula_local_angle<T: Real>(global_bearing: T, broadside: T) -> T {
    let rel = wrap_angle(global_bearing - broadside);
    let half_pi = T::FRAC_PI_2();
    if rel > half_pi {
        T::PI() - rel
    } else if rel < -half_pi {
        -T::PI() - rel
    } else {
        rel
    }
}

/// Transmitter and receiver layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGeometry<T> {
    pub tx: Node<T>,
    pub receivers: Vec<Node<T>>,
}

impl<T: Real> NodeGeometry<T> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.receivers.is_empty() {
            return Err(ConfigError::invalid("geometry.receivers", "empty"));
        }
        for (i, rx) in self.receivers.iter().enumerate() {
            if !(rx.position.distance(self.tx.position) > T::zero()) {
                return Err(ConfigError::invalid(
                    format!("geometry.receivers[{i}]"),
                    "receiver coincides with the transmitter",
                ));
            }
        }
        Ok(())
    }
}

/// Exact TX-target-RX quantities for one receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BistaticGeometry<T> {
    /// TX to target.
    pub d1_m: T,
    /// RX to target.
    pub d2_m: T,
    pub sum_range_m: T,
    pub baseline_m: T,
    /// Arrival angle relative to the receive array broadside.
    pub rx_local_aoa_rad: T,
    /// Interior angle at the receiver between RX->TX and RX->target.
    pub rx_baseline_angle_rad: T,
    /// Departure angle relative to the transmit array broadside.
    pub tx_aod_rad: T,
    /// Global bearing RX->target.
    pub rx_bearing_rad: T,
}

pub fn bistatic_geometry<T: Real>(
    tx: &Node<T>,
    rx: &Node<T>,
    target: Vec2<T>,
) -> Result<BistaticGeometry<T>, GeometryError> {
    let to_target_tx = target - tx.position;
    let to_target_rx = target - rx.position;
    let to_tx = tx.position - rx.position;
    let d1 = to_target_tx.norm();
    let d2 = to_target_rx.norm();
    let baseline = to_tx.norm();
    if !(baseline > T::zero()) {
        return Err(GeometryError::ZeroBaseline);
    }
    if !(d1 > T::zero() && d2 > T::zero()) {
        return Err(GeometryError::TargetAtNode);
    }
    let cos_psi = (to_tx.dot(to_target_rx) / (baseline * d2))
        .max(-T::one())
        .min(T::one());
    let rx_bearing = to_target_rx.bearing();
    Ok(BistaticGeometry {
        d1_m: d1,
        d2_m: d2,
        sum_range_m: d1 + d2,
        baseline_m: baseline,
        rx_local_aoa_rad: rx.local_angle(rx_bearing),
        rx_baseline_angle_rad: cos_psi.acos(),
        tx_aod_rad: tx.local_angle(to_target_tx.bearing()),
        rx_bearing_rad: rx_bearing,
    })
}
