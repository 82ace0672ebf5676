//! JSON experiment configuration.
//!
//! Physical quantities are SI except transmit power (dBm) and radar cross
//! section (dBsm), and angles, which are given in degrees. Every field has a
//! default, so `{}` is a complete configuration of the reference experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::trajectory::{build_paper_trajectory, Segment, SegmentKind, TrajectorySpec};
use super::{db_to_linear, dbm_to_watts, Node, NodeGeometry, SystemParams, SPEED_OF_LIGHT};
use crate::error::ConfigError;
use crate::geom::Vec2;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub n_tx_antennas: usize,
    pub n_rx_antennas: usize,
    pub carrier_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    /// Defaults to `max_range_m / c`.
    pub cyclic_prefix_s: Option<f64>,
    /// Optional; checked against `1/subcarrier_spacing + cyclic_prefix` when given.
    pub symbol_period_s: Option<f64>,
    pub tx_power_dbm: f64,
    pub n_users: usize,
    pub noise_psd_w_per_hz: f64,
    pub rcs_dbsm: f64,
    pub refresh_period_s: f64,
    pub gate_radius_m: f64,
    pub fft_oversampling: usize,
    pub max_range_m: f64,
    pub max_speed_mps: f64,
    pub n_select: usize,
    /// Synthesize echoes with every user's beam leaking onto every target.
    pub cross_gain: bool,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            n_tx_antennas: 64,
            n_rx_antennas: 64,
            carrier_freq_hz: 60e9,
            subcarrier_spacing_hz: 1e6,
            n_subcarriers: 512,
            n_symbols: 64,
            cyclic_prefix_s: None,
            symbol_period_s: None,
            tx_power_dbm: 5.0,
            n_users: 1,
            noise_psd_w_per_hz: 2e-21,
            rcs_dbsm: 20.0,
            refresh_period_s: 0.1,
            gate_radius_m: 6.0,
            fft_oversampling: 1,
            max_range_m: 100.0,
            max_speed_mps: 30.0,
            n_select: 2,
            cross_gain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub position: [f64; 2],
    pub broadside_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub tx: NodeSpec,
    pub receivers: Vec<NodeSpec>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let n = |x: f64, y: f64, b: f64| NodeSpec {
            position: [x, y],
            broadside_deg: b,
        };
        Self {
            tx: n(0.0, 0.0, 0.0),
            receivers: vec![n(0.0, 25.0, 0.0), n(0.0, -25.0, 0.0), n(55.0, 0.0, 180.0)],
        }
    }
}

/// One path primitive as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentSpec {
    Line {
        from: [f64; 2],
        to: [f64; 2],
        #[serde(default)]
        step_m: Option<f64>,
    },
    Arc {
        center: [f64; 2],
        radius_m: f64,
        start_deg: f64,
        end_deg: f64,
        #[serde(default)]
        step_m: Option<f64>,
        #[serde(default)]
        step_deg: Option<f64>,
    },
    Zigzag {
        start: [f64; 2],
        heading_deg: f64,
        leg_length_m: f64,
        n_legs: usize,
        #[serde(default)]
        step_m: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    /// `"reference"` selects the built-in reference path; ignored when segments are given.
    pub preset: Option<String>,
    pub segments: Vec<SegmentSpec>,
    pub step_length_m: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            preset: Some("reference".into()),
            segments: Vec::new(),
            step_length_m: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub power_dbm: Vec<f64>,
    pub runs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            power_dbm: (-5..=20).map(f64::from).collect(),
            runs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub master: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self { master: 2024 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Digital,
    Hda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdaSection {
    pub n_rf: usize,
    pub thbw: f64,
}

impl Default for HdaSection {
    fn default() -> Self {
        Self { n_rf: 4, thbw: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverSection {
    pub architecture: Architecture,
    pub hda: HdaSection,
}

/// Which angle the AoA bound is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AoaCrlbVariant {
    /// The bound is used directly as the variance of the arrival angle.
    #[default]
    AsPrinted,
    /// The bound is read as a variance of the electrical angle `pi sin(phi)`
    /// and mapped to the spatial angle by `1 / (pi cos(phi))^2`.
    SpatialAngle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    pub music_grid_step_deg: f64,
    /// Spacing of the first MUSIC pass; minima found there are refined on the
    /// full grid. Zero or anything at or below the grid step scans exhaustively.
    pub music_coarse_step_deg: f64,
    /// Minimum ratio of the median null-spectrum level to the peak's level.
    pub music_min_dominance: f64,
    pub aoa_crlb: AoaCrlbVariant,
    /// Condition number of the measurement Jacobian above which an estimate is dropped.
    pub max_jacobian_condition: f64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self {
            music_grid_step_deg: 0.02,
            music_coarse_step_deg: 0.2,
            music_min_dominance: 2.0,
            aoa_crlb: AoaCrlbVariant::AsPrinted,
            max_jacobian_condition: 1e8,
        }
    }
}

impl EstimationSection {
    /// Grid points per coarse MUSIC step.
    pub fn music_coarse_stride(&self) -> usize {
        let r = (self.music_coarse_step_deg / self.music_grid_step_deg).round();
        if r >= 1.0 {
            r as usize
        } else {
            1
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemSection,
    pub geometry: GeometrySection,
    pub trajectory: TrajectorySection,
    pub sweep: SweepSection,
    pub seeds: SeedSection,
    pub receiver: ReceiverSection,
    pub estimation: EstimationSection,
}

/// Reads and validates a JSON config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_json_str(&text)
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system_params::<f64>()?.validate()?;
        self.node_geometry::<f64>().validate()?;
        if let Some(t_o) = self.system.symbol_period_s {
            let expected = self.system_params::<f64>()?.symbol_period_s();
            if (t_o - expected).abs() > 1e-12 * expected {
                return Err(ConfigError::invalid(
                    "system.symbol_period_s",
                    format!("must equal 1/subcarrier_spacing + cyclic_prefix = {expected:e}"),
                ));
            }
        }
        let spec = self.trajectory_spec::<f64>()?;
        let waypoints = super::sample_waypoints(&spec, self.system.refresh_period_s)
            .map_err(|e| ConfigError::invalid("trajectory", e.to_string()))?;
        if let Some(w) = waypoints
            .iter()
            .find(|w| w.velocity.norm() > self.system.max_speed_mps * (1.0 + 1e-12))
        {
            return Err(ConfigError::invalid(
                "trajectory",
                format!(
                    "speed {} m/s exceeds max_speed_mps",
                    w.velocity.norm()
                ),
            ));
        }
        if self.sweep.power_dbm.is_empty() {
            return Err(ConfigError::invalid("sweep.power_dbm", "empty"));
        }
        if !(self.estimation.music_grid_step_deg > 0.0) {
            return Err(ConfigError::invalid(
                "estimation.music_grid_step_deg",
                "must be positive",
            ));
        }
        if !(self.estimation.music_coarse_step_deg >= 0.0) {
            return Err(ConfigError::invalid(
                "estimation.music_coarse_step_deg",
                "must be non-negative",
            ));
        }
        if self.receiver.architecture == Architecture::Hda {
            let h = &self.receiver.hda;
            if h.n_rf == 0 || h.n_rf > self.system.n_rx_antennas {
                return Err(ConfigError::invalid(
                    "receiver.hda.n_rf",
                    "must be in 1..=n_rx_antennas",
                ));
            }
            if h.n_rf <= self.system.n_users {
                return Err(ConfigError::invalid(
                    "receiver.hda.n_rf",
                    "must exceed the number of sources",
                ));
            }
            if !(h.thbw > 0.0) {
                return Err(ConfigError::invalid("receiver.hda.thbw", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn system_params<T: Real>(&self) -> Result<SystemParams<T>, ConfigError> {
        let s = &self.system;
        let t_cp = s
            .cyclic_prefix_s
            .unwrap_or(s.max_range_m / SPEED_OF_LIGHT);
        Ok(SystemParams {
            n_tx_antennas: s.n_tx_antennas,
            n_rx_antennas: s.n_rx_antennas,
            carrier_freq_hz: lit(s.carrier_freq_hz),
            subcarrier_spacing_hz: lit(s.subcarrier_spacing_hz),
            n_subcarriers: s.n_subcarriers,
            n_symbols: s.n_symbols,
            cyclic_prefix_s: lit(t_cp),
            tx_power_w: lit(dbm_to_watts(s.tx_power_dbm)),
            n_users: s.n_users,
            noise_psd_w_per_hz: lit(s.noise_psd_w_per_hz),
            rcs_m2: lit(db_to_linear(s.rcs_dbsm)),
            refresh_period_s: lit(s.refresh_period_s),
            gate_radius_m: lit(s.gate_radius_m),
            fft_oversampling: s.fft_oversampling,
            max_range_m: lit(s.max_range_m),
            max_speed_mps: lit(s.max_speed_mps),
            n_select: s.n_select,
            n_receivers: self.geometry.receivers.len(),
        })
    }

    pub fn node_geometry<T: Real>(&self) -> NodeGeometry<T> {
        let node = |n: &NodeSpec| {
            Node::new(
                Vec2::new(lit(n.position[0]), lit(n.position[1])),
                lit(n.broadside_deg.to_radians()),
            )
        };
        NodeGeometry {
            tx: node(&self.geometry.tx),
            receivers: self.geometry.receivers.iter().map(node).collect(),
        }
    }

    pub fn trajectory_spec<T: Real>(&self) -> Result<TrajectorySpec<T>, ConfigError> {
        let t = &self.trajectory;
        if t.segments.is_empty() {
            return match t.preset.as_deref() {
                Some("reference") => Ok(build_paper_trajectory()),
                Some(other) => Err(ConfigError::invalid(
                    "trajectory.preset",
                    format!("unknown preset `{other}`"),
                )),
                None => Err(ConfigError::invalid(
                    "trajectory",
                    "give either a preset or segments",
                )),
            };
        }
        let v = |p: [f64; 2]| Vec2::new(lit::<T>(p[0]), lit::<T>(p[1]));
        let segments = t
            .segments
            .iter()
            .map(|spec| match *spec {
                SegmentSpec::Line { from, to, step_m } => Segment {
                    kind: SegmentKind::Line {
                        from: v(from),
                        to: v(to),
                    },
                    step_m: step_m.map(lit),
                },
                SegmentSpec::Arc {
                    center,
                    radius_m,
                    start_deg,
                    end_deg,
                    step_m,
                    step_deg,
                } => Segment {
                    kind: SegmentKind::Arc {
                        center: v(center),
                        radius: lit(radius_m),
                        start_angle: lit(start_deg.to_radians()),
                        end_angle: lit(end_deg.to_radians()),
                    },
                    step_m: step_m
                        .or(step_deg.map(|d| radius_m * d.to_radians()))
                        .map(lit),
                },
                SegmentSpec::Zigzag {
                    start,
                    heading_deg,
                    leg_length_m,
                    n_legs,
                    step_m,
                } => Segment {
                    kind: SegmentKind::Zigzag {
                        start: v(start),
                        heading: lit(heading_deg.to_radians()),
                        leg_length: lit(leg_length_m),
                        n_legs,
                    },
                    step_m: step_m.map(lit),
                },
            })
            .collect();
        Ok(TrajectorySpec {
            segments,
            step_length_m: lit(t.step_length_m),
        })
    }

    /// Hash of the canonical serialization; insensitive to key order and
    /// whitespace in the source file.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_reference_parameters() {
        let cfg = ScenarioConfig::from_json_str("{}").unwrap();
        let p = cfg.system_params::<f64>().unwrap();
        assert_eq!((p.n_tx_antennas, p.n_rx_antennas), (64, 64));
        assert_eq!(p.carrier_freq_hz, 60e9);
        assert_eq!(p.subcarrier_spacing_hz, 1e6);
        assert_eq!((p.n_subcarriers, p.n_symbols), (512, 64));
        assert_eq!(p.noise_psd_w_per_hz, 2e-21);
        assert!((p.rcs_m2 - 100.0).abs() < 1e-12);
        assert_eq!(p.refresh_period_s, 0.1);
        assert_eq!(p.gate_radius_m, 6.0);
        assert_eq!(p.fft_oversampling, 1);
        assert_eq!((p.n_select, p.n_receivers), (2, 3));
        assert!((p.cyclic_prefix_s - 333.333e-9).abs() < 1e-12);
        assert!((p.symbol_period_s() - 1.333333e-6).abs() < 1e-11);
        assert!((p.wavelength_m() - 0.005).abs() < 1e-15);
        assert!((p.noise_variance_w() - 1.024e-12).abs() < 1e-24);
    }

    #[test]
    fn short_cyclic_prefix_names_field() {
        let err = ScenarioConfig::from_json_str(
            r#"{"system": {"cyclic_prefix_s": 100e-9, "max_range_m": 100}}"#,
        )
        .unwrap_err();
        match err {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "system.cyclic_prefix_s"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(
            ScenarioConfig::from_json_str("{\"system\": "),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ScenarioConfig::from_json_str(r#"{"system": {"bogus": 1}}"#),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = ScenarioConfig::from_json_str(
            r#"{"seeds": {"master": 7}, "system": {"tx_power_dbm": 3, "n_select": 1}}"#,
        )
        .unwrap();
        let b = ScenarioConfig::from_json_str(
            r#"{"system": {"n_select": 1, "tx_power_dbm": 3}, "seeds": {"master": 7}}"#,
        )
        .unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), ScenarioConfig::default().config_hash());
    }

    #[test]
    fn explicit_segments() {
        let cfg = ScenarioConfig::from_json_str(
            r#"{"trajectory": {"segments": [
                {"line": {"from": [30, 20], "to": [30, 10]}},
                {"arc": {"center": [20, 10], "radius_m": 10, "start_deg": 0, "end_deg": -90, "step_deg": 5}}
            ]}}"#,
        )
        .unwrap();
        let spec = cfg.trajectory_spec::<f64>().unwrap();
        assert_eq!(spec.segments.len(), 2);
    }

    #[test]
    fn too_fast_trajectory_rejected() {
        let err = ScenarioConfig::from_json_str(
            r#"{"trajectory": {"step_length_m": 5, "segments": [
                {"line": {"from": [30, 20], "to": [30, -20]}}]}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref field, .. } if field == "trajectory"));
    }
}
