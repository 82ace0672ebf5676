//! Bistatic ISAC beam tracking simulator.

pub mod channel;
pub mod error;
pub mod error_model;
pub mod estimator;
pub mod fusion;
pub mod geom;
pub mod hda;
pub mod metrics;
pub mod observation;
pub mod scalar;
pub mod scenario;
pub mod signal;
pub mod sim;

/// Double-precision instantiations of the generic core.
pub type Vec2F64 = geom::Vec2<f64>;
pub type Mat2F64 = geom::Mat2<f64>;
pub type SystemParamsF64 = scenario::SystemParams<f64>;
pub type ScenarioF64 = sim::Scenario<f64>;
pub type PositionEstimateF64 = estimator::PositionEstimate<f64>;
pub type TrackStateF64 = fusion::TrackState<f64>;
pub type RxFrameF64 = channel::RxFrame<f64>;
