use thiserror::Error;

/// Configuration loading and validation failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("segment {0} has zero length")]
    DegenerateSegment(usize),
    #[error("segment {0} step must be positive")]
    BadStep(usize),
    #[error("segment {index} starts {gap_m} m away from the previous end")]
    Discontinuous { index: usize, gap_m: f64 },
    #[error("trajectory yields {0} waypoints, need at least 3")]
    TooFewWaypoints(usize),
    #[error("implied speed {speed_mps} m/s exceeds v_max")]
    TooFast { speed_mps: f64 },
}

#[derive(Debug, Error, PartialEq, Eq, Clone, Copy)]
pub enum GeometryError {
    #[error("target coincides with a node")]
    TargetAtNode,
    #[error("transmitter and receiver coincide")]
    ZeroBaseline,
}

/// Echo model assumptions that the synthesized frame would violate.
#[derive(Debug, Error, PartialEq, Clone, Copy)]
pub enum ModelError {
    #[error("delay {tau_s} s exceeds the cyclic prefix {t_cp_s} s")]
    DelayBeyondCyclicPrefix { tau_s: f64, t_cp_s: f64 },
    #[error("doppler {doppler_hz} Hz is not small against the subcarrier spacing")]
    DopplerTooLarge { doppler_hz: f64 },
    #[error("dimension mismatch: {0}")]
    Dimensions(&'static str),
}

#[derive(Debug, Error, PartialEq, Clone, Copy)]
pub enum EstimateError {
    #[error("matrix is not Hermitian (asymmetry {0})")]
    NotHermitian(f64),
    #[error("no dominant MUSIC peak")]
    NoPeak,
    #[error("sum range does not exceed the baseline")]
    InsideBaseline,
    #[error("bistatic solve is singular at this bearing")]
    BaselineSingularity,
    #[error("measurement Jacobian is ill-conditioned (cond {0:e})")]
    IllConditioned(f64),
    #[error("noise variance estimate is not positive")]
    NoNoiseFloor,
    #[error("non-finite estimate")]
    NonFinite,
}

#[derive(Debug, Error, PartialEq, Eq, Clone, Copy)]
pub enum TrackError {
    #[error("track is no longer alive")]
    Dead,
    #[error("no estimates to fuse")]
    Empty,
    #[error("covariance {0} is not symmetric positive definite")]
    NotPositiveDefinite(usize),
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad field `{column}`: {reason}")]
    Field { column: String, reason: String },
    #[error("records from different configurations ({0} vs {1})")]
    MixedConfig(String, String),
}

/// Failures while setting up or running a Monte Carlo experiment.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trajectory: {0}")]
    Trajectory(#[from] TrajectoryError),
    #[error("tracker: {0}")]
    Track(#[from] TrackError),
    #[error("worker pool: {0}")]
    Pool(String),
}
