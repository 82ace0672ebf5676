//! Monte Carlo engine: every tracker of a run (each transmit power and mode)
//! advances in lockstep along the path and sees the same random draws.

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{
    bistatic_doppler, check_model_validity, echo_params, synthesize_rx_frame, EchoPattern,
    FactoredEcho, NoiseDraw, RxFrame, UserEcho,
};
use crate::error::{ConfigError, SimError};
use crate::error_model::{crlb_aoa_variant, crlb_delay, jacobian, link_snr, position_covariance, MeasurementCovariance};
use crate::estimator::{
    process_receiver, DelayDopplerProcessor, MusicSettings, PositionEstimate, ReceiverSetup,
    SteeringGrid,
};
use crate::fusion::{StepOutcome, TrackState};
use crate::hda::{BeamspaceBasis, Reduced};
use crate::metrics::{predicted_aod_error_deg, sort_canonical, spectral_efficiency, EpochRecord, Mode, ReceiverRecord};
use crate::observation::EchoObservation;
use crate::scalar::{lit, Real};
use crate::scenario::{
    bistatic_geometry, sample_waypoints, Architecture, AoaCrlbVariant, BistaticGeometry,
    NodeGeometry, ScenarioConfig, SystemParams, WaypointState,
};
use crate::signal::{generate_qpsk_grid, inner, make_beamformer, steering_elements, BeamKind, QpskGrid};

/// Random stream tags; each (run, tag, epoch, receiver) tuple owns one stream.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const PHASE: u64 = 2;
    pub const NOISE: u64 = 3;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of one substream: the master seed and each coordinate are folded in
/// turn through splitmix64, so any run can be regenerated on its own.
pub fn stream_seed(master: u64, run: u32, tag: u64, epoch: usize, receiver: usize) -> u64 {
    [run as u64, tag, epoch as u64, receiver as u64]
        .iter()
        .fold(splitmix64(master), |acc, c| splitmix64(acc ^ splitmix64(*c)))
}

pub fn stream_rng(master: u64, run: u32, tag: u64, epoch: usize, receiver: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, run, tag, epoch, receiver))
}

/// A validated configuration with everything derived from it precomputed.
#[derive(Debug, Clone)]
pub struct Scenario<T: Real> {
    pub config: ScenarioConfig,
    pub params: SystemParams<T>,
    pub geometry: NodeGeometry<T>,
    pub waypoints: Vec<WaypointState<T>>,
    pub grid: SteeringGrid<T>,
    pub music: MusicSettings<T>,
    pub beamspace: Option<BeamspaceBasis<T>>,
    pub config_hash: String,
}

impl<T: Real> Scenario<T> {
    pub fn from_config(config: &ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let params = config.system_params::<T>()?;
        let geometry = config.node_geometry::<T>();
        let spec = config.trajectory_spec::<T>()?;
        let waypoints = sample_waypoints(&spec, params.refresh_period_s)?;
        let grid = SteeringGrid::from_degrees(config.estimation.music_grid_step_deg, params.n_rx_antennas);
        let music = MusicSettings {
            n_sources: 1,
            min_dominance: lit(config.estimation.music_min_dominance),
            min_steering_energy: lit(0.5),
            coarse_stride: config.estimation.music_coarse_stride(),
        };
        let beamspace = match config.receiver.architecture {
            Architecture::Digital => None,
            Architecture::Hda => Some(BeamspaceBasis::new(
                params.n_rx_antennas,
                config.receiver.hda.n_rf,
                lit(config.receiver.hda.thbw),
            )),
        };
        Ok(Self {
            config: config.clone(),
            params,
            geometry,
            waypoints,
            grid,
            music,
            beamspace,
            config_hash: config.config_hash(),
        })
    }

    pub fn n_receivers(&self) -> usize {
        self.geometry.receivers.len()
    }

    /// Modes the CLI's `all` expands to: each receiver alone, fusion, oracle.
    pub fn all_modes(&self) -> Vec<Mode> {
        (0..self.n_receivers())
            .map(Mode::Rx)
            .chain([Mode::Fuse, Mode::Oracle])
            .collect()
    }

    fn check_modes(&self, modes: &[Mode]) -> Result<(), SimError> {
        for m in modes {
            if let Mode::Rx(i) = m {
                if *i >= self.n_receivers() {
                    return Err(ConfigError::Invalid {
                        field: "mode".into(),
                        reason: format!("rx{i} but only {} receivers", self.n_receivers()),
                    }
                    .into());
                }
            }
        }
        Ok(())
    }
}

/// What one receiver sees of the target at one epoch, shared by all trackers.
struct ReceiverEpoch<T> {
    geometry: BistaticGeometry<T>,
    h: Complex<T>,
    pattern: EchoPattern<T>,
    noise: NoiseDraw<T>,
    /// `b(phi)` at the true arrival angle.
    steering: Vec<Complex<T>>,
}

struct Tracker<T> {
    power_index: usize,
    mode: Mode,
    state: Option<TrackState<T>>,
}

/// Per-power constants.
struct PowerLevel<T> {
    dbm: f64,
    params: SystemParams<T>,
    qpsk_scale: T,
}

fn to64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Simulates one run for every requested power and mode.
pub fn simulate_run<T: Real>(
    scn: &Scenario<T>,
    run_id: u32,
    powers_dbm: &[f64],
    modes: &[Mode],
    master_seed: u64,
) -> Result<Vec<EpochRecord>, SimError> {
    scn.check_modes(modes)?;
    let p0 = &scn.params;
    let n_rx_nodes = scn.n_receivers();
    let tx = &scn.geometry.tx;
    let sigma2 = p0.noise_variance_w();
    let variant: AoaCrlbVariant = scn.config.estimation.aoa_crlb;
    let max_cond = lit::<T>(scn.config.estimation.max_jacobian_condition);
    let beta = p0.gate_radius_m;
    let levels: Vec<PowerLevel<T>> = powers_dbm
        .iter()
        .map(|&dbm| {
            let params = p0.with_tx_power_dbm(dbm);
            let qpsk_scale = params.per_user_power_w().sqrt();
            PowerLevel {
                dbm,
                params,
                qpsk_scale,
            }
        })
        .collect();
    let start = scn.waypoints[0].position;
    let mut trackers: Vec<Tracker<T>> = Vec::new();
    for (pi, _) in levels.iter().enumerate() {
        for &mode in modes {
            trackers.push(Tracker {
                power_index: pi,
                mode,
                state: (mode != Mode::Oracle).then(|| TrackState::acquire(start, tx)),
            });
        }
    }
    let mut dd = DelayDopplerProcessor::new(p0.n_symbols, p0.n_subcarriers, p0.fft_oversampling);
    let mut records = Vec::with_capacity(trackers.len() * scn.waypoints.len());
    let blank = vec![ReceiverRecord::default(); n_rx_nodes];

    for (epoch, wp) in scn.waypoints.iter().enumerate() {
        let truth = wp.position;
        let d1 = truth.distance(tx.position);
        let theta_true = tx.local_angle((truth - tx.position).bearing());
        let a_true = steering_elements(theta_true, p0.n_tx_antennas);

        if epoch == 0 {
            // acquisition: every beam starts on the target
            for tr in &trackers {
                let lvl = &levels[tr.power_index];
                records.push(EpochRecord {
                    run_id,
                    epoch,
                    pt_dbm: lvl.dbm,
                    mode: tr.mode,
                    x_true: to64(truth.x),
                    y_true: to64(truth.y),
                    theta_true_deg: to64(theta_true.to_degrees()),
                    x_fused: (tr.mode != Mode::Oracle).then(|| to64(truth.x)),
                    y_fused: (tr.mode != Mode::Oracle).then(|| to64(truth.y)),
                    theta_pred_deg: Some(to64(theta_true.to_degrees())),
                    se_bps_hz: to64(spectral_efficiency(theta_true, theta_true, d1, &lvl.params)),
                    pae_deg: Some(0.0),
                    receivers: blank.clone(),
                });
            }
            continue;
        }

        let needs_data = trackers
            .iter()
            .any(|t| t.state.as_ref().is_some_and(|s| s.alive));
        let unit_qpsk: Option<QpskGrid<T>> = needs_data.then(|| {
            generate_qpsk_grid(
                p0.n_symbols,
                p0.n_subcarriers,
                T::one(),
                &mut stream_rng(master_seed, run_id, stream::DATA, epoch, 0),
            )
        });
        let observations: Vec<Option<ReceiverEpoch<T>>> = scn
            .geometry
            .receivers
            .iter()
            .enumerate()
            .map(|(i, rx)| {
                let qpsk = unit_qpsk.as_ref()?;
                let g = bistatic_geometry(tx, rx, truth).ok()?;
                let doppler = bistatic_doppler(
                    wp.velocity,
                    truth,
                    tx.position,
                    rx.position,
                    p0.wavelength_m(),
                );
                let echo = echo_params(
                    &g,
                    doppler,
                    p0,
                    &mut stream_rng(master_seed, run_id, stream::PHASE, epoch, i),
                );
                check_model_validity(&echo, p0).ok()?;
                let pattern = EchoPattern::new(qpsk, echo.tau_s, doppler, p0);
                let noise = NoiseDraw::sample(
                    &pattern,
                    p0.n_rx_antennas,
                    sigma2,
                    &mut stream_rng(master_seed, run_id, stream::NOISE, epoch, i),
                );
                Some(ReceiverEpoch {
                    geometry: g,
                    h: echo.h,
                    pattern,
                    noise,
                    steering: steering_elements(g.rx_local_aoa_rad, p0.n_rx_antennas),
                })
            })
            .collect();
        let scaled_qpsk: Vec<Option<QpskGrid<T>>> = levels
            .iter()
            .map(|lvl| {
                unit_qpsk.as_ref().map(|q| QpskGrid {
                    n_symbols: q.n_symbols,
                    n_subcarriers: q.n_subcarriers,
                    symbols: q.symbols.iter().map(|z| *z * lvl.qpsk_scale).collect(),
                    per_symbol_power_w: lvl.qpsk_scale * lvl.qpsk_scale,
                })
            })
            .collect();

        for tr in trackers.iter_mut() {
            let lvl = &levels[tr.power_index];
            let p = &lvl.params;
            let mut rec = EpochRecord {
                run_id,
                epoch,
                pt_dbm: lvl.dbm,
                mode: tr.mode,
                x_true: to64(truth.x),
                y_true: to64(truth.y),
                theta_true_deg: to64(theta_true.to_degrees()),
                x_fused: None,
                y_fused: None,
                theta_pred_deg: None,
                se_bps_hz: 0.0,
                pae_deg: None,
                receivers: blank.clone(),
            };
            let state = match tr.state.as_mut() {
                None => {
                    rec.theta_pred_deg = Some(rec.theta_true_deg);
                    rec.se_bps_hz = to64(spectral_efficiency(theta_true, theta_true, d1, p));
                    rec.pae_deg = Some(0.0);
                    records.push(rec);
                    continue;
                }
                Some(s) if !s.alive => {
                    records.push(rec);
                    continue;
                }
                Some(s) => s,
            };
            let theta_hat = state.predicted_aod_rad;
            let predicted = state.predicted;
            rec.theta_pred_deg = Some(to64(theta_hat.to_degrees()));
            rec.se_bps_hz = to64(spectral_efficiency(theta_true, theta_hat, d1, p));
            rec.pae_deg = Some(to64(predicted_aod_error_deg(theta_true, theta_hat)));

            let f = make_beamformer(theta_hat, p.n_tx_antennas, BeamKind::Transmit);
            let tx_response = inner(&a_true, &f.weights);
            let qpsk = scaled_qpsk[tr.power_index]
                .as_ref()
                .expect("data drawn while a tracker is alive");
            let indices: Vec<usize> = match tr.mode {
                Mode::Rx(i) => vec![i],
                _ => (0..n_rx_nodes).collect(),
            };
            let mut estimates: Vec<PositionEstimate<T>> = Vec::new();
            for i in indices {
                let Some(obs) = observations[i].as_ref() else {
                    continue;
                };
                let rx = &scn.geometry.receivers[i];
                let predicted_aoa = rx.local_angle((predicted - rx.position).bearing());
                let setup = ReceiverSetup {
                    params: p,
                    tx,
                    rx,
                    receiver_index: i,
                    grid: &scn.grid,
                    music: scn.music,
                    aoa_crlb: variant,
                    max_condition: max_cond,
                };
                let factored = FactoredEcho {
                    pattern: &obs.pattern,
                    noise: &obs.noise,
                    steering: &obs.steering,
                    amplitude: obs.h * tx_response * lvl.qpsk_scale,
                };
                let (result, n_ch) = match &scn.beamspace {
                    None => (
                        process_receiver(&factored, qpsk, predicted_aoa, &setup, &mut dd),
                        factored.n_channels(),
                    ),
                    Some(basis) => {
                        let u = basis.steer(predicted_aoa);
                        let reduced = Reduced {
                            inner: &factored,
                            reduction: &u,
                        };
                        (
                            process_receiver(&reduced, qpsk, predicted_aoa, &setup, &mut dd),
                            reduced.n_channels(),
                        )
                    }
                };
                let Ok(out) = result else {
                    continue;
                };
                // the same chain fed with the true SNRs at the true position
                let rho0 = link_snr(
                    p.tx_power_w,
                    obs.h.norm_sqr(),
                    tx_response.norm_sqr(),
                    p.n_users,
                    sigma2,
                );
                let rho1 = rho0 * inner(&out.rx_weights, &obs.steering).norm_sqr();
                let actual = MeasurementCovariance {
                    c_tau: crlb_delay(
                        rho1,
                        p.fft_oversampling,
                        p.n_subcarriers,
                        p.subcarrier_spacing_hz,
                        p.n_symbols,
                        p.symbol_period_s(),
                    ),
                    c_phi: crlb_aoa_variant(
                        variant,
                        rho0,
                        p.n_symbols,
                        p.n_subcarriers,
                        n_ch,
                        obs.geometry.rx_local_aoa_rad,
                    ),
                };
                let gdop_act = position_covariance(
                    jacobian(truth, tx.position, rx.position),
                    &actual,
                    max_cond,
                )
                .ok()
                .map(|c| to64(c.gdop));
                let e = out.estimate;
                rec.receivers[i] = ReceiverRecord {
                    x: Some(to64(e.position.x)),
                    y: Some(to64(e.position.y)),
                    valid: crate::fusion::gate_validate(&e, predicted, beta),
                    gdop_est: e.gdop.map(to64),
                    gdop_act,
                    selected: false,
                };
                estimates.push(e);
            }
            let outcome = state.step(&estimates, beta, p.n_select, tx)?;
            let pos = outcome.position();
            rec.x_fused = Some(to64(pos.x));
            rec.y_fused = Some(to64(pos.y));
            if let StepOutcome::Fused(f) = &outcome {
                for &i in &f.receivers {
                    rec.receivers[i].selected = true;
                }
            }
            records.push(rec);
        }
    }
    Ok(records)
}

/// A Monte Carlo request: runs `first_run .. first_run + runs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRequest {
    pub runs: u32,
    pub first_run: u32,
    pub powers_dbm: Vec<f64>,
    pub modes: Vec<Mode>,
    pub master_seed: u64,
    /// Worker threads; 0 uses every available core, 1 runs serially.
    pub workers: usize,
}

/// Runs every requested run and returns the records in canonical order.
pub fn run_sweep<T: Real>(scn: &Scenario<T>, req: &SweepRequest) -> Result<Vec<EpochRecord>, SimError> {
    scn.check_modes(&req.modes)?;
    let runs: Vec<u32> = (req.first_run..req.first_run + req.runs).collect();
    let one = |r: u32| simulate_run(scn, r, &req.powers_dbm, &req.modes, req.master_seed);
    let per_run: Vec<Result<Vec<EpochRecord>, SimError>> = if req.workers == 1 {
        runs.into_iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(req.workers)
            .build()
            .map_err(|e| SimError::Pool(e.to_string()))?;
        pool.install(|| runs.into_par_iter().map(one).collect())
    };
    let mut out = Vec::new();
    for r in per_run {
        out.extend(r?);
    }
    sort_canonical(&mut out);
    Ok(out)
}

/// Materializes the echo frame one receiver records at one epoch of a run,
/// with the transmit beam on the true target. Data symbols and the
/// reflection phase come from the same streams the trackers use; the noise
/// is a full per-sample draw from the noise stream, so it is not the
/// realization the trackers see.
pub fn synthesize_epoch_frame<T: Real>(
    scn: &Scenario<T>,
    run_id: u32,
    epoch: usize,
    receiver: usize,
    tx_power_dbm: f64,
    master_seed: u64,
) -> Result<RxFrame<T>, SimError> {
    let invalid = |field: &str, reason: String| {
        SimError::from(ConfigError::Invalid {
            field: field.into(),
            reason,
        })
    };
    let wp = scn.waypoints.get(epoch).ok_or_else(|| {
        invalid("epoch", format!("path has {} epochs", scn.waypoints.len()))
    })?;
    let rx = scn.geometry.receivers.get(receiver).ok_or_else(|| {
        invalid("receiver", format!("only {} receivers", scn.n_receivers()))
    })?;
    let p = scn.params.with_tx_power_dbm(tx_power_dbm);
    let tx = &scn.geometry.tx;
    let g = bistatic_geometry(tx, rx, wp.position)
        .map_err(|e| invalid("epoch", format!("target geometry: {e}")))?;
    let doppler = bistatic_doppler(wp.velocity, wp.position, tx.position, rx.position, p.wavelength_m());
    let echo = echo_params(
        &g,
        doppler,
        &p,
        &mut stream_rng(master_seed, run_id, stream::PHASE, epoch, receiver),
    );
    let qpsk = generate_qpsk_grid(
        p.n_symbols,
        p.n_subcarriers,
        p.per_user_power_w(),
        &mut stream_rng(master_seed, run_id, stream::DATA, epoch, 0),
    );
    let beam = make_beamformer(echo.theta_rad, p.n_tx_antennas, BeamKind::Transmit);
    let mut noise = stream_rng(master_seed, run_id, stream::NOISE, epoch, receiver);
    synthesize_rx_frame(
        &[UserEcho {
            echo,
            qpsk: &qpsk,
            tx_beam: &beam,
        }],
        &p,
        false,
        Some(&mut noise),
        epoch,
        receiver,
    )
    .map_err(|e| invalid("epoch", format!("echo model: {e}")))
}
