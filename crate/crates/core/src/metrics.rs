//! Spectral efficiency and predicted-AoD error, per-epoch records with their
//! CSV form, and Monte Carlo aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::RecordError;
use crate::scalar::{count, lit, wrap_angle, Real};
use crate::scenario::SystemParams;
use crate::signal::{inner, make_beamformer, steering_elements, BeamKind};

/// Tracking scheme a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    /// A single receiver tracks alone.
    Rx(usize),
    Fuse,
    /// The transmit beam follows the true position.
    Oracle,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Rx(i) => write!(f, "rx{i}"),
            Mode::Fuse => f.write_str("fuse"),
            Mode::Oracle => f.write_str("oracle"),
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fuse" => Ok(Mode::Fuse),
            "oracle" => Ok(Mode::Oracle),
            _ => s
                .strip_prefix("rx")
                .and_then(|i| i.parse().ok())
                .map(Mode::Rx)
                .ok_or_else(|| format!("unknown mode `{s}`")),
        }
    }
}

/// `log2(1 + (lambda / (4 pi d1))^2 P_T |a(theta)^H f(theta_hat)|^2 / (K N0 M df))`.
pub fn spectral_efficiency<T: Real>(
    theta_true_rad: T,
    theta_hat_rad: T,
    d1_m: T,
    params: &SystemParams<T>,
) -> T {
    let n = params.n_tx_antennas;
    let a = steering_elements(theta_true_rad, n);
    let f = make_beamformer(theta_hat_rad, n, BeamKind::Transmit);
    let gain = inner(&a, &f.weights).norm_sqr();
    let path = params.wavelength_m() / (lit::<T>(4.0) * T::PI() * d1_m);
    let snr = path * path * params.tx_power_w * gain
        / (count::<T>(params.n_users) * params.noise_variance_w());
    (T::one() + snr).log2()
}

/// Shortest signed `theta - theta_hat`, in degrees.
pub fn predicted_aod_error_deg<T: Real>(theta_true_rad: T, theta_hat_rad: T) -> T {
    wrap_angle(theta_true_rad - theta_hat_rad).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReceiverRecord {
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub valid: bool,
    pub gdop_est: Option<f64>,
    pub gdop_act: Option<f64>,
    pub selected: bool,
}

/// One epoch of one tracker. Optional fields are written as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub run_id: u32,
    pub epoch: usize,
    pub pt_dbm: f64,
    pub mode: Mode,
    pub x_true: f64,
    pub y_true: f64,
    pub theta_true_deg: f64,
    pub x_fused: Option<f64>,
    pub y_fused: Option<f64>,
    pub theta_pred_deg: Option<f64>,
    pub se_bps_hz: f64,
    pub pae_deg: Option<f64>,
    pub receivers: Vec<ReceiverRecord>,
}

impl EpochRecord {
    /// Sort key shared by every writer: power, mode, run, epoch.
    pub fn canonical_key(&self) -> (i64, Mode, u32, usize) {
        (milli_db(self.pt_dbm), self.mode, self.run_id, self.epoch)
    }
}

fn milli_db(dbm: f64) -> i64 {
    (dbm * 1000.0).round() as i64
}

pub fn sort_canonical(records: &mut [EpochRecord]) {
    records.sort_by_key(|r| r.canonical_key());
}

const BASE_COLUMNS: [&str; 12] = [
    "run_id",
    "epoch",
    "pt_dbm",
    "mode",
    "x_true",
    "y_true",
    "theta_true_deg",
    "x_fused",
    "y_fused",
    "theta_pred_deg",
    "se_bps_hz",
    "pae_deg",
];

const RECEIVER_COLUMNS: [&str; 6] = ["x", "y", "valid_", "gdop_est_", "gdop_act_", "selected_"];

pub fn epoch_header(n_receivers: usize) -> Vec<String> {
    let mut h: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 0..n_receivers {
        h.extend(RECEIVER_COLUMNS.iter().map(|c| format!("{c}{i}")));
    }
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes records under the header for `n_receivers` receivers.
pub fn write_epoch_csv<W: Write>(
    out: W,
    n_receivers: usize,
    records: &[EpochRecord],
) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(epoch_header(n_receivers))?;
    for r in records {
        if r.receivers.len() != n_receivers {
            return Err(RecordError::Field {
                column: "receivers".into(),
                reason: format!("expected {n_receivers}, got {}", r.receivers.len()),
            });
        }
        let mut row = vec![
            r.run_id.to_string(),
            r.epoch.to_string(),
            r.pt_dbm.to_string(),
            r.mode.to_string(),
            r.x_true.to_string(),
            r.y_true.to_string(),
            r.theta_true_deg.to_string(),
            opt(r.x_fused),
            opt(r.y_fused),
            opt(r.theta_pred_deg),
            r.se_bps_hz.to_string(),
            opt(r.pae_deg),
        ];
        for rx in &r.receivers {
            row.extend([
                opt(rx.x),
                opt(rx.y),
                flag(rx.valid).to_string(),
                opt(rx.gdop_est),
                opt(rx.gdop_act),
                flag(rx.selected).to_string(),
            ]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

struct Row<'a> {
    header: &'a csv::StringRecord,
    record: &'a csv::StringRecord,
}

impl Row<'_> {
    fn cell(&self, i: usize) -> &str {
        self.record.get(i).unwrap_or("")
    }

    fn fail(&self, i: usize, reason: impl Into<String>) -> RecordError {
        RecordError::Field {
            column: self.header.get(i).unwrap_or("?").to_string(),
            reason: reason.into(),
        }
    }

    fn parse<V: FromStr>(&self, i: usize) -> Result<V, RecordError> {
        self.cell(i)
            .parse()
            .map_err(|_| self.fail(i, format!("cannot parse `{}`", self.cell(i))))
    }

    fn optional(&self, i: usize) -> Result<Option<f64>, RecordError> {
        if self.cell(i).is_empty() {
            Ok(None)
        } else {
            self.parse(i).map(Some)
        }
    }

    fn flag(&self, i: usize) -> Result<bool, RecordError> {
        match self.cell(i) {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(self.fail(i, format!("expected 0 or 1, got `{other}`"))),
        }
    }
}

/// Reads a per-epoch CSV, checking the header column by column.
pub fn read_epoch_csv<R: Read>(input: R) -> Result<Vec<EpochRecord>, RecordError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let extra = header.len().checked_sub(BASE_COLUMNS.len()).unwrap_or(0);
    let n_rx = extra / RECEIVER_COLUMNS.len();
    let expected = epoch_header(n_rx);
    for (i, name) in expected.iter().enumerate() {
        if header.get(i) != Some(name.as_str()) {
            return Err(RecordError::Field {
                column: name.clone(),
                reason: format!("missing or misplaced (found `{}`)", header.get(i).unwrap_or("")),
            });
        }
    }
    if header.len() != expected.len() {
        return Err(RecordError::Field {
            column: header.get(expected.len()).unwrap_or("?").to_string(),
            reason: "unexpected column".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let record = rec?;
        let row = Row {
            header: &header,
            record: &record,
        };
        let mode = row
            .cell(3)
            .parse::<Mode>()
            .map_err(|e| row.fail(3, e))?;
        let mut receivers = Vec::with_capacity(n_rx);
        for i in 0..n_rx {
            let b = BASE_COLUMNS.len() + i * RECEIVER_COLUMNS.len();
            receivers.push(ReceiverRecord {
                x: row.optional(b)?,
                y: row.optional(b + 1)?,
                valid: row.flag(b + 2)?,
                gdop_est: row.optional(b + 3)?,
                gdop_act: row.optional(b + 4)?,
                selected: row.flag(b + 5)?,
            });
        }
        out.push(EpochRecord {
            run_id: row.parse(0)?,
            epoch: row.parse(1)?,
            pt_dbm: row.parse(2)?,
            mode,
            x_true: row.parse(4)?,
            y_true: row.parse(5)?,
            theta_true_deg: row.parse(6)?,
            x_fused: row.optional(7)?,
            y_fused: row.optional(8)?,
            theta_pred_deg: row.optional(9)?,
            se_bps_hz: row.parse(10)?,
            pae_deg: row.optional(11)?,
            receivers,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub pt_dbm: f64,
    pub mode: Mode,
    pub avg_se: f64,
    pub n_runs: usize,
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SweepSummary]) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pt_dbm", "mode", "avg_se", "n_runs"])?;
    for r in rows {
        w.write_record([
            r.pt_dbm.to_string(),
            r.mode.to_string(),
            r.avg_se.to_string(),
            r.n_runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SweepSummary>, RecordError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    for (i, name) in ["pt_dbm", "mode", "avg_se", "n_runs"].iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(RecordError::Field {
                column: name.to_string(),
                reason: "missing or misplaced".into(),
            });
        }
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let record = rec?;
        let row = Row {
            header: &header,
            record: &record,
        };
        out.push(SweepSummary {
            pt_dbm: row.parse(0)?,
            mode: row.cell(1).parse().map_err(|e: String| row.fail(1, e))?,
            avg_se: row.parse(2)?,
            n_runs: row.parse(3)?,
        });
    }
    Ok(out)
}

/// Median, quartiles and Tukey whiskers (most extreme points within 1.5 IQR).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub n_outliers: usize,
}

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence).collect();
    Some(BoxStats {
        n: v.len(),
        q1,
        median,
        q3,
        whisker_low: inside.first().copied().unwrap_or(median),
        whisker_high: inside.last().copied().unwrap_or(median),
        n_outliers: v.len() - inside.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMean {
    pub pt_dbm: f64,
    pub mode: Mode,
    pub epoch: usize,
    pub mean_se: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub summaries: Vec<SweepSummary>,
    pub epoch_means: Vec<EpochMean>,
    pub pae: Vec<(f64, Mode, BoxStats)>,
}

/// Per-record values kept until [`Aggregator::finish`], which sums them in
/// canonical order so the result does not depend on how partial aggregates
/// were merged.
#[derive(Debug, Clone, Default)]
pub struct Aggregator {
    config_hash: Option<String>,
    cells: BTreeMap<(i64, Mode), BTreeMap<(u32, usize), (f64, Option<f64>)>>,
    dbm: BTreeMap<i64, f64>,
}

impl Aggregator {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: Some(config_hash.into()),
            ..Self::default()
        }
    }

    pub fn add(&mut self, r: &EpochRecord) -> Result<(), RecordError> {
        let key = milli_db(r.pt_dbm);
        self.dbm.insert(key, r.pt_dbm);
        let cell = self.cells.entry((key, r.mode)).or_default();
        if cell.insert((r.run_id, r.epoch), (r.se_bps_hz, r.pae_deg)).is_some() {
            return Err(RecordError::Field {
                column: "epoch".into(),
                reason: format!(
                    "duplicate record for run {} epoch {} at {} dBm {}",
                    r.run_id, r.epoch, r.pt_dbm, r.mode
                ),
            });
        }
        Ok(())
    }

    pub fn extend<'a>(&mut self, records: impl IntoIterator<Item = &'a EpochRecord>) -> Result<(), RecordError> {
        records.into_iter().try_for_each(|r| self.add(r))
    }

    pub fn merge(&mut self, other: Aggregator) -> Result<(), RecordError> {
        match (&self.config_hash, &other.config_hash) {
            (Some(a), Some(b)) if a != b => {
                return Err(RecordError::MixedConfig(a.clone(), b.clone()))
            }
            (None, Some(b)) => self.config_hash = Some(b.clone()),
            _ => {}
        }
        self.dbm.extend(other.dbm);
        for (key, cell) in other.cells {
            let mine = self.cells.entry(key).or_default();
            for (k, v) in cell {
                if mine.insert(k, v).is_some() {
                    return Err(RecordError::Field {
                        column: "epoch".into(),
                        reason: format!("duplicate record for run {} epoch {}", k.0, k.1),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> AggregateReport {
        let mut summaries = Vec::new();
        let mut epoch_means = Vec::new();
        let mut pae = Vec::new();
        for (&(key, mode), cell) in &self.cells {
            let pt_dbm = self.dbm[&key];
            let runs: BTreeSet<u32> = cell.keys().map(|k| k.0).collect();
            let total: f64 = cell.values().map(|v| v.0).sum();
            summaries.push(SweepSummary {
                pt_dbm,
                mode,
                avg_se: total / cell.len() as f64,
                n_runs: runs.len(),
            });
            let mut by_epoch: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for (&(_, epoch), v) in cell {
                let e = by_epoch.entry(epoch).or_default();
                e.0 += v.0;
                e.1 += 1;
            }
            epoch_means.extend(by_epoch.into_iter().map(|(epoch, (s, n))| EpochMean {
                pt_dbm,
                mode,
                epoch,
                mean_se: s / n as f64,
                n_runs: n,
            }));
            let errors: Vec<f64> = cell.values().filter_map(|v| v.1).collect();
            if let Some(b) = box_stats(&errors) {
                pae.push((pt_dbm, mode, b));
            }
        }
        AggregateReport {
            summaries,
            epoch_means,
            pae,
        }
    }
}
