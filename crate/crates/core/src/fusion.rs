//! Gating, receiver selection, maximum-likelihood fusion and the per-epoch
//! tracking state machine.

use crate::error::TrackError;
use crate::estimator::PositionEstimate;
use crate::geom::{Mat2, Vec2};
use crate::scalar::{lit, Real};
use crate::scenario::Node;

/// Consecutive all-invalid epochs after which a track is dropped.
pub const MAX_MISSES: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedEstimate<T> {
    pub position: Vec2<T>,
    pub covariance: Mat2<T>,
    pub receivers: Vec<usize>,
}

/// Valid iff the estimate is usable and lies within `beta` of the prediction.
pub fn gate_validate<T: Real>(estimate: &PositionEstimate<T>, predicted: Vec2<T>, beta: T) -> bool {
    estimate.valid && estimate.covariance.is_some() && estimate.position.distance(predicted) <= beta
}

/// Up to `n_sel` estimates with the smallest GDOP, lower receiver index first on ties.
pub fn select_receivers<T: Real>(
    valid: &[PositionEstimate<T>],
    n_sel: usize,
) -> Vec<PositionEstimate<T>> {
    let mut v: Vec<PositionEstimate<T>> = valid.iter().filter(|e| e.gdop.is_some()).copied().collect();
    v.sort_by(|a, b| {
        a.gdop
            .partial_cmp(&b.gdop)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.receiver_index.cmp(&b.receiver_index))
    });
    v.truncate(n_sel);
    v
}

/// Information-weighted combination: `Sigma = (sum Sigma_i^-1)^-1` and
/// `alpha = Sigma sum Sigma_i^-1 T_i`. A single input passes through unchanged.
pub fn ml_fuse<T: Real>(estimates: &[(Vec2<T>, Mat2<T>)]) -> Result<(Vec2<T>, Mat2<T>), TrackError> {
    match estimates {
        [] => Err(TrackError::Empty),
        [(t, s)] => {
            if s.is_spd() {
                Ok((*t, *s))
            } else {
                Err(TrackError::NotPositiveDefinite(0))
            }
        }
        _ => {
            let mut info = Mat2::zero();
            let mut weighted = Vec2::zero();
            for (i, (t, s)) in estimates.iter().enumerate() {
                let inv = s
                    .inverse()
                    .filter(|_| s.is_spd())
                    .ok_or(TrackError::NotPositiveDefinite(i))?
                    .symmetrized();
                info = info + inv;
                weighted = weighted + inv.mul_vec(*t);
            }
            let sigma = info
                .inverse()
                .ok_or(TrackError::NotPositiveDefinite(0))?
                .symmetrized();
            Ok((sigma.mul_vec(weighted), sigma))
        }
    }
}

/// Predicted transmit angle toward `position`, in the TX array's frame.
pub fn aod_toward<T: Real>(tx: &Node<T>, position: Vec2<T>) -> T {
    tx.local_angle((position - tx.position).bearing())
}

/// Constant-acceleration extrapolation `3 T^l - 3 T^{l-1} + T^{l-2}` and the
/// transmit angle toward it.
pub fn predict_next<T: Real>(
    t_l: Vec2<T>,
    t_l1: Vec2<T>,
    t_l2: Vec2<T>,
    tx: &Node<T>,
) -> (Vec2<T>, T) {
    let three = lit::<T>(3.0);
    let p = t_l.scale(three) - t_l1.scale(three) + t_l2;
    (p, aod_toward(tx, p))
}

/// What one epoch produced.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome<T> {
    Fused(FusedEstimate<T>),
    /// No receiver passed the gate; the track holds its prediction.
    Coasted(Vec2<T>),
}

impl<T: Real> StepOutcome<T> {
    pub fn position(&self) -> Vec2<T> {
        match self {
            Self::Fused(f) => f.position,
            Self::Coasted(p) => *p,
        }
    }
}

/// Track of one target under the 3-miss rule.
///
/// Acquisition seeds the history with the true initial position. Until three
/// positions exist the prediction degrades gracefully: one point holds still,
/// two points extrapolate at constant velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState<T> {
    /// Most recent first; at most three entries.
    pub history: Vec<Vec2<T>>,
    pub predicted: Vec2<T>,
    pub predicted_aod_rad: T,
    pub miss_count: u32,
    pub alive: bool,
    pub epoch: usize,
}

impl<T: Real> TrackState<T> {
    pub fn acquire(initial: Vec2<T>, tx: &Node<T>) -> Self {
        let mut s = Self {
            history: vec![initial],
            predicted: initial,
            predicted_aod_rad: T::zero(),
            miss_count: 0,
            alive: true,
            epoch: 0,
        };
        s.update_prediction(tx);
        s
    }

    fn update_prediction(&mut self, tx: &Node<T>) {
        let h = &self.history;
        let (p, aod) = match h.len() {
            0 => return,
            1 => (h[0], aod_toward(tx, h[0])),
            2 => {
                let p = h[0].scale(lit(2.0)) - h[1];
                (p, aod_toward(tx, p))
            }
            _ => predict_next(h[0], h[1], h[2], tx),
        };
        self.predicted = p;
        self.predicted_aod_rad = aod;
    }

    fn push(&mut self, position: Vec2<T>) {
        self.history.insert(0, position);
        self.history.truncate(3);
    }

    /// One epoch: gate every receiver against the current prediction, fuse
    /// the best `n_sel` survivors or coast, then predict the next epoch.
    pub fn step(
        &mut self,
        estimates: &[PositionEstimate<T>],
        beta: T,
        n_sel: usize,
        tx: &Node<T>,
    ) -> Result<StepOutcome<T>, TrackError> {
        if !self.alive {
            return Err(TrackError::Dead);
        }
        self.epoch += 1;
        let valid: Vec<PositionEstimate<T>> = estimates
            .iter()
            .filter(|e| gate_validate(e, self.predicted, beta))
            .copied()
            .collect();
        let outcome = if valid.is_empty() {
            self.miss_count += 1;
            if self.miss_count >= MAX_MISSES {
                self.alive = false;
            }
            StepOutcome::Coasted(self.predicted)
        } else {
            self.miss_count = 0;
            let selected = select_receivers(&valid, n_sel);
            let inputs: Vec<(Vec2<T>, Mat2<T>)> = selected
                .iter()
                .map(|e| (e.position, e.covariance.expect("gated estimates carry a covariance")))
                .collect();
            let (position, covariance) = ml_fuse(&inputs)?;
            StepOutcome::Fused(FusedEstimate {
                position,
                covariance,
                receivers: selected.iter().map(|e| e.receiver_index).collect(),
            })
        };
        self.push(outcome.position());
        self.update_prediction(tx);
        Ok(outcome)
    }
}
