use crate::error::TrajectoryError;
use crate::geom::Vec2;
use crate::scalar::{lit, Real};

/// Geometric primitive of a target path.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentKind<T> {
    Line {
        from: Vec2<T>,
        to: Vec2<T>,
    },
    /// Circular arc; counter-clockwise when `end_angle > start_angle`.
    Arc {
        center: Vec2<T>,
        radius: T,
        start_angle: T,
        end_angle: T,
    },
    /// `n_legs` straight legs of equal length whose headings alternate
    /// between `heading` and its mirror image about the x-axis.
    Zigzag {
        start: Vec2<T>,
        heading: T,
        leg_length: T,
        n_legs: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub kind: SegmentKind<T>,
    /// Arc-length spacing on this segment; falls back to the trajectory step.
    pub step_m: Option<T>,
}

impl<T: Real> Segment<T> {
    pub fn new(kind: SegmentKind<T>) -> Self {
        Self { kind, step_m: None }
    }

    pub fn with_step(mut self, step_m: T) -> Self {
        self.step_m = Some(step_m);
        self
    }

    pub fn length(&self) -> T {
        match &self.kind {
            SegmentKind::Line { from, to } => from.distance(*to),
            SegmentKind::Arc {
                radius,
                start_angle,
                end_angle,
                ..
            } => *radius * Float::abs(*end_angle - *start_angle),
            SegmentKind::Zigzag {
                leg_length, n_legs, ..
            } => *leg_length * T::from(*n_legs).unwrap(),
        }
    }

    pub fn start(&self) -> Vec2<T> {
        self.point_at(T::zero()).0
    }

    pub fn end(&self) -> Vec2<T> {
        self.point_at(self.length()).0
    }

    /// Position and unit tangent at arc length `s` from the segment start.
    pub fn point_at(&self, s: T) -> (Vec2<T>, Vec2<T>) {
        match &self.kind {
            SegmentKind::Line { from, to } => {
                let dir = (*to - *from).unit().unwrap_or_else(Vec2::zero);
                (*from + dir.scale(s), dir)
            }
            SegmentKind::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                let sense = if end_angle >= start_angle {
                    T::one()
                } else {
                    -T::one()
                };
                let angle = *start_angle + sense * s / *radius;
                let radial = Vec2::from_bearing(angle);
                let tangent = Vec2::new(-radial.y, radial.x).scale(sense);
                (*center + radial.scale(*radius), tangent)
            }
            SegmentKind::Zigzag {
                start,
                heading,
                leg_length,
                n_legs,
            } => {
                let mut p = *start;
                let mut remaining = s;
                for leg in 0..*n_legs {
                    let h = if leg % 2 == 0 { *heading } else { -*heading };
                    let dir = Vec2::from_bearing(h);
                    let last = leg + 1 == *n_legs;
                    if remaining <= *leg_length || last {
                        return (p + dir.scale(remaining), dir);
                    }
                    p = p + dir.scale(*leg_length);
                    remaining = remaining - *leg_length;
                }
                (p, Vec2::from_bearing(*heading))
            }
        }
    }

    /// Zigzag legs are sampled independently so that corners are hit exactly.
    fn pieces(&self) -> Vec<Segment<T>> {
        match &self.kind {
            SegmentKind::Zigzag {
                start,
                heading,
                leg_length,
                n_legs,
            } => {
                let mut out = Vec::with_capacity(*n_legs);
                let mut p = *start;
                for leg in 0..*n_legs {
                    let h = if leg % 2 == 0 { *heading } else { -*heading };
                    let to = p + Vec2::from_bearing(h).scale(*leg_length);
                    out.push(Segment {
                        kind: SegmentKind::Line { from: p, to },
                        step_m: self.step_m,
                    });
                    p = to;
                }
                out
            }
            _ => vec![self.clone()],
        }
    }
}

use num_traits::Float;

/// Ordered, connected list of path primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec<T> {
    pub segments: Vec<Segment<T>>,
    pub step_length_m: T,
}

/// True target state at one measurement epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointState<T> {
    pub epoch: usize,
    pub position: Vec2<T>,
    pub velocity: Vec2<T>,
}

/// The road path used in the reference experiments: a straight approach,
/// a 220 degree counter-clockwise turn and three 60 degree zigzag legs.
///
/// Straight parts are sampled every meter and the turn every 2 degrees of
/// arc, which is how the reference path data is tabulated.
pub fn build_paper_trajectory<T: Real>() -> TrajectorySpec<T> {
    let radius = lit::<T>(12.5);
    let center = Vec2::new(lit(27.5), T::zero());
    let start_angle = lit::<T>(90f64.to_radians());
    let end_angle = lit::<T>(310f64.to_radians());
    let arc = Segment::new(SegmentKind::Arc {
        center,
        radius,
        start_angle,
        end_angle,
    })
    .with_step(radius * lit(2f64.to_radians()));
    let arc_end = arc.end();
    TrajectorySpec {
        segments: vec![
            Segment::new(SegmentKind::Line {
                from: Vec2::new(lit(27.5), lit(25.0)),
                to: Vec2::new(lit(27.5), lit(12.5)),
            }),
            arc,
            Segment::new(SegmentKind::Zigzag {
                start: arc_end,
                heading: lit(-60f64.to_radians()),
                leg_length: lit(8.0),
                n_legs: 3,
            }),
        ],
        step_length_m: T::one(),
    }
}

/// Samples the path at fixed arc-length spacing within each segment.
///
/// Every segment is walked from its own start point; a sample landing on the
/// previous segment's last sample is emitted once. Velocity is the analytic
/// tangent scaled by `step / refresh_period`.
pub fn sample_waypoints<T: Real>(
    spec: &TrajectorySpec<T>,
    refresh_period_s: T,
) -> Result<Vec<WaypointState<T>>, TrajectoryError> {
    let join_tol = lit::<T>(1e-6);
    let dup_tol = lit::<T>(1e-9);
    let mut out: Vec<WaypointState<T>> = Vec::new();
    let mut prev_end: Option<Vec2<T>> = None;
    for (index, segment) in spec.segments.iter().enumerate() {
        let step = segment.step_m.unwrap_or(spec.step_length_m);
        if !(step > T::zero()) {
            return Err(TrajectoryError::BadStep(index));
        }
        let length = segment.length();
        if !(length > T::zero()) {
            return Err(TrajectoryError::DegenerateSegment(index));
        }
        if let Some(end) = prev_end {
            let gap = end.distance(segment.start());
            if gap > join_tol {
                return Err(TrajectoryError::Discontinuous {
                    index,
                    gap_m: gap.to_f64().unwrap(),
                });
            }
        }
        for piece in segment.pieces() {
            let piece_len = piece.length();
            let limit = piece_len + piece_len * lit(1e-12) + dup_tol;
            let mut j = 0usize;
            loop {
                let s = step * T::from(j).unwrap();
                if s > limit {
                    break;
                }
                let (position, tangent) = piece.point_at(s.min(piece_len));
                let duplicate = out
                    .last()
                    .is_some_and(|w| w.position.distance(position) <= dup_tol);
                if !duplicate {
                    out.push(WaypointState {
                        epoch: out.len(),
                        position,
                        velocity: tangent.scale(step / refresh_period_s),
                    });
                }
                j += 1;
            }
        }
        prev_end = Some(segment.end());
    }
    if out.len() < 3 {
        return Err(TrajectoryError::TooFewWaypoints(out.len()));
    }
    Ok(out)
}
