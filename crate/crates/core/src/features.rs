//! Per-step input encoding shared by training data and the closed-loop simulator.
//!
//! Layout of one feature row (`FEATURE_DIM` = 17):
//!
//! | index | feature |
//! |-------|---------|
//! | 0 | lateral offset from the nearest lane center (m) |
//! | 1 | longitudinal velocity (m/s) |
//! | 2 | lateral velocity, backward difference over up to 3 steps (m/s) |
//! | 3 | acceleration (m/s²) |
//! | 4 | heading (rad) |
//! | 5..17 | six neighbor slots as (distance m, relative speed m/s) |
//!
//! Neighbor slots are ordered lead/lag in the own lane, then the left lane
//! (lane + 1), then the right lane (lane − 1). Missing neighbors are encoded
//! as `(SENTINEL_DISTANCE, 0)`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::vehicle::LaneGeometry;

pub const EGO_FEATURES: usize = 5;
pub const NEIGHBOR_SLOTS: usize = 6;
pub const FEATURE_DIM: usize = EGO_FEATURES + 2 * NEIGHBOR_SLOTS;
pub const SENTINEL_DISTANCE: f64 = 200.0;
pub const LATERAL_VELOCITY_SPAN: usize = 3;

pub const DEFAULT_HISTORY: usize = 20;
pub const DEFAULT_DT: f64 = 0.1;

/// Absolute kinematic sample of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub a: f64,
}

/// What a subject sees of another vehicle at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    /// One raw (unnormalized) feature row per history step.
    pub history: Vec<Vec<f64>>,
    /// Absolute states aligned with `history`; the last entry anchors predictions.
    pub track: Vec<TrackPoint>,
    pub dt: f64,
    pub lanes: LaneGeometry,
}

impl FeatureWindow {
    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.history.first().map_or(0, Vec::len)
    }

    pub fn anchor(&self) -> Option<&TrackPoint> {
        self.track.last()
    }

    pub fn validate(&self) -> Result<()> {
        if self.history.is_empty() {
            return Err(Error::Empty("feature window has no steps".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("window dt must be positive, got {}", self.dt)));
        }
        let d = self.input_dim();
        for row in &self.history {
            if row.len() != d {
                return Err(Error::Shape(format!("ragged feature window: {} vs {d}", row.len())));
            }
            ensure_finite(row, "feature window")?;
        }
        if !self.track.is_empty() && self.track.len() != self.history.len() {
            return Err(Error::Shape(format!(
                "track length {} does not match history length {}",
                self.track.len(),
                self.history.len()
            )));
        }
        Ok(())
    }

    /// Window made of the last `len` steps.
    pub fn tail(&self, len: usize) -> FeatureWindow {
        let start = self.history.len().saturating_sub(len);
        FeatureWindow {
            history: self.history[start..].to_vec(),
            track: self.track[start.min(self.track.len())..].to_vec(),
            dt: self.dt,
            lanes: self.lanes,
        }
    }
}

/// Backward-difference lateral velocity at the last point of `track`.
pub fn lateral_velocity(track: &[TrackPoint], dt: f64) -> f64 {
    let n = track.len();
    if n < 2 {
        return 0.0;
    }
    let span = LATERAL_VELOCITY_SPAN.min(n - 1);
    (track[n - 1].y - track[n - 1 - span].y) / (span as f64 * dt)
}

/// Ego part of the feature row for the last point of `track`.
pub fn ego_features(track: &[TrackPoint], lanes: &LaneGeometry, dt: f64) -> [f64; EGO_FEATURES] {
    let p = track.last().expect("ego_features on empty track");
    let vy = lateral_velocity(track, dt);
    let v_lon = (p.v * p.v - vy * vy).max(0.0).sqrt();
    [
        lanes.offset_from_center(p.y),
        v_lon,
        vy,
        p.a,
        vy.atan2(v_lon.max(1e-9)),
    ]
}

/// Neighbor slots for a subject at `(x, y, v)`.
pub fn neighbor_features(
    subject: &TrackPoint,
    others: &[Neighbor],
    lanes: &LaneGeometry,
) -> [f64; 2 * NEIGHBOR_SLOTS] {
    let own = lanes.lane_of(subject.y);
    // (lane, lead?) per slot
    let slots = [
        (own, true),
        (own, false),
        (own + 1, true),
        (own + 1, false),
        (own - 1, true),
        (own - 1, false),
    ];
    let mut best: [Option<(f64, f64)>; NEIGHBOR_SLOTS] = [None; NEIGHBOR_SLOTS];
    for o in others {
        let lane = lanes.lane_of(o.y);
        let dx = o.x - subject.x;
        for (slot, &(slot_lane, lead)) in slots.iter().enumerate() {
            if lane != slot_lane || (dx >= 0.0) != lead {
                continue;
            }
            let dist = dx.abs();
            if best[slot].is_none_or(|(d, _)| dist < d) {
                best[slot] = Some((dist, o.v - subject.v));
            }
        }
    }
    let mut out = [0.0; 2 * NEIGHBOR_SLOTS];
    for (slot, b) in best.iter().enumerate() {
        let (d, dv) = match b {
            Some((d, dv)) if *d < SENTINEL_DISTANCE => (*d, *dv),
            _ => (SENTINEL_DISTANCE, 0.0),
        };
        out[2 * slot] = d;
        out[2 * slot + 1] = dv;
    }
    out
}

pub fn encode_step(
    track: &[TrackPoint],
    others: &[Neighbor],
    lanes: &LaneGeometry,
    dt: f64,
) -> Vec<f64> {
    let mut row = Vec::with_capacity(FEATURE_DIM);
    row.extend_from_slice(&ego_features(track, lanes, dt));
    row.extend_from_slice(&neighbor_features(track.last().unwrap(), others, lanes));
    row
}

/// Z-score statistics, frozen at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for row in rows {
            n += 1;
            for ((s, q), &v) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                *s += v;
                *q += v * v;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var.sqrt() < 1e-8 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}
