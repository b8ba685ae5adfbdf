//! Gipps-style minimum following distance extended with body length, and the
//! risk index built on top of it.
//!
//! The required distance is the stopping-distance difference of the two
//! vehicles after the rear driver's reaction time, plus one body length:
//!
//! ```text
//! d_safe = max(L, v_rear·τ + v_rear²/(2·b_rear) − v_front²/(2·b_front) + L)
//! ```
//!
//! The risk index is the clamped relative deficit of the actual gap versus
//! `d_safe`: 0 when the gap is at least `d_safe`, 1 at contact. Lower is safer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GippsParams {
    /// Rear driver reaction time (s).
    pub tau: f64,
    /// Rear vehicle maximum braking (m/s², positive).
    pub b_rear: f64,
    /// Front vehicle maximum braking (m/s², positive).
    pub b_front: f64,
    pub body_length: f64,
}

impl Default for GippsParams {
    fn default() -> Self {
        Self {
            tau: 1.0,
            b_rear: 4.0,
            b_front: 4.0,
            body_length: 5.0,
        }
    }
}

impl GippsParams {
    pub fn truck() -> Self {
        Self {
            body_length: 12.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tau.is_finite()
            && self.tau > 0.0
            && self.b_rear.is_finite()
            && self.b_rear > 0.0
            && self.b_front.is_finite()
            && self.b_front > 0.0
            && self.body_length.is_finite()
            && self.body_length >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Gipps parameters {self:?}")))
        }
    }
}

/// Required distance before the floor at `body_length` is applied.
pub fn raw_safe_distance(v_rear: f64, v_front: f64, p: &GippsParams) -> f64 {
    // stopping terms grouped so equal speeds and braking cancel exactly
    v_rear * p.tau + (v_rear * v_rear / (2.0 * p.b_rear) - v_front * v_front / (2.0 * p.b_front))
        + p.body_length
}

pub fn safe_distance(v_rear: f64, v_front: f64, p: &GippsParams) -> Result<f64> {
    if !(v_rear >= 0.0 && v_front >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "speeds must be non-negative, got rear {v_rear} front {v_front}"
        )));
    }
    Ok(raw_safe_distance(v_rear, v_front, p).max(p.body_length))
}

/// Bumper-to-bumper distance; negative means the bodies overlap.
pub fn gap(rear: &VehicleState, front: &VehicleState) -> f64 {
    front.rear() - rear.x
}

pub fn rai(gap: f64, d_safe: f64) -> Result<f64> {
    if !(d_safe > 0.0) {
        return Err(Error::InvalidArgument(format!("d_safe must be positive, got {d_safe}")));
    }
    Ok(rai_unchecked(gap, d_safe))
}

pub(crate) fn rai_unchecked(gap: f64, d_safe: f64) -> f64 {
    ((d_safe - gap) / d_safe).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSample {
    pub t: f64,
    /// Gap of the riskiest relevant pair, `f64::INFINITY` if none.
    pub gap: f64,
    pub d_safe: f64,
    pub rai: f64,
}

/// Whether `other` shares enough lateral extent with `ego` to count as in-lane.
pub fn laterally_relevant(ego: &VehicleState, other: &VehicleState) -> bool {
    let overlap = 0.5 * (ego.width + other.width) - (ego.y - other.y).abs();
    overlap > 0.5 * ego.width
}

/// Risk of one ordered pair as seen from `ego`: ego is the rear vehicle when
/// `other` is ahead, the front vehicle otherwise.
pub fn pair_risk(ego: &VehicleState, other: &VehicleState, p: &GippsParams) -> (f64, f64, f64) {
    let (g, d) = if other.x >= ego.x {
        (gap(ego, other), safe_distance_clamped(ego.v, other.v, p))
    } else {
        (gap(other, ego), safe_distance_clamped(other.v, ego.v, p))
    };
    (g, d, rai_unchecked(g, d))
}

fn safe_distance_clamped(v_rear: f64, v_front: f64, p: &GippsParams) -> f64 {
    raw_safe_distance(v_rear.max(0.0), v_front.max(0.0), p).max(p.body_length)
}

pub fn scene_rai(t: f64, ego: &VehicleState, others: &[VehicleState], p: &GippsParams) -> RiskSample {
    let mut best = RiskSample {
        t,
        gap: f64::INFINITY,
        d_safe: p.body_length,
        rai: 0.0,
    };
    for other in others.iter().filter(|o| o.id != ego.id) {
        if !laterally_relevant(ego, other) {
            continue;
        }
        let (g, d, r) = pair_risk(ego, other, p);
        if r > best.rai || (r == best.rai && g < best.gap) {
            best = RiskSample { t, gap: g, d_safe: d, rai: r };
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChangeCheck {
    pub safe: bool,
    /// `gap − d_safe` towards the target-lane leader, `+∞` when absent.
    pub leader_margin: f64,
    pub follower_margin: f64,
}

pub fn is_lane_change_safe(
    ego: &VehicleState,
    leader: Option<&VehicleState>,
    follower: Option<&VehicleState>,
    p: &GippsParams,
) -> LaneChangeCheck {
    let leader_margin = leader.map_or(f64::INFINITY, |l| {
        gap(ego, l) - safe_distance_clamped(ego.v, l.v, p)
    });
    let follower_margin = follower.map_or(f64::INFINITY, |f| {
        gap(f, ego) - safe_distance_clamped(f.v, ego.v, p)
    });
    LaneChangeCheck {
        safe: leader_margin >= 0.0 && follower_margin >= 0.0,
        leader_margin,
        follower_margin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> GippsParams {
        GippsParams::default()
    }

    #[test]
    fn stationary_pair_needs_one_body_length() {
        assert_eq!(safe_distance(0.0, 0.0, &p()).unwrap(), 5.0);
    }

    #[test]
    fn equal_speed_highway_case() {
        // 20·1 + 400/8 − 400/8 + 5
        assert_eq!(safe_distance(20.0, 20.0, &p()).unwrap(), 25.0);
    }

    #[test]
    fn faster_leader_hits_floor() {
        assert!(raw_safe_distance(0.0, 30.0, &p()) < 0.0);
        assert_eq!(safe_distance(0.0, 30.0, &p()).unwrap(), 5.0);
    }

    #[test]
    fn negative_speed_rejected() {
        assert!(safe_distance(-1.0, 0.0, &p()).is_err());
        assert!(safe_distance(1.0, f64::NAN, &p()).is_err());
    }

    #[test]
    fn gap_examples() {
        let front = VehicleState::car(1, 100.0, 0.0, 0.0, 1);
        let rear = VehicleState::car(2, 80.0, 0.0, 0.0, 1);
        assert_eq!(gap(&rear, &front), 15.0);
        let touching = VehicleState::car(3, 95.0, 0.0, 0.0, 1);
        assert_eq!(gap(&touching, &front), 0.0);
        let overlapping = VehicleState::car(4, 97.0, 0.0, 0.0, 1);
        assert!(gap(&overlapping, &front) < 0.0);
    }

    #[test]
    fn rai_anchor_points() {
        assert_eq!(rai(25.0, 25.0).unwrap(), 0.0);
        assert_eq!(rai(0.0, 25.0).unwrap(), 1.0);
        assert_eq!(rai(12.5, 25.0).unwrap(), 0.5);
        assert_eq!(rai(-3.0, 25.0).unwrap(), 1.0);
        assert_eq!(rai(100.0, 25.0).unwrap(), 0.0);
        assert!(rai(1.0, 0.0).is_err());
    }

    #[test]
    fn scene_without_relevant_vehicle() {
        let ego = VehicleState::car(0, 0.0, 0.0, 20.0, 1);
        let other = VehicleState::car(1, 10.0, 3.5, 20.0, 2);
        let s = scene_rai(0.0, &ego, &[other], &p());
        assert_eq!(s.rai, 0.0);
        assert!(s.gap.is_infinite());
    }

    #[test]
    fn scene_single_leader_half_deficit() {
        let ego = VehicleState::car(0, 0.0, 0.0, 20.0, 1);
        // d_safe = 25, gap 12.5
        let leader = VehicleState::car(1, 17.5, 0.0, 20.0, 1);
        let s = scene_rai(1.0, &ego, &[leader], &p());
        assert_eq!(s.rai, 0.5);
        assert_eq!(s.d_safe, 25.0);
    }

    #[test]
    fn empty_target_lane_is_safe() {
        let ego = VehicleState::car(0, 0.0, 0.0, 20.0, 1);
        let c = is_lane_change_safe(&ego, None, None, &p());
        assert!(c.safe);
        assert!(c.leader_margin.is_infinite() && c.follower_margin.is_infinite());
    }

    #[test]
    fn leader_just_inside_boundary_is_unsafe() {
        let ego = VehicleState::car(0, 0.0, 3.5, 20.0, 2);
        let leader = VehicleState::car(1, 25.0 - 0.01 + 5.0, 3.5, 20.0, 2);
        let c = is_lane_change_safe(&ego, Some(&leader), None, &p());
        assert!(!c.safe);
        assert!((c.leader_margin + 0.01).abs() < 1e-9);
        let leader = VehicleState::car(1, 30.0, 3.5, 20.0, 2);
        assert!(is_lane_change_safe(&ego, Some(&leader), None, &p()).safe);
    }
}
