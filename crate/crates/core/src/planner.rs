//! Cubic lane-change curves in a step-local frame (origin at the step start,
//! x along the road).
//!
//! For a step starting with heading `θ` that must reach lateral offset `y'`
//! after longitudinal extent `x'` while ending lane-aligned:
//!
//! ```text
//! y(x) = tanθ·x + (3y' − 2x'·tanθ)/x'²·x² + (x'·tanθ − 2y')/x'³·x³
//! ```

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LANE_WIDTH: f64 = 3.5;
pub const DEFAULT_EXTENT: f64 = 50.0;
pub const DEFAULT_MAX_LATERAL_ACCEL: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeStep {
    pub theta_i: f64,
    pub x_end: f64,
    pub y_end: f64,
}

impl LaneChangeStep {
    pub fn new(theta_i: f64, x_end: f64, y_end: f64) -> Result<Self> {
        let step = Self { theta_i, x_end, y_end };
        step.validate()?;
        Ok(step)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_end.is_finite() && self.x_end > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step extent must be positive, got {}",
                self.x_end
            )));
        }
        if !(self.theta_i.is_finite() && self.theta_i.abs() < FRAC_PI_2) {
            return Err(Error::InvalidArgument(format!(
                "start heading must lie in (-pi/2, pi/2), got {}",
                self.theta_i
            )));
        }
        if !self.y_end.is_finite() {
            return Err(Error::NonFinite("step lateral displacement".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CubicCurve {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl CubicCurve {
    pub fn eval(&self, x: f64) -> f64 {
        self.a0 + x * (self.a1 + x * (self.a2 + x * self.a3))
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.a1 + x * (2.0 * self.a2 + 3.0 * self.a3 * x)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        2.0 * self.a2 + 6.0 * self.a3 * x
    }

    pub fn heading(&self, x: f64) -> f64 {
        self.slope(x).atan()
    }

    pub fn curvature(&self, x: f64) -> f64 {
        let s = self.slope(x);
        self.second_derivative(x) / (1.0 + s * s).powf(1.5)
    }
}

pub fn fit_cubic(step: &LaneChangeStep) -> Result<CubicCurve> {
    step.validate()?;
    let t = step.theta_i.tan();
    let (xe, ye) = (step.x_end, step.y_end);
    Ok(CubicCurve {
        a0: 0.0,
        a1: t,
        a2: (3.0 * ye - 2.0 * xe * t) / (xe * xe),
        a3: (xe * t - 2.0 * ye) / (xe * xe * xe),
    })
}

pub fn eval_curve(curve: &CubicCurve, x: f64) -> f64 {
    curve.eval(x)
}

pub fn eval_heading(curve: &CubicCurve, x: f64) -> f64 {
    curve.heading(x)
}

pub fn eval_curvature(curve: &CubicCurve, x: f64) -> f64 {
    curve.curvature(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Longitudinal speed.
    pub v: f64,
    /// Lateral speed.
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Linear interpolation of `(y, heading)` at longitudinal position `x`.
    /// Positions outside the sampled range clamp to the nearest end.
    /// Assumes `x` is non-decreasing along the trajectory.
    pub fn lateral_at(&self, x: f64) -> (f64, f64) {
        let pts = &self.points;
        match pts.len() {
            0 => (0.0, 0.0),
            1 => (pts[0].y, pts[0].heading),
            _ => {
                if x <= pts[0].x {
                    return (pts[0].y, pts[0].heading);
                }
                let last = pts[pts.len() - 1];
                if x >= last.x {
                    return (last.y, last.heading);
                }
                let idx = pts.partition_point(|p| p.x <= x);
                let (a, b) = (pts[idx - 1], pts[idx]);
                let span = b.x - a.x;
                let w = if span > 0.0 { (x - a.x) / span } else { 0.0 };
                (a.y + w * (b.y - a.y), a.heading + w * (b.heading - a.heading))
            }
        }
    }
}

/// Samples the curve at constant longitudinal speed. Sample `k` (1-based) sits
/// at `x = k·v·dt`; past `x_end` the vehicle holds the end offset, lane-aligned.
pub fn sample_trajectory(
    curve: &CubicCurve,
    step: &LaneChangeStep,
    v_long: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(v_long.is_finite() && v_long > 0.0) {
        return Err(Error::InvalidArgument(format!("speed must be positive, got {v_long}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    step.validate()?;
    let dx = v_long * dt;
    let n = (step.x_end / dx - 1e-9).ceil().max(1.0) as usize;
    Ok(Trajectory {
        points: (1..=n).map(|k| point_at(curve, step, k as f64 * dt, k as f64 * dx, v_long)).collect(),
    })
}

pub(crate) fn point_at(
    curve: &CubicCurve,
    step: &LaneChangeStep,
    t: f64,
    x: f64,
    v_long: f64,
) -> TrajectoryPoint {
    let xe = x.min(step.x_end);
    let heading = curve.heading(xe);
    TrajectoryPoint {
        t,
        x,
        y: curve.eval(xe),
        heading,
        v: v_long,
        vy: v_long * heading.tan(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComfortReport {
    pub pass: bool,
    pub peak_lateral_accel: f64,
}

const COMFORT_SAMPLES: usize = 256;

pub fn check_comfort(
    curve: &CubicCurve,
    step: &LaneChangeStep,
    v_long: f64,
    a_lat_max: f64,
) -> ComfortReport {
    let peak = (0..=COMFORT_SAMPLES)
        .map(|i| {
            let x = step.x_end * i as f64 / COMFORT_SAMPLES as f64;
            v_long * v_long * curve.curvature(x).abs()
        })
        .fold(0.0, f64::max);
    ComfortReport {
        pass: peak <= a_lat_max,
        peak_lateral_accel: peak,
    }
}

/// Longitudinal extent for a lane change at `speed`: at least `min_extent`,
/// stretched so the maneuver takes at least `min_duration` seconds.
pub fn lane_change_extent(speed: f64, min_extent: f64, min_duration: f64) -> f64 {
    min_extent.max(speed * min_duration)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(theta: f64, xe: f64, ye: f64) -> LaneChangeStep {
        LaneChangeStep::new(theta, xe, ye).unwrap()
    }

    #[test]
    fn straight_step_has_zero_coefficients() {
        for xe in [1.0, 37.0, 500.0] {
            let c = fit_cubic(&step(0.0, xe, 0.0)).unwrap();
            assert_eq!(c, CubicCurve::default());
        }
    }

    #[test]
    fn standard_lane_change_coefficients() {
        let c = fit_cubic(&step(0.0, 50.0, 3.5)).unwrap();
        assert_eq!(c.a0, 0.0);
        assert_eq!(c.a1, 0.0);
        assert!((c.a2 - 0.0042).abs() < 1e-15);
        assert!((c.a3 + 5.6e-5).abs() < 1e-15);
        assert!((c.eval(50.0) - 3.5).abs() < 1e-12);
        assert!(c.heading(50.0).abs() < 1e-12);
        // midpoint symmetry: 2.625 − 0.875
        assert!((c.eval(25.0) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn invalid_steps_rejected() {
        assert!(LaneChangeStep::new(0.0, 0.0, 3.5).is_err());
        assert!(LaneChangeStep::new(0.0, -5.0, 3.5).is_err());
        assert!(LaneChangeStep::new(FRAC_PI_2, 10.0, 3.5).is_err());
        assert!(LaneChangeStep::new(-2.0, 10.0, 3.5).is_err());
        let bad = LaneChangeStep { theta_i: 0.0, x_end: 0.0, y_end: 1.0 };
        assert!(fit_cubic(&bad).is_err());
    }

    #[test]
    fn zero_curve_evaluates_flat() {
        let c = CubicCurve::default();
        for x in [-3.0, 0.0, 12.5] {
            assert_eq!(eval_curve(&c, x), 0.0);
            assert_eq!(eval_heading(&c, x), 0.0);
            assert_eq!(eval_curvature(&c, x), 0.0);
        }
    }

    #[test]
    fn sampling_zero_curve() {
        let s = step(0.0, 2.0, 0.0);
        let tr = sample_trajectory(&CubicCurve::default(), &s, 10.0, 0.1).unwrap();
        let xs: Vec<f64> = tr.points.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![1.0, 2.0]);
        assert!(tr.points.iter().all(|p| p.y == 0.0));
    }

    #[test]
    fn sample_count_is_ceiling() {
        let s = step(0.02, 47.3, 3.5);
        let c = fit_cubic(&s).unwrap();
        for (v, dt) in [(10.0, 0.1), (23.0, 0.05), (7.7, 0.3)] {
            let tr = sample_trajectory(&c, &s, v, dt).unwrap();
            assert_eq!(tr.len(), (47.3f64 / (v * dt)).ceil() as usize);
            let last = tr.points.last().unwrap();
            assert!(last.x >= 47.3 - 1e-9 && last.x < 47.3 + v * dt);
        }
    }

    #[test]
    fn sampled_points_match_direct_evaluation() {
        let s = step(0.0, 50.0, 3.5);
        let c = fit_cubic(&s).unwrap();
        let tr = sample_trajectory(&c, &s, 10.0, 0.1).unwrap();
        assert_eq!(tr.len(), 50);
        for p in &tr.points {
            assert_eq!(p.y, c.eval(p.x));
            assert!((p.vy - 10.0 * p.heading.tan()).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_rejects_bad_speed() {
        let s = step(0.0, 50.0, 3.5);
        let c = fit_cubic(&s).unwrap();
        assert!(sample_trajectory(&c, &s, 0.0, 0.1).is_err());
        assert!(sample_trajectory(&c, &s, 10.0, -0.1).is_err());
    }

    #[test]
    fn comfort_straight_line() {
        let s = step(0.0, 50.0, 0.0);
        let r = check_comfort(&CubicCurve::default(), &s, 30.0, 2.5);
        assert!(r.pass);
        assert_eq!(r.peak_lateral_accel, 0.0);
    }

    #[test]
    fn comfort_scales_with_speed_squared() {
        let s = step(0.0, 50.0, 3.5);
        let c = fit_cubic(&s).unwrap();
        let slow = check_comfort(&c, &s, 10.0, 2.5);
        let fast = check_comfort(&c, &s, 40.0, 2.5);
        assert!((fast.peak_lateral_accel / slow.peak_lateral_accel - 16.0).abs() < 1e-9);
        assert!(slow.pass);
        assert!(!fast.pass);
    }

    #[test]
    fn interpolation_clamps_and_blends() {
        let s = step(0.0, 50.0, 3.5);
        let c = fit_cubic(&s).unwrap();
        let tr = sample_trajectory(&c, &s, 10.0, 0.1).unwrap();
        assert_eq!(tr.lateral_at(-5.0).0, tr.points[0].y);
        assert!((tr.lateral_at(80.0).0 - 3.5).abs() < 1e-12);
        let (y, _) = tr.lateral_at(25.5);
        assert!((y - c.eval(25.5)).abs() < 1e-3);
    }
}
