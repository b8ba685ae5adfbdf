//! Receding-horizon controller tracking a lane-change reference while keeping
//! the safe following distance to predicted obstacles.
//!
//! The control sequence is piecewise constant over blocks of `block_len`
//! steps. Each warm start is refined by projected Levenberg-Marquardt on the
//! stacked residual vector with a forward-difference Jacobian.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::planner::{Trajectory, TrajectoryPoint};
use crate::predictor::PredictedPoint;
use crate::safety::{raw_safe_distance, GippsParams};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub w_lateral: f64,
    pub w_heading: f64,
    pub w_speed: f64,
    pub w_accel: f64,
    pub w_steer: f64,
    /// Penalty on steering changes between consecutive blocks.
    pub w_steer_rate: f64,
    pub w_slack: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub steer_min: f64,
    pub steer_max: f64,
    pub wheelbase: f64,
    pub block_len: usize,
    pub iterations: usize,
    /// Relative slack (d_safe - gap) / d_safe at which a plan counts as
    /// unsafe. 1.0 means predicted contact.
    pub fallback_threshold: f64,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            dt: 0.1,
            w_lateral: 1.0,
            w_heading: 4.0,
            w_speed: 0.2,
            w_accel: 0.05,
            w_steer: 20.0,
            w_steer_rate: 200.0,
            w_slack: 1.0e4,
            a_min: -8.0,
            a_max: 3.0,
            steer_min: -0.5,
            steer_max: 0.5,
            wheelbase: 2.7,
            block_len: 5,
            iterations: 15,
            fallback_threshold: 1.0,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.w_lateral,
            self.w_heading,
            self.w_speed,
            self.w_accel,
            self.w_steer,
            self.w_steer_rate,
            self.w_slack,
        ];
        if self.horizon == 0 || self.block_len == 0 {
            return Err(Error::InvalidArgument("horizon and block length must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        if !(self.a_min < 0.0 && 0.0 < self.a_max) || !(self.steer_min < self.steer_max) {
            return Err(Error::InvalidArgument("need a_min < 0 < a_max and steer_min < steer_max".into()));
        }
        if !(self.wheelbase > 0.0) || !(self.fallback_threshold > 0.0) {
            return Err(Error::InvalidArgument("wheelbase and fallback threshold must be positive".into()));
        }
        let tracking = weights[..3].iter().cloned().fold(0.0, f64::max);
        if self.w_slack > 0.0 && self.w_slack < 100.0 * tracking {
            return Err(Error::InvalidArgument(
                "slack weight must be at least 100x the tracking weights".into(),
            ));
        }
        Ok(())
    }

    fn blocks(&self) -> usize {
        self.horizon.div_ceil(self.block_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub accel: f64,
    pub steer: f64,
}

/// Predicted motion of one obstacle; `points[k]` is the state `k + 1` steps
/// ahead. Short forecasts hold their last point.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleForecast {
    pub id: u32,
    pub length: f64,
    pub width: f64,
    pub points: Vec<PredictedPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pose {
    x: f64,
    y: f64,
    heading: f64,
    v: f64,
}

fn bicycle_step(s: Pose, u: ControlInput, dt: f64, wheelbase: f64) -> Pose {
    Pose {
        x: s.x + s.v * s.heading.cos() * dt,
        y: s.y + s.v * s.heading.sin() * dt,
        heading: s.heading + s.v / wheelbase * u.steer.tan() * dt,
        v: (s.v + u.accel * dt).max(0.0),
    }
}

/// One bicycle-model step of a full vehicle state; lane and acceleration are
/// refreshed, the rest of the body is carried over.
pub fn advance(state: &VehicleState, u: ControlInput, dt: f64, wheelbase: f64, lanes: &crate::vehicle::LaneGeometry) -> VehicleState {
    let s = bicycle_step(
        Pose {
            x: state.x,
            y: state.y,
            heading: state.heading,
            v: state.v,
        },
        u,
        dt,
        wheelbase,
    );
    VehicleState {
        x: s.x,
        y: s.y,
        heading: s.heading,
        v: s.v,
        a: u.accel,
        lane: lanes.lane_of(s.y),
        ..*state
    }
}

/// Kinematic bicycle rollout. Returns the initial state followed by one point
/// per control.
pub fn rollout(state: &VehicleState, controls: &[ControlInput], dt: f64, wheelbase: f64) -> Trajectory {
    let mut s = Pose {
        x: state.x,
        y: state.y,
        heading: state.heading,
        v: state.v,
    };
    let point = |k: usize, s: Pose| TrajectoryPoint {
        t: k as f64 * dt,
        x: s.x,
        y: s.y,
        heading: s.heading,
        v: s.v,
        vy: s.v * s.heading.sin(),
    };
    let mut points = Vec::with_capacity(controls.len() + 1);
    points.push(point(0, s));
    for (k, u) in controls.iter().enumerate() {
        s = bicycle_step(s, *u, dt, wheelbase);
        points.push(point(k + 1, s));
    }
    Trajectory { points }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcDiagnostics {
    pub cost: f64,
    pub warm_start_costs: Vec<f64>,
    pub chosen_start: usize,
    /// Per obstacle: whether its slack term is non-zero in the returned plan.
    pub active_slack: Vec<bool>,
    pub max_relative_slack: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcPlan {
    pub controls: Vec<ControlInput>,
    pub diagnostics: MpcDiagnostics,
}

struct Problem<'a> {
    start: Pose,
    ego_length: f64,
    ego_width: f64,
    reference: &'a Trajectory,
    obstacles: &'a [ObstacleForecast],
    gipps: &'a GippsParams,
    cfg: &'a MpcConfig,
}

/// Smooth lateral relevance: 1 while the bodies overlap laterally, fading to
/// 0 half a body width further out.
fn relevance(dy: f64, ego_width: f64, other_width: f64) -> f64 {
    let w = 0.5 * (ego_width + other_width);
    ((1.5 * w - dy.abs()) / (0.5 * w)).clamp(0.0, 1.0)
}

struct Evaluation {
    residuals: Vec<f64>,
    /// Per obstacle, the largest relevance-weighted relative slack.
    relative_slack: Vec<f64>,
}

impl Problem<'_> {
    fn expand(&self, u: &[f64]) -> Vec<ControlInput> {
        (0..self.cfg.horizon)
            .map(|k| {
                let b = k / self.cfg.block_len;
                ControlInput {
                    accel: u[2 * b],
                    steer: u[2 * b + 1],
                }
            })
            .collect()
    }

    fn project(&self, u: &mut [f64]) {
        for pair in u.chunks_exact_mut(2) {
            pair[0] = pair[0].clamp(self.cfg.a_min, self.cfg.a_max);
            pair[1] = pair[1].clamp(self.cfg.steer_min, self.cfg.steer_max);
        }
    }

    fn slack(&self, s: &Pose, obs: &ObstacleForecast, k: usize) -> (f64, f64) {
        if obs.points.is_empty() {
            return (0.0, 0.0);
        }
        let o = &obs.points[k.min(obs.points.len()) - 1];
        // the planned pose k steps ahead counts too, so no control can hide an obstacle
        let y_plan = self.reference.points[k.min(self.reference.len() - 1)].y;
        let rel = relevance(o.y - s.y, self.ego_width, obs.width).max(relevance(o.y - y_plan, self.ego_width, obs.width));
        if rel == 0.0 {
            return (0.0, 0.0);
        }
        let (gap, d) = if o.x >= s.x {
            (o.x - obs.length - s.x, raw_safe_distance(s.v, o.v.max(0.0), self.gipps))
        } else {
            (s.x - self.ego_length - o.x, raw_safe_distance(o.v.max(0.0), s.v, self.gipps))
        };
        let d = d.max(self.gipps.body_length);
        let excess = (d - gap).max(0.0);
        (rel * excess, rel * excess / d)
    }

    fn evaluate(&self, u: &[f64]) -> Evaluation {
        let cfg = self.cfg;
        let (wl, wh, wv) = (cfg.w_lateral.sqrt(), cfg.w_heading.sqrt(), cfg.w_speed.sqrt());
        let (wa, ws, wr, wk) = (
            cfg.w_accel.sqrt(),
            cfg.w_steer.sqrt(),
            cfg.w_steer_rate.sqrt(),
            cfg.w_slack.sqrt(),
        );
        let controls = self.expand(u);
        let mut residuals = Vec::with_capacity(cfg.horizon * (5 + self.obstacles.len()) + u.len() / 2);
        let mut relative_slack = vec![0.0; self.obstacles.len()];
        let mut s = self.start;
        for (i, c) in controls.iter().enumerate() {
            let k = i + 1;
            s = bicycle_step(s, *c, cfg.dt, cfg.wheelbase);
            let (y_ref, h_ref) = self.reference.lateral_at(s.x);
            let v_ref = self.reference.points[k.min(self.reference.len() - 1)].v;
            residuals.push(wl * (s.y - y_ref));
            residuals.push(wh * (s.heading - h_ref));
            residuals.push(wv * (s.v - v_ref));
            residuals.push(wa * c.accel);
            residuals.push(ws * c.steer);
            for (j, obs) in self.obstacles.iter().enumerate() {
                let (excess, relative) = self.slack(&s, obs, k);
                residuals.push(wk * excess);
                relative_slack[j] = f64::max(relative_slack[j], relative);
            }
        }
        for b in 1..u.len() / 2 {
            residuals.push(wr * (u[2 * b + 1] - u[2 * b - 1]));
        }
        Evaluation {
            residuals,
            relative_slack,
        }
    }

    fn cost(&self, u: &[f64]) -> f64 {
        self.evaluate(u).residuals.iter().map(|r| r * r).sum()
    }

    fn refine(&self, mut u: Vec<f64>) -> (Vec<f64>, f64) {
        self.project(&mut u);
        let n = u.len();
        let mut r = self.evaluate(&u).residuals;
        let mut cost: f64 = r.iter().map(|v| v * v).sum();
        let mut lambda = 1e-3;
        let mut jacobian = self.jacobian(&u, &r);
        for _ in 0..self.cfg.iterations {
            let jt = jacobian.transpose();
            let a = &jt * &jacobian;
            let g = &jt * DVector::from_column_slice(&r);
            let mut damped = a.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * (a[(i, i)] + 1e-9);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-g));
            let mut trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            self.project(&mut trial);
            let tr = self.evaluate(&trial).residuals;
            let tc: f64 = tr.iter().map(|v| v * v).sum();
            if tc < cost {
                u = trial;
                r = tr;
                cost = tc;
                lambda = (lambda / 3.0).max(1e-9);
                jacobian = self.jacobian(&u, &r);
            } else {
                lambda = (lambda * 5.0).min(1e9);
            }
        }
        (u, cost)
    }

    fn jacobian(&self, u: &[f64], r: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(r.len(), u.len());
        let mut probe = u.to_vec();
        for c in 0..u.len() {
            let h = 1e-6 * u[c].abs().max(if c % 2 == 0 { 1.0 } else { 0.05 });
            probe[c] = u[c] + h;
            let rp = self.evaluate(&probe).residuals;
            probe[c] = u[c];
            for (row, (a, b)) in rp.iter().zip(r).enumerate() {
                j[(row, c)] = (a - b) / h;
            }
        }
        j
    }

    /// Proportional lateral/speed tracker, averaged per block.
    fn reference_following(&self) -> Vec<f64> {
        let cfg = self.cfg;
        let mut s = self.start;
        let controls: Vec<ControlInput> = (0..cfg.horizon)
            .map(|k| {
                let (y_ref, h_ref) = self.reference.lateral_at(s.x);
                let v = s.v.max(1.0);
                let desired = h_ref + (0.5 * (y_ref - s.y) / v).atan();
                let yaw_rate = (desired - s.heading) / 0.5;
                let c = ControlInput {
                    accel: (self.reference.points[k.min(self.reference.len() - 1)].v - s.v)
                        .clamp(cfg.a_min, cfg.a_max),
                    steer: (cfg.wheelbase * yaw_rate / v).atan().clamp(cfg.steer_min, cfg.steer_max),
                };
                s = bicycle_step(s, c, cfg.dt, cfg.wheelbase);
                c
            })
            .collect();
        let mut u = vec![0.0; 2 * cfg.blocks()];
        for (b, chunk) in controls.chunks(cfg.block_len).enumerate() {
            let n = chunk.len() as f64;
            u[2 * b] = chunk.iter().map(|c| c.accel).sum::<f64>() / n;
            u[2 * b + 1] = chunk.iter().map(|c| c.steer).sum::<f64>() / n;
        }
        u
    }

    fn warm_starts(&self) -> Vec<Vec<f64>> {
        let cfg = self.cfg;
        let blocks = cfg.blocks();
        let coast = vec![0.0; 2 * blocks];
        let brake: Vec<f64> = (0..blocks).flat_map(|_| [0.5 * cfg.a_min, 0.0]).collect();
        let follow = self.reference_following();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let jitter: Vec<f64> = follow
            .chunks_exact(2)
            .flat_map(|p| {
                [
                    p[0] + rng.random_range(-0.1..0.1) * (cfg.a_max - cfg.a_min),
                    p[1] + rng.random_range(-0.02..0.02) * (cfg.steer_max - cfg.steer_min),
                ]
            })
            .collect();
        let mut starts = vec![coast, brake, follow, jitter];
        for s in &mut starts {
            self.project(s);
        }
        starts
    }
}

/// Optimizes the control sequence over the horizon.
///
/// `reference.points[k]` is the planned pose `k` steps ahead: its speed is the
/// speed target and its lateral position decides which obstacles the plan
/// must keep clear of. Lateral tracking error is measured against the
/// reference interpolated at the ego's actual longitudinal position. The returned cost never
/// exceeds any warm start's cost unless the braking fallback fired.
pub fn plan_control(
    state: &VehicleState,
    reference: &Trajectory,
    obstacles: &[ObstacleForecast],
    gipps: &GippsParams,
    cfg: &MpcConfig,
) -> Result<MpcPlan> {
    cfg.validate()?;
    gipps.validate()?;
    if reference.len() < cfg.horizon {
        return Err(Error::InvalidArgument(format!(
            "reference has {} points, horizon needs {}",
            reference.len(),
            cfg.horizon
        )));
    }
    if !state.is_finite() || state.v < 0.0 {
        return Err(Error::NonFinite("ego state".into()));
    }
    let problem = Problem {
        start: Pose {
            x: state.x,
            y: state.y,
            heading: state.heading,
            v: state.v,
        },
        ego_length: state.length,
        ego_width: state.width,
        reference,
        obstacles,
        gipps,
        cfg,
    };
    let starts = problem.warm_starts();
    let warm_start_costs: Vec<f64> = starts.iter().map(|u| problem.cost(u)).collect();
    let refined = cfg.execution.map(&starts, |u| problem.refine(u.clone()));
    let (chosen_start, (best, cost)) = refined
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .expect("at least one warm start");
    let all_unsafe = refined.iter().all(|(u, _)| {
        problem
            .evaluate(u)
            .relative_slack
            .iter()
            .any(|&s| s >= cfg.fallback_threshold)
    });
    let (controls, cost, eval) = if all_unsafe {
        let brake = vec![ControlInput {
            accel: cfg.a_min,
            steer: 0.0,
        }; cfg.horizon];
        let u: Vec<f64> = (0..cfg.blocks()).flat_map(|_| [cfg.a_min, 0.0]).collect();
        (brake, problem.cost(&u), problem.evaluate(&u))
    } else {
        (problem.expand(best), *cost, problem.evaluate(best))
    };
    Ok(MpcPlan {
        controls,
        diagnostics: MpcDiagnostics {
            cost,
            warm_start_costs,
            chosen_start,
            active_slack: eval.relative_slack.iter().map(|&s| s > 0.0).collect(),
            max_relative_slack: eval.relative_slack.iter().cloned().fold(0.0, f64::max),
            fallback: all_unsafe,
        },
    })
}
