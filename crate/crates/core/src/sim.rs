//! Fixed-step closed-loop highway simulation.
//!
//! Surrounding vehicles follow open-loop acceleration scripts in their lane.
//! The ego observes every vehicle exactly, predicts each obstacle over the
//! controller horizon, gates the commanded lane change on predicted safety,
//! tracks a cubic lane-change reference with the MPC and applies the first
//! control of every plan.
//!
//! Convention: a logged state's `a` is the acceleration applied over the
//! following tick.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{encode_step, Neighbor, TrackPoint, LATERAL_VELOCITY_SPAN};
use crate::kinematics::{integrate_longitudinal, AccelSchedule};
use crate::mpc::{advance, plan_control, ControlInput, MpcConfig, MpcDiagnostics, ObstacleForecast};
use crate::planner::{
    check_comfort, fit_cubic, lane_change_extent, ComfortReport, CubicCurve, LaneChangeStep, Trajectory,
    TrajectoryPoint, DEFAULT_EXTENT, DEFAULT_MAX_LATERAL_ACCEL,
};
use crate::predictor::{PredictedPoint, TrajectoryPredictor};
use crate::safety::{is_lane_change_safe, laterally_relevant, pair_risk, scene_rai, GippsParams, RiskSample};
use crate::vehicle::{LaneGeometry, VehicleKind, VehicleState};

pub const LOG_FORMAT_VERSION: u32 = 1;
pub const SUMMARY_FORMAT_VERSION: u32 = 1;
pub const LOG_HEADER: [&str; 17] = [
    "tick",
    "t",
    "vehicle_id",
    "kind",
    "lane",
    "x",
    "y",
    "v",
    "a",
    "heading",
    "gap_to_ego",
    "d_safe",
    "rai",
    "accel_cmd",
    "steer_cmd",
    "collision",
    "phase",
];

/// Shortest lane-change maneuver, in seconds of travel.
pub const MIN_LANE_CHANGE_DURATION: f64 = 3.5;
/// A started lane change is abandoned if the target gap turns unsafe while
/// the ego is within this fraction of a lane width of its original center.
pub const ABORT_LATERAL_LIMIT: f64 = 0.5;
/// Lateral offset from the target center at which a lane change counts as done.
pub const COMPLETION_TOLERANCE: f64 = 0.2;

pub const SCENARIO_NAMES: [&str; 2] = ["lane-change", "emergency-braking"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedVehicle {
    pub state: VehicleState,
    pub schedule: AccelSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoGoal {
    pub target_lane: i32,
    pub cruise_speed: f64,
    /// Time the lane change is commanded; `None` keeps the lane.
    pub lane_change_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub lanes: LaneGeometry,
    pub duration: f64,
    pub dt: f64,
    pub ego: VehicleState,
    pub goal: EgoGoal,
    pub vehicles: Vec<ScriptedVehicle>,
}

fn check_vehicle(v: &VehicleState, lanes: &LaneGeometry) -> Result<()> {
    if !v.is_finite() || v.v < 0.0 || v.length <= 0.0 || v.width <= 0.0 {
        return Err(Error::InvalidArgument(format!("vehicle {} has an invalid state", v.id)));
    }
    if v.lane < 1 || v.lane > lanes.lanes || lanes.lane_of(v.y) != v.lane {
        return Err(Error::InvalidArgument(format!(
            "vehicle {} lane {} does not match its lateral position",
            v.id, v.lane
        )));
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.duration >= self.dt && self.duration.is_finite()) {
            return Err(Error::InvalidArgument("need dt > 0 and duration >= dt".into()));
        }
        if self.lanes.lanes < 2 || !(self.lanes.lane_width > 0.0) {
            return Err(Error::InvalidArgument("need at least two lanes of positive width".into()));
        }
        check_vehicle(&self.ego, &self.lanes)?;
        let g = &self.goal;
        if g.target_lane < 1 || g.target_lane > self.lanes.lanes {
            return Err(Error::InvalidArgument(format!("target lane {} is off the road", g.target_lane)));
        }
        if !(g.cruise_speed >= 0.0 && g.cruise_speed.is_finite()) || g.lane_change_at.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::InvalidArgument("invalid ego goal".into()));
        }
        let mut ids = vec![self.ego.id];
        for s in &self.vehicles {
            check_vehicle(&s.state, &self.lanes)?;
            if ids.contains(&s.state.id) {
                return Err(Error::InvalidArgument(format!("duplicate vehicle id {}", s.state.id)));
            }
            ids.push(s.state.id);
            let seg = &s.schedule.segments;
            if seg.iter().any(|(t, a)| !t.is_finite() || !a.is_finite()) {
                return Err(Error::NonFinite(format!("schedule of vehicle {}", s.state.id)));
            }
            if seg.first().is_some_and(|(t, _)| *t > 0.0) || seg.windows(2).any(|w| w[1].0 < w[0].0) {
                return Err(Error::InvalidArgument(format!(
                    "schedule of vehicle {} must be sorted and start at t = 0",
                    s.state.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Keep,
    Pending,
    Changing,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Keep => "keep",
            Phase::Pending => "pending",
            Phase::Changing => "changing",
            Phase::Done => "done",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub tick: usize,
    pub t: f64,
    pub ego: VehicleState,
    /// Scripted vehicles, in the order of `ScenarioSpec::vehicles`.
    pub others: Vec<VehicleState>,
}

impl World {
    pub fn initial(spec: &ScenarioSpec) -> World {
        World {
            tick: 0,
            t: 0.0,
            ego: spec.ego,
            others: spec
                .vehicles
                .iter()
                .map(|s| scripted_state(&s.state, s.schedule.at(0.0)))
                .collect(),
        }
    }
}

fn scripted_state(s: &VehicleState, accel: f64) -> VehicleState {
    VehicleState {
        a: if s.v <= 0.0 && accel < 0.0 { 0.0 } else { accel },
        heading: 0.0,
        ..*s
    }
}

/// Advances every vehicle by one tick.
pub fn step(world: &World, spec: &ScenarioSpec, ego_control: ControlInput, wheelbase: f64) -> World {
    let tick = world.tick + 1;
    let t = tick as f64 * spec.dt;
    let others = world
        .others
        .iter()
        .zip(&spec.vehicles)
        .map(|(o, script)| {
            let (x, v, _) = integrate_longitudinal(o.x, o.v, script.schedule.at(world.t), spec.dt);
            scripted_state(&VehicleState { x, v, ..*o }, script.schedule.at(t))
        })
        .collect();
    World {
        tick,
        t,
        ego: advance(&world.ego, ego_control, spec.dt, wheelbase, &spec.lanes),
        others,
    }
}

/// Axis-aligned footprint overlap; touching edges do not count.
pub fn rectangles_overlap(a: &VehicleState, b: &VehicleState) -> bool {
    let longitudinal = a.x.min(b.x) - a.rear().max(b.rear());
    let lateral = 0.5 * (a.width + b.width) - (a.y - b.y).abs();
    longitudinal > 0.0 && lateral > 0.0
}

/// Whether the ego overlaps any scripted vehicle.
pub fn detect_collision(world: &World) -> bool {
    world.others.iter().any(|o| rectangles_overlap(&world.ego, o))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    pub t: f64,
    pub ego: VehicleState,
    pub others: Vec<VehicleState>,
    pub control: ControlInput,
    /// Per scripted vehicle, in world order.
    pub predictions: Vec<Vec<PredictedPoint>>,
    pub risk: RiskSample,
    pub collision: bool,
    pub phase: Phase,
    pub diagnostics: Option<MpcDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub scenario: String,
    pub predictor: String,
    pub dt: f64,
    pub wheelbase: f64,
    pub records: Vec<TickRecord>,
    /// Cubic reference of the last lane change started.
    pub lane_change: Option<LaneChangeRecord>,
    pub completion_time: Option<f64>,
    /// Lane changes abandoned because the target gap closed.
    pub aborts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChangeRecord {
    pub start_time: f64,
    pub x_start: f64,
    pub y_start: f64,
    pub step: LaneChangeStep,
    pub curve: CubicCurve,
    pub speed: f64,
    pub comfort: ComfortReport,
}

impl SimLog {
    pub fn collided(&self) -> bool {
        self.records.last().is_some_and(|r| r.collision)
    }
}

struct Histories {
    tracks: Vec<Vec<TrackPoint>>,
    rows: Vec<Vec<Vec<f64>>>,
}

fn track_point(v: &VehicleState) -> TrackPoint {
    TrackPoint {
        x: v.x,
        y: v.y,
        v: v.v,
        a: v.a,
    }
}

impl Histories {
    fn observe(&mut self, world: &World, lanes: &LaneGeometry, dt: f64) {
        for (i, o) in world.others.iter().enumerate() {
            self.tracks[i].push(track_point(o));
            let neighbors: Vec<Neighbor> = std::iter::once(&world.ego)
                .chain(world.others.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v))
                .map(|v| Neighbor { x: v.x, y: v.y, v: v.v })
                .collect();
            let track = &self.tracks[i];
            let tail = &track[track.len().saturating_sub(LATERAL_VELOCITY_SPAN + 1)..];
            self.rows[i].push(encode_step(tail, &neighbors, lanes, dt));
        }
    }

    fn window(&self, i: usize, len: usize, lanes: &LaneGeometry, dt: f64) -> crate::features::FeatureWindow {
        let n = self.tracks[i].len();
        crate::features::FeatureWindow {
            history: self.rows[i][n - len..].to_vec(),
            track: self.tracks[i][n - len..].to_vec(),
            dt,
            lanes: *lanes,
        }
    }
}

/// Constant-velocity back-extrapolation of the initial world, `j` ticks ago.
fn past_world(world: &World, j: usize, dt: f64) -> World {
    let back = |v: &VehicleState| VehicleState {
        x: v.x - v.v * v.heading.cos() * j as f64 * dt,
        y: v.y - v.v * v.heading.sin() * j as f64 * dt,
        a: 0.0,
        ..*v
    };
    World {
        tick: 0,
        t: -(j as f64) * dt,
        ego: back(&world.ego),
        others: world.others.iter().map(back).collect(),
    }
}

fn predicted_state(base: &VehicleState, p: &PredictedPoint, lanes: &LaneGeometry) -> VehicleState {
    VehicleState {
        x: p.x,
        y: p.y,
        v: p.v.max(0.0),
        lane: lanes.lane_of(p.y),
        ..*base
    }
}

fn neighbors_in_lane(
    ego_x: f64,
    lane: i32,
    vehicles: &[VehicleState],
) -> (Option<&VehicleState>, Option<&VehicleState>) {
    let mut leader: Option<&VehicleState> = None;
    let mut follower: Option<&VehicleState> = None;
    for v in vehicles.iter().filter(|v| v.lane == lane) {
        if v.x >= ego_x {
            if leader.is_none_or(|l| v.x < l.x) {
                leader = Some(v);
            }
        } else if follower.is_none_or(|f| v.x > f.x) {
            follower = Some(v);
        }
    }
    (leader, follower)
}

/// Lane change admissible now and over every predicted step, assuming the ego
/// holds its speed.
fn lane_change_admissible(
    world: &World,
    predictions: &[Vec<PredictedPoint>],
    target: i32,
    spec: &ScenarioSpec,
    gipps: &GippsParams,
    horizon: usize,
) -> bool {
    let check = |ego: &VehicleState, others: &[VehicleState]| {
        let (leader, follower) = neighbors_in_lane(ego.x, target, others);
        is_lane_change_safe(ego, leader, follower, gipps).safe
    };
    if !check(&world.ego, &world.others) {
        return false;
    }
    (1..=horizon).all(|k| {
        let ego = VehicleState {
            x: world.ego.x + world.ego.v * k as f64 * spec.dt,
            ..world.ego
        };
        let others: Vec<VehicleState> = world
            .others
            .iter()
            .zip(predictions)
            .map(|(o, p)| match p.get(k - 1).or(p.last()) {
                Some(pt) => predicted_state(o, pt, &spec.lanes),
                None => *o,
            })
            .collect();
        check(&ego, &others)
    })
}

/// Cubic from the ego's pose to `target_y`, stretched until it is comfortable.
fn start_lane_change(ego: &VehicleState, target_y: f64, t: f64) -> Result<LaneChangeRecord> {
    let speed = ego.v.max(1.0);
    let mut extent = lane_change_extent(speed, DEFAULT_EXTENT, MIN_LANE_CHANGE_DURATION);
    loop {
        let step = LaneChangeStep::new(ego.heading, extent, target_y - ego.y)?;
        let curve = fit_cubic(&step)?;
        let comfort = check_comfort(&curve, &step, speed, DEFAULT_MAX_LATERAL_ACCEL);
        if comfort.pass || extent > 1e4 {
            return Ok(LaneChangeRecord {
                start_time: t,
                x_start: ego.x,
                y_start: ego.y,
                step,
                curve,
                speed,
                comfort,
            });
        }
        extent *= 1.25;
    }
}

/// Lateral target `(y, heading)` at longitudinal position `x`.
fn reference_lateral(x: f64, hold_y: f64, lc: Option<&LaneChangeRecord>) -> (f64, f64) {
    match lc {
        None => (hold_y, 0.0),
        Some(lc) => {
            let s = (x - lc.x_start).clamp(0.0, lc.step.x_end);
            if x - lc.x_start >= lc.step.x_end {
                (lc.y_start + lc.step.y_end, 0.0)
            } else {
                (lc.y_start + lc.curve.eval(s), lc.curve.heading(s))
            }
        }
    }
}

/// Reference poses at the ego's current speed, one per tick over twice the
/// horizon so interpolation covers a faster ego too.
fn reference_path(ego: &VehicleState, cruise: f64, hold_y: f64, lc: Option<&LaneChangeRecord>, cfg: &MpcConfig) -> Trajectory {
    let ds = ego.v.max(1.0) * cfg.dt;
    Trajectory {
        points: (0..=2 * cfg.horizon)
            .map(|k| {
                let x = ego.x + k as f64 * ds;
                let (y, heading) = reference_lateral(x, hold_y, lc);
                TrajectoryPoint {
                    t: k as f64 * cfg.dt,
                    x,
                    y,
                    heading,
                    v: cruise,
                    vy: cruise * heading.sin(),
                }
            })
            .collect(),
    }
}

/// Runs the closed loop for `spec.duration`, halting on the first collision.
pub fn run_scenario(
    spec: &ScenarioSpec,
    predictor: &dyn TrajectoryPredictor,
    gipps: &GippsParams,
    mpc: &MpcConfig,
    seed: u64,
) -> Result<SimLog> {
    spec.validate()?;
    gipps.validate()?;
    mpc.validate()?;
    if (mpc.dt - spec.dt).abs() > 1e-12 {
        return Err(Error::InvalidArgument("controller and simulation dt must agree".into()));
    }
    let lanes = spec.lanes;
    let history_len = predictor.history_len().max(LATERAL_VELOCITY_SPAN + 1);
    let mut world = World::initial(spec);
    let n = world.others.len();
    let mut hist = Histories {
        tracks: vec![Vec::new(); n],
        rows: vec![Vec::new(); n],
    };
    for j in (1..history_len).rev() {
        hist.observe(&past_world(&world, j, spec.dt), &lanes, spec.dt);
    }
    let hold_y = lanes.center(spec.ego.lane);
    let target_y = lanes.center(spec.goal.target_lane);
    let mut phase = Phase::Keep;
    let mut lane_change: Option<LaneChangeRecord> = None;
    // lateral maneuver being tracked: the lane change, or the return after an abort
    let mut path: Option<LaneChangeRecord> = None;
    let mut completion_time = None;
    let mut aborts = 0;
    let mut records = Vec::with_capacity(spec.ticks());
    let indices: Vec<usize> = (0..n).collect();

    for tick in 0..spec.ticks() {
        hist.observe(&world, &lanes, spec.dt);
        let risk = scene_rai(world.t, &world.ego, &world.others, gipps);
        if detect_collision(&world) {
            records.push(TickRecord {
                tick,
                t: world.t,
                ego: VehicleState { a: 0.0, ..world.ego },
                others: world.others.clone(),
                control: ControlInput::default(),
                predictions: Vec::new(),
                risk,
                collision: true,
                phase,
                diagnostics: None,
            });
            break;
        }

        let predictions = mpc
            .execution
            .map(&indices, |&i| predictor.predict(&hist.window(i, history_len, &lanes, spec.dt), mpc.horizon))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        if phase == Phase::Keep && spec.goal.lane_change_at.is_some_and(|t0| world.t + 1e-9 >= t0) {
            phase = if world.ego.lane == spec.goal.target_lane {
                Phase::Done
            } else {
                Phase::Pending
            };
        }
        if phase == Phase::Pending
            && lane_change_admissible(&world, &predictions, spec.goal.target_lane, spec, gipps, mpc.horizon)
        {
            lane_change = Some(start_lane_change(&world.ego, target_y, world.t)?);
            path = lane_change;
            phase = Phase::Changing;
        }
        if phase == Phase::Changing
            && (world.ego.y - hold_y).abs() < ABORT_LATERAL_LIMIT * lanes.lane_width
            && !lane_change_admissible(&world, &predictions, spec.goal.target_lane, spec, gipps, mpc.horizon)
        {
            path = Some(start_lane_change(&world.ego, hold_y, world.t)?);
            phase = Phase::Pending;
            aborts += 1;
        }
        if phase == Phase::Changing
            && (world.ego.y - target_y).abs() < COMPLETION_TOLERANCE
            && world.ego.lane == spec.goal.target_lane
        {
            phase = Phase::Done;
            completion_time = Some(world.t);
        }

        let hold = if phase == Phase::Done && path.is_none() { target_y } else { hold_y };
        let reference = reference_path(&world.ego, spec.goal.cruise_speed, hold, path.as_ref(), mpc);
        let forecasts: Vec<ObstacleForecast> = world
            .others
            .iter()
            .zip(&predictions)
            .map(|(o, p)| ObstacleForecast {
                id: o.id,
                length: o.length,
                width: o.width,
                points: p.clone(),
            })
            .collect();
        let cfg = MpcConfig {
            seed: seed.wrapping_add(tick as u64),
            ..mpc.clone()
        };
        let plan = plan_control(&world.ego, &reference, &forecasts, gipps, &cfg)?;
        let control = plan.controls[0];
        records.push(TickRecord {
            tick,
            t: world.t,
            ego: VehicleState {
                a: control.accel,
                ..world.ego
            },
            others: world.others.clone(),
            control,
            predictions,
            risk,
            collision: false,
            phase,
            diagnostics: Some(plan.diagnostics),
        });
        world = step(&world, spec, control, mpc.wheelbase);
    }

    Ok(SimLog {
        scenario: spec.name.clone(),
        predictor: predictor.name().to_string(),
        dt: spec.dt,
        wheelbase: mpc.wheelbase,
        records,
        lane_change,
        completion_time,
        aborts,
    })
}

/// One CSV row; the ego row carries the scene risk and the commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub tick: usize,
    pub t: f64,
    pub vehicle_id: u32,
    pub kind: VehicleKind,
    pub lane: i32,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub a: f64,
    pub heading: f64,
    pub gap_to_ego: f64,
    pub d_safe: f64,
    pub rai: f64,
    pub accel_cmd: Option<f64>,
    pub steer_cmd: Option<f64>,
    pub collision: bool,
    pub phase: Phase,
}

pub fn log_rows(log: &SimLog, gipps: &GippsParams) -> Vec<LogRow> {
    let mut rows = Vec::new();
    for r in &log.records {
        let row = |v: &VehicleState, gap: f64, d: f64, rai: f64, cmd: Option<ControlInput>| LogRow {
            tick: r.tick,
            t: r.t,
            vehicle_id: v.id,
            kind: v.kind,
            lane: v.lane,
            x: v.x,
            y: v.y,
            v: v.v,
            a: v.a,
            heading: v.heading,
            gap_to_ego: gap,
            d_safe: d,
            rai,
            accel_cmd: cmd.map(|c| c.accel),
            steer_cmd: cmd.map(|c| c.steer),
            collision: r.collision,
            phase: r.phase,
        };
        rows.push(row(&r.ego, r.risk.gap, r.risk.d_safe, r.risk.rai, Some(r.control)));
        for o in &r.others {
            let (g, d, rai) = pair_risk(&r.ego, o, gipps);
            let rai = if laterally_relevant(&r.ego, o) { rai } else { 0.0 };
            rows.push(row(o, g, d, rai, None));
        }
    }
    rows
}

pub fn write_log_csv(log: &SimLog, gipps: &GippsParams, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log_rows(log, gipps) {
        w.serialize(row)?;
    }
    if log.records.is_empty() {
        w.write_record(LOG_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_csv(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != LOG_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.map_err(|e: csv::Error| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSummary {
    pub format_version: u32,
    pub log_format_version: u32,
    pub scenario: String,
    pub predictor: String,
    pub ticks: usize,
    /// Smallest gap to a laterally relevant vehicle; `None` if there never was one.
    pub min_gap: Option<f64>,
    pub peak_rai: f64,
    pub mean_rai: f64,
    /// Largest commanded ego deceleration, as a positive number.
    pub peak_decel: f64,
    /// Simulation time at which the lane change finished.
    pub completion_time: Option<f64>,
    pub collision: bool,
    pub final_lane: i32,
    pub final_speed: f64,
    /// Peak `v² tan(δ) / wheelbase` over the executed controls.
    pub peak_lateral_accel: f64,
    pub fallback_ticks: usize,
    pub lane_change_aborts: usize,
}

pub fn summarize(log: &SimLog) -> SimSummary {
    let recs = &log.records;
    let min_gap = recs
        .iter()
        .map(|r| r.risk.gap)
        .filter(|g| g.is_finite())
        .fold(None, |m: Option<f64>, g| Some(m.map_or(g, |m| m.min(g))));
    let peak_rai = recs.iter().map(|r| r.risk.rai).fold(0.0, f64::max);
    let mean_rai = if recs.is_empty() {
        0.0
    } else {
        recs.iter().map(|r| r.risk.rai).sum::<f64>() / recs.len() as f64
    };
    let last = recs.last();
    SimSummary {
        format_version: SUMMARY_FORMAT_VERSION,
        log_format_version: LOG_FORMAT_VERSION,
        scenario: log.scenario.clone(),
        predictor: log.predictor.clone(),
        ticks: recs.len(),
        min_gap,
        peak_rai,
        mean_rai,
        peak_decel: recs.iter().map(|r| (-r.control.accel).max(0.0)).fold(0.0, f64::max),
        completion_time: log.completion_time,
        collision: log.collided(),
        final_lane: last.map_or(0, |r| r.ego.lane),
        final_speed: last.map_or(0.0, |r| r.ego.v),
        peak_lateral_accel: recs
            .iter()
            .map(|r| r.ego.v * r.ego.v * r.control.steer.tan().abs() / log.wheelbase)
            .fold(0.0, f64::max),
        fallback_ticks: recs
            .iter()
            .filter(|r| r.diagnostics.as_ref().is_some_and(|d| d.fallback))
            .count(),
        lane_change_aborts: log.aborts,
    }
}

pub fn write_summary(summary: &SimSummary, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<SimSummary> {
    let s: SimSummary = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if s.format_version != SUMMARY_FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "{}: unsupported summary version {}",
            path.display(),
            s.format_version
        )));
    }
    Ok(s)
}

/// Ego in lane 2 at 20 m/s is told at t = 2 s to move into lane 3, which
/// holds a braking car ahead, a slower car alongside and a car behind.
pub fn scenario_active_lane_change() -> ScenarioSpec {
    let lanes = LaneGeometry::default();
    let l3 = lanes.center(3);
    ScenarioSpec {
        name: "lane-change".into(),
        lanes,
        duration: 25.0,
        dt: 0.1,
        ego: VehicleState::car(0, 0.0, lanes.center(2), 20.0, 2),
        goal: EgoGoal {
            target_lane: 3,
            cruise_speed: 20.0,
            lane_change_at: Some(2.0),
        },
        vehicles: vec![
            ScriptedVehicle {
                state: VehicleState::car(1, 65.0, l3, 20.0, 3),
                schedule: AccelSchedule::new(vec![(0.0, 0.0), (1.0, -1.0), (7.0, 0.0)]),
            },
            ScriptedVehicle {
                state: VehicleState::car(2, -2.0, l3, 16.0, 3),
                schedule: AccelSchedule::constant(0.0),
            },
            ScriptedVehicle {
                state: VehicleState::car(3, -40.0, l3, 18.0, 3),
                schedule: AccelSchedule::constant(0.0),
            },
        ],
    }
}

/// Ego follows a 12 m truck in lane 2; the truck brakes hard at t = 15 s
/// until it stops.
pub fn scenario_emergency_braking() -> ScenarioSpec {
    let lanes = LaneGeometry::default();
    let y = lanes.center(2);
    ScenarioSpec {
        name: "emergency-braking".into(),
        lanes,
        duration: 30.0,
        dt: 0.1,
        ego: VehicleState::car(0, 0.0, y, 20.0, 2),
        goal: EgoGoal {
            target_lane: 2,
            cruise_speed: 20.0,
            lane_change_at: None,
        },
        vehicles: vec![ScriptedVehicle {
            state: VehicleState::truck(1, 42.0, y, 20.0, 2),
            schedule: AccelSchedule::new(vec![(0.0, 0.0), (15.0, -4.0)]),
        }],
    }
}

pub fn scenario_by_name(name: &str) -> Result<ScenarioSpec> {
    match name {
        "lane-change" => Ok(scenario_active_lane_change()),
        "emergency-braking" => Ok(scenario_emergency_braking()),
        other => Err(Error::InvalidArgument(format!(
            "unknown scenario '{other}' (valid: {})",
            SCENARIO_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::ConstantVelocityModel;

    #[test]
    fn constant_speed_step() {
        let spec = scenario_active_lane_change();
        let w0 = World::initial(&spec);
        let w1 = step(&w0, &spec, ControlInput::default(), 2.7);
        assert!((w1.ego.x - 2.0).abs() < 1e-12);
        assert!((w1.others[1].x - (-0.4)).abs() < 1e-12);
        assert_eq!(w1, step(&w0, &spec, ControlInput::default(), 2.7));
    }

    #[test]
    fn scripted_braking_stops_at_two_seconds() {
        let mut spec = scenario_emergency_braking();
        spec.vehicles[0].state.v = 10.0;
        spec.vehicles[0].schedule = AccelSchedule::constant(-5.0);
        let mut w = World::initial(&spec);
        for _ in 0..30 {
            w = step(&w, &spec, ControlInput::default(), 2.7);
            if w.t < 2.0 - 1e-9 {
                assert!(w.others[0].v > 0.0);
            } else {
                assert_eq!(w.others[0].v, 0.0);
                assert!((w.others[0].x - 52.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn collision_cases() {
        let a = VehicleState::car(0, 0.0, 0.0, 10.0, 1);
        let b = VehicleState::car(1, 3.0, 0.0, 10.0, 1);
        assert!(rectangles_overlap(&a, &b));
        let c = VehicleState::car(2, 0.0, 3.5, 10.0, 2);
        assert!(!rectangles_overlap(&a, &c));
    }

    #[test]
    fn fixtures_validate() {
        let s1 = scenario_active_lane_change();
        s1.validate().unwrap();
        assert_eq!(s1.vehicles.len(), 3);
        assert!(s1.vehicles.iter().all(|v| v.state.lane == 3));
        assert_eq!((s1.ego.lane, s1.goal.target_lane), (2, 3));
        let s2 = scenario_emergency_braking();
        s2.validate().unwrap();
        assert_eq!(s2.vehicles[0].state.kind, VehicleKind::Truck);
        assert_eq!(s2.ego.kind, VehicleKind::Car);
        assert_eq!(s2.vehicles[0].schedule.at(14.9), 0.0);
        assert_eq!(s2.vehicles[0].schedule.at(15.0), -4.0);
        assert!(scenario_by_name("nope").is_err());
    }

    #[test]
    fn empty_road_is_quiet() {
        let mut spec = scenario_emergency_braking();
        spec.vehicles.clear();
        spec.duration = 3.0;
        let log = run_scenario(&spec, &ConstantVelocityModel, &GippsParams::default(), &MpcConfig::default(), 1).unwrap();
        assert_eq!(log.records.len(), 30);
        assert!(log.records.iter().all(|r| r.risk.rai == 0.0));
        assert!(log.records.iter().all(|r| r.control.accel.abs() < 0.1 && r.control.steer.abs() < 0.01));
    }
}
