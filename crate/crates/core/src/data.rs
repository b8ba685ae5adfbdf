//! Trajectory datasets: the 8-column CSV format, the synthetic lane-change
//! generator, feature windowing and prediction metrics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{encode_step, FeatureWindow, Neighbor, TrackPoint};
use crate::kinematics::{integrate_longitudinal, AccelSchedule};
use crate::planner::{fit_cubic, CubicCurve, LaneChangeStep};
use crate::predictor::PredictedPoint;
use crate::vehicle::LaneGeometry;

pub const CSV_HEADER: [&str; 8] = ["vehicle_id", "t", "x", "y", "v", "a", "lane", "length"];
pub const MANIFEST_FORMAT_VERSION: u32 = 1;
const DT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub a: f64,
    pub lane: i32,
}

impl Frame {
    pub fn point(&self) -> TrackPoint {
        TrackPoint {
            x: self.x,
            y: self.y,
            v: self.v,
            a: self.a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub id: u32,
    pub length: f64,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub dt: f64,
    pub lanes: LaneGeometry,
    /// Sorted by id; frames sorted by time.
    pub vehicles: Vec<VehicleTrack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intention {
    Keep,
    Left,
    Right,
}

impl Intention {
    pub const ALL: [Intention; 3] = [Intention::Keep, Intention::Left, Intention::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_lane_change(from: i32, to: i32) -> Self {
        match to.cmp(&from) {
            std::cmp::Ordering::Greater => Intention::Left,
            std::cmp::Ordering::Less => Intention::Right,
            std::cmp::Ordering::Equal => Intention::Keep,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    vehicle_id: u32,
    t: f64,
    x: f64,
    y: f64,
    v: f64,
    a: f64,
    lane: i32,
    length: f64,
}

impl TrajectoryDataset {
    pub fn frame_count(&self) -> usize {
        self.vehicles.iter().map(|v| v.frames.len()).sum()
    }

    pub fn subset(&self, ids: &[u32]) -> TrajectoryDataset {
        TrajectoryDataset {
            dt: self.dt,
            lanes: self.lanes,
            vehicles: self
                .vehicles
                .iter()
                .filter(|v| ids.binary_search(&v.id).is_ok())
                .cloned()
                .collect(),
        }
    }

    /// Groups of vehicles whose time spans overlap (transitively). Windows only
    /// see neighbors inside their own group, so splitting by group never leaks
    /// context between train and validation.
    pub fn episodes(&self) -> Vec<Vec<u32>> {
        let mut spans: Vec<(f64, f64, u32)> = self
            .vehicles
            .iter()
            .filter_map(|v| Some((v.frames.first()?.t, v.frames.last()?.t, v.id)))
            .collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut groups: Vec<Vec<u32>> = Vec::new();
        let mut group_end = f64::NEG_INFINITY;
        for (start, end, id) in spans {
            if groups.is_empty() || start > group_end + 0.5 * self.dt {
                groups.push(vec![id]);
                group_end = end;
            } else {
                groups.last_mut().unwrap().push(id);
                group_end = group_end.max(end);
            }
        }
        for g in &mut groups {
            g.sort_unstable();
        }
        groups
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", CSV_HEADER.join(","))?;
        for veh in &self.vehicles {
            for f in &veh.frames {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    veh.id, f.t, f.x, f.y, f.v, f.a, f.lane, veh.length
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_trajectories(path: &Path) -> Result<TrajectoryDataset> {
    load_trajectories_with(path, crate::planner::DEFAULT_LANE_WIDTH)
}

pub fn load_trajectories_with(path: &Path, lane_width: f64) -> Result<TrajectoryDataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(parse_err(
            1,
            format!("header must be '{}', got '{}'", CSV_HEADER.join(","), header.join(",")),
        ));
    }
    let mut by_id: BTreeMap<u32, VehicleTrack> = BTreeMap::new();
    for (i, rec) in reader.deserialize::<CsvRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let values = [row.t, row.x, row.y, row.v, row.a, row.length];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line, format!("non-finite value in row for vehicle {}", row.vehicle_id)));
        }
        let track = by_id.entry(row.vehicle_id).or_insert_with(|| VehicleTrack {
            id: row.vehicle_id,
            length: row.length,
            frames: Vec::new(),
        });
        track.frames.push(Frame {
            t: row.t,
            x: row.x,
            y: row.y,
            v: row.v,
            a: row.a,
            lane: row.lane,
        });
    }
    if by_id.is_empty() {
        return Err(Error::Empty(format!("{}: no trajectory rows", path.display())));
    }
    let mut dt: Option<f64> = None;
    let mut max_lane = 1;
    for track in by_id.values_mut() {
        track.frames.sort_by(|a, b| a.t.total_cmp(&b.t));
        for w in track.frames.windows(2) {
            let step = w[1].t - w[0].t;
            match dt {
                None => dt = Some(step),
                Some(d) if (step - d).abs() > DT_TOLERANCE => {
                    return Err(Error::InvalidArgument(format!(
                        "vehicle {}: time step {step} at t={} differs from dataset dt {d}",
                        track.id, w[1].t
                    )))
                }
                _ => {}
            }
        }
        max_lane = track.frames.iter().map(|f| f.lane).fold(max_lane, i32::max);
    }
    let dt = dt.ok_or_else(|| Error::InvalidArgument("cannot infer dt: every track has a single frame".into()))?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("duplicate timestamps (dt = {dt})")));
    }
    Ok(TrajectoryDataset {
        dt,
        lanes: LaneGeometry {
            lanes: max_lane,
            lane_width,
        },
        vehicles: by_id.into_values().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub episodes: usize,
    pub noise_std: f64,
    pub duration: f64,
    pub dt: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, episodes: usize, noise_std: f64) -> Self {
        Self {
            seed,
            episodes,
            noise_std,
            duration: 12.0,
            dt: crate::features::DEFAULT_DT,
        }
    }
}

/// Ground truth of one synthetic episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInfo {
    pub index: usize,
    pub label: Intention,
    pub subject_id: u32,
    pub vehicle_ids: Vec<u32>,
    /// Longitudinal position where the lane change started and the step it
    /// followed; `None` for keep-lane episodes.
    pub maneuver: Option<(f64, LaneChangeStep)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub dataset: TrajectoryDataset,
    pub episodes: Vec<EpisodeInfo>,
}

/// Vehicles of episode `e` use ids `e·ID_STRIDE + k`.
pub const ID_STRIDE: u32 = 8;
const EPISODE_SPACING: f64 = 10.0;
const SUBJECT_LANE: i32 = 2;
const SPEED_CAP: f64 = 33.0;
const SPLIT_SALT: u64 = 0x5eed_5b11;

pub fn synth_lane_change_dataset(seed: u64, n_episodes: usize, noise_std: f64) -> Result<SyntheticDataset> {
    synth_with(&SynthConfig::new(seed, n_episodes, noise_std), Execution::default())
}

pub fn synth_with(cfg: &SynthConfig, exec: Execution) -> Result<SyntheticDataset> {
    if cfg.episodes == 0 {
        return Err(Error::InvalidArgument("episode count must be at least 1".into()));
    }
    if !(cfg.noise_std.is_finite() && cfg.noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {}", cfg.noise_std)));
    }
    if !(cfg.dt > 0.0 && cfg.duration > cfg.dt) {
        return Err(Error::InvalidArgument("invalid duration/dt".into()));
    }
    let lanes = LaneGeometry::default();
    let results = exec.map_range(cfg.episodes, |e| generate_episode(cfg, &lanes, e));
    let mut vehicles = Vec::new();
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for (tracks, info) in results {
        vehicles.extend(tracks);
        episodes.push(info);
    }
    Ok(SyntheticDataset {
        config: cfg.clone(),
        dataset: TrajectoryDataset {
            dt: cfg.dt,
            lanes,
            vehicles,
        },
        episodes,
    })
}

fn random_schedule(rng: &mut ChaCha8Rng, duration: f64) -> AccelSchedule {
    let mut segments = Vec::new();
    let mut t = 0.0;
    while t < duration {
        let r: f64 = rng.random();
        let accel = if r < 0.4 {
            0.0
        } else if r < 0.85 {
            rng.random_range(-2.0..1.5)
        } else {
            rng.random_range(-5.0..-3.0)
        };
        segments.push((t, accel));
        t += rng.random_range(1.5..4.0);
    }
    AccelSchedule::new(segments)
}

struct Lateral {
    start_time: f64,
    duration: f64,
    step: LaneChangeStep,
    started: Option<(f64, CubicCurve)>,
}

fn generate_episode(cfg: &SynthConfig, lanes: &LaneGeometry, e: usize) -> (Vec<VehicleTrack>, EpisodeInfo) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(e as u64 + 1);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).unwrap();
    let steps = (cfg.duration / cfg.dt).round() as usize;
    let base_tick = (e as f64 * (cfg.duration + EPISODE_SPACING) / cfg.dt).round();
    let label = Intention::ALL[rng.random_range(0..3)];

    let subject_v0 = rng.random_range(15.0..28.0);
    let subject_sched = random_schedule(&mut rng, cfg.duration);
    let mut lateral = match label {
        Intention::Keep => None,
        dir => {
            let sign = if dir == Intention::Left { 1.0 } else { -1.0 };
            let theta = rng.random_range(-0.02..0.02);
            let y_end = sign * lanes.lane_width + rng.random_range(-0.2..0.2);
            Some(Lateral {
                start_time: rng.random_range(2.5..7.0),
                duration: rng.random_range(3.0..5.0),
                step: LaneChangeStep { theta_i: theta, x_end: 1.0, y_end },
                started: None,
            })
        }
    };

    // (lane, x0, v0, schedule)
    let mut specs = vec![(SUBJECT_LANE, 0.0, subject_v0, subject_sched)];
    let n_background = rng.random_range(1..=3);
    for _ in 0..n_background {
        let mut lane = rng.random_range(1..=lanes.lanes);
        let mut dx: f64 = rng.random_range(-60.0..60.0);
        for _ in 0..20 {
            if specs.iter().all(|(l, x, _, _)| *l != lane || (dx - x).abs() > 15.0) {
                break;
            }
            lane = rng.random_range(1..=lanes.lanes);
            dx = rng.random_range(-60.0..60.0);
        }
        let v0 = rng.random_range(15.0..28.0);
        let sched = random_schedule(&mut rng, cfg.duration);
        specs.push((lane, dx, v0, sched));
    }

    let mut tracks = Vec::with_capacity(specs.len());
    let mut maneuver = None;
    for (k, (lane, x0, v0, sched)) in specs.into_iter().enumerate() {
        let id = e as u32 * ID_STRIDE + k as u32;
        let y0 = lanes.center(lane);
        let (mut x, mut v) = (x0, v0);
        let mut frames = Vec::with_capacity(steps);
        for step in 0..steps {
            let t = step as f64 * cfg.dt;
            let mut y = y0;
            if k == 0 {
                if let Some(lat) = lateral.as_mut() {
                    if lat.started.is_none() && t >= lat.start_time {
                        lat.step.x_end = (v * lat.duration).max(20.0);
                        let curve = fit_cubic(&lat.step).expect("valid synthetic step");
                        lat.started = Some((x, curve));
                        maneuver = Some((x, lat.step));
                    }
                    if let Some((x_start, curve)) = lat.started {
                        y = y0 + curve.eval((x - x_start).min(lat.step.x_end));
                    }
                }
            }
            let mut accel = sched.at(t);
            if v >= SPEED_CAP && accel > 0.0 {
                accel = 0.0;
            }
            let (nx, nv, applied) = integrate_longitudinal(x, v, accel, cfg.dt);
            let (nx_noise, ny_noise) = if cfg.noise_std > 0.0 {
                (noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            frames.push(Frame {
                t: (base_tick + step as f64) * cfg.dt,
                x: x + nx_noise,
                y: y + ny_noise,
                v,
                a: applied,
                lane: lanes.lane_of(y),
            });
            x = nx;
            v = nv;
        }
        tracks.push(VehicleTrack { id, length: 5.0, frames });
    }
    let info = EpisodeInfo {
        index: e,
        label,
        subject_id: e as u32 * ID_STRIDE,
        vehicle_ids: tracks.iter().map(|t| t.id).collect(),
        maneuver,
    };
    (tracks, info)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub vehicle_id: u32,
    /// Index of the first history frame in the vehicle's track.
    pub start: usize,
    pub window: FeatureWindow,
    /// Absolute future states, `horizon` entries.
    pub future: Vec<TrackPoint>,
    pub label: Intention,
}

impl WindowedSample {
    /// Future displacement relative to the last observed position.
    pub fn target_displacements(&self) -> Vec<[f64; 2]> {
        let a = self.window.anchor().expect("window has a track");
        self.future.iter().map(|p| [p.x - a.x, p.y - a.y]).collect()
    }
}

pub fn window_count(track_len: usize, history_len: usize, horizon: usize, stride: usize) -> usize {
    let need = history_len + horizon;
    if track_len < need || stride == 0 {
        0
    } else {
        (track_len - need) / stride + 1
    }
}

pub fn make_windows(
    dataset: &TrajectoryDataset,
    history_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowedSample>> {
    make_windows_with(dataset, history_len, horizon, stride, Execution::default())
}

pub fn make_windows_with(
    dataset: &TrajectoryDataset,
    history_len: usize,
    horizon: usize,
    stride: usize,
    exec: Execution,
) -> Result<Vec<WindowedSample>> {
    if history_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::InvalidArgument("history, horizon and stride must be >= 1".into()));
    }
    let dt = dataset.dt;
    let tick = |t: f64| (t / dt).round() as i64;
    let mut at_tick: BTreeMap<i64, Vec<(usize, usize)>> = BTreeMap::new();
    for (vi, veh) in dataset.vehicles.iter().enumerate() {
        for (fi, f) in veh.frames.iter().enumerate() {
            at_tick.entry(tick(f.t)).or_default().push((vi, fi));
        }
    }
    let per_vehicle = exec.map(&dataset.vehicles, |veh| {
        let n = veh.frames.len();
        if window_count(n, history_len, horizon, stride) == 0 {
            return Vec::new();
        }
        let points: Vec<TrackPoint> = veh.frames.iter().map(Frame::point).collect();
        let features: Vec<Vec<f64>> = (0..n)
            .map(|fi| {
                let others: Vec<Neighbor> = at_tick
                    .get(&tick(veh.frames[fi].t))
                    .map(|list| {
                        list.iter()
                            .filter(|(vi, _)| dataset.vehicles[*vi].id != veh.id)
                            .map(|&(vi, ofi)| {
                                let f = &dataset.vehicles[vi].frames[ofi];
                                Neighbor { x: f.x, y: f.y, v: f.v }
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                encode_step(&points[..=fi], &others, &dataset.lanes, dt)
            })
            .collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start + history_len + horizon <= n {
            let hist_end = start + history_len;
            let fut_end = hist_end + horizon;
            out.push(WindowedSample {
                vehicle_id: veh.id,
                start,
                window: FeatureWindow {
                    history: features[start..hist_end].to_vec(),
                    track: points[start..hist_end].to_vec(),
                    dt,
                    lanes: dataset.lanes,
                },
                future: points[hist_end..fut_end].to_vec(),
                label: Intention::from_lane_change(veh.frames[hist_end - 1].lane, veh.frames[fut_end - 1].lane),
            });
            start += stride;
        }
        out
    });
    Ok(per_vehicle.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
}

/// Shuffles episodes (not windows) with `seed` and assigns the first
/// `train_fraction` of them to training.
pub fn split_by_episode(dataset: &TrajectoryDataset, train_fraction: f64, seed: u64) -> Split {
    let mut groups = dataset.episodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    groups.shuffle(&mut rng);
    let n_train = ((groups.len() as f64) * train_fraction).round() as usize;
    // keep both sides non-empty whenever there are at least two episodes
    let n_train = if groups.len() > 1 {
        n_train.clamp(1, groups.len() - 1)
    } else {
        groups.len()
    };
    let mut train: Vec<u32> = groups[..n_train].iter().flatten().copied().collect();
    let mut val: Vec<u32> = groups[n_train..].iter().flatten().copied().collect();
    train.sort_unstable();
    val.sort_unstable();
    Split { train, val }
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub keep: usize,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub episodes: usize,
    pub noise_std: f64,
    pub dt: f64,
    pub vehicles: usize,
    pub frames: usize,
    pub label_counts: LabelCounts,
    pub train_vehicle_ids: Vec<u32>,
    pub val_vehicle_ids: Vec<u32>,
}

impl SyntheticDataset {
    pub fn label_counts(&self) -> LabelCounts {
        let count = |l| self.episodes.iter().filter(|e| e.label == l).count();
        LabelCounts {
            keep: count(Intention::Keep),
            left: count(Intention::Left),
            right: count(Intention::Right),
        }
    }

    pub fn manifest(&self, split: &Split) -> DatasetManifest {
        DatasetManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            seed: self.config.seed,
            episodes: self.config.episodes,
            noise_std: self.config.noise_std,
            dt: self.config.dt,
            vehicles: self.dataset.vehicles.len(),
            frames: self.dataset.frame_count(),
            label_counts: self.label_counts(),
            train_vehicle_ids: split.train.clone(),
            val_vehicle_ids: split.val.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub rmse_by_horizon: Vec<f64>,
    pub lateral_rmse_by_horizon: Vec<f64>,
    pub ade: f64,
    pub fde: f64,
}

/// Metrics over a batch of predicted/true trajectories of equal length.
pub fn metrics(predicted: &[Vec<PredictedPoint>], truth: &[Vec<PredictedPoint>]) -> Result<PredictionMetrics> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predicted trajectories vs {} true ones",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Empty("no trajectories to score".into()));
    }
    let horizon = predicted[0].len();
    if horizon == 0 {
        return Err(Error::Empty("zero-length trajectories".into()));
    }
    let mut sq = vec![0.0; horizon];
    let mut lat_sq = vec![0.0; horizon];
    let mut ade_sum = 0.0;
    let mut fde_sum = 0.0;
    for (p, t) in predicted.iter().zip(truth) {
        if p.len() != horizon || t.len() != horizon {
            return Err(Error::Shape(format!(
                "trajectory lengths {} / {} differ from {horizon}",
                p.len(),
                t.len()
            )));
        }
        for (k, (a, b)) in p.iter().zip(t).enumerate() {
            let (dx, dy) = (a.x - b.x, a.y - b.y);
            let d2 = dx * dx + dy * dy;
            sq[k] += d2;
            lat_sq[k] += dy * dy;
            ade_sum += d2.sqrt();
            if k + 1 == horizon {
                fde_sum += d2.sqrt();
            }
        }
    }
    let n = predicted.len() as f64;
    Ok(PredictionMetrics {
        rmse_by_horizon: sq.iter().map(|s| (s / n).sqrt()).collect(),
        lateral_rmse_by_horizon: lat_sq.iter().map(|s| (s / n).sqrt()).collect(),
        ade: ade_sum / (n * horizon as f64),
        fde: fde_sum / n,
    })
}

pub fn truth_points(sample: &WindowedSample, horizon: usize) -> Vec<PredictedPoint> {
    sample
        .future
        .iter()
        .take(horizon)
        .map(|p| PredictedPoint { x: p.x, y: p.y, v: p.v })
        .collect()
}
