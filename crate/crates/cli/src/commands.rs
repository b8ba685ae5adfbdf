use std::fs;
use std::path::{Path, PathBuf};

use lanesafe::baselines::{ConstantVelocityModel, FeedforwardModel};
use lanesafe::data::{
    load_trajectories, make_windows, metrics, split_by_episode, synth_with, truth_points, DatasetManifest,
    PredictionMetrics, Split, SynthConfig, TrajectoryDataset, WindowedSample, MANIFEST_FORMAT_VERSION,
};
use lanesafe::lstm::{IntentionModel, LossRecord, LstmModel, TrainConfig, SELF_TEST_TOLERANCE};
use lanesafe::model_file::{load_model, save_model, SavedModel};
use lanesafe::optim::GradCheckReport;
use lanesafe::planner::{check_comfort, fit_cubic, lane_change_extent, sample_trajectory, CubicCurve, ComfortReport, LaneChangeStep, TrajectoryPoint, DEFAULT_EXTENT, DEFAULT_MAX_LATERAL_ACCEL};
use lanesafe::predictor::{PredictorKind, TrajectoryPredictor};
use lanesafe::sim::{run_scenario, scenario_by_name, summarize, write_log_csv, write_summary, SimSummary, MIN_LANE_CHANGE_DURATION};
use lanesafe::Execution;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrainKind {
    Lstm,
    Intention,
    Feedforward,
}

impl TrainKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainKind::Lstm => "lstm",
            TrainKind::Intention => "intention",
            TrainKind::Feedforward => "feedforward",
        }
    }

    pub fn model_file(self) -> String {
        format!("{}.lsnm", self.as_str())
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Runtime(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} not found: {}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct GenDataOutput {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub manifest_data: DatasetManifest,
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<GenDataOutput, CliError> {
    cfg.validate()?;
    let synth = synth_with(
        &SynthConfig::new(cfg.seed, cfg.data.episodes, cfg.data.noise_std),
        Execution::default(),
    )?;
    let split = split_by_episode(&synth.dataset, cfg.data.train_fraction, cfg.seed);
    create_dir(out)?;
    let csv = out.join(TRAJECTORIES_FILE);
    synth.dataset.write_csv(&csv)?;
    let manifest = out.join(MANIFEST_FILE);
    let manifest_data = synth.manifest(&split);
    write_json(&manifest, &manifest_data)?;
    Ok(GenDataOutput { csv, manifest, manifest_data })
}

pub struct LoadedData {
    pub dataset: TrajectoryDataset,
    pub manifest: DatasetManifest,
}

impl LoadedData {
    pub fn split(&self) -> Split {
        Split {
            train: self.manifest.train_vehicle_ids.clone(),
            val: self.manifest.val_vehicle_ids.clone(),
        }
    }

    pub fn windows(&self, ids: &[u32], history: usize, horizon: usize, stride: usize) -> Result<Vec<WindowedSample>, CliError> {
        let w = make_windows(&self.dataset.subset(ids), history, horizon, stride)?;
        if w.is_empty() {
            return Err(CliError::Validation(format!(
                "no windows of {history}+{horizon} steps in the selected tracks"
            )));
        }
        Ok(w)
    }
}

pub fn load_data(dir: &Path) -> Result<LoadedData, CliError> {
    let csv = dir.join(TRAJECTORIES_FILE);
    let manifest_path = dir.join(MANIFEST_FILE);
    require_file(&csv, "dataset")?;
    require_file(&manifest_path, "dataset manifest")?;
    let text = fs::read_to_string(&manifest_path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(CliError::Validation(format!(
            "{}: unsupported manifest version {}",
            manifest_path.display(),
            manifest.format_version
        )));
    }
    let mut dataset = load_trajectories(&csv)?;
    if (dataset.dt - manifest.dt).abs() > 1e-6 {
        return Err(CliError::Validation(format!(
            "dataset time step {} disagrees with manifest dt {}",
            dataset.dt, manifest.dt
        )));
    }
    // the manifest keeps the exact step; the CSV only allows inferring it
    dataset.dt = manifest.dt;
    Ok(LoadedData { dataset, manifest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTest {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub kind: TrainKind,
    pub seed: u64,
    pub epochs: usize,
    pub train_windows: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub self_test: SelfTest,
    /// Held-out accuracy of the intention classifier.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: PathBuf,
    pub loss_history: PathBuf,
    pub summary_path: PathBuf,
    pub summary: TrainSummary,
}

fn check_self_test(r: GradCheckReport) -> Result<SelfTest, CliError> {
    if !(r.max_rel_error <= SELF_TEST_TOLERANCE) {
        return Err(CliError::Runtime(format!(
            "gradient self-test failed: relative error {:.3e} at parameter {} exceeds {SELF_TEST_TOLERANCE:e}",
            r.max_rel_error, r.worst_index
        )));
    }
    Ok(SelfTest {
        checked: r.checked,
        max_rel_error: r.max_rel_error,
        tolerance: SELF_TEST_TOLERANCE,
    })
}

pub fn train(cfg: &RunConfig, kind: TrainKind, data_dir: &Path, out: &Path) -> Result<TrainOutput, CliError> {
    cfg.validate()?;
    let data = load_data(data_dir)?;
    let split = data.split();
    let d = &cfg.data;
    let train_set = data.windows(&split.train, d.history, d.horizon, d.train_stride)?;
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let (model, history, initial_loss, final_loss, self_test, val_accuracy, epochs) = match kind {
        TrainKind::Lstm => {
            let (m, r) = LstmModel::train(&train_set, &train_cfg)?;
            let st = check_self_test(m.self_test(&train_set)?)?;
            (SavedModel::Trajectory(m), r.history, r.initial_loss, r.final_loss, st, None, train_cfg.epochs)
        }
        TrainKind::Intention => {
            let (m, r) = IntentionModel::train(&train_set, &train_cfg)?;
            let st = check_self_test(m.self_test(&train_set)?)?;
            let val = data.windows(&split.val, d.history, d.horizon, d.val_stride)?;
            let acc = m.accuracy(&val)?;
            (SavedModel::Intention(m), r.history, r.initial_loss, r.final_loss, st, Some(acc), train_cfg.epochs)
        }
        TrainKind::Feedforward => {
            let ff_cfg = TrainConfig {
                epochs: cfg.feedforward.epochs(train_cfg.epochs),
                ..train_cfg.clone()
            };
            let (m, r) = FeedforwardModel::train(&train_set, d.horizon, &ff_cfg)?;
            let st = check_self_test(m.self_test(&train_set)?)?;
            (SavedModel::Feedforward(m), r.history, r.initial_loss, r.final_loss, st, None, ff_cfg.epochs)
        }
    };
    create_dir(out)?;
    let model_path = out.join(kind.model_file());
    save_model(&model_path, &model)?;
    let loss_history = out.join(format!("{}_loss.csv", kind.as_str()));
    write_csv::<LossRecord>(&loss_history, &history)?;
    let summary = TrainSummary {
        kind,
        seed: cfg.seed,
        epochs,
        train_windows: train_set.len(),
        initial_loss,
        final_loss,
        self_test,
        val_accuracy,
    };
    let summary_path = out.join(format!("{}_train.json", kind.as_str()));
    write_json(&summary_path, &summary)?;
    Ok(TrainOutput {
        model: model_path,
        loss_history,
        summary_path,
        summary,
    })
}

/// Loads a predictor; `const` needs no model file.
pub fn load_predictor(kind: PredictorKind, model: Option<&Path>) -> Result<Box<dyn TrajectoryPredictor>, CliError> {
    if kind == PredictorKind::Const {
        return Ok(Box::new(ConstantVelocityModel));
    }
    let path = model.ok_or_else(|| CliError::Validation(format!("predictor '{kind}' needs --model <file>")))?;
    require_file(path, "model file")?;
    match (kind, load_model(path)?) {
        (PredictorKind::Lstm, SavedModel::Trajectory(m)) => Ok(Box::new(m)),
        (PredictorKind::Feedforward, SavedModel::Feedforward(m)) => Ok(Box::new(m)),
        (_, other) => Err(CliError::Validation(format!(
            "{} holds a {:?} model, not a '{kind}' predictor",
            path.display(),
            other.kind()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorEval {
    pub predictor: PredictorKind,
    pub metrics: PredictionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizon: usize,
    pub dt: f64,
    pub windows: usize,
    pub predictors: Vec<PredictorEval>,
    pub intention_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn get(&self, kind: PredictorKind) -> Option<&PredictionMetrics> {
        self.predictors.iter().find(|p| p.predictor == kind).map(|p| &p.metrics)
    }
}

#[derive(Debug, Serialize)]
struct EvalRow {
    predictor: PredictorKind,
    step: usize,
    horizon_s: f64,
    rmse: f64,
    lateral_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub report: EvalReport,
}

/// Scores every predictor found in `models_dir` (plus constant velocity) on
/// the held-out windows.
pub fn eval(cfg: &RunConfig, data_dir: &Path, models_dir: &Path, out: &Path) -> Result<EvalOutput, CliError> {
    cfg.validate()?;
    let data = load_data(data_dir)?;
    let d = &cfg.data;
    let val = data.windows(&data.split().val, d.history, d.horizon, d.val_stride)?;
    let mut predictors: Vec<(PredictorKind, Box<dyn TrajectoryPredictor>)> = Vec::new();
    for kind in PredictorKind::ALL {
        let file = match kind {
            PredictorKind::Lstm => Some(models_dir.join(TrainKind::Lstm.model_file())),
            PredictorKind::Feedforward => Some(models_dir.join(TrainKind::Feedforward.model_file())),
            PredictorKind::Const => None,
        };
        if file.as_ref().is_some_and(|f| !f.is_file()) {
            continue;
        }
        predictors.push((kind, load_predictor(kind, file.as_deref())?));
    }
    let truth: Vec<_> = val.iter().map(|s| truth_points(s, d.horizon)).collect();
    let mut evals = Vec::new();
    for (kind, p) in &predictors {
        let preds = Execution::default()
            .map(&val, |s| p.predict(&s.window, d.horizon))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        evals.push(PredictorEval {
            predictor: *kind,
            metrics: metrics(&preds, &truth)?,
        });
    }
    let intention_path = models_dir.join(TrainKind::Intention.model_file());
    let intention_accuracy = if intention_path.is_file() {
        match load_model(&intention_path)? {
            SavedModel::Intention(m) => Some(m.accuracy(&val)?),
            _ => return Err(CliError::Validation(format!("{} is not an intention model", intention_path.display()))),
        }
    } else {
        None
    };
    let report = EvalReport {
        horizon: d.horizon,
        dt: data.dataset.dt,
        windows: val.len(),
        predictors: evals,
        intention_accuracy,
    };
    create_dir(out)?;
    let rows: Vec<EvalRow> = report
        .predictors
        .iter()
        .flat_map(|p| {
            (0..report.horizon).map(move |k| EvalRow {
                predictor: p.predictor,
                step: k + 1,
                horizon_s: (k + 1) as f64 * report.dt,
                rmse: p.metrics.rmse_by_horizon[k],
                lateral_rmse: p.metrics.lateral_rmse_by_horizon[k],
            })
        })
        .collect();
    let csv = out.join("eval.csv");
    write_csv(&csv, &rows)?;
    let json = out.join("eval.json");
    write_json(&json, &report)?;
    Ok(EvalOutput { csv, json, report })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanRequest {
    pub speed: f64,
    pub lateral: f64,
    pub extent: Option<f64>,
    pub heading: f64,
    pub max_lateral_accel: f64,
}

impl Default for PlanRequest {
    fn default() -> Self {
        Self {
            speed: 20.0,
            lateral: 3.5,
            extent: None,
            heading: 0.0,
            max_lateral_accel: DEFAULT_MAX_LATERAL_ACCEL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub csv: PathBuf,
    pub step: LaneChangeStep,
    pub curve: CubicCurve,
    pub comfort: ComfortReport,
    pub points: Vec<TrajectoryPoint>,
}

pub fn plan(cfg: &RunConfig, req: &PlanRequest, out: &Path) -> Result<PlanOutput, CliError> {
    if !(req.speed.is_finite() && req.speed > 0.0) {
        return Err(CliError::Validation(format!("speed must be positive, got {}", req.speed)));
    }
    if !(req.max_lateral_accel.is_finite() && req.max_lateral_accel > 0.0) {
        return Err(CliError::Validation("max lateral acceleration must be positive".into()));
    }
    let extent = req
        .extent
        .unwrap_or_else(|| lane_change_extent(req.speed, DEFAULT_EXTENT, MIN_LANE_CHANGE_DURATION));
    let step = LaneChangeStep::new(req.heading, extent, req.lateral)?;
    let curve = fit_cubic(&step)?;
    let comfort = check_comfort(&curve, &step, req.speed, req.max_lateral_accel);
    let points = sample_trajectory(&curve, &step, req.speed, cfg.mpc.dt)?.points;
    create_dir(out)?;
    let csv = out.join("plan.csv");
    write_csv(&csv, &points)?;
    Ok(PlanOutput {
        csv,
        step,
        curve,
        comfort,
        points,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub log: PathBuf,
    pub summary_path: PathBuf,
    pub summary: SimSummary,
}

pub fn simulate(cfg: &RunConfig, model: Option<&Path>, out: &Path) -> Result<SimulateOutput, CliError> {
    cfg.validate()?;
    let spec = scenario_by_name(&cfg.sim.scenario)?;
    let predictor = load_predictor(cfg.sim.predictor, model)?;
    let log = run_scenario(&spec, predictor.as_ref(), &cfg.gipps, &cfg.mpc, cfg.seed)?;
    create_dir(out)?;
    let stem = format!("{}_{}", spec.name, cfg.sim.predictor);
    let log_path = out.join(format!("{stem}_log.csv"));
    write_log_csv(&log, &cfg.gipps, &log_path)?;
    let summary = summarize(&log);
    let summary_path = out.join(format!("{stem}_summary.json"));
    write_summary(&summary, &summary_path)?;
    Ok(SimulateOutput {
        log: log_path,
        summary_path,
        summary,
    })
}
