//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lanesafe::lstm::{gradient_check, LstmParams, SequenceExample, Target};
use lanesafe::planner::{check_comfort, fit_cubic, LaneChangeStep, DEFAULT_MAX_LATERAL_ACCEL};
use lanesafe::predictor::PredictorKind;
use lanesafe::safety::{rai, raw_safe_distance, safe_distance, GippsParams};
use lanesafe::sim::{run_scenario, scenario_active_lane_change, scenario_emergency_braking, summarize, SimLog, SimSummary};
use lanesafe_cli::commands::{self, TrainKind};
use lanesafe_cli::report::build_rows;
use lanesafe_cli::RunConfig;
use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cubic_boundary_conditions() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_bc, mut worst_oracle): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let step = LaneChangeStep::new(
            rng.random_range(-1.2..1.2),
            rng.random_range(1.0..250.0),
            rng.random_range(-12.0..12.0),
        )
        .unwrap();
        let c = fit_cubic(&step).unwrap();
        let x = step.x_end;
        for err in [
            c.eval(0.0).abs(),
            (c.slope(0.0) - step.theta_i.tan()).abs(),
            (c.eval(x) - step.y_end).abs(),
            c.slope(x).abs(),
        ] {
            worst_bc = worst_bc.max(err);
        }
        let m = Matrix4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            1.0, x, x * x, x * x * x,
            0.0, 1.0, 2.0 * x, 3.0 * x * x,
        );
        let a = m.lu().solve(&Vector4::new(0.0, step.theta_i.tan(), step.y_end, 0.0)).unwrap();
        for (got, want) in [c.a0, c.a1, c.a2, c.a3].iter().zip(a.iter()) {
            worst_oracle = worst_oracle.max((got - want).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_bc <= 1e-9 && worst_oracle <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("max boundary error {worst_bc:.2e}, max oracle difference {worst_oracle:.2e}, {elapsed:.2?}"),
    )
}

fn lstm_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for n in 0..50 {
        let (h, d, t) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=6));
        let o = rng.random_range(2..=3);
        let mut p = LstmParams::init(h, d, o, &mut rng);
        for b in [&mut p.b_i, &mut p.b_c, &mut p.b_o, &mut p.b_y] {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let batch: Vec<SequenceExample> = (0..2)
            .map(|_| {
                let inputs = (0..t).map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
                let target = if n % 2 == 0 {
                    Target::Sequence((0..t).map(|_| (0..o).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
                } else {
                    Target::Class(rng.random_range(0..o))
                };
                SequenceExample { inputs, target }
            })
            .collect();
        worst = worst.max(gradient_check(&p, &batch, 1e-5, None).unwrap().max_rel_error);
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-4 && elapsed < Duration::from_secs(30),
        format!("worst relative error {worst:.2e} over 50 fixtures, {elapsed:.2?}"),
    )
}

/// Dataset, trained models and evaluation shared by the prediction and
/// scenario criteria.
struct Trained {
    _dir: tempfile::TempDir,
    models: PathBuf,
    cfg: RunConfig,
    eval: commands::EvalReport,
    elapsed: Duration,
}

fn train_pipeline() -> Trained {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default().with_seed(42);
    let data = dir.path().join("data");
    let models = dir.path().join("models");
    commands::gen_data(&cfg, &data).unwrap();
    commands::train(&cfg, TrainKind::Lstm, &data, &models).unwrap();
    commands::train(&cfg, TrainKind::Feedforward, &data, &models).unwrap();
    let eval = commands::eval(&cfg, &data, &models, &dir.path().join("eval")).unwrap().report;
    Trained {
        elapsed: start.elapsed(),
        _dir: dir,
        models,
        cfg,
        eval,
    }
}

fn prediction_advantage(t: &Trained) -> Outcome {
    let step = |s: f64| (s / t.eval.dt).round() as usize - 1;
    let lat = |k: PredictorKind, s: f64| t.eval.get(k).unwrap().lateral_rmse_by_horizon[step(s)];
    let (lstm2, const2) = (lat(PredictorKind::Lstm, 2.0), lat(PredictorKind::Const, 2.0));
    let (lstm3, const3, ff3) = (
        lat(PredictorKind::Lstm, 3.0),
        lat(PredictorKind::Const, 3.0),
        lat(PredictorKind::Feedforward, 3.0),
    );
    let gain = 1.0 - lstm2 / const2;
    outcome(
        gain >= 0.30 && lstm3 < ff3 && ff3 < const3 && t.elapsed < Duration::from_secs(600),
        format!(
            "lateral RMSE @2 s lstm {lstm2:.4} vs const {const2:.4} ({:.1}% lower); @3 s lstm {lstm3:.4} < feedforward {ff3:.4} < const {const3:.4}; train+eval {:.1?}",
            100.0 * gain,
            t.elapsed
        ),
    )
}

struct Run {
    log: SimLog,
    summary: SimSummary,
    elapsed: Duration,
}

fn run_all(t: &Trained, spec: &lanesafe::sim::ScenarioSpec) -> Vec<(PredictorKind, Run)> {
    PredictorKind::ALL
        .iter()
        .map(|&kind| {
            let file = match kind {
                PredictorKind::Const => None,
                PredictorKind::Lstm => Some(t.models.join(TrainKind::Lstm.model_file())),
                PredictorKind::Feedforward => Some(t.models.join(TrainKind::Feedforward.model_file())),
            };
            let predictor = commands::load_predictor(kind, file.as_deref()).unwrap();
            let start = Instant::now();
            let log = run_scenario(spec, predictor.as_ref(), &t.cfg.gipps, &t.cfg.mpc, t.cfg.seed).unwrap();
            let elapsed = start.elapsed();
            let summary = summarize(&log);
            (kind, Run { log, summary, elapsed })
        })
        .collect()
}

fn get(runs: &[(PredictorKind, Run)], kind: PredictorKind) -> &Run {
    &runs.iter().find(|(k, _)| *k == kind).unwrap().1
}

fn fmt_runs(runs: &[(PredictorKind, Run)], field: impl Fn(&SimSummary) -> f64) -> String {
    runs.iter()
        .map(|(k, r)| format!("{k} {:.4}", field(&r.summary)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn scenario_lane_change(runs: &[(PredictorKind, Run)]) -> Outcome {
    let lstm = &get(runs, PredictorKind::Lstm).summary;
    let const_ = &get(runs, PredictorKind::Const).summary;
    let ff = &get(runs, PredictorKind::Feedforward).summary;
    let summaries: Vec<SimSummary> = runs.iter().map(|(_, r)| r.summary.clone()).collect();
    let rows = build_rows(&summaries);
    let report_min = rows[0].peak_rai == lstm.peak_rai;
    let fast = runs.iter().all(|(_, r)| r.elapsed < Duration::from_secs(60));
    outcome(
        !lstm.collision
            && lstm.final_lane == 3
            && lstm.peak_rai <= const_.peak_rai
            && lstm.peak_rai <= ff.peak_rai
            && report_min
            && fast,
        format!(
            "lstm collision {} final lane {}; peak RAI {}",
            lstm.collision,
            lstm.final_lane,
            fmt_runs(runs, |s| s.peak_rai)
        ),
    )
}

fn scenario_emergency(runs: &[(PredictorKind, Run)]) -> Outcome {
    let lstm = &get(runs, PredictorKind::Lstm).summary;
    let const_ = &get(runs, PredictorKind::Const).summary;
    let ff = &get(runs, PredictorKind::Feedforward).summary;
    let fast = runs.iter().all(|(_, r)| r.elapsed < Duration::from_secs(60));
    outcome(
        runs.iter().all(|(_, r)| !r.summary.collision)
            && lstm.peak_rai <= const_.peak_rai
            && ff.peak_decel >= lstm.peak_decel
            && fast,
        format!(
            "no collisions: {}; peak RAI {}; peak decel {}",
            runs.iter().all(|(_, r)| !r.summary.collision),
            fmt_runs(runs, |s| s.peak_rai),
            fmt_runs(runs, |s| s.peak_decel)
        ),
    )
}

fn safety_identities() -> Outcome {
    let mut ok = true;
    for tau in [0.5, 1.0, 1.7] {
        for b in [3.0, 4.0, 7.5] {
            for l in [0.0, 5.0, 12.0] {
                let p = GippsParams { tau, b_rear: b, b_front: b, body_length: l };
                for i in 0..=80 {
                    let v = i as f64 * 0.5;
                    ok &= safe_distance(v, v, &p).unwrap() == v * tau + l;
                }
            }
        }
    }
    let p = GippsParams::default();
    let mut worst_shift: f64 = 0.0;
    for dl in [0.5, 2.0, 7.0] {
        let q = GippsParams { body_length: p.body_length + dl, ..p };
        for i in 0..=40 {
            for j in 0..=40 {
                let (vr, vf) = (i as f64, j as f64);
                worst_shift = worst_shift.max((raw_safe_distance(vr, vf, &q) - raw_safe_distance(vr, vf, &p) - dl).abs());
            }
        }
    }
    let mut monotone = true;
    let h = 0.25;
    for i in 0..=160 {
        for j in 0..=160 {
            let (vr, vf) = (i as f64 * h, j as f64 * h);
            let d = safe_distance(vr, vf, &p).unwrap();
            if i < 160 {
                monotone &= safe_distance(vr + h, vf, &p).unwrap() >= d;
            }
            if j < 160 {
                monotone &= safe_distance(vr, vf + h, &p).unwrap() <= d;
            }
        }
    }
    outcome(
        ok && worst_shift == 0.0 && monotone,
        format!("equal-speed identity exact: {ok}; body-length shift error {worst_shift:.1e}; monotone on 0..40 m/s grid: {monotone}"),
    )
}

fn rai_anchors() -> Outcome {
    let mut ok = true;
    for d in [5.0, 12.0, 25.0, 37.5, 61.25] {
        ok &= rai(d, d).unwrap() == 0.0 && rai(0.0, d).unwrap() == 1.0 && rai(d / 2.0, d).unwrap() == 0.5;
    }
    outcome(ok, "rai(d_safe) = 0, rai(0) = 1, rai(d_safe/2) = 0.5 for five d_safe values".into())
}

fn files_in(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn cli(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_lanesafe"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut stages_ok = true;
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        std::fs::create_dir_all(&dir).unwrap();
        let steps: [&[&str]; 4] = [
            &["gen-data", "--seed", "7", "--episodes", "12", "--out", "data"],
            &["train", "--seed", "7", "--data", "data", "--model", "lstm", "--epochs", "2", "--hidden", "8", "--out", "models"],
            &["train", "--seed", "7", "--data", "data", "--model", "feedforward", "--epochs", "10", "--out", "models"],
            &["simulate", "--seed", "7", "--scenario", "lane-change", "--predictor", "lstm", "--model", "models/lstm.lsnm", "--out", "sim"],
        ];
        for s in steps {
            stages_ok &= cli(s, &dir);
        }
    }
    let mut same = Vec::new();
    for stage in ["data", "models", "sim"] {
        let a = files_in(&root.path().join("a").join(stage));
        let b = files_in(&root.path().join("b").join(stage));
        same.push((stage, !a.is_empty() && a == b));
    }
    outcome(
        stages_ok && same.iter().all(|(_, s)| *s),
        format!(
            "all commands succeeded: {stages_ok}; byte-identical {}",
            same.iter().map(|(s, ok)| format!("{s}: {ok}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn comfort(runs: &[(PredictorKind, Run)]) -> Outcome {
    let run = get(runs, PredictorKind::Lstm);
    let peak = run.summary.peak_lateral_accel;
    match &run.log.lane_change {
        Some(lc) => {
            let check = check_comfort(&lc.curve, &lc.step, lc.speed, DEFAULT_MAX_LATERAL_ACCEL);
            outcome(
                peak <= 2.5 && check.pass,
                format!(
                    "executed peak lateral acceleration {peak:.3} m/s²; reference curve peak {:.3} m/s² (pass {})",
                    check.peak_lateral_accel, check.pass
                ),
            )
        }
        None => outcome(false, format!("no lane change was started; executed peak {peak:.3} m/s²")),
    }
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("{} criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "cubic boundary conditions", cubic_boundary_conditions());
    report(2, "LSTM gradient check", lstm_gradient_check());
    report(6, "safety-model identities", safety_identities());
    report(7, "RAI anchor points", rai_anchors());
    report(8, "determinism", determinism());
    let trained = train_pipeline();
    report(3, "long-horizon prediction advantage", prediction_advantage(&trained));
    let lane_change = run_all(&trained, &scenario_active_lane_change());
    report(4, "scenario 1 lane change", scenario_lane_change(&lane_change));
    report(5, "scenario 2 emergency braking", scenario_emergency(&run_all(&trained, &scenario_emergency_braking())));
    report(9, "lane-change comfort", comfort(&lane_change));
    let failed = results.iter().filter(|(_, _, o)| !o.pass).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
