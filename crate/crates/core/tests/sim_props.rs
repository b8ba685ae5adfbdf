use lanesafe::baselines::ConstantVelocityModel;
use lanesafe::kinematics::{integrate_longitudinal, AccelSchedule};
use lanesafe::mpc::MpcConfig;
use lanesafe::safety::GippsParams;
use lanesafe::sim::{
    log_rows, read_log_csv, read_summary, run_scenario, scenario_active_lane_change, scenario_by_name,
    scenario_emergency_braking, summarize, write_log_csv, write_summary, ScenarioSpec, ScriptedVehicle, SimLog,
};
use lanesafe::vehicle::VehicleState;
use lanesafe::Execution;

fn run(spec: &ScenarioSpec, exec: Execution) -> SimLog {
    let mpc = MpcConfig { execution: exec, ..MpcConfig::default() };
    run_scenario(spec, &ConstantVelocityModel, &GippsParams::default(), &mpc, 3).unwrap()
}

fn short(mut spec: ScenarioSpec, duration: f64) -> ScenarioSpec {
    spec.duration = duration;
    spec
}

#[test]
fn runs_are_bit_identical_across_modes() {
    let spec = short(scenario_active_lane_change(), 6.0);
    let a = run(&spec, Execution::Sequential);
    let b = run(&spec, Execution::Parallel);
    assert_eq!(a, b);
    assert_eq!(a.records.len(), spec.ticks());
    assert_eq!(spec.ticks(), 60);
}

#[test]
fn scripted_vehicles_follow_their_schedules_exactly() {
    let spec = short(scenario_emergency_braking(), 20.0);
    let log = run(&spec, Execution::default());
    for (i, script) in spec.vehicles.iter().enumerate() {
        let (mut x, mut v) = (script.state.x, script.state.v);
        for (k, rec) in log.records.iter().enumerate() {
            assert_eq!(rec.others[i].x, x, "vehicle {i} tick {k}");
            assert_eq!(rec.others[i].v, v);
            let (nx, nv, _) = integrate_longitudinal(x, v, script.schedule.at(rec.t), spec.dt);
            x = nx;
            v = nv;
        }
    }
}

#[test]
fn speeds_change_within_commanded_limits() {
    let spec = scenario_emergency_braking();
    let mpc = MpcConfig::default();
    let log = run(&spec, Execution::default());
    for pair in log.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let dv = (b.ego.v - a.ego.v).abs();
        assert!(dv <= a.control.accel.abs() * spec.dt + 1e-12);
        assert!(a.control.accel >= mpc.a_min && a.control.accel <= mpc.a_max);
        for (o0, o1) in a.others.iter().zip(&b.others) {
            assert!((o1.v - o0.v).abs() <= o0.a.abs() * spec.dt + 1e-12);
        }
    }
}

#[test]
fn halving_dt_keeps_scripted_positions() {
    let schedule = AccelSchedule::new(vec![(0.0, 0.5), (3.0, -2.0), (6.0, 1.0)]);
    let end = |dt: f64| {
        let (mut x, mut v) = (0.0, 20.0);
        let n = (10.0 / dt).round() as usize;
        for k in 0..n {
            let (nx, nv, _) = integrate_longitudinal(x, v, schedule.at(k as f64 * dt), dt);
            x = nx;
            v = nv;
        }
        x
    };
    let (a, b) = (end(0.1), end(0.05));
    assert!((a - b).abs() < 0.005 * b.abs());
}

#[test]
fn collision_halts_the_run() {
    let mut spec = short(scenario_emergency_braking(), 5.0);
    spec.ego.v = 30.0;
    spec.vehicles = vec![ScriptedVehicle {
        state: VehicleState::car(1, 9.0, spec.ego.y, 0.0, 2),
        schedule: AccelSchedule::constant(0.0),
    }];
    let log = run(&spec, Execution::default());
    assert!(log.collided());
    let first = log.records.iter().position(|r| r.collision).unwrap();
    assert_eq!(first, log.records.len() - 1);
    assert!(log.records.len() < spec.ticks());
    assert!(summarize(&log).collision);
}

#[test]
fn log_and_summary_round_trip() {
    let spec = short(scenario_active_lane_change(), 4.0);
    let log = run(&spec, Execution::default());
    let gipps = GippsParams::default();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("log.csv");
    write_log_csv(&log, &gipps, &csv).unwrap();
    assert_eq!(read_log_csv(&csv).unwrap(), log_rows(&log, &gipps));
    let json = dir.path().join("summary.json");
    let summary = summarize(&log);
    write_summary(&summary, &json).unwrap();
    assert_eq!(read_summary(&json).unwrap(), summary);
    assert_eq!(log_rows(&log, &gipps).len(), log.records.len() * (1 + spec.vehicles.len()));
}

#[test]
fn scenario_names_resolve() {
    assert_eq!(scenario_by_name("lane-change").unwrap(), scenario_active_lane_change());
    assert_eq!(scenario_by_name("emergency-braking").unwrap(), scenario_emergency_braking());
    let err = scenario_by_name("nope").unwrap_err().to_string();
    assert!(err.contains("lane-change") && err.contains("emergency-braking"));
}

#[test]
fn invalid_specs_rejected() {
    let mut spec = scenario_active_lane_change();
    spec.dt = 0.0;
    assert!(spec.validate().is_err());
    let mut spec = scenario_active_lane_change();
    spec.goal.target_lane = 9;
    assert!(spec.validate().is_err());
    let spec = scenario_active_lane_change();
    let mpc = MpcConfig { dt: 0.05, ..MpcConfig::default() };
    assert!(run_scenario(&spec, &ConstantVelocityModel, &GippsParams::default(), &mpc, 0).is_err());
}
