//! Library behind the `lanesafe` binary: configuration, the subcommands and
//! the comparison report. Exit codes: 0 success, 1 invalid input, 2 failure
//! while running.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lanesafe::predictor::PredictorKind;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<lanesafe::Error> for CliError {
    fn from(e: lanesafe::Error) -> Self {
        use lanesafe::Error as E;
        match e {
            E::Shape(_) | E::InvalidArgument(_) | E::Empty(_) | E::Parse { .. } | E::ModelFormat(_) | E::Csv(_) => {
                CliError::Validation(e.to_string())
            }
            E::NonFinite(_) | E::Divergence { .. } | E::Io(_) | E::Json(_) => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lanesafe", version, about = "Lane-change prediction, planning and safety simulation")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic trajectory dataset and its manifest.
    GenData(GenDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Score the predictors on the held-out split.
    Eval(EvalArgs),
    /// Fit and sample a single lane-change curve.
    Plan(PlanArgs),
    /// Run a closed-loop scenario.
    Simulate(SimulateArgs),
    /// Compare simulation summaries.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "lstm")]
    pub model: commands::TrainKind,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding trained models; missing ones are skipped.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long, default_value_t = 20.0)]
    pub speed: f64,
    /// Lateral displacement of the maneuver (m).
    #[arg(long, default_value_t = 3.5, allow_hyphen_values = true)]
    pub lateral: f64,
    /// Longitudinal extent (m); defaults to the simulator's choice for the speed.
    #[arg(long)]
    pub extent: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub heading: f64,
    #[arg(long, default_value_t = lanesafe::planner::DEFAULT_MAX_LATERAL_ACCEL)]
    pub max_lateral_accel: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    /// lstm, const or feedforward.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Model file for the lstm and feedforward predictors.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Summary JSON files written by simulate.
    #[arg(required = true, num_args = 2..)]
    pub summaries: Vec<PathBuf>,
}

/// File config, then flags, then validation.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    match &cli.command {
        Command::GenData(a) => {
            if let Some(n) = a.episodes {
                cfg.data.episodes = n;
            }
            if let Some(s) = a.noise_std {
                cfg.data.noise_std = s;
            }
        }
        Command::Train(a) => {
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(h) = a.hidden {
                cfg.train.hidden_size = h;
            }
        }
        Command::Eval(a) => {
            if let Some(h) = a.horizon {
                cfg.data.horizon = h;
            }
        }
        Command::Simulate(a) => {
            if let Some(s) = &a.scenario {
                cfg.sim.scenario = s.clone();
            }
            if let Some(p) = &a.predictor {
                cfg.sim.predictor = p.parse::<PredictorKind>()?;
            }
        }
        Command::Plan(_) | Command::Report(_) => {}
    }
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed invocation and returns the text to print.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = resolve_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::GenData(_) => {
            let o = commands::gen_data(&cfg, out)?;
            let c = &o.manifest_data.label_counts;
            Ok(format!(
                "wrote {} ({} vehicles, {} frames; keep {} / left {} / right {}) and {}",
                o.csv.display(),
                o.manifest_data.vehicles,
                o.manifest_data.frames,
                c.keep,
                c.left,
                c.right,
                o.manifest.display()
            ))
        }
        Command::Train(a) => {
            let o = commands::train(&cfg, a.model, &a.data, out)?;
            let s = &o.summary;
            let mut msg = format!(
                "trained {} on {} windows for {} epochs: loss {:.5} -> {:.5}; gradient self-test max rel. error {:.2e} over {} parameters",
                s.kind.as_str(),
                s.train_windows,
                s.epochs,
                s.initial_loss,
                s.final_loss,
                s.self_test.max_rel_error,
                s.self_test.checked
            );
            if let Some(acc) = s.val_accuracy {
                msg.push_str(&format!("; held-out accuracy {acc:.3}"));
            }
            msg.push_str(&format!("\nwrote {}", o.model.display()));
            Ok(msg)
        }
        Command::Eval(a) => {
            let o = commands::eval(&cfg, &a.data, &a.models, out)?;
            let r = &o.report;
            let mut msg = format!("{} held-out windows\n{:<12}", r.windows, "predictor");
            let marks: Vec<usize> = (1..=r.horizon).filter(|k| ((*k as f64 * r.dt * 10.0).round() as usize).is_multiple_of(10)).collect();
            for k in &marks {
                msg.push_str(&format!(" {:>10}", format!("lat@{:.0}s", *k as f64 * r.dt)));
            }
            msg.push_str(&format!(" {:>8} {:>8}\n", "ade", "fde"));
            for p in &r.predictors {
                msg.push_str(&format!("{:<12}", p.predictor.as_str()));
                for k in &marks {
                    msg.push_str(&format!(" {:>10.4}", p.metrics.lateral_rmse_by_horizon[k - 1]));
                }
                msg.push_str(&format!(" {:>8.3} {:>8.3}\n", p.metrics.ade, p.metrics.fde));
            }
            if let Some(acc) = r.intention_accuracy {
                msg.push_str(&format!("intention accuracy {acc:.3}\n"));
            }
            msg.push_str(&format!("wrote {} and {}", o.csv.display(), o.json.display()));
            Ok(msg)
        }
        Command::Plan(a) => {
            let req = commands::PlanRequest {
                speed: a.speed,
                lateral: a.lateral,
                extent: a.extent,
                heading: a.heading,
                max_lateral_accel: a.max_lateral_accel,
            };
            let o = commands::plan(&cfg, &req, out)?;
            let c = o.curve;
            Ok(format!(
                "y(x) = {:.6e}·x + {:.6e}·x² + {:.6e}·x³ over {:.1} m\npeak lateral acceleration {:.3} m/s² ({})\nwrote {} ({} points)",
                c.a1,
                c.a2,
                c.a3,
                o.step.x_end,
                o.comfort.peak_lateral_accel,
                if o.comfort.pass { "comfortable" } else { "too sharp" },
                o.csv.display(),
                o.points.len()
            ))
        }
        Command::Simulate(a) => {
            let o = commands::simulate(&cfg, a.model.as_deref(), out)?;
            let s = &o.summary;
            Ok(format!(
                "{} / {}: collision {}, final lane {}, peak RAI {:.4}, peak decel {:.2} m/s², completion {}\nwrote {} and {}",
                s.scenario,
                s.predictor,
                s.collision,
                s.final_lane,
                s.peak_rai,
                s.peak_decel,
                s.completion_time.map_or("-".to_string(), |t| format!("{t:.1} s")),
                o.log.display(),
                o.summary_path.display()
            ))
        }
        Command::Report(a) => {
            let o = report::report(&a.summaries, out)?;
            Ok(format!("{}wrote {}", o.text, o.csv.display()))
        }
    }
}
