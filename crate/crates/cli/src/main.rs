use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use lis_core::ekf::Estimator;
use lis_core::metrics::{RunMetrics, DEFAULT_CONVERGENCE_THRESHOLD};
use lis_core::observability::{analyze, linearize, sample_indices, sensitivities, RANK_TOL};
use lis_core::sim::simulate;
use lis_core::{io, EstimatorConfig, Model, Params, ScenarioConfig, SimRun};

/// Li-S cell DAE simulator and state estimator.
#[derive(Parser, Debug)]
#[command(name = "lis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario TOML; the bundled 1.7 A discharge when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Parameter TOML; the bundled reference set when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the plant and write its trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the EKF on measurements.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Measurement CSV with columns t, V_meas (or V) and I.
        #[arg(
            long,
            conflicts_with = "self_generate",
            required_unless_present = "self_generate"
        )]
        measurements: Option<PathBuf>,
        /// Simulate the plant and use its noisy voltage as measurements.
        #[arg(long)]
        self_generate: bool,
        /// Relative error threshold for convergence, percent.
        #[arg(long, default_value_t = DEFAULT_CONVERGENCE_THRESHOLD * 100.0)]
        convergence_threshold: f64,
    },
    /// Rank tests of the linearized system along the plant trajectory.
    Observability {
        #[command(flatten)]
        common: Common,
        /// Evaluate every N-th record.
        #[arg(long, default_value_t = 50)]
        sample_every: usize,
    },
    /// Potential and voltage sensitivities along the plant trajectory.
    Sensitivity {
        #[command(flatten)]
        common: Common,
    },
}

/// Failure carrying the process exit code.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Exit {
    fn from(e: E) -> Self {
        let e = e.into();
        let code = match e.downcast_ref::<lis_core::Error>() {
            Some(lis_core::Error::Alignment(_)) => 3,
            _ => 1,
        };
        Exit(code, e)
    }
}

type CmdResult = Result<(), Exit>;

struct Loaded {
    model: Model,
    scenario: ScenarioConfig,
    out: PathBuf,
}

fn load(common: &Common) -> Result<Loaded, Exit> {
    let mut scenario = match &common.scenario {
        Some(path) if !path.exists() => {
            return Err(Exit(
                2,
                anyhow::anyhow!("scenario file not found: {}", path.display()),
            ));
        }
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::discharge(),
    };
    if let Some(seed) = common.seed {
        scenario.rng_seed = seed;
    }
    let params = match &common.params {
        Some(path) => Params::load(path)?,
        None => Params::reference(),
    };
    for note in params.validate()? {
        eprintln!("note: {note}");
    }
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    Ok(Loaded {
        model: Model::new(params),
        scenario,
        out: common.out.clone(),
    })
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reports a truncated plant run as an error after its partial output is
/// written.
fn check_truncation(run: &SimRun) -> anyhow::Result<()> {
    if let Some(tr) = &run.truncated {
        bail!("simulation stopped at t = {} s: {}", tr.t, tr.reason);
    }
    Ok(())
}

fn cmd_simulate(common: &Common) -> CmdResult {
    let Loaded {
        model,
        scenario,
        out,
    } = load(common)?;
    let run = simulate(&model, &scenario)?;
    io::save_sim(&out.join("simulation.csv"), &run.records)?;
    let metrics = RunMetrics::plant(&run.records, scenario.sim.eps_mass);
    write_text(&out.join("simulation_metrics.txt"), &metrics.summary())?;
    check_truncation(&run)?;
    Ok(())
}

fn cmd_estimate(common: &Common, measurements: Option<&Path>, threshold_pct: f64) -> CmdResult {
    if !(threshold_pct > 0.0 && threshold_pct.is_finite()) {
        return Err(
            anyhow::anyhow!("--convergence-threshold must be a positive percentage").into(),
        );
    }
    let Loaded {
        model,
        scenario,
        out,
    } = load(common)?;
    let (meas, truth) = match measurements {
        Some(path) => {
            let m = io::read_measurements(path).map_err(|e| match e {
                lis_core::Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => Exit(
                    1,
                    anyhow::anyhow!("measurement file not found: {}", path.display()),
                ),
                e => e.into(),
            })?;
            (m, None)
        }
        None => {
            let run = simulate(&model, &scenario)?;
            io::save_sim(&out.join("simulation.csv"), &run.records)?;
            check_truncation(&run)?;
            (io::measurements_from_sim(&run.records), Some(run.records))
        }
    };
    let estimator = Estimator::new(&model, EstimatorConfig::from_scenario(&scenario))?;
    let est = estimator.run(&scenario, &meas)?;
    io::save_estimates(&out.join("estimates.csv"), &est, truth.as_deref())?;
    if let Some(truth) = &truth {
        let m = RunMetrics::estimation(truth, &est, scenario.sim.eps_mass, threshold_pct / 100.0)?;
        write_text(&out.join("estimate_metrics.txt"), &m.summary())?;
    } else {
        let max_res = est
            .iter()
            .map(|e| e.state.g_residual_norm)
            .fold(0.0, f64::max);
        write_text(
            &out.join("estimate_metrics.txt"),
            &format!("max_estimator_residual = {max_res}\n"),
        )?;
    }
    Ok(())
}

fn cmd_observability(common: &Common, every: usize) -> CmdResult {
    let Loaded {
        model,
        scenario,
        out,
    } = load(common)?;
    let run = simulate(&model, &scenario)?;
    let mut rows = Vec::new();
    for k in sample_indices(run.records.len(), every) {
        let r = &run.records[k];
        let sys = linearize(&model, &r.x, &r.z, r.current)?;
        rows.push((r.t, analyze(&sys, RANK_TOL)?));
    }
    io::save_observability(&out.join("observability.csv"), &rows)?;
    let c1 = rows.iter().filter(|(_, r)| r.c1_holds()).count();
    let c2 = rows.iter().filter(|(_, r)| r.c2_holds).count();
    let summary = format!(
        "samples = {}\nsample_every = {}\nrank_tolerance = {}\nc1_holds = {c1}/{n}\nc2_holds = {c2}/{n}\n",
        rows.len(),
        every,
        RANK_TOL,
        n = rows.len(),
    );
    write_text(&out.join("observability_summary.txt"), &summary)?;
    check_truncation(&run)?;
    Ok(())
}

fn cmd_sensitivity(common: &Common) -> CmdResult {
    let Loaded {
        model,
        scenario,
        out,
    } = load(common)?;
    let run = simulate(&model, &scenario)?;
    let rows = sensitivities(&model, &run.records)?;
    io::save_sensitivities(&out.join("sensitivity.csv"), &rows)?;
    check_truncation(&run)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli_common(&cli.command).out.as_os_str().is_empty() {
        eprintln!("error: --out must not be empty");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Simulate { common } => cmd_simulate(common),
        Command::Estimate {
            common,
            measurements,
            self_generate: _,
            convergence_threshold,
        } => cmd_estimate(common, measurements.as_deref(), *convergence_threshold),
        Command::Observability {
            common,
            sample_every,
        } => cmd_observability(common, *sample_every),
        Command::Sensitivity { common } => cmd_sensitivity(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn cli_common(cmd: &Command) -> &Common {
    match cmd {
        Command::Simulate { common }
        | Command::Estimate { common, .. }
        | Command::Observability { common, .. }
        | Command::Sensitivity { common } => common,
    }
}
