use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use nalgebra::DVector;
use taskstack::comparison::{compare_controllers, resolution_sweep, LqrSetup};
use taskstack::config::{ScenarioConfig, SystemType};
use taskstack::sim::{phase_report, read_trace_csv, run, write_trace_csv, PhaseThresholds};
use taskstack::valuefn::{read_grid, write_grid};
use taskstack::{plot, scenarios, verify, Error, GridValueFunction, SimulationTrace};

#[derive(Parser)]
#[command(name = "taskstack", version, about = "Prioritized value-function task stacks")]
struct Cli {
    /// Scenario TOML file, or the name of a shipped scenario
    /// (multirobot_hex, double_integrator, nullspace_two_task).
    #[arg(long, global = true)]
    config: Option<String>,
    /// Directory for traces, plots and grid artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a grid value function with value iteration and save it.
    Learn,
    /// Run the closed loop and write the trace and plots.
    Simulate,
    /// Compare the LQR feedback, the min-norm controller on the Riccati value
    /// and on the learned grid for the double integrator.
    CompareAppendixA {
        /// Also learn at these per-axis resolutions and report convergence.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
    },
    /// Run invariant checks and print a JSON report.
    Verify {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(verify::SUITES))]
        suite: String,
    },
    /// Re-render plots from a trace CSV.
    Plot {
        trace: PathBuf,
        /// Robots to draw as planar paths.
        #[arg(long)]
        robots: Option<usize>,
    },
}

/// Exit code 1: bad input. Exit code 2: the numerics failed.
enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::NonConvergence { .. } | Error::SingularKkt(_)) => Failure::Numerical(e),
            _ => Failure::Validation(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let outcome = fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating {}", cli.out.display()))
        .map_err(Failure::from)
        .and_then(|()| dispatch(&cli));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Learn => learn(cli),
        Command::Simulate => simulate(cli),
        Command::CompareAppendixA { sweep } => compare(cli, sweep),
        Command::Verify { suite } => run_verify(cli, suite),
        Command::Plot { trace, robots } => replot(cli, trace, *robots),
    }
}

macro_rules! say {
    ($cli:expr, $($arg:tt)*) => {
        if !$cli.quiet {
            println!($($arg)*);
        }
    };
}

fn load_config(cli: &Cli, fallback: Option<&str>) -> Result<ScenarioConfig, Failure> {
    let name = cli
        .config
        .as_deref()
        .or(fallback)
        .ok_or_else(|| anyhow!("this command needs --config <file or shipped scenario name>"))?;
    let path = Path::new(name);
    if path.exists() {
        return Ok(ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?);
    }
    if name.ends_with(".toml") || name.contains(std::path::MAIN_SEPARATOR) {
        return Err(anyhow!("config file {name} not found").into());
    }
    Ok(scenarios::builtin(name)?)
}

fn artifact_path(cli: &Cli, cfg: &ScenarioConfig) -> Result<PathBuf, Failure> {
    let name = cfg
        .output
        .artifact
        .as_deref()
        .ok_or_else(|| anyhow!("scenario `{}` has no `output.artifact` path", cfg.name))?;
    Ok(ScenarioConfig::resolve(&cli.out, name))
}

fn learn(cli: &Cli) -> CliResult {
    let cfg = load_config(cli, None)?;
    let learning = cfg.learning()?;
    let path = artifact_path(cli, &cfg)?;
    let started = Instant::now();
    let (grid, report) = learning.learn(&cfg.system()?)?;
    if report.residual > learning.tol {
        return Err(Failure::Numerical(anyhow!(
            "value iteration stopped after {} sweeps with residual {:e} above tolerance {:e}",
            report.sweeps,
            report.residual,
            learning.tol
        )));
    }
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_grid(&grid, std::io::BufWriter::new(file))?;
    say!(
        cli,
        "learned {:?} grid in {:.2} s: {} sweeps, residual {:.3e}, monotone {}",
        learning.resolution,
        started.elapsed().as_secs_f64(),
        report.sweeps,
        report.residual,
        report.monotone
    );
    say!(cli, "wrote {}", path.display());
    Ok(())
}

fn simulate(cli: &Cli) -> CliResult {
    let cfg = load_config(cli, None)?;
    let scenario = cfg.build(&cli.out)?;
    let started = Instant::now();
    let trace = run(&scenario)?;
    let elapsed = started.elapsed().as_secs_f64();

    let trace_path = ScenarioConfig::resolve(&cli.out, &cfg.output.trace);
    let file = fs::File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    write_trace_csv(&trace, std::io::BufWriter::new(file))?;

    if let Some(f) = &trace.failure {
        if let Some(dump) = &f.qp_dump {
            let dump_path = cli.out.join("failed_qp.txt");
            fs::write(&dump_path, dump).with_context(|| format!("writing {}", dump_path.display()))?;
            eprintln!("QP dump written to {}", dump_path.display());
        }
        return Err(Failure::Numerical(anyhow!(
            "simulation aborted at step {} (t = {}): {}; partial trace in {}",
            f.step,
            f.time,
            f.reason,
            trace_path.display()
        )));
    }

    say!(
        cli,
        "{}: {} records in {:.2} s, median QP solve {:.1} µs, all optimal {}",
        scenario.name,
        trace.records.len(),
        elapsed,
        trace.median_solve_time() * 1e6,
        trace.all_optimal()
    );
    let expectations = scenarios::expectations(&cfg.name);
    let report = phase_report(&trace, &scenario.schedule, &PhaseThresholds::default(), &expectations);
    for seg in &report.segments {
        say!(cli, "segment {} [{}, {}]", seg.index + 1, seg.start_time, seg.end_time);
        for t in &seg.tasks {
            let verdict = match (t.expectation, t.satisfied) {
                (Some(e), Some(ok)) => format!("  {e:?}: {}", if ok { "ok" } else { "NOT MET" }),
                _ => String::new(),
            };
            say!(
                cli,
                "  {:>4}  start {:>11.4e}  end {:>11.4e}{verdict}",
                t.task,
                t.start,
                t.end
            );
        }
    }
    say!(cli, "wrote {}", trace_path.display());

    if cfg.output.plots {
        let boundaries = switch_times(&cfg)?;
        render(cli, &trace, &boundaries, planar_robots(&cfg))?;
    }
    if !report.all_satisfied() {
        return Err(Failure::Numerical(anyhow!("declared phase expectations were not met")));
    }
    Ok(())
}

fn switch_times(cfg: &ScenarioConfig) -> Result<Vec<f64>, Failure> {
    let schedule = cfg.schedule()?;
    let segs = schedule.segments();
    Ok(segs.iter().skip(1).map(|s| s.start).collect())
}

fn planar_robots(cfg: &ScenarioConfig) -> Option<usize> {
    match (cfg.system.kind, cfg.system.workspace_dim.unwrap_or(2)) {
        (SystemType::SingleIntegrator, 2) => Some(cfg.system.robot_count.unwrap_or(1)),
        _ => None,
    }
}

fn render(cli: &Cli, trace: &SimulationTrace, boundaries: &[f64], robots: Option<usize>) -> CliResult {
    let values = cli.out.join("values.svg");
    plot::plot_values(trace, boundaries, &values)?;
    let mut written = vec![values];
    match robots {
        Some(n) => {
            let p = cli.out.join("paths.svg");
            plot::plot_trajectories(trace, n, &p)?;
            written.push(p);
        }
        None => {
            let p = cli.out.join("states.svg");
            plot::plot_states(trace, &p)?;
            written.push(p);
        }
    }
    for p in written {
        say!(cli, "wrote {}", p.display());
    }
    Ok(())
}

fn load_or_learn_grid(cli: &Cli, cfg: &ScenarioConfig) -> Result<GridValueFunction, Failure> {
    let path = artifact_path(cli, cfg)?;
    if path.exists() {
        let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        log::info!("using grid artifact {}", path.display());
        return Ok(read_grid(BufReader::new(file))?);
    }
    log::info!("{} not found; learning the grid", path.display());
    Ok(cfg.learning()?.learn(&cfg.system()?)?.0)
}

fn compare(cli: &Cli, sweep: &[usize]) -> CliResult {
    let cfg = load_config(cli, Some("double_integrator"))?;
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| anyhow!("scenario `{}` has no `simulation` section", cfg.name))?;
    let setup = LqrSetup::double_integrator()?;
    let x0 = DVector::from_vec(sim.x0.clone());
    let grid = load_or_learn_grid(cli, &cfg)?;
    let report = compare_controllers(&setup, Some(&grid), &x0, sim.dt, sim.horizon)?;
    say!(cli, "max |Δu| over {} s from {:?}:", sim.horizon, sim.x0);
    for p in &report.pairs {
        say!(cli, "  {:<18} vs {:<18} {:.3e}", p.first, p.second, p.max_deviation);
    }
    let svg = cli.out.join("comparison.svg");
    plot::plot_comparison(&report, &svg)?;
    say!(cli, "wrote {}", svg.display());

    if !sweep.is_empty() {
        let learning = cfg.learning()?;
        let resolutions: Vec<Vec<usize>> = sweep.iter().map(|&n| vec![n; learning.resolution.len()]).collect();
        let rep = resolution_sweep(&setup, learning, &resolutions, &x0, sim.dt, sim.horizon)?;
        say!(
            cli,
            "{:>10} {:>8} {:>12} {:>14} {:>12}",
            "grid",
            "sweeps",
            "residual",
            "value error",
            "max |Δu|"
        );
        for e in &rep.entries {
            say!(
                cli,
                "{:>10} {:>8} {:>12.3e} {:>14.4} {:>12.4}",
                format!("{:?}", e.resolution),
                e.sweeps,
                e.residual,
                e.median_value_error,
                e.control_deviation
            );
        }
        say!(
            cli,
            "control deviation decreases with resolution: {}",
            rep.deviation_monotone()
        );
    }
    Ok(())
}

fn run_verify(cli: &Cli, suite: &str) -> CliResult {
    let report = verify::run_suite(suite, cli.seed)?;
    println!("{}", report.to_json());
    for c in report.failures() {
        eprintln!(
            "FAILED {}: worst {:e} vs {:e} ({})",
            c.name, c.worst, c.tolerance, c.detail
        );
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Numerical(anyhow!(
            "{} of {} checks failed",
            report.failures().count(),
            report.checks.len()
        )))
    }
}

fn replot(cli: &Cli, trace_path: &Path, robots: Option<usize>) -> CliResult {
    let file = fs::File::open(trace_path).with_context(|| format!("opening {}", trace_path.display()))?;
    let trace = read_trace_csv(BufReader::new(file))?;
    let (boundaries, robots) = match &cli.config {
        Some(_) => {
            let cfg = load_config(cli, None)?;
            (switch_times(&cfg)?, robots.or(planar_robots(&cfg)))
        }
        None => (Vec::new(), robots),
    };
    render(cli, &trace, &boundaries, robots)
}
