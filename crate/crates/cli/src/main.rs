use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;

use aerial_formation::sim::monitor::gradient_check;
use aerial_formation::topology::Class;
use aerial_formation::{RobotId, Scenario, UavId};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

mod plot;

#[derive(Parser)]
#[command(name = "aeroform", version, about = "Aerial-camera formation shape simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write CSV logs. Exits 0 when the formation
    /// converged, 2 when it did not, 1 on error.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the integration step, seconds.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the simulated duration, seconds.
        #[arg(long)]
        max_time: Option<f64>,
    },
    /// Print the topology condition verdicts and class of the initial assignment.
    Validate { scenario: PathBuf },
    /// Render SVG figures from a run's logs.
    Plot {
        log_dir: PathBuf,
        /// Defaults to the log directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compare the finite-difference gradient of one unit's cost with its
    /// closed form at the scenario's initial state.
    GradientCheck {
        scenario: PathBuf,
        #[arg(long)]
        uav: u32,
        #[arg(long)]
        robot: u32,
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
    },
}

fn run(scenario: PathBuf, out_dir: PathBuf, seed: Option<u64>, dt: Option<f64>, max_time: Option<f64>) -> Result<bool> {
    let mut s = Scenario::load(&scenario)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(dt) = dt {
        s.dt = dt;
    }
    if let Some(t) = max_time {
        s.max_time = t;
    }
    let mut sim = s.simulation()?;
    let log = sim.run()?;
    log.write_dir(&out_dir)
        .with_context(|| format!("writing logs to {}", out_dir.display()))?;
    let summary = log.summary.as_ref().expect("run always writes a summary");
    println!(
        "{}: {} after {:.3} s ({} steps), shape error {:.3e} m, {} switches",
        s.name,
        if summary.converged { "converged" } else { "not converged" },
        summary.final_time,
        summary.steps,
        summary.final_shape_error,
        summary.switches
    );
    Ok(summary.converged)
}

fn validate(scenario: PathBuf) -> Result<bool> {
    let s = Scenario::load(&scenario)?;
    let class = s.classify();
    println!("{class}");
    for (uav, robot) in s.unseen_controlled() {
        println!("warning: {uav} controls {robot}, which is outside its image");
    }
    Ok(class.class != Class::Invalid)
}

fn gradient(scenario: PathBuf, uav: u32, robot: u32, h: f64) -> Result<()> {
    let s = Scenario::load(&scenario)?;
    let world = s.initial_world()?;
    let controlled: BTreeSet<RobotId> = world
        .topology
        .controlled(UavId(uav))
        .cloned()
        .unwrap_or_default();
    if !controlled.contains(&RobotId(robot)) {
        bail!("uav {uav} does not control robot {robot}");
    }
    let check = gradient_check(&world, &s.template_image(), UavId(uav), RobotId(robot), h)?;
    println!("finite difference: {}", check.finite_difference);
    println!("closed form:       {}", check.analytic);
    println!("relative error:    {:.3e}", check.relative_error);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            scenario,
            out_dir,
            seed,
            dt,
            max_time,
        } => run(scenario, out_dir, seed, dt, max_time).map(|ok| if ok { 0 } else { 2 }),
        Command::Validate { scenario } => validate(scenario).map(|ok| if ok { 0 } else { 1 }),
        Command::Plot { log_dir, out_dir } => {
            let out = out_dir.unwrap_or_else(|| log_dir.clone());
            plot::plot_dir(&log_dir, &out).map(|files| {
                for f in files {
                    println!("{}", f.display());
                }
                0
            })
        }
        Command::GradientCheck {
            scenario,
            uav,
            robot,
            h,
        } => gradient(scenario, uav, robot, h).map(|_| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Rows grouped by an id column, keeping their order.
pub(crate) fn group_by<T, K: Ord, F: Fn(&T) -> K>(rows: Vec<T>, key: F) -> BTreeMap<K, Vec<T>> {
    let mut out: BTreeMap<K, Vec<T>> = BTreeMap::new();
    for r in rows {
        out.entry(key(&r)).or_default().push(r);
    }
    out
}
