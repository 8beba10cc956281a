//! Thin command-line front end over the library. Subcommands mirror the
//! experiment families; outputs are comma-separated text plus one JSON
//! manifest per run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use utmflow::flowfield::FlowField;
use utmflow::scenario::{
    assign_speed_class, export_result, integrate_reference, run_scenario, RecoveryMode,
    ScenarioSpec,
};
use utmflow::{tolerances, Error};

#[derive(Parser)]
#[command(name = "utmflow", version, about = "Low-altitude traffic coordination runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario file (strict TOML).
    spec: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario integration step, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Recorded in the manifest; runs are deterministic regardless.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic field: channels, velocity samples, speed-class assignments.
    MacroAnalytic(RunArgs),
    /// Finite-difference steady solve on the scenario grid.
    MacroFd(RunArgs),
    /// Pop-up recovery; requires at least one event in the spec.
    Resilient {
        #[command(flatten)]
        args: RunArgs,
        /// Recovery law.
        #[arg(long, value_parser = ["lqr", "analytic"], default_value = "lqr")]
        mode: String,
    },
    /// Microscopic cluster tracking; requires at least one cluster.
    Micro(RunArgs),
    /// Full scenario: macroscopic setup, events, and clusters.
    Run(RunArgs),
}

fn log_enabled() -> bool {
    !matches!(
        std::env::var("UTMFLOW_LOG").as_deref(),
        Ok("quiet") | Ok("off") | Ok("0")
    )
}

fn info(msg: &str) {
    if log_enabled() {
        eprintln!("utmflow: {msg}");
    }
}

fn exit_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::Validation(_) | Error::Connectivity(_) => {
            ExitCode::from(2)
        }
        Error::Io(_) => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

fn load_spec(args: &RunArgs) -> Result<ScenarioSpec, Error> {
    let mut spec = ScenarioSpec::load(&args.spec)?;
    if let Some(dt) = args.dt {
        if dt <= 0.0 {
            return Err(Error::Validation("--dt must be positive".into()));
        }
        spec.sim.dt = dt;
        spec.validate()?;
    }
    Ok(spec)
}

fn write_manifest(args: &RunArgs, subcommand: &str) -> Result<(), Error> {
    let bytes = std::fs::read(&args.spec)?;
    let hash: String = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let tols: serde_json::Map<String, serde_json::Value> = tolerances::all()
        .into_iter()
        .map(|(k, v)| (k.to_string(), serde_json::json!(v)))
        .collect();
    let manifest = serde_json::json!({
        "spec_sha256": hash,
        "subcommand": subcommand,
        "out_dir": args.out.display().to_string(),
        "dt_override": args.dt,
        "seed": args.seed,
        "tolerances": tols,
    });
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    Ok(())
}

/// Channel polylines, velocity samples, and assignments from the analytic field.
fn cmd_macro_analytic(args: &RunArgs) -> Result<(), Error> {
    let spec = load_spec(args)?;
    let field = FlowField::from_geometry(
        &spec.geometry,
        spec.flow.floor,
        spec.flow.u_inf,
        spec.flow.theta0,
    )?;
    std::fs::create_dir_all(&args.out)?;

    // channel polylines: streamlines seeded along the inflow edge
    let [x0, y0] = spec.geometry.outer_min;
    let [x1, y1] = spec.geometry.outer_max;
    let n_seed = 15usize;
    let mut s = String::from("channel,arc_index,x_m,y_m,psi_m2s\n");
    for c in 0..n_seed {
        let y = y0 + (c as f64 + 0.5) * (y1 - y0) / n_seed as f64;
        let seed = [x0, y];
        if field.in_unplanned(seed) {
            continue;
        }
        let pts = field.trace_streamline(seed, 0.0, 0.5, 4.0 * (x1 - x0))?;
        for (i, p) in pts.polyline.iter().enumerate() {
            let psi = field.stream_at(*p, 0.0)?;
            let _ = writeln!(s, "{},{},{},{},{}", c, i, fmt(p[0]), fmt(p[1]), fmt(psi));
        }
    }
    std::fs::write(args.out.join("channels.csv"), s)?;

    // velocity samples on a coarse lattice
    let mut s = String::from("x_m,y_m,vx_mps,vy_mps,phi,psi_m2s\n");
    let n = 40usize;
    for i in 0..=n {
        for j in 0..=n {
            let p = [
                x0 + i as f64 * (x1 - x0) / n as f64,
                y0 + j as f64 * (y1 - y0) / n as f64,
            ];
            if field.in_unplanned(p) {
                continue;
            }
            let v = field.velocity_at(p, 0.0)?;
            let phi = field.potential_at(p, 0.0)?;
            let psi = field.stream_at(p, 0.0)?;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt(p[0]),
                fmt(p[1]),
                fmt(v[0]),
                fmt(v[1]),
                fmt(phi),
                fmt(psi)
            );
        }
    }
    std::fs::write(args.out.join("velocity_field.csv"), s)?;

    let assignments = assign_speed_class(&field, &spec.clusters, &spec.speed_classes)?;
    let mut s = String::from("cluster,class,psi_lo_m2s,psi_hi_m2s,k_cost,psi_entry_m2s\n");
    for a in &assignments {
        let class = a
            .class_index
            .map(|i| i.to_string())
            .unwrap_or_else(|| "-".into());
        let (lo, hi) = match a.band {
            Some([lo, hi]) => (fmt(lo), fmt(hi)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            a.cluster_id,
            class,
            lo,
            hi,
            fmt(a.k),
            fmt(a.psi_entry)
        );
    }
    std::fs::write(args.out.join("assignments.csv"), s)?;

    // reference trajectories for any declared clusters
    for (c, a) in spec.clusters.iter().zip(&assignments) {
        let k = a.k;
        let fk = field.clone().with_cost(Arc::new(move |_, _| k));
        let traj = integrate_reference(
            &fk,
            c.entry_point,
            c.entry_time,
            spec.sim.dt,
            spec.sim.horizon - c.entry_time,
        )?;
        let mut s = String::from("t_s,x_m,y_m,z_m\n");
        for i in 0..traj.times.len() {
            let p = traj.points[i];
            let _ = writeln!(
                s,
                "{},{},{},{}",
                fmt(traj.times[i]),
                fmt(p[0]),
                fmt(p[1]),
                fmt(p[2])
            );
        }
        std::fs::write(args.out.join(format!("reference_{}.csv", c.id)), s)?;
    }
    info("macro-analytic outputs written");
    Ok(())
}

fn run_and_export(spec: &ScenarioSpec, mode: RecoveryMode, out: &Path) -> Result<(), Error> {
    let result = run_scenario(spec, mode)?;
    export_result(&result, &spec.sim.snapshot_times, out)?;
    Ok(())
}

fn cmd_macro_fd(args: &RunArgs) -> Result<(), Error> {
    let spec = load_spec(args)?;
    if spec.grid.is_none() {
        return Err(Error::Validation(
            "macro-fd needs a [grid] section in the spec".into(),
        ));
    }
    // grid artifacts only: strip clusters and events
    let mut spec = spec;
    spec.clusters.clear();
    spec.events.clear();
    run_and_export(&spec, RecoveryMode::Lqr, &args.out)?;
    info("macro-fd outputs written");
    Ok(())
}

fn cmd_resilient(args: &RunArgs, mode: &str) -> Result<(), Error> {
    let spec = load_spec(args)?;
    if spec.events.is_empty() {
        return Err(Error::Validation(
            "resilient requires at least one pop-up event".into(),
        ));
    }
    if spec.grid.is_none() {
        return Err(Error::Validation(
            "resilient needs a [grid] section in the spec".into(),
        ));
    }
    let mode = match mode {
        "analytic" => RecoveryMode::Analytic,
        _ => RecoveryMode::Lqr,
    };
    run_and_export(&spec, mode, &args.out)?;
    info("resilient outputs written");
    Ok(())
}

fn cmd_micro(args: &RunArgs) -> Result<(), Error> {
    let spec = load_spec(args)?;
    if spec.clusters.is_empty() {
        return Err(Error::Validation(
            "micro requires at least one cluster".into(),
        ));
    }
    run_and_export(&spec, RecoveryMode::Lqr, &args.out)?;
    info("micro outputs written");
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let spec = load_spec(args)?;
    run_and_export(&spec, RecoveryMode::Lqr, &args.out)?;
    info("run outputs written");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args, result) = match &cli.command {
        Command::MacroAnalytic(a) => ("macro-analytic", a, cmd_macro_analytic(a)),
        Command::MacroFd(a) => ("macro-fd", a, cmd_macro_fd(a)),
        Command::Resilient { args: a, mode } => ("resilient", a, cmd_resilient(a, mode)),
        Command::Micro(a) => ("micro", a, cmd_micro(a)),
        Command::Run(a) => ("run", a, cmd_run(a)),
    };
    let result = result.and_then(|()| write_manifest(args, name));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("utmflow: error: {e}");
            exit_for(&e)
        }
    }
}
