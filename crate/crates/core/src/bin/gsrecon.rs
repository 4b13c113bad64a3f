use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{CommandFactory, Parser, Subcommand};

use gsrecon::observations::MeasurementSet;
use gsrecon::output::{write_outputs, RunReport};
use gsrecon::reconstruction::{reconstruct, Problem, ReconstructionConfig, Status};
use gsrecon::twin::{run_twin, TwinSpec};
use gsrecon::{Error, Mesh};

/// Per-iteration budget checked by `bench` (seconds).
const ITERATION_BUDGET: f64 = 0.1;

#[derive(Parser)]
#[command(name = "gsrecon", version, about = "Tokamak equilibrium reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct an equilibrium from a measurement file.
    Reconstruct {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Manufacture a synthetic equilibrium, measure it, reconstruct it and
    /// compare with the truth.
    Twin {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reconstruction settings; defaults derived from the spec.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Repeat cold-start reconstructions and report per-iteration timing.
    Bench {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        frames: usize,
    },
}

fn load_mesh(path: &Path) -> gsrecon::Result<Mesh> {
    if !path.exists() {
        return Err(Error::InvalidInput(format!("mesh file {} not found", path.display())));
    }
    Mesh::load(path)
}

fn run_reconstruct(mesh: &Path, measurements: &Path, config: &Path, out: &Path) -> gsrecon::Result<()> {
    let mesh = load_mesh(mesh)?;
    let meas = MeasurementSet::load(measurements)?;
    let cfg = ReconstructionConfig::load(config)?;
    let problem = Problem::new(mesh, &meas, cfg)?;
    let run = reconstruct(&problem, None)?;
    let report = RunReport::new(&problem, &run, None)?;
    write_outputs(out, &problem, &run, &report)?;
    summarize(&report);
    Ok(())
}

fn run_twin_command(mesh: &Path, spec: &Path, out: &Path, config: Option<&Path>) -> gsrecon::Result<()> {
    let mesh = load_mesh(mesh)?;
    let spec = TwinSpec::load(spec)?;
    let cfg = match config {
        Some(p) => ReconstructionConfig::load(p)?,
        None => spec.config(),
    };
    let twin = run_twin(&mesh, &spec, cfg)?;
    let report = RunReport::new(&twin.problem, &twin.reconstruction, Some(twin.errors.clone()))?;
    write_outputs(out, &twin.problem, &twin.reconstruction, &report)?;
    let path = out.join("measurements.json");
    std::fs::write(&path, twin.measurements.to_json()).map_err(|e| Error::Io { path, source: e })?;
    summarize(&report);
    println!(
        "profile errors: A {:.3e}  B {:.3e}  n_e {:.3e}  psi {:.3e}",
        twin.errors.a, twin.errors.b, twin.errors.ne, twin.errors.psi
    );
    Ok(())
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn run_bench(mesh: &Path, measurements: &Path, config: &Path, frames: usize) -> gsrecon::Result<()> {
    if frames == 0 {
        return Err(Error::InvalidInput("--frames must be at least 1".into()));
    }
    let mesh = load_mesh(mesh)?;
    let meas = MeasurementSet::load(measurements)?;
    let cfg = ReconstructionConfig::load(config)?;
    let setup = Instant::now();
    let problem = Problem::new(mesh, &meas, cfg)?;
    let setup = setup.elapsed().as_secs_f64();
    let mut times = Vec::new();
    let mut converged = 0;
    for _ in 0..frames {
        let run = reconstruct(&problem, None)?;
        if run.history.status == Status::Converged {
            converged += 1;
        }
        times.extend(run.history.records.iter().map(|r| r.wall_time));
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    println!("nodes {}  triangles {}", problem.mesh.node_count(), problem.mesh.triangle_count());
    println!("setup (assembly + factorization) {setup:.6} s");
    println!("frames {frames}  converged {converged}  iterations {}", times.len());
    println!("iteration time mean {mean:.6} s");
    println!(
        "iteration time p50 {:.6} s  p90 {:.6} s  p99 {:.6} s  max {:.6} s",
        percentile(&sorted, 50.0),
        percentile(&sorted, 90.0),
        percentile(&sorted, 99.0),
        sorted[sorted.len() - 1]
    );
    let verdict = if mean <= ITERATION_BUDGET { "within" } else { "over" };
    println!("budget {ITERATION_BUDGET} s per iteration: {verdict}");
    Ok(())
}

fn summarize(report: &RunReport) {
    let status = match report.history.status {
        Status::Converged => "converged",
        Status::MaxIterReached => "iteration cap reached",
    };
    let last = report.history.records.last().map_or(0.0, |r| r.psi_residual);
    println!("{status} after {} iterations (psi residual {last:.3e})", report.history.iterations());
    for m in &report.misfits {
        println!("  {:<15} relative misfit {:.3e}", m.family, m.relative);
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Reconstruct {
            mesh,
            measurements,
            config,
            out,
        } => run_reconstruct(mesh, measurements, config, out),
        Command::Twin {
            mesh,
            spec,
            out,
            config,
        } => run_twin_command(mesh, spec, out, config.as_deref()),
        Command::Bench {
            mesh,
            measurements,
            config,
            frames,
        } => run_bench(mesh, measurements, config, *frames),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
