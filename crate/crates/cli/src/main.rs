//! `softfem` command-line entry points.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use softfem::experiments::{check_leg_params, leg_objective};
use softfem::gradcheck::{check_model, GradcheckOptions};
use softfem::io::{parse_scene, read_trajectory, Trajectory, TrajectoryWriter};
use softfem::metrics::{chamfer_error, marker_error, MarkerFrames, NearestNeighbor, Point};
use softfem::scenes::write_bundled;
use softfem::SimError;

/// Exit codes of every subcommand.
mod exit {
    pub const CHECK_FAILURE: u8 = 1;
    pub const INPUT_ERROR: u8 = 2;
    pub const DATA_MISMATCH: u8 = 3;
    pub const DOMAIN_VIOLATION: u8 = 4;
}

#[derive(Parser)]
#[command(name = "softfem", version, about = "Soft-body FEM simulation by constrained incremental-potential minimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene and write its trajectory.
    Simulate {
        /// Scene JSON file.
        #[arg(long)]
        scene: PathBuf,
        /// Output trajectory file (JSON Lines).
        #[arg(long)]
        out: PathBuf,
        /// Log step diagnostics to stderr; repeat for solver iterations.
        #[arg(long, short, action = clap::ArgAction::Count)]
        verbose: u8,
        /// Seed for randomized components; the integrator itself is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic gradients and Hessians against central differences.
    Gradcheck {
        /// Scene JSON file.
        #[arg(long)]
        scene: PathBuf,
        /// Random configurations per energy term.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Seed of the configuration sampler.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Compare simulated and reference trajectories.
    Metrics {
        /// Marker: mean marker distance. Chamfer: mean root Chamfer distance per frame.
        #[arg(value_enum)]
        kind: MetricKind,
        /// Simulated trajectory; repeat for several trajectories.
        #[arg(long = "sim", required = true)]
        sim: Vec<PathBuf>,
        /// Reference trajectory, paired with `--sim` in order.
        #[arg(long = "ref", required = true)]
        reference: Vec<PathBuf>,
        /// Nearest-neighbor search used by the Chamfer metric.
        #[arg(long, value_enum, default_value_t = Search::Brute)]
        nn: Search,
        /// Print a JSON object instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate the jumping-leg objective for one actuation schedule.
    Objective {
        /// Leg scene JSON file with `ventral` and `dorsal` muscle groups.
        #[arg(long)]
        scene: PathBuf,
        /// Ventral and dorsal activations and switching times in seconds.
        #[arg(long, num_args = 4, value_names = ["A_V", "A_D", "T_V", "T_D"], allow_negative_numbers = true)]
        params: Vec<f64>,
    },
    /// Write the bundled example scenes and meshes.
    Scenes {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricKind {
    Marker,
    Chamfer,
}

#[derive(Clone, Copy, ValueEnum)]
enum Search {
    Brute,
    Grid,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    /// Maps a library error, prefixed with the file it concerns.
    fn from_sim(context: &Path, e: SimError) -> Self {
        let code = match e {
            SimError::Io { .. }
            | SimError::Schema { .. }
            | SimError::UnknownSet { .. }
            | SimError::IndexOutOfRange { .. }
            | SimError::DegenerateElement { .. }
            | SimError::InvalidParameter { .. }
            | SimError::MalformedTrajectory { .. } => exit::INPUT_ERROR,
            SimError::DimensionMismatch { .. } => exit::DATA_MISMATCH,
            _ => exit::CHECK_FAILURE,
        };
        Failure::new(code, format!("{}: {e}", context.display()))
    }
}

type CmdResult = Result<(), Failure>;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn simulate(scene_path: &Path, out: &Path) -> CmdResult {
    let ctx = |e| Failure::from_sim(scene_path, e);
    let scene = parse_scene(scene_path).map_err(ctx)?;
    let system = scene.build().map_err(ctx)?;
    let file = File::create(out).map_err(|e| Failure::new(exit::INPUT_ERROR, format!("{}: {e}", out.display())))?;
    let mut writer = TrajectoryWriter::new(BufWriter::new(file), &system.trajectory_header()).map_err(ctx)?;
    // a zero-length run writes the header only
    let record = system.duration > 0.0;
    let result = system.simulate_with(|f| if record { writer.push(f) } else { Ok(()) });
    writer.finish().map_err(ctx)?;
    let summary = result.map_err(ctx)?;
    log::info!(
        "{} steps, {} rejected, {} frames",
        summary.steps,
        summary.rejected_steps,
        summary.frames
    );
    Ok(())
}

fn gradcheck(scene_path: &Path, opts: GradcheckOptions, tolerance: f64) -> CmdResult {
    let ctx = |e| Failure::from_sim(scene_path, e);
    let system = parse_scene(scene_path).and_then(|s| s.build()).map_err(ctx)?;
    if opts.samples == 0 {
        log::warn!("--samples 0: nothing to check");
        return Ok(());
    }
    let reports = check_model(&system.model, &opts).map_err(ctx)?;
    let mut ok = true;
    for r in &reports {
        let pass = r.passes(tolerance, tolerance);
        ok &= pass;
        println!(
            "{:<20} gradient {:.3e}  hessian {:.3e}  {}",
            r.term.to_string(),
            r.gradient_error,
            r.hessian_error,
            if pass { "ok" } else { "FAIL" }
        );
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::new(exit::CHECK_FAILURE, format!("relative error above tolerance {tolerance:e}")))
    }
}

/// Formats `v` with four significant digits, keeping every integer digit.
fn significant4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0.000".to_string() } else { v.to_string() };
    }
    let digits = v.abs().log10().floor() as i32 + 1;
    let decimals = (4 - digits).max(0) as usize;
    let s = format!("{v:.decimals$}");
    let rounded: f64 = s.parse().unwrap_or(v);
    if rounded != 0.0 && (rounded.abs().log10().floor() as i32 + 1) > digits && decimals > 0 {
        format!("{v:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

fn load_trajectories(paths: &[PathBuf]) -> Result<Vec<Trajectory>, Failure> {
    paths
        .iter()
        .map(|p| {
            let t = read_trajectory(p).map_err(|e| Failure::from_sim(p, e))?;
            t.validate().map_err(|e| Failure::from_sim(p, e))?;
            Ok(t)
        })
        .collect()
}

fn positions(t: &Trajectory) -> MarkerFrames {
    t.frames.iter().map(|f| f.positions.clone()).collect()
}

fn metrics(kind: MetricKind, sim: &[PathBuf], reference: &[PathBuf], nn: Search, json: bool) -> CmdResult {
    if sim.len() != reference.len() {
        return Err(Failure::new(
            exit::DATA_MISMATCH,
            format!("{} simulated but {} reference trajectories", sim.len(), reference.len()),
        ));
    }
    let sims = load_trajectories(sim)?;
    let refs = load_trajectories(reference)?;
    let mismatch = |e: SimError| Failure::new(exit::DATA_MISMATCH, e.to_string());
    let (name, value) = match kind {
        MetricKind::Marker => {
            let s: Vec<MarkerFrames> = sims.iter().map(positions).collect();
            let r: Vec<MarkerFrames> = refs.iter().map(positions).collect();
            ("marker", marker_error(&s, &r).map_err(mismatch)?)
        }
        MetricKind::Chamfer => {
            let mut pairs: Vec<(Vec<Point>, Vec<Point>)> = Vec::new();
            for (k, (s, r)) in sims.iter().zip(&refs).enumerate() {
                if s.frames.len() != r.frames.len() {
                    return Err(Failure::new(
                        exit::DATA_MISMATCH,
                        format!(
                            "pair {k}: {} simulated frames but {} reference frames",
                            s.frames.len(),
                            r.frames.len()
                        ),
                    ));
                }
                pairs.extend(s.frames.iter().zip(&r.frames).map(|(a, b)| (a.positions.clone(), b.positions.clone())));
            }
            let method = match nn {
                Search::Brute => NearestNeighbor::BruteForce,
                Search::Grid => NearestNeighbor::Grid,
            };
            ("chamfer", chamfer_error(&pairs, method).map_err(mismatch)?)
        }
    };
    let mm = value * 1e3;
    if json {
        let out = serde_json::json!({
            "metric": name,
            "value_m": value,
            "value_mm": mm,
            "display": format!("{} mm", significant4(mm)),
        });
        println!("{out}");
    } else {
        println!("{} mm", significant4(mm));
    }
    Ok(())
}

fn objective(scene_path: &Path, params: &[f64]) -> CmdResult {
    let p: [f64; 4] = params
        .try_into()
        .map_err(|_| Failure::new(exit::INPUT_ERROR, "--params takes exactly four values"))?;
    check_leg_params(p).map_err(|e| Failure::new(exit::DOMAIN_VIOLATION, e.to_string()))?;
    let ctx = |e| Failure::from_sim(scene_path, e);
    let scene = parse_scene(scene_path).map_err(ctx)?;
    let value = leg_objective(scene.config, &scene.base_dir, Some(p)).map_err(ctx)?;
    println!("{value}");
    Ok(())
}

fn scenes(out: &Path) -> CmdResult {
    let written = write_bundled(out).map_err(|e| Failure::from_sim(out, e))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = match &cli.command {
        Command::Simulate { verbose, .. } => *verbose,
        _ => 0,
    };
    init_logging(verbose);
    let result = match cli.command {
        Command::Simulate { scene, out, .. } => simulate(&scene, &out),
        Command::Gradcheck {
            scene,
            samples,
            tolerance,
            seed,
            corrupt_gradient,
        } => {
            let opts = GradcheckOptions {
                samples,
                seed,
                corrupt_gradient,
                ..GradcheckOptions::default()
            };
            gradcheck(&scene, opts, tolerance)
        }
        Command::Metrics {
            kind,
            sim,
            reference,
            nn,
            json,
        } => metrics(kind, &sim, &reference, nn, json),
        Command::Objective { scene, params } => objective(&scene, &params),
        Command::Scenes { out } => scenes(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::significant4;

    #[test]
    fn four_significant_digits() {
        assert_eq!(significant4(0.0), "0.000");
        assert_eq!(significant4(5.0), "5.000");
        assert_eq!(significant4(1414.2135), "1414");
        assert_eq!(significant4(12.3456), "12.35");
        assert_eq!(significant4(0.012341), "0.01234");
        assert_eq!(significant4(9.9996), "10.00");
        assert_eq!(significant4(123456.7), "123457");
    }
}
