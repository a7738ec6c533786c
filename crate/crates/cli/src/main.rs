use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use genz_cli::config::keys_help;
use genz_cli::{cmd_classify_debug, cmd_eval, cmd_run, cmd_synth, CliError, RunConfig};
use genz_core::io::TrajectoryFormat;

/// Adaptive point-to-plane / point-to-point LiDAR odometry.
#[derive(Parser)]
#[command(name = "genz", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::from_env(self.config.as_deref(), &self.set)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run odometry over a directory of .bin / .ply scans (sorted by name).
    Run {
        dataset: PathBuf,
        #[arg(short, long, default_value = "genz-out")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Simulate the configured scene and compare metric modes against ground truth.
    Synth {
        #[arg(short, long, default_value = "genz-synth")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare an estimated trajectory with ground truth (TUM or KITTI files).
    Eval {
        estimate: PathBuf,
        truth: PathBuf,
        #[arg(long, value_name = "tum|kitti")]
        estimate_format: Option<TrajectoryFormat>,
        #[arg(long, value_name = "tum|kitti")]
        truth_format: Option<TrajectoryFormat>,
        /// Also write eval.txt and eval.csv here.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write a PLY of a scan colored by correspondence class.
    ClassifyDebug {
        /// Scan in the map frame; defaults to the configured scene.
        scan: Option<PathBuf>,
        /// Map point cloud; defaults to the configured scene.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(short, long, default_value = "classification.ply")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { dataset, out, cfg } => {
            let cfg = cfg.resolve()?;
            let s = cmd_run(&dataset, &out, &cfg)?;
            let t = s.final_pose.translation();
            println!(
                "{} scans, {} registration failures, final position ({:.3}, {:.3}, {:.3}); outputs in {}",
                s.scans,
                s.registration_failures,
                t.x,
                t.y,
                t.z,
                out.display()
            );
        }
        Command::Synth { out, cfg } => {
            let cfg = cfg.resolve()?;
            let s = cmd_synth(&out, &cfg)?;
            print!("{}", s.comparison_table());
            println!("outputs in {}", out.display());
        }
        Command::Eval { estimate, truth, estimate_format, truth_format, out, cfg } => {
            let cfg = cfg.resolve()?;
            let report = cmd_eval(&estimate, &truth, estimate_format, truth_format, out.as_deref(), &cfg)?;
            println!("{report}");
        }
        Command::ClassifyDebug { scan, map, out, cfg } => {
            let cfg = cfg.resolve()?;
            let s = cmd_classify_debug(scan.as_deref(), map.as_deref(), &out, &cfg)?;
            println!(
                "planar {}, non-planar {}, unmatched {}; wrote {}",
                s.planar,
                s.nonplanar,
                s.unmatched,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let help = keys_help();
    let mut command = Cli::command().after_help(help.clone());
    for name in ["run", "synth", "eval", "classify-debug"] {
        command = command.mut_subcommand(name, |c| c.after_help(help.clone()));
    }
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
