use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isar_core::commands;

#[derive(Parser)]
#[command(
    name = "isar",
    version,
    about = "Monostatic ISAR imaging from 802.11ad preamble echoes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize all echo frames of one CPI and dump them with ground truth.
    Simulate(Common),
    /// Estimate delays, Doppler and velocity, then form the image.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long, overrides_with = "no_flip")]
        flip: bool,
        #[arg(long)]
        no_flip: bool,
    },
    /// NMSE of the aggregated Doppler difference versus frame gap.
    NmseDiff {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        /// Largest frame gap in the sweep.
        #[arg(long = "i")]
        max_gap: Option<usize>,
    },
    /// NMSE of the per-scatterer Doppler versus check frame, per CPI.
    NmseDoppler {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        /// Frame gap between the two Doppler frames.
        #[arg(long = "i")]
        gap: Option<usize>,
        /// Evaluate a single check frame instead of the full sweep.
        #[arg(long)]
        m_check: Option<usize>,
    },
}

fn main() -> ExitCode {
    // Usage errors exit with 1; 2 and up belong to pipeline errors.
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
    let result = match cli.command {
        Command::Simulate(c) => commands::cmd_simulate(&c.config, c.seed, &c.out),
        Command::Pipeline {
            common: c,
            flip,
            no_flip,
        } => {
            let flip = match (flip, no_flip) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            };
            commands::cmd_pipeline(&c.config, c.seed, &c.out, flip)
        }
        Command::NmseDiff {
            common: c,
            trials,
            max_gap,
        } => commands::cmd_experiment_nmse_diff(&c.config, c.seed, &c.out, trials, max_gap),
        Command::NmseDoppler {
            common: c,
            trials,
            gap,
            m_check,
        } => commands::cmd_experiment_nmse_doppler(&c.config, c.seed, &c.out, trials, gap, m_check),
    };
    match result {
        Ok(manifest) => {
            for (name, sum) in &manifest.artifacts {
                println!("{name} {sum}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
