use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use legan_cli::{cmd_gradcheck, cmd_hist, cmd_plot, cmd_train, EXIT_INPUT};

/// GAN training with likelihood-based fitness measures.
#[derive(Parser)]
#[command(name = "legan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key=value config file and write a run directory.
    Train {
        config: PathBuf,
        /// Run directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Plot per-epoch means of metrics.csv columns as SVG.
    Plot {
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "l_diff,l_ratio")]
        columns: Vec<String>,
    },
    /// Render a histogram dump as SVG.
    Hist {
        dump: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients of every operation and both networks.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    let (mut out, mut err) = (io::stdout(), io::stderr());
    let code = match cli.command {
        Command::Train {
            config,
            out: dir,
            seed,
        } => cmd_train(&config, dir, seed, &mut out, &mut err),
        Command::Plot {
            metrics,
            out: svg,
            columns,
        } => cmd_plot(&metrics, &svg, &columns, &mut err),
        Command::Hist { dump, out: svg } => cmd_hist(&dump, &svg, &mut err),
        Command::Gradcheck { tolerance } => cmd_gradcheck(tolerance, &mut out, &mut err),
    };
    ExitCode::from(code as u8)
}
