//! `hrom`: command-line driver of the offline/online reduced-order pipeline.

mod case;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::StageError;

#[derive(Parser, Debug)]
#[command(name = "hrom", version, about = "Nonintrusive hyper-reduced modelling of cyclic structural problems")]
struct Cli {
    /// Worker threads for subdomain-parallel work (overrides `run.threads`, 0 = default pool).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the demo bar case (mesh, material, schedule, pipeline.toml).
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        subdomains: usize,
    },
    /// Run the high-fidelity solver and export a snapshot set.
    HfmRun {
        #[arg(long)]
        config: PathBuf,
        /// Cycles to run (default: `run.training_cycles`, or `run.cycles` with --reference).
        #[arg(long)]
        cycles: Option<usize>,
        /// Reference run for the speedup report and comparisons.
        #[arg(long)]
        reference: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Import displacement snapshots and recompute their duals with the material law.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Snapshot POD of the displacements.
    Compress {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        snapshots: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reduced quadrature and Gappy operators.
    Hyperreduce {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        snapshots: Option<PathBuf>,
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Also fit random point subsets of the same sizes with this many trials.
        #[arg(long)]
        random_trials: Option<usize>,
    },
    /// Online reduced solve over `run.cycles` cycles.
    RomRun {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cycles: Option<usize>,
        /// Integration point whose history is written to rom/point_<id>.csv.
        #[arg(long)]
        point: Option<usize>,
    },
    /// Full-mesh field of one online step.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// `u` for displacements, or a dual field (`p`, `s11` ... `s13`).
        #[arg(long, default_value = "p")]
        field: String,
        /// Cycle whose last step is reconstructed (default: last).
        #[arg(long, conflicts_with = "step")]
        cycle: Option<usize>,
        /// 1-based global online step.
        #[arg(long)]
        step: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two array files.
    Compare {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricKind::Euclidean)]
        metric: MetricKind,
        /// Needed by the `gram` and `points` metrics.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the normalized difference map here.
        #[arg(long)]
        diff: Option<PathBuf>,
    },
    /// Speedup table from the stage manifest and the reference run.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One field of a stored snapshot as an array file.
    Extract {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        /// `u` or a dual field.
        #[arg(long)]
        field: String,
        /// 1-based snapshot index.
        #[arg(long)]
        step: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Point history CSV from a snapshot set with duals.
    History {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        point: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage in sequence, from displacement-only training data.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Also run the high-fidelity reference, compare and report.
        #[arg(long)]
        reference: bool,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MetricKind {
    Euclidean,
    /// Nodal displacements with the L2 Gram matrix.
    Gram,
    /// Integration point fields with quadrature weights.
    Points,
}

fn run(cli: Cli) -> Result<(), StageError> {
    let threads = cli.threads;
    match cli.command {
        Command::Demo { out, subdomains } => commands::demo(&out, subdomains),
        Command::HfmRun {
            config,
            cycles,
            reference,
            out,
        } => commands::hfm_run(&config, threads, cycles, reference, out.as_deref()).map(|_| ()),
        Command::Ingest { config, snapshots, out } => commands::ingest(&config, threads, &snapshots, out.as_deref()).map(|_| ()),
        Command::Compress { config, snapshots, out } => {
            commands::compress(&config, threads, snapshots.as_deref(), out.as_deref()).map(|_| ())
        }
        Command::Hyperreduce {
            config,
            snapshots,
            basis,
            random_trials,
        } => commands::hyperreduce(&config, threads, snapshots.as_deref(), basis.as_deref(), random_trials),
        Command::RomRun { config, cycles, point } => commands::rom_run(&config, threads, cycles, point),
        Command::Reconstruct {
            config,
            field,
            cycle,
            step,
            out,
        } => commands::reconstruct(&config, threads, &field, cycle, step, out.as_deref()).map(|_| ()),
        Command::Compare {
            reference,
            candidate,
            metric,
            config,
            diff,
        } => commands::compare(&reference, &candidate, metric, config.as_deref(), diff.as_deref()),
        Command::Extract {
            config,
            snapshots,
            field,
            step,
            out,
        } => commands::extract(&config, &snapshots, &field, step, &out),
        Command::Report { config, out } => commands::report(&config, out.as_deref()).map(|_| ()),
        Command::History {
            config,
            snapshots,
            point,
            out,
        } => commands::history(&config, &snapshots, point, &out),
        Command::Pipeline { config, reference } => commands::pipeline(&config, threads, reference),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hrom: {e}");
            ExitCode::from(if e.source.is_numerical() { 3 } else { 2 })
        }
    }
}
