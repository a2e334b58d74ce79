mod artifacts;
mod commands;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "mnemonics",
    version,
    about = "Mnemonics exemplar experiments for class-incremental learning"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment for one or more master seeds.
    Run {
        config: PathBuf,
        /// Master seed; repeat for several runs. Defaults to the config's seed.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Output directory. Defaults to $MNEMONICS_OUT_ROOT/<config name>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every analytic derivative against finite differences.
    Gradcheck {
        #[arg(long, default_value = "small", value_parser = ["small", "medium"])]
        size: String,
        #[arg(long, default_value_t = mnemonics::verify::DEFAULT_EPS)]
        eps: f64,
    },
    /// Paired-seed comparison of strategies.
    Compare {
        config: PathBuf,
        /// Comma-separated: random, herding, mnemonics, upper_bound.
        #[arg(long, default_value = "random,herding,mnemonics")]
        strategies: String,
        /// Number of consecutive master seeds, starting at the config's seed.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write penultimate-layer features and drift tables for one phase.
    DumpEmbeddings {
        run_dir: PathBuf,
        #[arg(long)]
        phase: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("MNEMONICS_LOG")
        .init();

    let result = match cli.command {
        Command::Run { config, seeds, out } => commands::run(&config, &seeds, out),
        Command::Gradcheck { size, eps } => commands::gradcheck(&size, eps),
        Command::Compare {
            config,
            strategies,
            seeds,
            out,
            jobs,
        } => commands::compare(&config, &strategies, seeds, out, jobs),
        Command::DumpEmbeddings { run_dir, phase } => commands::dump_embeddings(&run_dir, phase),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
