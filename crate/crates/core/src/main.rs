use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use tweezersim::cli;

/// Tweezer-interferometer simulation pipelines.
#[derive(Parser)]
#[command(name = "tweezersim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's output_dir or
    /// runs/<command>-<seed>. Never reused.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Log verbosity: quiet, info or debug.
    #[arg(long, default_value = "info")]
    log_level: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run a splitter and report port populations.
    Split(RunArgs),
    /// Split, imprint a phase, combine.
    Combine(RunArgs),
    /// Full interferometer loop with noise.
    Loop(RunArgs),
    /// Instantaneous eigenenergies along a schedule.
    Spectrum(RunArgs),
    /// Build (or load) a realization lookup table.
    Table(RunArgs),
    /// Fringe-scan campaigns over Table I scenarios.
    Campaign(RunArgs),
    /// Casimir-Polder phase map.
    CpMap(RunArgs),
    /// Cut-sphere gravitational phases and G accuracy.
    BigG(RunArgs),
    /// Closed-form sensitivity numbers.
    Sensitivity(RunArgs),
    /// Re-run a recorded manifest and verify artifacts bit-exactly.
    Replay {
        /// Path to a manifest.json from a previous run.
        manifest: PathBuf,
        /// Output directory for the reproduced artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "info")]
        log_level: String,
    },
}

fn cache_dir() -> PathBuf {
    std::env::var_os(cli::CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".tweezersim-cache"))
}

fn init_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        // results are worker-count independent; this only sets parallelism
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn default_out_dir(command: &str, cfg: &cli::RunConfig) -> PathBuf {
    if let Some(dir) = &cfg.output_dir {
        return PathBuf::from(dir);
    }
    PathBuf::from("runs").join(format!("{command}-{}", cfg.seed))
}

fn run_pipeline(command: &str, args: &RunArgs) -> tweezersim::error::Result<()> {
    init_workers(args.workers);
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        tweezersim::error::Error::Config(format!("reading {}: {e}", args.config.display()))
    })?;
    let cfg = cli::RunConfig::parse(&text)?;
    let out = args.out.clone().unwrap_or_else(|| default_out_dir(command, &cfg));
    let manifest = cli::run_config_text(&text, command, &out, &cache_dir())?;
    if args.log_level != "quiet" {
        eprintln!("wrote {} artifact(s) to {}", manifest.artifacts.len(), out.display());
        if args.log_level == "debug" {
            for (name, hash) in &manifest.artifacts {
                eprintln!("  {name}  sha256:{hash}");
            }
        }
    }
    Ok(())
}

fn run(command: Command) -> tweezersim::error::Result<()> {
    match &command {
        Command::Split(a) => run_pipeline("split", a),
        Command::Combine(a) => run_pipeline("combine", a),
        Command::Loop(a) => run_pipeline("loop", a),
        Command::Spectrum(a) => run_pipeline("spectrum", a),
        Command::Table(a) => run_pipeline("table", a),
        Command::Campaign(a) => run_pipeline("campaign", a),
        Command::CpMap(a) => run_pipeline("cp-map", a),
        Command::BigG(a) => run_pipeline("big-g", a),
        Command::Sensitivity(a) => run_pipeline("sensitivity", a),
        Command::Replay { manifest, out, workers, log_level } => {
            init_workers(*workers);
            let out = out.clone().unwrap_or_else(|| {
                PathBuf::from("runs").join(format!(
                    "replay-{}",
                    std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .map(|d| d.as_secs())
                        .unwrap_or(0)
                ))
            });
            let reproduced = cli::replay(manifest, &out, &cache_dir())?;
            if log_level != "quiet" {
                eprintln!(
                    "replay verified: {} artifact(s) reproduced bit-exactly in {}",
                    reproduced.artifacts.len(),
                    out.display()
                );
            }
            Ok(())
        }
    }
}

fn main() {
    let args = Cli::parse();
    if let Err(e) = run(args.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
