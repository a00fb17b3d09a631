use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otfs_umac::sim::config::{SweepConfig, SystemConfig};
use otfs_umac::sim::output::{sidecar_path, write_results};
use otfs_umac::sim::sweep::{checkpoint_path_for, run_sweep, ResultRow, SweepOptions};
use otfs_umac::tx::SensingMatrix;

#[derive(Parser)]
#[command(name = "otfs-umac", version, about = "OTFS unsourced multiple access link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the single operating point in the config.
    Run(Common),
    /// Simulate the `sweep` grid (or bisection) in the config.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoint next to the output file.
        #[arg(long)]
        resume: bool,
    },
    /// Write the preamble sensing matrix to a file.
    GenSensing {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Sensing matrix seed (defaults to `sensing_seed`).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Results CSV; a `.json` sidecar is written next to it.
    #[arg(short, long, default_value = "results.csv")]
    output: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(short, long)]
    workers: Option<usize>,
    /// Override a config value, e.g. `--set polar.list_size=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(path: &Option<PathBuf>, overrides: &[String]) -> otfs_umac::Result<SystemConfig> {
    match path {
        Some(p) => SystemConfig::load(p, overrides),
        None => SystemConfig::default().with_overrides(overrides),
    }
}

fn print_rows(rows: &[ResultRow]) {
    println!("K_a\tebn0_data_db\tebn0_overall_db\ttrials\tmiss_rate\tpupe");
    for r in rows {
        let pupe = r.pupe.map_or("-".to_string(), |p| format!("{p:.4}"));
        println!(
            "{}\t{:.3}\t{:.3}\t{}\t{:.4}\t{}",
            r.k_a, r.ebn0_data_db, r.ebn0_overall_db, r.trials, r.miss_rate, pupe
        );
    }
}

fn simulate(common: Common, grid: bool, resume: bool) -> otfs_umac::Result<()> {
    let mut config = load(&common.config, &common.overrides)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if !grid {
        config.sweep = SweepConfig::default();
    }
    config.validate()?;
    if let Some(n) = common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| otfs_umac::Error::Config(format!("worker pool: {e}")))?;
    }
    let checkpoint = (config.checkpoint_every > 0).then(|| checkpoint_path_for(&common.output));
    let result = run_sweep(&config, SweepOptions { checkpoint, resume })?;
    write_results(&common.output, &config, &result)?;
    print_rows(&result.rows);
    for b in &result.bisections {
        match b.ebn0_overall_db {
            Some(t) => println!("K_a={}: overall Eb/N0 for PUPE<={} is {t:.3} dB", b.k_a, b.target_pupe),
            None => println!("K_a={}: PUPE target {} not reached", b.k_a, b.target_pupe),
        }
    }
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "wrote {} and {}",
        common.output.display(),
        sidecar_path(&common.output).display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(common) => simulate(common, false, false),
        Command::Sweep { common, resume } => simulate(common, true, resume),
        Command::GenSensing { config, output, seed, overrides } => load(&config, &overrides)
            .and_then(|c| {
                let seed = seed.unwrap_or(c.sensing_seed);
                SensingMatrix::generate(c.b_p, c.n_p, seed)?.save(&output)?;
                eprintln!("wrote {} ({} x {}, seed {seed})", output.display(), c.n_p, 1usize << c.b_p);
                Ok(())
            }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
