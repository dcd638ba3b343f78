use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mpsim::scenario::{
    builtin_scenario, load_config, read_events_csv, read_metrics_csv, run, summarize,
    write_outputs, RunSummary,
};

#[derive(Parser)]
#[command(name = "mpsim", about = "Multipath TCP over a shared vehicular radio")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write metrics.csv, events.csv and summary.json.
    Run(RunArgs),
    /// Recompute the summary of an earlier run from its CSV files.
    Summarize {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    config: Option<PathBuf>,
    /// baseline or delay200
    #[arg(long)]
    builtin: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = match (&args.config, &args.builtin) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => builtin_scenario(name)?,
        (None, None) => bail!("one of --config or --builtin is required"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = run(&cfg)?;
    write_outputs(&out, &args.out)?;
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    Ok(())
}

fn cmd_summarize(dir: &Path) -> Result<()> {
    let p = dir.join("metrics.csv");
    let rows =
        read_metrics_csv(File::open(&p).with_context(|| format!("opening {}", p.display()))?)
            .with_context(|| format!("reading {}", p.display()))?;
    let p = dir.join("events.csv");
    let events =
        read_events_csv(File::open(&p).with_context(|| format!("opening {}", p.display()))?)
            .map_err(anyhow::Error::msg)
            .with_context(|| format!("reading {}", p.display()))?;

    // bin, duration and the delivery gap come from the earlier summary when
    // there is one; otherwise they are inferred from the rows
    let prev: Option<RunSummary> = std::fs::read_to_string(dir.join("summary.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let (bin, duration, gap) = match prev {
        Some(s) => (s.metrics_bin_s, s.duration_s, s.max_delivery_gap_s),
        None => {
            let mut starts: Vec<f64> = rows.iter().map(|r| r.bin_start_s).collect();
            starts.sort_by(f64::total_cmp);
            starts.dedup();
            let bin = starts
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min);
            let bin = if bin.is_finite() { bin } else { 1.0 };
            (bin, starts.last().map_or(0.0, |l| l + bin), None)
        }
    };
    let summary = summarize(&rows, &events, bin, duration, gap);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Summarize { dir } => cmd_summarize(&dir),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
