use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use slash_sim::engine::run_scenario;
use slash_sim::output::{ensure_dir, write_csv, write_summary, write_sweep, SUMMARY_FILE, SWEEP_FILE, TRACE_FILE};
use slash_sim::scenario::{Scenario, StrategyKind};
use slash_sim::trials::{parse_grid, prepare_trials, sweep_confidence};

#[derive(Parser)]
#[command(name = "slash", version, about = "Location- and rotation-aware mm-wave beam search simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv and summary.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of slash, exhaustive, constant.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<StrategyKind>>,
    },
    /// Data-rate loss over a grid of confidence levels, written to sweep.csv.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// start:step:end for p_I.
        #[arg(long, default_value = "0.05:0.05:0.95")]
        p_grid: String,
        /// start:step:end for p_II; the p_I grid when omitted.
        #[arg(long)]
        p_ii_grid: Option<String>,
        /// Static trials; the scenario setting when omitted.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, out, seed, strategies } => {
            let resolved = Scenario::load(&scenario)?;
            let seed = seed.unwrap_or(resolved.scenario.seed);
            let mut kinds = strategies.unwrap_or_else(|| resolved.scenario.strategies.enabled.clone());
            let mut seen = Vec::new();
            kinds.retain(|k| {
                !seen.contains(k) && {
                    seen.push(*k);
                    true
                }
            });
            let output = run_scenario(&resolved, seed, &kinds);
            ensure_dir(&out)?;
            write_csv(&out.join(TRACE_FILE), &output.trace)?;
            write_summary(&out.join(SUMMARY_FILE), &output.summary)?;
            for s in &output.summary.strategies {
                println!(
                    "{:<10} mean normalized rate {:>8.1} Mb/s, probes {:>6}, handovers {}",
                    s.strategy, s.mean_normalized_rate_mbps, s.total_probes, s.handovers
                );
            }
            println!("wrote {} and {} to {}", TRACE_FILE, SUMMARY_FILE, out.display());
        }
        Command::Sweep { scenario, p_grid, p_ii_grid, trials, seed, out } => {
            let resolved = Scenario::load(&scenario)?;
            let p_i = parse_grid(&p_grid).map_err(anyhow::Error::msg).context("--p-grid")?;
            let p_ii = match &p_ii_grid {
                Some(g) => parse_grid(g).map_err(anyhow::Error::msg).context("--p-ii-grid")?,
                None => p_i.clone(),
            };
            let seed = seed.unwrap_or(resolved.scenario.seed);
            let trials = trials.unwrap_or(resolved.scenario.static_trials.trials);
            let setups = prepare_trials(&resolved, seed, trials);
            let rows = sweep_confidence(&resolved, &setups, &p_i, &p_ii);
            ensure_dir(&out)?;
            write_sweep(&out.join(SWEEP_FILE), &rows)?;
            if let Some(best) = rows.iter().min_by(|a, b| a.mean_loss.total_cmp(&b.mean_loss)) {
                println!(
                    "minimum loss {:.4} at p_I = {:.2}, p_II = {:.2} over {} links",
                    best.mean_loss, best.p_i, best.p_ii, best.links
                );
            }
            println!("wrote {}", out.join(SWEEP_FILE).display());
        }
        Command::Validate { scenario } => {
            let resolved = Scenario::load(&scenario)?;
            println!(
                "{}: ok ({} APs, {} mmWave, {:.1} s, {} rotation events)",
                resolved.scenario.name,
                resolved.deployment.len(),
                resolved.mmwave_aps.len(),
                resolved.duration(),
                resolved.rotation_events.len()
            );
        }
    }
    Ok(())
}
