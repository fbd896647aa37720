use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use uwcsma::acoustics::{LinkBudgetParams, PUBLISHED_TL2_9KHZ_1KM};
use uwcsma::chirp::detection_curve;
use uwcsma::experiments::output::{render_curve, render_run, render_table, render_trace};
use uwcsma::experiments::runner::{ExperimentTable, METRICS};
use uwcsma::experiments::{load_config, run_experiment, simulate_traced, Family, ScenarioConfig};
use uwcsma::phy::PhyParams;

const TABLE_SCHEMA: &str = "\
CSV SCHEMAS (every file opens with the effective configuration as `# ` lines)

  sweep-load     node_count,offered_load,policy,<metric>_mean,<metric>_std...,replications
  sweep-pt       node_count,delay_scale,policy,<metric>_mean,<metric>_std...,replications
  sweep-per      node_count,forced_per,policy,<metric>_mean,<metric>_std...,replications
  compare-modes  node_count,mode,policy,<metric>_mean,<metric>_std...,replications
  adaptive       esnr_db,policy,<metric>_mean,<metric>_std...,replications
  run            metric,value
  run --trace    time,node,phase_before,event,phase_after,actions
  detect-curve   snr_db,probability,trials

  <metric> is one of: normalized_throughput, goodput_bps, delivered, dropped,
  collisions, retransmissions, timeouts, pt_ratio, mean_latency, control_overlaps.
  traffic.offered_load is the aggregate arrival rate over all sensors.

EXIT STATUS
  0 when every run completed and every runtime check held, 1 otherwise.";

/// Underwater acoustic star-network CSMA/CA simulator.
#[derive(Debug, Parser)]
#[command(name = "uwcsma", version, after_long_help = TABLE_SCHEMA)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the base seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Write CSV here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Override the number of replications per grid point.
    #[arg(long, global = true, value_name = "R")]
    reps: Option<usize>,
    /// Suppress progress and summary lines on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a single scenario.
    Run {
        /// Also write the per-node transition log.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
    },
    /// Throughput against aggregate offered load.
    SweepLoad,
    /// Saturated throughput against propagation-delay scale.
    SweepPt,
    /// Saturated throughput against forced packet error rate.
    SweepPer,
    /// Saturated throughput of every fixed mode.
    CompareModes,
    /// Adaptive mode selection against every fixed mode over ESNR.
    Adaptive,
    /// Monte-Carlo preamble detection probability against SNR.
    DetectCurve,
    /// Link-budget calculator.
    Budget {
        /// Transmit power, W.
        #[arg(long, default_value_t = 2.0)]
        power: f64,
        /// Range, m.
        #[arg(long, default_value_t = 1000.0)]
        range: f64,
        /// Center frequency, kHz.
        #[arg(long, default_value_t = 9.0)]
        freq: f64,
        /// Noise level, dB re 1 uPa.
        #[arg(long, default_value_t = 100.0)]
        nl: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            if !cli.common.quiet {
                eprintln!("runtime checks failed");
            }
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<bool> {
    if let Command::Budget { power, range, freq, nl } = cli.command {
        print!("{}", budget_report(power, range, freq, nl)?);
        return Ok(true);
    }
    let cfg = scenario(&cli.common)?;
    let family = match &cli.command {
        Command::Run { trace } => return run_single(&cli.common, &cfg, trace.as_deref()),
        Command::DetectCurve => return run_curve(&cli.common, &cfg),
        Command::SweepLoad => Family::LoadSweep,
        Command::SweepPt => Family::PtSweep,
        Command::SweepPer => Family::PerSweep,
        Command::CompareModes => Family::ModeCompare,
        Command::Adaptive => Family::AdaptiveVsFixed,
        Command::Budget { .. } => unreachable!(),
    };
    let table = run_experiment(family, &cfg)?;
    if !cli.common.quiet {
        summarize(&table);
    }
    emit(&cli.common, &render_table(&cfg, &table)?)?;
    Ok(table.assertions_held())
}

fn scenario(common: &Common) -> Result<ScenarioConfig> {
    let Some(path) = &common.config else {
        bail!("--config is required for this subcommand");
    };
    let mut cfg = load_config(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.detection_curve.seed = seed;
    }
    if let Some(r) = common.reps {
        cfg.sweeps.replications = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn run_single(common: &Common, cfg: &ScenarioConfig, trace: Option<&Path>) -> Result<bool> {
    let run = simulate_traced(cfg)?;
    let m = &run.metrics;
    if let Some(p) = trace {
        fs::write(p, render_trace(&run.trace)).with_context(|| format!("writing {}", p.display()))?;
    }
    if !common.quiet {
        eprintln!(
            "generated {} delivered {} dropped {} collisions {} throughput {:.4} goodput {:.2} bps",
            m.generated,
            m.delivered,
            m.dropped,
            m.collisions,
            m.window_throughput(),
            m.window_goodput()
        );
    }
    emit(common, &render_run(cfg, m)?)?;
    Ok(m.conserved() && m.control_overlaps == 0)
}

fn run_curve(common: &Common, cfg: &ScenarioConfig) -> Result<bool> {
    let points = detection_curve(&cfg.detection_curve)?;
    if !common.quiet {
        for p in &points {
            eprintln!("snr {:>6.1} dB  detection {:.4}  ({} trials)", p.snr_db, p.probability, p.trials);
        }
    }
    emit(common, &render_curve(cfg, &points)?)?;
    Ok(true)
}

fn summarize(table: &ExperimentTable) {
    let cols = table.family.grid_columns();
    let thr = METRICS.iter().position(|m| *m == "normalized_throughput").unwrap_or(0);
    let gp = METRICS.iter().position(|m| *m == "goodput_bps").unwrap_or(1);
    for row in &table.rows {
        let grid: Vec<String> = cols.iter().zip(&row.grid).map(|(c, v)| format!("{c}={v}")).collect();
        eprintln!(
            "{} {:<9} throughput {:.4} ± {:.4}  goodput {:.2} ± {:.2} bps{}",
            grid.join(" "),
            row.policy,
            row.stats[thr].mean,
            row.stats[thr].std,
            row.stats[gp].mean,
            row.stats[gp].std,
            if row.assertions_held { "" } else { "  CHECK FAILED" }
        );
    }
}

/// SL 10·log10(2 W) + 170.77 as printed next to the published absorption figure.
const PUBLISHED_SL_2W: f64 = 173.77;

fn budget_report(power: f64, range: f64, freq: f64, nl: f64) -> Result<String> {
    let params = LinkBudgetParams {
        transmit_power: power,
        noise_level: nl,
        center_frequency: freq,
        ..Default::default()
    };
    params.validate()?;
    let b = params.evaluate(range)?;
    let mode = PhyParams::default().select_mode(b.snr);
    let mut s = String::new();
    s += &format!("SL  {:.2} dB\n", b.source_level);
    s += &format!("TL1 {:.2} dB\n", b.spreading_loss);
    s += &format!("TL2 {:.2} dB\n", b.absorption_loss);
    s += &format!("TL  {:.2} dB\n", b.transmission_loss);
    s += &format!("SNR {:.2} dB\n", b.snr);
    if mode == 0 {
        s += "mode 0 (stop transmitting)\n";
    } else {
        s += &format!("mode {mode}\n");
    }
    if freq == 9.0 && range == 1000.0 && power == 2.0 {
        let tl = b.spreading_loss + PUBLISHED_TL2_9KHZ_1KM;
        s += &format!(
            "note: the published absorption at 9 kHz over 1 km is TL2 {:.2} dB, giving TL {:.2} dB and SNR {:.2} dB \
             (SL {:.2}); the Thorp expression above evaluates to {:.2} dB\n",
            PUBLISHED_TL2_9KHZ_1KM,
            tl,
            PUBLISHED_SL_2W - tl - nl,
            PUBLISHED_SL_2W,
            b.absorption_loss
        );
    }
    Ok(s)
}
