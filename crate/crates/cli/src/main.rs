use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use teleop_core::delay_channel::replay_trace;
use teleop_core::metrics_io::{plot_tables, read_log_file, read_packet_trace, write_log_file};
use teleop_core::nmpc::SolveStatus;
use teleop_core::sim_harness::{compare, run_with, Mode, PlantKind, RunOptions, ScenarioConfig, SimLog, DEFAULT_SCENARIO};

#[derive(Parser)]
#[command(name = "teleop", version, about = "Delayed teleoperation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantArg {
    Augmented,
    Matched,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario TOML; the bundled A–F course when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Downlink RNG seed, overriding the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "augmented")]
    plant: PlantArg,
    /// Record NMPC solve times in the log (makes logs non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one mode and write the per-tick log.
    Run {
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run several modes on the same seed and tabulate RMS deflection.
    Compare {
        /// Comma-separated, e.g. `smith,srpt`.
        #[arg(long, value_delimiter = ',', default_value = "smith,srpt")]
        modes: Vec<Mode>,
        /// Directory for report.csv and one log per mode.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Split a log into columnar tables for plotting.
    EmitPlots {
        log: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Replay a packet trace and report per-packet arrival errors.
    DelayValidate {
        trace: PathBuf,
        /// Sweep step of the delay operator (s).
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
    },
    /// Print the bundled scenario file.
    DefaultScenario,
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ScenarioConfig::from_toml_str(&text)?)
        }
        None => Ok(ScenarioConfig::default_course()),
    }
}

fn options(common: &Common) -> RunOptions {
    RunOptions {
        seed: common.seed,
        plant: match common.plant {
            PlantArg::Augmented => PlantKind::Augmented,
            PlantArg::Matched => PlantKind::Matched,
        },
        record_timing: common.timing,
        ..Default::default()
    }
}

fn summarize(log: &SimLog) {
    let end = log.rows.last().map_or(0.0, |r| r.t);
    println!(
        "mode {} seed {}: {} after {:.2} s, {} events",
        log.mode,
        log.seed,
        if log.completed { "completed" } else { "stopped" },
        end,
        log.events.len()
    );
    for e in log.events.iter().take(5) {
        println!("  t = {:.2}: {}", e.t, e.message);
    }
    for r in &log.regions {
        match log.rms(r) {
            Ok(v) => println!("  {:<4} RMS dY {v:.4} m", r.label),
            Err(e) => println!("  {:<4} {e}", r.label),
        }
    }
    if !log.nmpc.is_empty() {
        let n = log.nmpc.len();
        let converged = log.nmpc.iter().filter(|r| r.status == SolveStatus::Converged).count();
        let mean = log.nmpc.iter().map(|r| r.solve_ms).sum::<f64>() / n as f64;
        let max = log.nmpc.iter().map(|r| r.solve_ms).fold(0.0, f64::max);
        println!("  NMPC: {converged}/{n} converged, solve mean {mean:.2} ms, max {max:.2} ms");
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { mode, out, common } => {
            let cfg = load_scenario(common.scenario.as_deref())?;
            let log = run_with(&cfg, mode, &options(&common))?;
            write_log_file(&out, &log.rows).with_context(|| format!("writing {}", out.display()))?;
            summarize(&log);
            Ok(true)
        }
        Command::Compare { modes, out_dir, common } => {
            let cfg = load_scenario(common.scenario.as_deref())?;
            let (report, logs) = compare(&cfg, &modes, &options(&common))?;
            print!("{}", report.to_text());
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("report.csv"), report.to_csv())?;
                for log in &logs {
                    write_log_file(&dir.join(format!("{}.csv", log.mode)), &log.rows)?;
                }
            }
            Ok(true)
        }
        Command::EmitPlots { log, out_dir } => {
            let rows = read_log_file(&log).with_context(|| format!("reading {}", log.display()))?;
            fs::create_dir_all(&out_dir)?;
            let stem = log.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
            for (name, csv) in plot_tables(&rows) {
                let path = out_dir.join(format!("{stem}_{name}.csv"));
                fs::write(&path, csv)?;
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::DelayValidate { trace, step } => {
            let file = fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let packets = read_packet_trace(file)?;
            let checks = replay_trace(&packets, step)?;
            println!("seq,expected_s,channel_err_s,operator_err_s");
            let mut ok = true;
            for c in &checks {
                let op = c.operator_error();
                println!(
                    "{},{},{:e},{}",
                    c.seq,
                    c.expected,
                    c.channel_error(),
                    op.map_or("superseded".to_string(), |e| format!("{e:e}"))
                );
                ok &= c.channel_error() == 0.0 && op.is_none_or(|e| (0.0..=step + 1e-12).contains(&e));
            }
            println!("{}", if ok { "trace reproduced" } else { "trace NOT reproduced" });
            Ok(ok)
        }
        Command::DefaultScenario => {
            print!("{DEFAULT_SCENARIO}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn modes_parse_from_a_list() {
        let cli = Cli::try_parse_from(["teleop", "compare", "--modes", "smith,srpt,delay-only"]).unwrap();
        match cli.command {
            Command::Compare { modes, .. } => assert_eq!(modes, [Mode::Smith, Mode::Srpt, Mode::DelayOnly]),
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["teleop", "run", "--mode", "warp", "--out", "x.csv"]).is_err());
    }
}
