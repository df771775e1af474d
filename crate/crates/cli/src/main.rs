use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use badsim_core::metrics::{annual_fork_broadcast, curve_to_csv, overhead_curve};
use badsim_core::scenario::Scenario;
use badsim_core::threat::{deserialize_db, export_json};
use clap::{Parser, Subcommand};

const EXIT_ASSERTION: u8 = 1;
/// Unreadable or malformed input, bad arguments, I/O failures.
const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "badsim", version, about = "Blockchain anomaly detection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file and check its assertions.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: badsim-out/<scenario name>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the fork-broadcast overhead table as CSV.
    Overhead {
        /// Orphaned blocks per year.
        #[arg(long, default_value_t = 141.0)]
        orphans: f64,
        /// Maximum block size in MB.
        #[arg(long = "block-mb", default_value_t = 0.993201)]
        block_mb: f64,
        /// Outgoing connections per node.
        #[arg(long, default_value_t = 32.0)]
        degree: f64,
        /// Ascending monthly bandwidths in GB, comma separated
        /// [default: 150,175,...,300].
        #[arg(long, value_delimiter = ',')]
        m: Vec<f64>,
    },
    /// Threat database files.
    Db {
        #[command(subcommand)]
        command: DbCommand,
    },
}

#[derive(Debug, Subcommand)]
enum DbCommand {
    /// Print k and one row per sequence.
    Inspect { file: PathBuf },
    /// Print the database as JSON.
    ExportJson { file: PathBuf },
}

fn run_scenario(path: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<u8> {
    let scenario = Scenario::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let scenario = match seed {
        Some(s) => scenario.with_seed(s),
        None => scenario,
    };
    let out = out.unwrap_or_else(|| PathBuf::from("badsim-out").join(&scenario.name));
    log::info!("running {} with seed {}", scenario.name, scenario.sim.seed);
    let run = scenario.run().context("building simulation")?;
    run.write_outputs(&out)
        .with_context(|| format!("writing outputs to {}", out.display()))?;
    emit(&format!("{}outputs written to {}\n", run.summary(), out.display()))?;
    Ok(if run.passed() { 0 } else { EXIT_ASSERTION })
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn default_sweep() -> Vec<f64> {
    (0..=6).map(|i| 150.0 + 25.0 * f64::from(i)).collect()
}

fn overhead_table(orphans: f64, block_mb: f64, degree: f64, m: Vec<f64>) -> Result<String> {
    for (name, v) in [("orphans", orphans), ("block-mb", block_mb), ("degree", degree)] {
        if !v.is_finite() || v < 0.0 {
            bail!("--{name} must be a finite non-negative number");
        }
    }
    let m = if m.is_empty() { default_sweep() } else { m };
    if m.iter().any(|v| !v.is_finite()) {
        bail!("--m values must be finite");
    }
    if m.windows(2).any(|w| w[0] >= w[1]) {
        bail!("--m values must be strictly ascending");
    }
    let gb = annual_fork_broadcast(orphans, block_mb, degree);
    let rows = overhead_curve(gb, &m).context("--m")?;
    Ok(curve_to_csv(&rows))
}

fn load_db(file: &PathBuf) -> Result<badsim_core::threat::ThreatDatabase> {
    let bytes = std::fs::read(file).with_context(|| format!("reading {}", file.display()))?;
    deserialize_db(&bytes).with_context(|| format!("malformed input: {}", file.display()))
}

fn db_inspect(file: &PathBuf) -> Result<String> {
    let db = load_db(file)?;
    let mut out = format!("k={}\n", db.len());
    if !db.is_empty() {
        out.push_str("id\tlength\tfirst_seen\tlabel\n");
    }
    for s in db.sequences() {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", s.id, s.len(), s.first_seen, s.label));
    }
    Ok(out)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { scenario, seed, out } => run_scenario(scenario, seed, out),
        Command::Overhead {
            orphans,
            block_mb,
            degree,
            m,
        } => {
            emit(&overhead_table(orphans, block_mb, degree, m)?)?;
            Ok(0)
        }
        Command::Db { command } => {
            match command {
                DbCommand::Inspect { file } => emit(&db_inspect(&file)?)?,
                DbCommand::ExportJson { file } => emit(&format!("{}\n", export_json(&load_db(&file)?)))?,
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BADSIM_LOG", "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sweep_rows() {
        assert_eq!(default_sweep(), vec![150.0, 175.0, 200.0, 225.0, 250.0, 275.0, 300.0]);
        let csv = overhead_table(141.0, 0.993201, 32.0, Vec::new()).unwrap();
        assert_eq!(csv.lines().count(), 8);
    }

    #[test]
    fn bad_m_lists_rejected() {
        assert!(overhead_table(141.0, 0.993201, 32.0, vec![300.0, 150.0]).is_err());
        assert!(overhead_table(141.0, 0.993201, 32.0, vec![150.0, 150.0]).is_err());
        assert!(overhead_table(141.0, 0.993201, 32.0, vec![0.0, 150.0]).is_err());
        assert!(overhead_table(-1.0, 0.993201, 32.0, Vec::new()).is_err());
    }
}
