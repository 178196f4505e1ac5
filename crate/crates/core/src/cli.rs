//! `stopfinder` command line.
//!
//! Exit codes: 0 on success, 1 for runtime and data errors, 2 for usage
//! errors. Output files are written to a temporary file in the destination
//! directory and renamed into place, so a failed run leaves nothing behind.

use crate::gtfs::{self, DEFAULT_BUS_LENGTH_M};
use crate::replay::{self, ReplayConfig};
use crate::simulator::{self, ExperimentConfig, TrialTable};
use crate::stats::{self, BootstrapSpec, DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_BOOTSTRAP_SEED};
use crate::study;
use clap::{Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Failure = 1,
    Usage = 2,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Parser)]
#[command(name = "stopfinder", version, about = "Bus-stop micro-navigation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare GTFS stop coordinates with surveyed sign positions.
    Audit {
        /// GTFS stops.txt
        #[arg(long)]
        stops: PathBuf,
        /// Ground truth CSV: stop_id,lat,lon,heading_deg
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BUS_LENGTH_M)]
        bus_length_m: f64,
        /// Error thresholds in meters; defaults to two bus lengths.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        thresholds: Vec<f64>,
        /// Per-stop errors CSV (stop_id,error_m).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary JSON; printed to stdout when omitted.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run a seeded experiment and write the paired trial table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides master_seed from the config.
        #[arg(long)]
        master_seed: Option<u64>,
    },
    /// Drive the guidance engine over a recorded frame log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        guidance_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a trial table.
    Report {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Written to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_RESAMPLES)]
        bootstrap_resamples: usize,
        #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_SEED)]
        bootstrap_seed: u64,
    },
    /// Write the calibrated default experiment config.
    DefaultConfig {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Text,
    Json,
}

type Failure = String;

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn read_to_string(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Writes via a sibling temp file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn emit(path: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => write_out(p, bytes),
        None => stdout.write_all(bytes).map_err(|e| format!("stdout: {e}")),
    }
}

fn run(cmd: Command, stdout: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Audit {
            stops,
            truth,
            bus_length_m,
            thresholds,
            out,
            summary,
        } => {
            if !(bus_length_m.is_finite() && bus_length_m > 0.0) {
                return Err(format!("--bus-length-m must be positive, got {bus_length_m}"));
            }
            let registry = gtfs::parse_stops(open(&stops)?).map_err(|e| format!("{}: {e}", stops.display()))?;
            let truth_rows =
                gtfs::parse_ground_truth(open(&truth)?).map_err(|e| format!("{}: {e}", truth.display()))?;
            let thresholds = if thresholds.is_empty() {
                vec![2.0 * bus_length_m]
            } else {
                thresholds
            };
            let report = gtfs::audit_mapping(&registry, &truth_rows, &thresholds).map_err(|e| e.to_string())?;
            if let Some(out) = out {
                let mut buf = Vec::new();
                report.write_errors_csv(&mut buf).map_err(|e| e.to_string())?;
                write_out(&out, &buf)?;
            }
            let mut json = report.summary_json();
            json["bus_length_m"] = bus_length_m.into();
            let mut text = serde_json::to_string_pretty(&json).expect("json");
            text.push('\n');
            emit(summary.as_deref(), text.as_bytes(), stdout)
        }
        Command::Simulate {
            config,
            out,
            master_seed,
        } => {
            let mut cfg = ExperimentConfig::from_json(&read_to_string(&config)?)
                .map_err(|e| format!("{}: {e}", config.display()))?;
            if let Some(seed) = master_seed {
                cfg.master_seed = seed;
            }
            let table = simulator::run_experiment(&cfg).map_err(|e| e.to_string())?;
            let mut buf = Vec::new();
            table.write_csv(&mut buf).map_err(|e| e.to_string())?;
            write_out(&out, &buf)
        }
        Command::Replay {
            log,
            guidance_config,
            out,
        } => {
            let cfg: ReplayConfig = serde_json::from_str(&read_to_string(&guidance_config)?)
                .map_err(|e| format!("{}: {e}", guidance_config.display()))?;
            let frames = replay::read_log(open(&log)?).map_err(|e| format!("{}: {e}", log.display()))?;
            let timeline = replay::replay(&frames, &cfg).map_err(|e| e.to_string())?;
            let mut buf = Vec::new();
            replay::write_timeline(&timeline, &mut buf).map_err(|e| e.to_string())?;
            write_out(&out, &buf)
        }
        Command::Report {
            trials,
            format,
            out,
            bootstrap_resamples,
            bootstrap_seed,
        } => {
            let table = TrialTable::read_csv(open(&trials)?).map_err(|e| format!("{}: {e}", trials.display()))?;
            let boot = BootstrapSpec {
                n_resamples: bootstrap_resamples,
                seed: bootstrap_seed,
            };
            if boot.n_resamples == 0 {
                return Err("--bootstrap-resamples must be at least 1".into());
            }
            let report = stats::report(&table, boot).map_err(|e| e.to_string())?;
            let text = match format {
                Format::Csv => report.to_csv(),
                Format::Text => report.to_text(),
                Format::Json => report.to_json(),
            };
            emit(out.as_deref(), text.as_bytes(), stdout)
        }
        Command::DefaultConfig { out } => write_out(&out, study::default_config().to_json_pretty().as_bytes()),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run_cli<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(rendered.as_bytes());
                    ExitStatus::Success
                }
                _ => {
                    let _ = stderr.write_all(rendered.as_bytes());
                    ExitStatus::Usage
                }
            };
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => ExitStatus::Success,
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            ExitStatus::Failure
        }
    }
}
