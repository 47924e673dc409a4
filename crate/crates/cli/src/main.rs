//! `fleetheal` command line: the daemon, its status queries and the
//! experiment runner.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use fleetheal::config::{load_config, OrchestratorConfig, DEFAULT_STATUS_ENDPOINT};
use fleetheal::inventory::{SnmpTableSource, TableSource};
use fleetheal::orchestrator::{query_status, Orchestrator, StatusServer};
use fleetheal::sim::{parse_scenario, run_scenario, ClockMode, ScenarioError};
use fleetheal::snmp::SnmpClient;

const OK: u8 = 0;
const CONFIG_ERROR: u8 = 2;
const RUNTIME_FATAL: u8 = 3;

#[derive(Parser)]
#[command(name = "fleetheal", version, about = "Detect failed fleet devices and restore their replacements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the monitoring and healing daemon until interrupted.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Ask a running daemon for its status report.
    Status {
        #[arg(long, default_value = DEFAULT_STATUS_ENDPOINT)]
        endpoint: SocketAddr,
        /// Read the status endpoint from this config file instead.
        #[arg(long, conflicts_with = "endpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Print the switch lookup table. Walks the switch directly when a
    /// config is given, otherwise asks the daemon for its last table.
    DumpTable {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_STATUS_ENDPOINT)]
        endpoint: SocketAddr,
    },
    /// Run a scenario file against the built-in simulator and print the
    /// per-heal elapsed times.
    Experiment {
        scenario: PathBuf,
        /// Also print host wall time per heal.
        #[arg(long)]
        wall: bool,
        /// Print the event log after the table.
        #[arg(long)]
        events: bool,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl std::fmt::Display) -> Self {
        Failure { code: CONFIG_ERROR, message: message.to_string() }
    }

    fn fatal(message: impl std::fmt::Display) -> Self {
        Failure { code: RUNTIME_FATAL, message: message.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Run { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .init();
    let result = match cli.command {
        Command::Run { config } => run(&config),
        Command::Status { endpoint, config, json } => status(endpoint, config.as_deref(), json),
        Command::DumpTable { config, endpoint } => dump_table(config.as_deref(), endpoint),
        Command::Experiment { scenario, wall, events } => experiment(&scenario, wall, events),
    };
    match result {
        Ok(()) => ExitCode::from(OK),
        Err(f) => {
            eprintln!("fleetheal: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<OrchestratorConfig, Failure> {
    load_config(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn run(path: &Path) -> Result<(), Failure> {
    let config = load(path)?;
    let status_endpoint = config.status_endpoint;
    let mut orchestrator = Orchestrator::from_config(config).map_err(Failure::fatal)?;
    let _server = StatusServer::start(status_endpoint, orchestrator.status_view())
        .map_err(|e| Failure::fatal(format!("status endpoint {status_endpoint}: {e}")))?;
    let shutdown = Arc::new(AtomicBool::new(false));
    {
        let shutdown = Arc::clone(&shutdown);
        ctrlc::set_handler(move || shutdown.store(true, Ordering::SeqCst))
            .map_err(|e| Failure::fatal(format!("signal handler: {e}")))?;
    }
    orchestrator.run(&shutdown).map_err(Failure::fatal)
}

fn status(endpoint: SocketAddr, config: Option<&Path>, json: bool) -> Result<(), Failure> {
    let endpoint = match config {
        Some(path) => load(path)?.status_endpoint,
        None => endpoint,
    };
    let request = if json { "STATUS JSON" } else { "STATUS" };
    let reply = query_status(endpoint, request, Duration::from_secs(3))
        .map_err(|e| Failure::fatal(format!("daemon unreachable at {endpoint}: {e}")))?;
    print!("{reply}");
    Ok(())
}

fn dump_table(config: Option<&Path>, endpoint: SocketAddr) -> Result<(), Failure> {
    let Some(path) = config else {
        let reply = query_status(endpoint, "TABLE", Duration::from_secs(3))
            .map_err(|e| Failure::fatal(format!("daemon unreachable at {endpoint}: {e}")))?;
        print!("{reply}");
        return Ok(());
    };
    let config = load(path)?;
    let client = SnmpClient::connect(&config.switch_endpoint, &config.community, config.snmp_options())
        .map_err(|e| Failure::fatal(format!("{}: {e}", config.switch_endpoint)))?;
    let mut source = SnmpTableSource::new(client, config.table_roots.clone());
    let (table, diagnostics) = source.retrieve().map_err(Failure::fatal)?;
    if diagnostics.dropped() > 0 {
        eprintln!("fleetheal: {} malformed rows skipped", diagnostics.dropped());
    }
    print!("{}", table.canonical_text());
    Ok(())
}

fn experiment(path: &Path, wall: bool, events: bool) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let scenario = parse_scenario(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let report = run_scenario(&scenario).map_err(|e| match e {
        ScenarioError::Script(e) => Failure::config(e),
        other => Failure::fatal(other),
    })?;
    print!("{}", report.render_table(wall || scenario.clock == ClockMode::Real));
    if events {
        for line in report.event_lines() {
            println!("{line}");
        }
    }
    if wall {
        eprintln!(
            "simulated {:.3}s, wall {:.3}s, {} rounds",
            report.simulated.as_secs_f64(),
            report.wall.as_secs_f64(),
            report.rounds
        );
    }
    Ok(())
}
