//! `wynn`: batch workflows for locally D-optimal and adaptive designs.
//!
//! Exit status is 0 on success, 1 when an input fails validation or cannot
//! be parsed, and 2 on any other error.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::Serialize;
use wynn_core::adaptive::trajectory_row;
use wynn_core::model::validate_document;
use wynn_core::simlab::{convergence_report, normality_diagnostics, simulate_replications, ReplicationConfig, ReplicationSummary};
use wynn_core::{format, solve_locally_d_optimal, Design, DesignEntry, ModelSpec, ModelSpecDocument, WynnConfig};
use wynn_service::log::parse_prefix;
use wynn_service::{Event, Registry, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "wynn", version, about = "Locally D-optimal and adaptive Wynn designs for GLMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for a locally D-optimal design at a fixed parameter.
    Doptimal {
        #[arg(long)]
        spec: PathBuf,
        /// Comma-separated parameter vector.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Vec<f64>,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iters: usize,
        /// Output file for the design and certificate (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run replicated adaptive simulations from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Directory for summary.json and checkpoints.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Asymptotic-normality diagnostics for a simulation summary.
    Normality {
        #[arg(long)]
        summary: PathBuf,
    },
    /// Validate a model specification.
    Validate {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Serve the session HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, env = DATA_DIR_ENV, default_value = "wynn-data")]
        data_dir: PathBuf,
    },
    /// Session log tools.
    Session {
        #[command(subcommand)]
        command: SessionCommand,
    },
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Replay an event log into a trajectory CSV.
    Replay {
        #[arg(long)]
        events: PathBuf,
        /// Output CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<wynn_core::Error> for Failure {
    fn from(e: wynn_core::Error) -> Self {
        match e {
            wynn_core::Error::Validation(_) | wynn_core::Error::Json(_) => Failure::Invalid(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<wynn_service::ServiceError> for Failure {
    fn from(e: wynn_service::ServiceError) -> Self {
        match e {
            wynn_service::ServiceError::Core(c) => c.into(),
            wynn_service::ServiceError::Corrupt(m) => Failure::Invalid(format!("corrupt event log: {m}")),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Parses JSON, reporting the field path, line and column of any error.
fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, Failure> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        Failure::Invalid(format!(
            "{}:{}:{}: at `{}`: {inner}",
            path.display(),
            inner.line(),
            inner.column(),
            e.path()
        ))
    })
}

fn load_spec(path: &Path) -> Result<ModelSpec, Failure> {
    let doc: ModelSpecDocument = parse_json(path, &read(path)?)?;
    let report = validate_document(&doc);
    if !report.is_valid() {
        return Err(Failure::Invalid(format!("{}: {report}", path.display())));
    }
    Ok(ModelSpec::new(doc)?)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let text = format::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    match out {
        Some(p) => write(p, &(text + "\n")),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct DoptimalOutput {
    family_link: &'static str,
    theta: Vec<f64>,
    design: Vec<DesignEntry>,
    certificate: wynn_core::Certificate,
}

fn doptimal(spec: &Path, theta: &[f64], tol: f64, max_iters: usize, out: Option<&Path>) -> Result<(), Failure> {
    let spec = load_spec(spec)?;
    let theta_v = DVector::from_column_slice(theta);
    let cfg = WynnConfig {
        max_iters,
        kw_gap_tol: tol,
        start_size: None,
    };
    let start = Design::uniform(spec.len())?;
    let (design, certificate) = solve_locally_d_optimal(&spec, &theta_v, &start, &cfg)?;
    eprintln!(
        "{:?} after {} iterations: kw_gap {:.3e}, logdet {:.6}",
        certificate.status, certificate.iterations, certificate.kw_gap, certificate.logdet
    );
    emit(
        &DoptimalOutput {
            family_link: spec.family_link().tag(),
            theta: theta.to_vec(),
            design: design.to_entries(&spec),
            certificate,
        },
        out,
    )
}

fn simulate(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg: ReplicationConfig = parse_json(config, &read(config)?)?;
    let report = validate_document(&cfg.spec);
    if !report.is_valid() {
        return Err(Failure::Invalid(format!("{}: spec: {report}", config.display())));
    }
    let summary = simulate_replications(&cfg).map_err(|e| match e {
        wynn_core::Error::Argument(_) | wynn_core::Error::Dimension { .. } | wynn_core::Error::StartDesign { .. } => {
            Failure::Invalid(format!("{}: {e}", config.display()))
        }
        other => other.into(),
    })?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write(&out.join("summary.json"), &(summary.to_json() + "\n"))?;
    write(&out.join("checkpoints.csv"), &summary.checkpoints_csv())?;
    let conv = convergence_report(&summary);
    for c in &conv.checkpoints {
        eprintln!(
            "n={:>6}  median |theta-hat - theta| {:.4}  median |M - M*| {:.4}  median logdet gap {:.4}",
            c.n, c.err_norm.median, c.info_distance.median, c.logdet_gap.median
        );
    }
    eprintln!(
        "{} replicates, {} errors, cfg {}",
        summary.replicates,
        summary.errors.len(),
        &summary.cfg_hash[..12]
    );
    Ok(())
}

fn normality(path: &Path) -> Result<(), Failure> {
    let summary: ReplicationSummary = parse_json(path, &read(path)?)?;
    let report = normality_diagnostics(&summary.normality)?;
    emit(&report, None)
}

fn validate(path: &Path) -> Result<(), Failure> {
    let doc: ModelSpecDocument = parse_json(path, &read(path)?)?;
    let report = validate_document(&doc);
    emit(&report, None)?;
    if report.is_valid() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!("{}: {report}", path.display())))
    }
}

fn serve(host: &str, port: u16, data_dir: PathBuf) -> Result<(), Failure> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| Failure::Invalid(format!("bad address {host}:{port}: {e}")))?;
    let registry = Arc::new(Registry::open(data_dir)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    rt.block_on(wynn_service::serve(registry, addr))
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn replay(events: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let bytes = fs::read(events).map_err(|e| io_err(events, e))?;
    let (parsed, valid) = parse_prefix(&bytes);
    if valid < bytes.len() {
        eprintln!("ignoring {} bytes of incomplete trailing events", bytes.len() - valid);
    }
    let Some(created) = parsed.first() else {
        return Err(Failure::Invalid(format!("{}: no complete `created` event", events.display())));
    };
    // replay once to verify, then again while recording rows
    wynn_service::replay(&parsed)?;
    let Event::Created {
        spec,
        start,
        estimator,
        theta_seed,
    } = &created.event
    else {
        return Err(Failure::Invalid("first event is not `created`".into()));
    };
    let spec = Arc::new(ModelSpec::new(spec.clone())?);
    let mut state = wynn_core::adaptive_init(
        spec.clone(),
        start,
        estimator.clone(),
        theta_seed.clone().map(DVector::from_vec),
    )?;
    let mut rows = Vec::new();
    for e in &parsed[1..] {
        if let Event::Observed { index, y, .. } = e.event {
            state.observe(index, y)?;
            rows.push(trajectory_row(&state, index, y, None));
        }
    }
    let csv = wynn_core::Trajectory { p: spec.p(), rows }.to_csv();
    match out {
        Some(p) => write(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Doptimal {
            spec,
            theta,
            tol,
            max_iters,
            out,
        } => doptimal(&spec, &theta, tol, max_iters, out.as_deref()),
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Normality { summary } => normality(&summary),
        Command::Validate { spec } => validate(&spec),
        Command::Serve { host, port, data_dir } => serve(&host, port, data_dir),
        Command::Session {
            command: SessionCommand::Replay { events, out },
        } => replay(&events, out.as_deref()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_max_level(tracing::Level::INFO)
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
