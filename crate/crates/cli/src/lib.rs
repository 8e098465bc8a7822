//! Command-line front end for tapstroop: render transients, run simulated
//! sessions, host the session server and analyze logs.
//!
//! [`run`] is the whole program; the `tapstroop` binary only forwards its
//! arguments and exit code.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use tapstroop::device::{DeviceConfig, DeviceSim, Trajectory};
use tapstroop::participant::{batch_seeds, run_simulated_session, ResponderModel, TapProfile};
use tapstroop::protocol::{ProtocolError, SessionConfig, SessionSummary};
use tapstroop::service::HostConfig;
use tapstroop::signal::{render_transient, Material, MaterialTable, SynthesisConfig};
use tapstroop::storage::{analyze_file, load_materials, write_log_file, write_wav, StorageError};

pub mod server;

#[derive(Debug, Parser)]
#[command(name = "tapstroop", version, about = "Visuo-tactile Stroop tapping toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a material transient to a 16-bit mono WAV file
    Synth(SynthArgs),
    /// Run simulated sessions and print the batch-mean RT delta
    Simulate(SimulateArgs),
    /// Host sessions for the browser client over websockets
    Serve(ServeArgs),
    /// Summarize a session log
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Material to render (rubber or aluminum)
    #[arg(long, value_name = "NAME")]
    material: Material,
    /// Impact velocity in m/s
    #[arg(long, value_name = "M/S", allow_hyphen_values = true)]
    velocity: f64,
    /// Material parameter file (JSON); placeholder values when absent
    #[arg(long, value_name = "FILE", env = "TAPSTROOP_PARAMS", hide_env_values = true)]
    params: Option<PathBuf>,
    /// Output sample rate in Hz
    #[arg(long, value_name = "HZ", default_value_t = 10_000)]
    rate: u32,
    /// Output WAV path
    #[arg(short = 'o', long = "output", value_name = "WAV")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Base seed; session i uses seeds derived from it
    #[arg(long, value_name = "U64", default_value_t = 0)]
    seed: u64,
    /// Number of sessions
    #[arg(long, value_name = "N", default_value_t = 1)]
    sessions: u64,
    /// Responder model as a JSON file or inline JSON object
    #[arg(long, value_name = "JSON")]
    model: Option<String>,
    /// Material parameter file (JSON); placeholder values when absent
    #[arg(long, value_name = "FILE", env = "TAPSTROOP_PARAMS", hide_env_values = true)]
    params: Option<PathBuf>,
    /// Replay a `t_us,angle_rad` CSV through the device loop instead of
    /// running sessions
    #[arg(long, value_name = "CSV")]
    trajectory: Option<PathBuf>,
    /// Directory for per-session JSONL logs
    #[arg(short = 'o', long = "output", value_name = "DIR")]
    output: Option<PathBuf>,
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Listen address
    #[arg(long, value_name = "HOST:PORT", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Material parameter file (JSON); placeholder values when absent
    #[arg(long, value_name = "FILE", env = "TAPSTROOP_PARAMS", hide_env_values = true)]
    params: Option<PathBuf>,
    /// Directory session logs are written to
    #[arg(long, value_name = "DIR", default_value = "logs")]
    logs: PathBuf,
    /// Sessions allowed to run at once
    #[arg(long, value_name = "N", default_value_t = 1)]
    max_active: usize,
    /// Clock calibration exchanges per session (at least 3)
    #[arg(long, value_name = "K", default_value_t = 5)]
    pings: usize,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// JSONL session log
    #[arg(value_name = "LOG")]
    log: PathBuf,
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

/// Failure of a subcommand, mapped onto exit codes 2 and 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Domain(m) => write!(f, "error: {m}"),
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let text = e.render().to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text);
            let _ = write!(err, "usage: {text}");
            return 2;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Serve(a) => serve(a, out),
        Command::Analyze(a) => analyze(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}

fn materials(params: Option<&Path>) -> Result<MaterialTable, CliError> {
    match params {
        Some(p) => load_materials(p).map_err(domain),
        None => {
            log::warn!("no --params given; using placeholder material values");
            Ok(MaterialTable::placeholder())
        }
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.velocity.is_finite() && a.velocity >= 0.0) {
        return Err(CliError::Usage(format!("--velocity must be a non-negative number, got {}", a.velocity)));
    }
    if a.rate == 0 {
        return Err(CliError::Usage("--rate must be > 0".into()));
    }
    let table = materials(a.params.as_deref())?;
    let config = SynthesisConfig::default().with_sample_rate(a.rate);
    let buf = render_transient(table.get(a.material), a.velocity, &config).map_err(domain)?;
    write_wav(&buf, &a.output).map_err(domain)?;
    writeln!(
        out,
        "wrote {} samples ({:.1} ms at {} Hz, peak {:.4}) to {}",
        buf.len(),
        buf.duration_secs() * 1e3,
        a.rate,
        buf.peak(),
        a.output.display()
    )
    .map_err(domain)
}

fn parse_model(spec: &str) -> Result<ResponderModel, CliError> {
    let text = if spec.trim_start().starts_with('{') {
        spec.to_string()
    } else {
        std::fs::read_to_string(spec).map_err(|e| CliError::Domain(format!("{spec}: {e}")))?
    };
    let model: ResponderModel =
        serde_json::from_str(&text).map_err(|e| CliError::Domain(format!("responder model: {e}")))?;
    model.validate().map_err(domain)?;
    Ok(model)
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(path) = &a.trajectory {
        return replay_trajectory(path, a.format, out);
    }
    if a.sessions == 0 {
        return Err(CliError::Usage("--sessions must be >= 1".into()));
    }
    let model = match &a.model {
        Some(spec) => parse_model(spec)?,
        None => ResponderModel::default(),
    };
    let table = materials(a.params.as_deref())?;
    if let Some(dir) = &a.output {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Domain(format!("{}: {e}", dir.display())))?;
    }

    let mut deltas = Vec::new();
    let mut sessions = Vec::new();
    for i in 0..a.sessions {
        let (session_seed, model_seed) = batch_seeds(a.seed, i);
        let m = ResponderModel {
            seed: model_seed ^ model.seed,
            ..model.clone()
        };
        let run = run_simulated_session(
            &SessionConfig::with_seed(session_seed),
            &m,
            &TapProfile::default(),
            &table,
            &DeviceConfig::default(),
        )
        .map_err(domain)?;
        if let Some(dir) = &a.output {
            let path = dir.join(format!("session_{session_seed}.jsonl"));
            write_log_file(run.log.records(), &path).map_err(domain)?;
        }
        let summary = run.summary.map_err(domain)?;
        if a.format == Format::Text {
            writeln!(
                out,
                "session {i} (seed {session_seed}): delta {:.1} ms",
                summary.stroop_delta_ms
            )
            .map_err(domain)?;
        }
        deltas.push(summary.stroop_delta_ms);
        sessions.push(serde_json::json!({ "seed": session_seed, "summary": summary }));
    }
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    match a.format {
        Format::Text => writeln!(out, "batch mean delta: {mean:.3} ms over {} sessions", deltas.len()),
        Format::Json => writeln!(
            out,
            "{}",
            serde_json::json!({ "sessions": sessions, "batch_mean_delta_ms": mean })
        ),
    }
    .map_err(domain)
}

fn replay_trajectory(path: &Path, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
    let file = File::open(path).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    let trajectory = Trajectory::read_csv(file).map_err(domain)?;
    let end = trajectory.end_time_us() as u64 + 10_000;
    let mut sim = DeviceSim::new(DeviceConfig::default(), trajectory).map_err(domain)?;
    let events = sim.run_until(end);
    for ev in &events {
        match format {
            Format::Text => writeln!(
                out,
                "contact at {} us (tick {}): {:.4} m/s",
                ev.timestamp_us, ev.tick_index, ev.velocity
            ),
            Format::Json => writeln!(out, "{}", serde_json::to_string(ev).map_err(domain)?),
        }
        .map_err(domain)?;
    }
    if format == Format::Text {
        writeln!(out, "{} contact(s)", events.len()).map_err(domain)?;
    }
    Ok(())
}

fn write_summary_text(s: &SessionSummary, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "congruent:   mean RT {:.3} ms over {} trials, accuracy {:.3}",
        s.mean_rt_congruent_ms, s.n_used_congruent, s.accuracy_congruent
    )?;
    writeln!(
        out,
        "incongruent: mean RT {:.3} ms over {} trials, accuracy {:.3}",
        s.mean_rt_incongruent_ms, s.n_used_incongruent, s.accuracy_incongruent
    )?;
    writeln!(out, "delta {:.1} ms", s.stroop_delta_ms)?;
    if s.partial {
        writeln!(out, "partial: the log ends before the session did")?;
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let summary = analyze_file(&a.log).map_err(|e| match e {
        StorageError::Protocol(ProtocolError::InsufficientData(block)) => {
            CliError::Domain(format!("InsufficientData: no includable trials in the {block} condition"))
        }
        StorageError::Parse { .. } | StorageError::CorruptLog { .. } => CliError::Domain(format!("ParseError: {e}")),
        other => domain(other),
    })?;
    match a.format {
        Format::Text => write_summary_text(&summary, out),
        Format::Json => writeln!(out, "{}", serde_json::to_string(&summary).map_err(domain)?),
    }
    .map_err(domain)
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.pings < 3 {
        return Err(CliError::Usage("--pings must be >= 3".into()));
    }
    if a.max_active == 0 {
        return Err(CliError::Usage("--max-active must be >= 1".into()));
    }
    let host = HostConfig {
        materials: materials(a.params.as_deref())?,
        ping_count: a.pings,
        ..HostConfig::default()
    };
    std::fs::create_dir_all(&a.logs).map_err(|e| CliError::Domain(format!("{}: {e}", a.logs.display())))?;
    let config = server::ServerConfig {
        host,
        logs_dir: a.logs,
        max_active: a.max_active,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(domain)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .map_err(|e| CliError::Domain(format!("bind {}: {e}", a.addr)))?;
        let local = listener.local_addr().map_err(domain)?;
        let state = server::AppState::new(config);
        let token = state.issue_token().map_err(|e| CliError::Domain(e.to_string()))?;
        writeln!(out, "listening on http://{local}").map_err(domain)?;
        writeln!(out, "session url: ws://{local}/ws?session={token}").map_err(domain)?;
        out.flush().map_err(domain)?;
        axum::serve(listener, server::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(domain)
    })
}
