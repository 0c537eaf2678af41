use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use aromagen_core::analysis::{convergence_stats, read_ratings, summarize_ratings};
use aromagen_core::gateway::{MockProvider, Provider};
use aromagen_core::session::{replay, SessionId, SessionLog};
use aromagen_core::{to_schedule, Palette, Session, SessionManager};
use aromagen_device::{serve as serve_device, DeviceClient, DispenseReport, SystemClock};
use clap::{Parser, Subcommand, ValueEnum};

use crate::api::{router, ApiError, AppState, TurnView};
use crate::provider::{HttpConfig, HttpProvider};

pub const DEFAULT_DEVICE: &str = "127.0.0.1:7878";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_LOG: &str = "aromagen-sessions.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    /// Deterministic offline blends.
    Mock,
    /// OpenAI-style chat completions configured from AROMAGEN_LLM_* variables.
    Http,
}

#[derive(Debug, Parser)]
#[command(
    name = "aromagen",
    version,
    about = "Generate, refine and play aroma compositions"
)]
pub struct Cli {
    /// Palette JSON file (defaults to the bundled twelve-odorant palette).
    #[arg(long, global = true, env = "AROMAGEN_PALETTE")]
    pub palette: Option<PathBuf>,
    #[arg(
        long,
        global = true,
        value_enum,
        default_value = "mock",
        env = "AROMAGEN_PROVIDER"
    )]
    pub provider: ProviderKind,
    /// Session log (JSONL).
    #[arg(long, global = true, default_value = DEFAULT_LOG, env = "AROMAGEN_LOG")]
    pub log: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start a session from a description and print the composition.
    Generate {
        #[arg(long)]
        text: Option<String>,
        /// Image file, described by the provider.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Audio file, transcribed by the provider.
        #[arg(long)]
        audio: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Revise a logged session with feedback.
    Refine {
        session: String,
        #[arg(long)]
        feedback: String,
        #[arg(long)]
        json: bool,
    },
    /// Mark a logged session as satisfied.
    Satisfy { session: String },
    /// Print a logged session.
    Show {
        session: String,
        #[arg(long)]
        json: bool,
    },
    /// Send the latest composition of a session to the device.
    Play {
        session: String,
        #[arg(long, default_value = DEFAULT_DEVICE, env = "AROMAGEN_DEVICE")]
        device: String,
        #[arg(long)]
        json: bool,
    },
    /// Run the device simulator.
    SimulateDevice {
        #[arg(long, default_value = DEFAULT_DEVICE, env = "AROMAGEN_DEVICE")]
        listen: String,
        /// Simulated time runs this many times faster than wall time.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Convergence statistics from the session log, plus ratings if given.
    Analyze {
        /// Ratings CSV (participant, condition, six descriptors, similarity).
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Condition the others are compared against.
        #[arg(long, default_value = "real")]
        reference: String,
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = DEFAULT_LISTEN, env = "AROMAGEN_LISTEN")]
        listen: String,
        #[arg(long, default_value = DEFAULT_DEVICE, env = "AROMAGEN_DEVICE")]
        device: String,
    },
}

fn io_error(what: impl std::fmt::Display, e: impl std::fmt::Display) -> ApiError {
    ApiError::new(500, "io_error", format!("{what}: {e}"))
}

fn load_palette(path: Option<&PathBuf>) -> Result<Palette, ApiError> {
    match path {
        None => Ok(Palette::bundled()),
        Some(p) => {
            let file = std::fs::File::open(p).map_err(|e| io_error(p.display(), e))?;
            Palette::load(file).map_err(|e| ApiError::new(400, "invalid_palette", e.to_string()))
        }
    }
}

fn provider(kind: ProviderKind, palette: &Palette) -> Result<Arc<dyn Provider>, ApiError> {
    Ok(match kind {
        ProviderKind::Mock => Arc::new(MockProvider::new(palette.clone())),
        ProviderKind::Http => {
            let config = HttpConfig::from_env()
                .map_err(|e| ApiError::new(400, "provider_config", e.to_string()))?;
            Arc::new(HttpProvider::new(config).map_err(|e| io_error("provider debug log", e))?)
        }
    })
}

/// A manager over the persisted sessions, appending to the same log.
fn open_manager(cli: &Cli) -> Result<SessionManager, ApiError> {
    let palette = Arc::new(load_palette(cli.palette.as_ref())?);
    let existing = if cli.log.exists() {
        let records = SessionLog::read_path(&cli.log)?;
        replay(&records, &palette)?
    } else {
        Vec::new()
    };
    let log = SessionLog::open(&cli.log).map_err(|e| io_error(cli.log.display(), e))?;
    let provider = provider(cli.provider, &palette)?;
    let manager = SessionManager::new(palette, provider, Some(log));
    manager.restore(existing);
    Ok(manager)
}

fn read_file(path: &PathBuf) -> Result<Vec<u8>, ApiError> {
    std::fs::read(path).map_err(|e| io_error(path.display(), e))
}

fn runtime() -> Result<tokio::runtime::Runtime, ApiError> {
    tokio::runtime::Runtime::new().map_err(|e| io_error("runtime", e))
}

/// Active odorants in release order with ratios and durations.
pub fn render_turn(turn: &TurnView) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<18} {:>5} {:>10}", "Odorant", "Ratio", "Duration");
    for step in &turn.schedule.steps {
        let ratio = turn.ratios.get(&step.odorant).unwrap_or_default();
        let _ = writeln!(
            s,
            "{:<18} {:>5} {:>8.2} s",
            step.odorant,
            ratio.to_string(),
            step.duration_ms as f64 / 1000.0
        );
    }
    let _ = writeln!(
        s,
        "{:<18} {:>5} {:>8.2} s",
        "Total",
        "1.00",
        turn.schedule.total_ms as f64 / 1000.0
    );
    if let Some(changes) = &turn.changes_made {
        let _ = writeln!(s, "Changes: {changes}");
    }
    let _ = writeln!(s, "Justification: {}", turn.justification);
    for w in &turn.warnings {
        let _ = writeln!(s, "Warning: {w}");
    }
    if turn.repaired {
        let _ = writeln!(
            s,
            "Note: model output was repaired to fit the ratio contract"
        );
    }
    s
}

pub fn render_report(report: &DispenseReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>4} {:>7} {:>9} {:>9}",
        "Step", "Channel", "Start ms", "End ms"
    );
    for (i, step) in report.steps.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:>4} {:>7} {:>9} {:>9}",
            i, step.channel, step.started_at_ms, step.ended_at_ms
        );
    }
    match report.aborted_at_step {
        None => {
            let _ = writeln!(s, "Completed: {} ms dispensed", report.dispensed_ms());
        }
        Some(i) => {
            let _ = writeln!(s, "Aborted at step {i} after {} ms", report.dispensed_ms());
        }
    }
    s
}

fn session_header(session: &Session) -> String {
    let status = serde_json::to_value(session.status)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    let n = session.refinement_turns();
    let plural = if n == 1 { "" } else { "s" };
    format!(
        "Session {} ({status}; {n} refinement turn{plural})\n",
        session.id
    )
}

fn json_line(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("views serialize");
    s.push('\n');
    s
}

/// Executes one command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut impl Write) -> Result<(), ApiError> {
    let text = match &cli.command {
        Command::Generate {
            text,
            image,
            audio,
            json,
        } => {
            let manager = open_manager(&cli)?;
            let image = image.as_ref().map(read_file).transpose()?;
            let audio = audio.as_ref().map(read_file).transpose()?;
            let input = manager.cascade_input(text.clone(), image.as_deref(), audio.as_deref())?;
            let session = manager.start(input)?;
            let view = TurnView::new(session.latest(), manager.palette())?;
            if *json {
                json_line(&serde_json::json!({"session_id": session.id, "turn": view}))
            } else {
                format!("{}{}", session_header(&session), render_turn(&view))
            }
        }
        Command::Refine {
            session,
            feedback,
            json,
        } => {
            let manager = open_manager(&cli)?;
            let (session, diff) = manager.refine(&SessionId::from(session.as_str()), feedback)?;
            let view = TurnView::new(session.latest(), manager.palette())?;
            if *json {
                json_line(
                    &serde_json::json!({"session_id": session.id, "turn": view, "diff": diff}),
                )
            } else {
                let mut s = format!("{}{}", session_header(&session), render_turn(&view));
                for d in &diff {
                    let _ = writeln!(s, "  {:<18} {} -> {} ({})", d.name, d.old, d.new, d.delta);
                }
                s
            }
        }
        Command::Satisfy { session } => {
            let manager = open_manager(&cli)?;
            let session = manager.satisfy(&SessionId::from(session.as_str()))?;
            session_header(&session)
        }
        Command::Show { session, json } => {
            let manager = open_manager(&cli)?;
            let session = manager.get(&SessionId::from(session.as_str()))?;
            if *json {
                json_line(&crate::api::SessionView::new(&session, manager.palette())?)
            } else {
                let view = TurnView::new(session.latest(), manager.palette())?;
                format!("{}{}", session_header(&session), render_turn(&view))
            }
        }
        Command::Play {
            session,
            device,
            json,
        } => {
            let manager = open_manager(&cli)?;
            let session = manager.get(&SessionId::from(session.as_str()))?;
            let schedule = to_schedule(&session.latest().ratios, manager.palette())?;
            let report = runtime()?.block_on(async {
                let mut client = DeviceClient::connect(device.as_str())
                    .await
                    .map_err(aromagen_device::ClientError::from)?;
                client.play_schedule(&schedule).await
            })?;
            if *json {
                json_line(&report)
            } else {
                render_report(&report)
            }
        }
        Command::SimulateDevice { listen, speed } => {
            if !(speed.is_finite() && *speed > 0.0) {
                return Err(ApiError::new(
                    400,
                    "invalid_argument",
                    "speed must be positive",
                ));
            }
            let clock = SystemClock::scaled(*speed);
            runtime()?.block_on(async {
                let sim = serve_device(listen.as_str(), clock)
                    .await
                    .map_err(|e| io_error(listen, e))?;
                eprintln!("device simulator listening on {}", sim.local_addr());
                let _ = tokio::signal::ctrl_c().await;
                Ok::<_, ApiError>(())
            })?;
            String::new()
        }
        Command::Analyze {
            ratings,
            reference,
            json,
        } => {
            let records = SessionLog::read_path(&cli.log)?;
            let convergence = convergence_stats(&records);
            let ratings = match ratings {
                Some(path) => {
                    let file =
                        std::fs::File::open(path).map_err(|e| io_error(path.display(), e))?;
                    let rows = read_ratings(file)
                        .map_err(|e| ApiError::new(400, "invalid_ratings", e.to_string()))?;
                    Some(summarize_ratings(&rows, reference))
                }
                None => None,
            };
            if *json {
                json_line(&serde_json::json!({"convergence": convergence, "ratings": ratings}))
            } else {
                let mut s = convergence.to_string();
                if let Some(r) = ratings {
                    s.push('\n');
                    s.push_str(&r.to_string());
                }
                s
            }
        }
        Command::Serve { listen, device } => {
            let manager = Arc::new(open_manager(&cli)?);
            let state = AppState {
                manager,
                device_addr: device.clone(),
            };
            runtime()?.block_on(async {
                let listener = tokio::net::TcpListener::bind(listen.as_str())
                    .await
                    .map_err(|e| io_error(listen, e))?;
                let addr = listener.local_addr().map_err(|e| io_error(listen, e))?;
                eprintln!("listening on http://{addr}");
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(|e| io_error("server", e))
            })?;
            String::new()
        }
    };
    out.write_all(text.as_bytes())
        .map_err(|e| io_error("stdout", e))
}
