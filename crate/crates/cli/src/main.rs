mod seed;

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use cogtrain_core::builtin::WordList;
use cogtrain_core::data::DataDir;
use cogtrain_core::llm::{LiveProvider, LiveProviderConfig, Provider, ProviderError, RetryPolicy, ScriptedProvider};
use cogtrain_core::media::MediaStore;
use cogtrain_core::message::PartKind;
use cogtrain_core::puzzle::PuzzleError;
use cogtrain_core::session::{read_events, replay};
use cogtrain_core::{Clock, Directive, MessagePart, Runtime, Session, SessionError, StepClock, SystemClock};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "cogtrain", version, about = "Run, replay and export cognitive-training puzzle sessions")]
struct Cli {
    /// Data directory holding media, the life log and session logs.
    #[arg(long, global = true, default_value = "data", env = "DATA_DIR")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play a puzzle in the terminal. Commands: /hint, /draw <image path>, /quit.
    Play {
        group: String,
        /// `live` or `script:<file>`.
        #[arg(long, default_value = "live")]
        provider: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deterministic clock: start time, advancing one second per read.
        #[arg(long)]
        clock_start: Option<DateTime<Utc>>,
        /// Write the transcript JSON here when the session ends.
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long)]
        session_id: Option<String>,
        /// Word list for Guessing Word (`.json` or plain text).
        #[arg(long)]
        words: Option<PathBuf>,
        /// Override the group's `category` setting.
        #[arg(long)]
        category: Option<String>,
    },
    /// Re-execute session event logs and verify every recorded state.
    Replay {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Print a persisted session transcript.
    Export {
        session_id: String,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Ingest every entry document (`*.json`) in a directory into the life log.
    SeedLifelog {
        dir: PathBuf,
        #[arg(long)]
        clock_start: Option<DateTime<Utc>>,
    },
    /// List the registered puzzle groups.
    ListGroups,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
}

/// Exit status with a message for stderr.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::Puzzle(PuzzleError::GroupNotFound(_)) => 2,
            SessionError::Provider(ProviderError::ScriptExhausted(_)) => 3,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

macro_rules! fail1 {
    ($e:expr) => {
        $e.map_err(|e| Failure::new(1, e.to_string()))
    };
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Play {
            group,
            provider,
            seed,
            clock_start,
            export,
            session_id,
            words,
            category,
        } => play(
            &cli.data_dir,
            PlayArgs {
                group,
                provider,
                seed,
                clock_start,
                export,
                session_id,
                words,
                category,
            },
        ),
        Command::Replay { logs } => replay_logs(&logs),
        Command::Export { session_id, format } => export(&cli.data_dir, &session_id, format),
        Command::SeedLifelog { dir, clock_start } => seed_lifelog(&cli.data_dir, &dir, clock_start),
        Command::ListGroups => list_groups(&cli.data_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

struct PlayArgs {
    group: String,
    provider: String,
    seed: u64,
    clock_start: Option<DateTime<Utc>>,
    export: Option<PathBuf>,
    session_id: Option<String>,
    words: Option<PathBuf>,
    category: Option<String>,
}

fn clock(start: Option<DateTime<Utc>>) -> Arc<dyn Clock> {
    match start {
        Some(t) => Arc::new(StepClock::new(t, Duration::seconds(1))),
        None => Arc::new(SystemClock),
    }
}

fn provider(spec: &str, media: &MediaStore) -> Result<(Arc<dyn Provider>, RetryPolicy), Failure> {
    if spec == "live" {
        let config = LiveProviderConfig::from_env().map_err(|e| Failure::new(1, e.to_string()))?;
        return Ok((
            Arc::new(LiveProvider::new(config).with_media(media.clone())),
            RetryPolicy::default(),
        ));
    }
    match spec.strip_prefix("script:") {
        Some(path) => Ok((
            Arc::new(ScriptedProvider::load(Path::new(path)).map_err(|e| Failure::new(1, e.to_string()))?),
            RetryPolicy::immediate(),
        )),
        None => Err(Failure::new(1, format!("unknown provider {spec:?}; use live or script:<file>"))),
    }
}

fn play(data_dir: &Path, args: PlayArgs) -> Result<(), Failure> {
    let data = fail1!(DataDir::open(data_dir))?;
    let mut registry = fail1!(data.registry())?;
    if let Some(category) = &args.category {
        let group = registry
            .get(&args.group)
            .ok_or_else(|| Failure::from(SessionError::Puzzle(PuzzleError::GroupNotFound(args.group.clone()))))?
            .clone()
            .with_setting("category", category);
        fail1!(registry.register_group(group))?;
    }
    let (provider, retry) = provider(&args.provider, &data.media)?;
    let mut runtime = Runtime::new(Arc::new(registry), provider, data.sessions.clone())
        .with_retry(retry)
        .with_clock(clock(args.clock_start))
        .with_lifelog(data.lifelog.clone());
    if let Some(path) = &args.words {
        runtime = runtime.with_words(Arc::new(fail1!(WordList::load(path))?));
    }

    let step = runtime.start(&args.group, args.seed, args.session_id.clone())?;
    let out = io::stdout();
    let mut out = out.lock();
    println!("session {}", step.session.session_id);
    println!("{}", step.session.instance.user_instruction.trim());
    render(&mut out, &step.directives, &data.media);
    let mut session = step.session;

    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    while !session.is_ended() {
        let _ = write!(out, "> ");
        let _ = out.flush();
        let line = match lines.next() {
            Some(Ok(line)) => line,
            Some(Err(e)) => return Err(Failure::new(1, e.to_string())),
            None => "/quit".to_owned(),
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let result = if line == "/quit" {
            runtime.abort(&session)
        } else if line == "/hint" {
            runtime.request_hint(&session)
        } else if let Some(path) = line.strip_prefix("/draw") {
            match attach_image(&data.media, path.trim()) {
                Ok(part) => runtime.user_turn(&session, vec![part]),
                Err(f) => {
                    println!("[error] {}", f.message);
                    continue;
                }
            }
        } else {
            runtime.user_turn(&session, vec![MessagePart::text(line)])
        };
        match result {
            Ok(step) => {
                render(&mut out, &step.directives, &data.media);
                session = step.session;
            }
            Err(
                e @ (SessionError::DrawExpected
                | SessionError::HintBudgetExhausted(_)
                | SessionError::NoHintsAvailable
                | SessionError::GuardViolation { .. }
                | SessionError::Transcript(_)),
            ) => println!("[error] {e}"),
            Err(e) => return Err(e.into()),
        }
    }
    finish(&session, args.export.as_deref())
}

fn finish(session: &Session, export: Option<&Path>) -> Result<(), Failure> {
    if let Some(path) = export {
        fail1!(fs::write(path, transcript_json(session)))?;
    }
    let outcome = session.outcome.map(|o| o.to_string()).unwrap_or_default();
    match session.rating {
        Some(r) => println!("outcome: {outcome} (rating {r})"),
        None => println!("outcome: {outcome}"),
    }
    Ok(())
}

fn transcript_json(session: &Session) -> String {
    let mut json = serde_json::to_string_pretty(&session.transcript).expect("transcripts serialize");
    json.push('\n');
    json
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

fn attach_image(media: &MediaStore, path: &str) -> Result<MessagePart, Failure> {
    if path.is_empty() {
        return Err(Failure::new(1, "usage: /draw <image path>"));
    }
    let path = Path::new(path);
    let bytes = fail1!(fs::read(path).map_err(|e| format!("{}: {e}", path.display())))?;
    let mime = mime_for(path);
    let id = fail1!(media.put(&bytes, mime))?;
    Ok(MessagePart::image(id, mime))
}

fn render_part(out: &mut impl Write, part: &MessagePart, media: &MediaStore) {
    match part.kind {
        PartKind::Text => {
            for line in part.text.as_deref().unwrap_or("").lines() {
                let _ = writeln!(out, "  {line}");
            }
        }
        _ => {
            if let Some(id) = &part.media_id {
                let _ = writeln!(out, "  image {id} ({})", media.path_of(id).display());
            }
        }
    }
}

fn render(out: &mut impl Write, directives: &[Directive], media: &MediaStore) {
    for d in directives {
        match d {
            Directive::DisplayText { text } => {
                let _ = writeln!(out, "{text}");
            }
            Directive::ShowHint { hint_id, parts } => {
                let _ = writeln!(out, "[HINT {hint_id}]");
                for p in parts {
                    render_part(out, p, media);
                }
            }
            Directive::ShowCanvas { kind } => {
                let _ = writeln!(out, "[DRAW requested: {kind}; supply an image path with /draw <path>]");
            }
            Directive::ShowRating { score } => {
                let _ = writeln!(out, "[RATING {score}]");
            }
            Directive::EndSession { outcome } => {
                let _ = match outcome {
                    Some(o) => writeln!(out, "[SESSION ENDED: {o}]"),
                    None => writeln!(out, "[SESSION ENDED]"),
                };
            }
        }
    }
}

fn replay_logs(logs: &[PathBuf]) -> Result<(), Failure> {
    for path in logs {
        let events = fail1!(read_events(path).map_err(|e| format!("{}: {e}", path.display())))?;
        match replay(&events) {
            Ok(session) => println!(
                "{}: ok, {} operations, state {}",
                path.display(),
                events.len(),
                session.state
            ),
            Err(e) => return Err(Failure::new(1, format!("{}: {e}", path.display()))),
        }
    }
    Ok(())
}

fn export(data_dir: &Path, session_id: &str, format: Format) -> Result<(), Failure> {
    let data = fail1!(DataDir::open(data_dir))?;
    let session = data.sessions.load(session_id)?;
    match format {
        Format::Json => print!("{}", transcript_json(&session)),
    }
    Ok(())
}

fn seed_lifelog(data_dir: &Path, dir: &Path, clock_start: Option<DateTime<Utc>>) -> Result<(), Failure> {
    let data = fail1!(DataDir::open(data_dir))?;
    let count = fail1!(seed::seed_dir(&data, dir, clock(clock_start).now()))?;
    println!("{count}");
    Ok(())
}

fn list_groups(data_dir: &Path) -> Result<(), Failure> {
    let data = fail1!(DataDir::open(data_dir))?;
    let registry = fail1!(data.registry())?;
    for g in registry.list_groups() {
        println!(
            "{}\t{}\t{}\thints {}",
            g.group_id,
            g.display_name,
            serde_json::to_value(g.data_source).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
            g.hint_budget
        );
    }
    Ok(())
}
