//! Command implementations behind the `reasonweave` binary.

use async_trait::async_trait;
use clap::{Args, Parser, Subcommand};
use futures::stream::BoxStream;
use reasonweave_core::engine::{Engine, EngineError};
use reasonweave_core::providers::{OperatorProvider, ProviderError, ProviderSet};
use reasonweave_core::script::Command;
use reasonweave_core::session::{Session, SessionId};
use reasonweave_service::{AppConfig, AppState, BuildError};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

#[derive(Debug, Parser)]
#[command(name = "reasonweave", version, about = "Structure, steer and replay reasoning chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Structure a recorded chain of thought into a tree.
    Structure(StructureArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Replay an edit script against a stored session and print the event
    /// log digest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct StructureArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Serve every model call from this fixture file.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `server.port`.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub script: PathBuf,
    /// Defaults to `fixtures.json` beside the session file.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the final session document here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print every event as a JSON line.
    #[arg(long)]
    pub verbose: bool,
}

/// Failures, by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Drift(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Drift(_) => 3,
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    match path {
        Some(p) => AppConfig::load(p).map_err(|e| CliError::Usage(e.to_string())),
        None => Ok(AppConfig::default()),
    }
}

fn engine_error(step: Option<(usize, &Command)>, e: EngineError) -> CliError {
    let at = step.map(|(i, c)| format!("step {} ({}): ", i + 1, c.name())).unwrap_or_default();
    match e {
        EngineError::Fixture(f) => CliError::Drift(format!(
            "{at}fixture drift in template `{}`: {f}",
            f.template_id()
        )),
        other => CliError::Runtime(format!("{at}{other}")),
    }
}

/// Counts operator calls that failed, since operators absorb failures
/// into fallbacks.
pub struct FailureCounter {
    inner: Arc<dyn OperatorProvider>,
    failures: AtomicUsize,
}

impl FailureCounter {
    pub fn new(inner: Arc<dyn OperatorProvider>) -> Self {
        FailureCounter {
            inner,
            failures: AtomicUsize::new(0),
        }
    }

    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::SeqCst)
    }

    fn note<T>(&self, r: &Result<T, ProviderError>) {
        if let Err(e) = r {
            if !e.is_fixture_drift() {
                self.failures.fetch_add(1, Ordering::SeqCst);
            }
        }
    }
}

#[async_trait]
impl OperatorProvider for FailureCounter {
    async fn complete(&self, template_id: &str, prompt: &str) -> Result<String, ProviderError> {
        let r = self.inner.complete(template_id, prompt).await;
        self.note(&r);
        r
    }

    async fn complete_stream(
        &self,
        template_id: &str,
        prompt: &str,
    ) -> Result<BoxStream<'static, Result<String, ProviderError>>, ProviderError> {
        let r = self.inner.complete_stream(template_id, prompt).await;
        self.note(&r);
        r
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value).expect("serializes") + "\n";
    std::fs::write(path, body).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

pub async fn structure(args: &StructureArgs) -> Result<(), CliError> {
    let chain = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::Usage(format!("reading {}: {e}", args.input.display())))?;
    let cfg = load_config(args.config.as_deref())?;
    let providers = reasonweave_service::build_providers(&cfg, args.fixtures.as_deref())?;
    let counter = Arc::new(FailureCounter::new(providers.operator.clone()));
    let providers = ProviderSet {
        operator: counter.clone(),
        ..providers
    };
    let catalog = reasonweave_service::build_catalog(&cfg)?;
    let engine = Engine::new(providers, Arc::new(catalog), cfg.engine.clone());
    let mut s = Session::new(SessionId::generate(), args.query.clone());
    let res = engine.start_from_chain(&mut s, chain.trim()).await;
    for d in &s.diagnostics {
        eprintln!("warning: {d:?}");
    }
    match res {
        Err(EngineError::Fixture(f)) => Err(engine_error(None, EngineError::Fixture(f))),
        Err(e) => {
            write_json(&args.out, &s.staged_tree())?;
            Err(CliError::Runtime(format!("structuring failed, partial tree written: {e}")))
        }
        Ok(()) => {
            write_json(&args.out, &s.staged_tree())?;
            match counter.failures() {
                0 => Ok(()),
                n => Err(CliError::Runtime(format!(
                    "warning: {n} model call(s) failed; the tree was written using fallbacks"
                ))),
            }
        }
    }
}

/// Replays `args.script`, returning the final event-log digest.
pub async fn replay(args: &ReplayArgs, out: &mut dyn Write) -> Result<String, CliError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("reading {}: {e}", p.display())));
    let mut s: Session = serde_json::from_str(&read(&args.session)?)
        .map_err(|e| CliError::Usage(format!("parsing {}: {e}", args.session.display())))?;
    let script: Vec<Command> = serde_json::from_str(&read(&args.script)?)
        .map_err(|e| CliError::Usage(format!("parsing {}: {e}", args.script.display())))?;
    let fixtures = args.fixtures.clone().unwrap_or_else(|| {
        args.session.parent().unwrap_or(Path::new(".")).join("fixtures.json")
    });
    let cfg = load_config(args.config.as_deref())?;
    let engine = reasonweave_service::build_engine(&cfg, Some(&fixtures), false)?;
    let print = |out: &mut dyn Write, s: &Session, from: usize| -> Result<(), CliError> {
        for e in &s.event_log[from..] {
            writeln!(out, "{}", serde_json::to_string(e).expect("serializes"))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        Ok(())
    };
    let mut shown = s.event_log.len();
    for (i, cmd) in script.iter().enumerate() {
        let res = engine.apply(&mut s, cmd).await;
        if args.verbose {
            print(out, &s, shown)?;
            shown = s.event_log.len();
        }
        if let Err(e) = res {
            if let Some(p) = &args.out {
                write_json(p, &s)?;
            }
            return Err(engine_error(Some((i, cmd)), e));
        }
    }
    if let Some(p) = &args.out {
        write_json(p, &s)?;
    }
    let digest = s.log_digest();
    if args.verbose {
        writeln!(out, "{}", serde_json::json!({ "digest": digest }))
    } else {
        writeln!(out, "{digest}")
    }
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(digest)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => futures::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = futures::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

pub async fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let mut cfg = load_config(Some(&args.config))?;
    if let Some(port) = args.port {
        cfg.server.port = port;
    }
    let token = cfg.api_token().map_err(|e| CliError::Usage(e.to_string()))?;
    let engine = reasonweave_service::build_engine(&cfg, args.fixtures.as_deref(), true)?;
    let state = AppState::new(engine, token).with_timing(
        std::time::Duration::from_secs(cfg.server.idle_ttl_secs),
        std::time::Duration::from_millis(cfg.server.step_delay_ms),
    );
    let addr = format!("{}:{}", cfg.server.bind, cfg.server.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| CliError::Usage(format!("cannot listen on port {}: {e}", cfg.server.port)))?;
    let local = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
    {
        let mut stdout = std::io::stdout().lock();
        let _ = writeln!(stdout, "listening on {local}");
        let _ = stdout.flush();
    }
    reasonweave_service::serve(listener, state, cfg.server.cors_origin.clone(), shutdown_signal())
        .await
        .map_err(|e| CliError::Runtime(format!("server error: {e}")))?;
    eprintln!("sessions flushed to {}", cfg.server.session_dir.display());
    Ok(())
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::Structure(a) => structure(&a).await,
        Cmd::Serve(a) => serve(&a).await,
        Cmd::Replay(a) => replay(&a, &mut std::io::stdout().lock()).await.map(|_| ()),
    }
}
