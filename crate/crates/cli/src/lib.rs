//! Command-line driver for somekone sessions: serve a live classroom
//! session, run headless simulations, replay logs and export snapshots.

pub mod outputs;
pub mod persona;
pub mod simulate;

use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::rngs::StdRng;
use rand::SeedableRng;
use somekone_core::catalog::CatalogError;
use somekone_core::config::ConfigError;
use somekone_core::persistence::{
    export, first_difference, recover_log, replay, FileSink, PersistenceError, EXPORT_EXTENSION, LOG_EXTENSION,
};
use somekone_core::{fixture_catalog, Catalog, Session, SessionConfig, SessionError};
use somekone_server::Hub;
use thiserror::Error;

use persona::{PersonaError, PersonaFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("server stopped: {0}")]
    Serve(io::Error),
    #[error("agent {agent} was refused: {message}")]
    Rejected { agent: String, message: String },
    #[error("replayed export differs from {golden} at {path}")]
    Mismatch { golden: PathBuf, path: String },
}

impl CliError {
    /// 2 for bad invocations and unusable inputs, 1 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Read { .. }
            | CliError::Config(_)
            | CliError::Catalog(_)
            | CliError::Persona(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "somekone", version, about = "Classroom social-media simulation engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a live session hub.
    Serve(ServeArgs),
    /// Run scripted agents against an in-process session.
    Simulate(SimulateArgs),
    /// Rebuild a session from its event log and export or verify it.
    Replay(ReplayArgs),
    /// Rebuild a session from its event log and write graph and layout files.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Catalog JSON; the built-in fixture catalog when omitted.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Session config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Catalog JSON.
    #[arg(long)]
    pub catalog: PathBuf,
    /// Session config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 8400)]
    pub port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    pub host: String,
    /// Directory for the durable event log; resumes a log already there.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Static UI directory served over HTTP.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    /// Session id; names the event log.
    #[arg(long, default_value = "classroom")]
    pub session: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Number of scripted agents.
    #[arg(long)]
    pub agents: usize,
    /// Views per agent.
    #[arg(long)]
    pub steps: usize,
    /// Persona JSON file.
    #[arg(long)]
    pub personas: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Event log, `<session>.events.jsonl`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Golden export to compare against byte for byte.
    #[arg(long)]
    pub check: Option<PathBuf>,
    /// Directory for the re-derived export; stdout when omitted and not checking.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Event log, `<session>.events.jsonl`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Serve(args) => serve(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Replay(args) => run_replay(args),
        Command::Export(args) => run_export(args),
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_owned(),
        source,
    })
}

pub fn load_catalog(path: Option<&Path>) -> Result<Catalog, CliError> {
    match path {
        None => Ok(fixture_catalog()),
        Some(path) => {
            let bytes = fs::read(path).map_err(|source| CliError::Read {
                path: path.to_owned(),
                source,
            })?;
            Ok(Catalog::from_slice(&bytes)?)
        }
    }
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<SessionConfig, CliError> {
    let config = match path {
        None => SessionConfig::default(),
        Some(path) => SessionConfig::from_json(&read_text(path)?)?,
    };
    Ok(match seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    })
}

impl EngineArgs {
    fn load(&self) -> Result<(SessionConfig, Catalog), CliError> {
        Ok((
            load_config(self.config.as_deref(), self.seed)?,
            load_catalog(self.catalog.as_deref())?,
        ))
    }
}

/// `dir/<id>.events.jsonl` → `<id>`.
pub fn session_id_of(log: &Path) -> Result<String, CliError> {
    log.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(&format!(".{LOG_EXTENSION}")))
        .filter(|id| !id.is_empty())
        .map(str::to_owned)
        .ok_or_else(|| CliError::Usage(format!("{} is not a <session>.{LOG_EXTENSION} file", log.display())))
}

fn replay_log(engine: &EngineArgs, input: &Path) -> Result<somekone_core::Engine, CliError> {
    let id = session_id_of(input)?;
    if !input.is_file() {
        return Err(CliError::Usage(format!("input log {} does not exist", input.display())));
    }
    let (config, catalog) = engine.load()?;
    let events = recover_log(input)?;
    Ok(replay(config, catalog, &id, events)?)
}

fn run_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let (config, catalog) = args.engine.load()?;
    let personas = PersonaFile::load(&args.personas, &catalog)?;
    let mut session = simulate::simulate(config, catalog, &personas, args.agents, args.steps)?;
    let files = outputs::write_all(&mut session, &args.out)?;
    log::info!(
        "simulated {} agents for {} steps: {} events",
        args.agents,
        args.steps,
        session.watermark()
    );
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn run_replay(args: ReplayArgs) -> Result<(), CliError> {
    let engine = replay_log(&args.engine, &args.input)?;
    let text = export(&engine);
    if let Some(golden) = &args.check {
        let expected = read_text(golden)?;
        if expected != text {
            let path = match serde_json::from_str(&expected) {
                Ok(value) => {
                    let ours = serde_json::from_str(&text).expect("exports are valid JSON");
                    first_difference(&value, &ours).unwrap_or_else(|| "(formatting)".into())
                }
                Err(_) => "(golden is not valid JSON)".into(),
            };
            return Err(CliError::Mismatch {
                golden: golden.clone(),
                path,
            });
        }
        println!("ok: {} matches", golden.display());
    }
    match (&args.out, &args.check) {
        (Some(dir), _) => {
            fs::create_dir_all(dir).map_err(|source| CliError::Write {
                path: dir.clone(),
                source,
            })?;
            let path = dir.join(format!("{}.{EXPORT_EXTENSION}", engine.log().session_id()));
            fs::write(&path, &text).map_err(|source| CliError::Write { path: path.clone(), source })?;
            println!("{}", path.display());
        }
        (None, None) => {
            io::stdout().write_all(text.as_bytes()).map_err(|source| CliError::Write {
                path: "<stdout>".into(),
                source,
            })?;
        }
        (None, Some(_)) => {}
    }
    Ok(())
}

fn run_export(args: ExportArgs) -> Result<(), CliError> {
    let engine = replay_log(&args.engine, &args.input)?;
    let seed = engine.config().seed;
    let mut session = Session::restore(engine, StdRng::seed_from_u64(seed));
    for f in outputs::write_all(&mut session, &args.out)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let config = load_config(args.config.as_deref(), args.seed)?;
    let catalog = load_catalog(Some(&args.catalog))?;
    if !somekone_core::session::valid_nickname(&args.session) {
        return Err(CliError::Usage(format!("invalid session id {:?}", args.session)));
    }
    let session = match &args.data {
        Some(dir) => {
            let (sink, existing) = FileSink::open(dir, &args.session)?;
            if !existing.is_empty() {
                log::info!("resuming {} events from {}", existing.len(), sink.path().display());
            }
            let engine = replay(config, catalog, &args.session, existing)?;
            let mut session = Session::restore(engine, StdRng::from_os_rng());
            session.set_sink(Box::new(sink));
            session
        }
        None => Session::create(config, catalog, args.session.clone())?,
    };
    if args.data.is_none() {
        log::warn!("no --data directory: events are kept in memory only");
    }
    let token = session.admin_token().to_owned();
    let hub = Arc::new(Hub::new(session));

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::Serve)?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|source| CliError::Bind { addr: addr.clone(), source })?;
        let local: SocketAddr = listener.local_addr().map_err(CliError::Serve)?;
        println!("session: {}", args.session);
        println!("join: http://{local}/");
        println!("websocket: ws://{local}/ws");
        println!("admin token: {token}");
        let _ = io::stdout().flush();
        somekone_server::serve(listener, hub, args.assets).await.map_err(CliError::Serve)
    })
}
