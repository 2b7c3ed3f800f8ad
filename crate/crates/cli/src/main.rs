use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use blendsonic::api::{serve, ServeError};
use blendsonic::engine::{
    load_config, load_script, probe_devices, render_offline, ClockKind, DeviceKind, Engine, EngineError, Mode,
    RunOptions, SessionConfig, TrajectoryScript,
};

#[derive(Parser)]
#[command(name = "blendsonic", version, about = "Robot blended-sonification engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the engine in real time with OSC I/O and the control API.
    Run(RunArgs),
    /// Render a session offline to a float32 WAV.
    Render(RenderArgs),
    /// Check a config file and report every invalid field.
    Validate(SessionArgs),
    /// List available output devices.
    Probe,
}

#[derive(Args)]
struct SessionArgs {
    /// Session config (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Trajectory script (TOML).
    #[arg(long)]
    script: Option<PathBuf>,
    /// Stop after this many seconds; runs until killed otherwise.
    #[arg(long)]
    duration: Option<f64>,
    /// Capture the output to this WAV file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// UDP port for inbound OSC.
    #[arg(long)]
    osc_in: Option<u16>,
    /// Pose egress target: a port on the configured host, or host:port.
    #[arg(long)]
    osc_out: Option<String>,
    /// WebSocket control API port; 0 picks a free port.
    #[arg(long)]
    api_port: Option<u16>,
    /// Disable the control API.
    #[arg(long)]
    no_api: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long)]
    script: Option<PathBuf>,
    /// Seconds of audio to render.
    #[arg(long)]
    duration: f64,
    /// Output WAV path.
    #[arg(long)]
    out: PathBuf,
}

fn load_session(args: &SessionArgs) -> Result<SessionConfig> {
    let mut config = match &args.config {
        Some(path) => load_config(path).map_err(|e| describe(path, e))?,
        None => SessionConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn describe(path: &Path, e: EngineError) -> anyhow::Error {
    match e {
        EngineError::ConfigInvalid(errors) => {
            let lines: Vec<String> = errors.iter().map(|f| format!("  {f}")).collect();
            anyhow::anyhow!("{}: invalid config\n{}", path.display(), lines.join("\n"))
        }
        other => anyhow::anyhow!("{}: {other}", path.display()),
    }
}

fn load_session_script(path: Option<&Path>) -> Result<TrajectoryScript> {
    match path {
        Some(p) => load_script(p).map_err(|e| describe(p, e)),
        None => Ok(TrajectoryScript::default()),
    }
}

fn egress_target(arg: &str, host: &str) -> String {
    match arg.parse::<u16>() {
        Ok(port) => format!("{host}:{port}"),
        Err(_) => arg.to_string(),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let config = load_session(&args.session)?;
    let script = load_session_script(args.script.as_deref())?;
    let clock = match config.mode {
        Mode::Realtime => ClockKind::Wall,
        Mode::Offline => ClockKind::Fake,
    };
    let device = match &args.out {
        Some(path) => DeviceKind::WavFile(path.clone()),
        None => DeviceKind::Null,
    };
    let osc_out = args
        .osc_out
        .as_deref()
        .map(|a| egress_target(a, &config.osc.out_host))
        .unwrap_or_else(|| format!("{}:{}", config.osc.out_host, config.osc.out_port));
    let options = RunOptions {
        clock,
        device,
        duration: args.duration,
        osc_in: Some(args.osc_in.unwrap_or(config.osc.in_port)),
        osc_out: Some(osc_out),
    };
    let engine = Engine::start(&config, &script, options)?;
    let server = if args.no_api {
        None
    } else {
        let port = args.api_port.unwrap_or(config.api.port);
        match serve(engine.client(), port) {
            Ok(s) => {
                info!("control API on ws://127.0.0.1:{}", s.port());
                eprintln!("control API listening on ws://127.0.0.1:{}", s.port());
                Some(s)
            }
            Err(ServeError::PortInUse(p)) => {
                engine.stop();
                bail!("control API port {p} is already in use");
            }
            Err(e) => {
                engine.stop();
                return Err(e.into());
            }
        }
    };
    let output = engine.wait()?;
    if let Some(s) = server {
        s.shutdown();
    }
    eprintln!(
        "{} ticks, {} blocks, {} unknown / {} malformed OSC messages",
        output.ticks, output.blocks, output.stats.unknown, output.stats.malformed
    );
    Ok(())
}

fn render(args: RenderArgs) -> Result<()> {
    let config = load_session(&args.session)?;
    let script = load_session_script(args.script.as_deref())?;
    let bytes = render_offline(&config, &script, args.duration)?;
    std::fs::write(&args.out, &bytes).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "wrote {} ({} channels, {} Hz, {} s)",
        args.out.display(),
        config.channel_count(),
        config.sample_rate,
        args.duration
    );
    Ok(())
}

fn validate(args: SessionArgs) -> Result<()> {
    let config = load_session(&args)?;
    println!(
        "ok: {} Hz, block {}, control {} Hz, {} channels, {} nodes, {} routes",
        config.sample_rate,
        config.block_size,
        config.control_rate,
        config.channel_count(),
        config.graph.nodes.len(),
        config.mapping.routes.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Render(a) => render(a),
        Command::Validate(a) => validate(a),
        Command::Probe => {
            for (name, description) in probe_devices() {
                println!("{name:<12} {description}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
