use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use cocreate::api::{AppState, ServerOptions};
use cocreate::comms::{GeneratorBackend, HttpBackendConfig};
use cocreate::config::FileConfig;
use cocreate::oracle::{run_experiment, OraclePolicy};
use cocreate::replay::{parse_log, replay};

const EXIT_USAGE: u8 = 2;
const EXIT_CORRUPT: u8 = 3;

#[derive(Parser)]
#[command(name = "cocreate", version, about = "Co-creative story writing with a bandit-driven agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulated-user bandit experiment.
    Experiment(ExperimentArgs),
    /// Start the session API server.
    Serve(ServeArgs),
    /// Rebuild a session from its JSONL log and print a report.
    Replay {
        log: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated, e.g. `thompson,ucb1,epsilon_greedy:0.2`.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    accuracies: Option<Vec<f64>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    liked_arm: Option<usize>,
    /// Output directory for `oracle.csv` and `oracle_plot.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// `mock` or `http`.
    #[arg(long)]
    generator_backend: Option<String>,
    #[arg(long)]
    generator_endpoint: Option<String>,
    #[arg(long)]
    generator_model: Option<String>,
    #[arg(long)]
    generator_timeout_ms: Option<u64>,
    /// Name of the environment variable holding the bearer token.
    #[arg(long)]
    generator_token_env: Option<String>,
    /// Allow `?debug=true` views.
    #[arg(long)]
    debug: bool,
}

fn usage_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, ExitCode> {
    match path {
        Some(p) => FileConfig::load(p).map_err(usage_error),
        None => Ok(FileConfig::default()),
    }
}

fn experiment(args: ExperimentArgs) -> ExitCode {
    let file = match load_config(args.config.as_deref()) {
        Ok(f) => f,
        Err(code) => return code,
    };
    let mut cfg = match file.experiment.to_oracle_config() {
        Ok(c) => c,
        Err(e) => return usage_error(e),
    };
    if let Some(p) = args.policies {
        match p.iter().map(|s| s.trim().parse::<OraclePolicy>()).collect() {
            Ok(v) => cfg.policies = v,
            Err(e) => return usage_error(e),
        }
    }
    if let Some(a) = args.accuracies {
        cfg.accuracies = a;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.repetitions {
        cfg.repetitions = v;
    }
    if let Some(v) = args.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = args.liked_arm {
        cfg.liked_arm = v;
    }
    if let Err(e) = cfg.validate() {
        return usage_error(e);
    }
    let out = args
        .out
        .or(file.experiment.out)
        .unwrap_or_else(|| PathBuf::from("results"));

    let started = std::time::Instant::now();
    let table = match run_experiment(&cfg) {
        Ok(t) => t,
        Err(e) => return usage_error(e),
    };
    tracing::info!(elapsed_ms = started.elapsed().as_millis() as u64, "experiment done");

    let write = || -> std::io::Result<()> {
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("oracle.csv"), table.to_csv())?;
        std::fs::write(out.join("oracle_plot.json"), table.to_plot_json())
    };
    if let Err(e) = write() {
        eprintln!("error: cannot write results to {}: {e}", out.display());
        return ExitCode::FAILURE;
    }
    print!("{}", table.render());
    println!("wrote {}", out.join("oracle.csv").display());
    ExitCode::SUCCESS
}

fn generator_from(args: &ServeArgs, file: GeneratorBackend) -> Result<GeneratorBackend, String> {
    let http_flags = args.generator_endpoint.is_some()
        || args.generator_model.is_some()
        || args.generator_timeout_ms.is_some()
        || args.generator_token_env.is_some();
    let mut backend = match args.generator_backend.as_deref() {
        None => file,
        Some("mock") => match file {
            m @ GeneratorBackend::Mock { .. } => m,
            _ => GeneratorBackend::default(),
        },
        Some("http") => match file {
            h @ GeneratorBackend::Http(_) => h,
            _ => {
                let endpoint = args
                    .generator_endpoint
                    .clone()
                    .ok_or("--generator-backend http needs --generator-endpoint")?;
                GeneratorBackend::Http(HttpBackendConfig::new(endpoint))
            }
        },
        Some(other) => return Err(format!("unknown generator backend {other:?}")),
    };
    match &mut backend {
        GeneratorBackend::Http(h) => {
            if let Some(v) = &args.generator_endpoint {
                h.endpoint = v.clone();
            }
            if let Some(v) = &args.generator_model {
                h.model = Some(v.clone());
            }
            if let Some(v) = args.generator_timeout_ms {
                h.timeout_ms = v;
            }
            if let Some(v) = &args.generator_token_env {
                h.auth_token_env = Some(v.clone());
            }
        }
        GeneratorBackend::Mock { .. } if http_flags => {
            return Err("generator flags given but the backend is mock".into())
        }
        GeneratorBackend::Mock { .. } => {}
    }
    Ok(backend)
}

fn serve(args: ServeArgs) -> ExitCode {
    let file = match load_config(args.config.as_deref()) {
        Ok(f) => f,
        Err(code) => return code,
    };
    let generator = match generator_from(&args, file.generator) {
        Ok(g) => g,
        Err(e) => return usage_error(e),
    };
    let options = ServerOptions {
        data_dir: args.data_dir.or(file.server.data_dir),
        generator,
        allow_debug: args.debug || file.server.debug,
        ..ServerOptions::default()
    };
    let state = match AppState::new(options) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot prepare data directory: {e}");
            return ExitCode::FAILURE;
        }
    };
    let addr = SocketAddr::from(([127, 0, 0, 1], args.port.unwrap_or(file.server.port)));
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match rt.block_on(cocreate::api::serve(addr, state)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn replay_cmd(path: &Path) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return usage_error(format!("cannot read {}: {e}", path.display())),
    };
    let parsed = match parse_log(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: corrupt log: {e}");
            return ExitCode::from(EXIT_CORRUPT);
        }
    };
    if parsed.truncated {
        eprintln!("warning: last line is incomplete and was ignored");
    }
    match replay(&parsed.records) {
        Ok(session) => {
            print!("{}", session.report());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: corrupt log: {e}");
            ExitCode::from(EXIT_CORRUPT)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Experiment(a) => experiment(a),
        Command::Serve(a) => serve(a),
        Command::Replay { log } => replay_cmd(&log),
    }
}
