//! `openloop run --config <path> [--runs N] [--interactive] [--serve]
//! [--port P] [--workspace DIR] [--dry-run]`

use std::ffi::OsString;
use std::io::{self, BufReader};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::AgentConfig;
use crate::orchestrator::{preview_system_prompt, Agent, AgentError, InputSource};
use crate::service::serve;

#[derive(Debug, Parser)]
#[command(name = "openloop", version, about = "Run an open-ended agent loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start the agent loop.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Stop after this many runs.
    #[arg(long)]
    runs: Option<u64>,
    /// Read one prompt per run from standard input.
    #[arg(long, conflicts_with = "dry_run")]
    interactive: bool,
    /// Serve the HTTP API and event stream while the loop runs.
    #[arg(long, conflicts_with = "dry_run")]
    serve: bool,
    /// Service port, overriding the config.
    #[arg(long)]
    port: Option<u16>,
    /// Workspace directory, overriding the config.
    #[arg(long)]
    workspace: Option<PathBuf>,
    /// Validate the config and print the system prompt; no model call.
    #[arg(long)]
    dry_run: bool,
}

const EXIT_OK: i32 = 0;
const EXIT_RUNTIME: i32 = 1;
const EXIT_USAGE: i32 = 2;

/// Entry point behind the binary. Returns the process exit code: 2 for
/// flag or config errors, 1 for runtime failures, 0 otherwise.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let Command::Run(args) = cli.command;
    let mut config = match AgentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("openloop: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(ws) = args.workspace {
        config.workspace_root = ws;
    }
    if let Some(runs) = args.runs {
        config.run_loop.max_runs = Some(runs);
    }
    if let Some(port) = args.port {
        config.service.port = port;
    }
    if let Err(e) = config.validate() {
        eprintln!("openloop: {}: {e}", args.config.display());
        return EXIT_USAGE;
    }

    if args.dry_run {
        return match preview_system_prompt(&config) {
            Ok(prompt) => {
                println!("{prompt}");
                EXIT_OK
            }
            Err(e) => {
                eprintln!("openloop: {e}");
                EXIT_USAGE
            }
        };
    }

    let mut agent = match Agent::from_config(config) {
        Ok(a) => a,
        Err(e @ (AgentError::Config(_) | AgentError::Script { .. })) => {
            eprintln!("openloop: {}: {e}", args.config.display());
            return EXIT_USAGE;
        }
        Err(e) => {
            eprintln!("openloop: {e}");
            return EXIT_RUNTIME;
        }
    };

    let svc = &agent.config().service;
    let server = if args.serve {
        let ip: IpAddr = match svc.bind.parse() {
            Ok(ip) => ip,
            Err(_) => {
                eprintln!("openloop: invalid service.bind address {:?}", svc.bind);
                return EXIT_USAGE;
            }
        };
        match serve(agent.handle(), SocketAddr::new(ip, svc.port), svc.static_dir.clone()) {
            Ok(s) => {
                eprintln!("openloop: serving on http://{}", s.addr());
                Some(s)
            }
            Err(e) => {
                eprintln!("openloop: {e}");
                return EXIT_RUNTIME;
            }
        }
    } else {
        None
    };

    let queries = agent.config().run_loop.queries.clone();
    let input = if args.interactive {
        InputSource::Interactive(Box::new(BufReader::new(io::stdin())))
    } else if args.serve && queries.is_empty() {
        InputSource::Service
    } else {
        InputSource::Batch(queries)
    };
    let exit = agent.run(input);
    println!("{}", serde_json::to_string(&exit).expect("summary serializes"));
    if let Some(s) = server {
        s.shutdown();
    }
    EXIT_OK
}
