//! `curlcurl` binary.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use curlcurl::parallel;
use curlcurl_cli::{parse_config, run, CliError, Command};

/// Spectral experiments for the penalized curl-curl operator.
#[derive(Debug, Parser)]
#[command(name = "curlcurl", version)]
struct Args {
    /// One of: mesh, solve, cube-bench, sweep, piola-verify, mazya, check-atlas.
    /// Defaults to the `command` key of the config.
    command: Option<String>,
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, value_name = "N", env = "CURLCURL_THREADS")]
    threads: Option<usize>,
    /// Debug-level logging.
    #[arg(long)]
    verbose: bool,
}

fn usage_error(cmd: &mut clap::Command, message: String) -> ExitCode {
    eprintln!("error: {message}\n\n{}", cmd.render_usage());
    ExitCode::from(CliError::CONFIG_EXIT as u8)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CliError::CONFIG_EXIT as u8 } else { 0 });
        }
    };
    let level = if args.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut clap_cmd = <Args as clap::CommandFactory>::command();
    let cli_command = match args.command.as_deref().map(str::parse::<Command>).transpose() {
        Ok(c) => c,
        Err(message) => return usage_error(&mut clap_cmd, message),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return usage_error(&mut clap_cmd, "--threads must be positive".into());
        }
        parallel::set_threads(n);
    }
    let mut cfg = match parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match (cli_command, cfg.command) {
        (Some(a), Some(b)) if a != b => {
            return usage_error(
                &mut clap_cmd,
                format!("command '{a}' differs from '{b}' in {}", args.config.display()),
            )
        }
        (None, None) => return usage_error(&mut clap_cmd, "no command given".into()),
        (Some(a), _) => cfg.command = Some(a),
        (None, Some(_)) => {}
    }
    if let Some(out) = args.out {
        cfg.out = Some(out);
    }
    match run(&cfg) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
