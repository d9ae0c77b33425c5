mod extract;
mod files;
mod prompts;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ColorChoice, CommandFactory, Parser, Subcommand};

/// Stable exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const PARTIAL: u8 = 2;
    pub const USAGE: u8 = 64;
    pub const DATA: u8 = 65;
    pub const CONFIG: u8 = 78;
}

#[derive(Debug, Parser)]
#[command(
    name = "abm-extract",
    version,
    about = "Extract agent-based model specifications from conceptual model documents"
)]
pub struct Cli {
    /// Operator configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run directory for extraction artifacts.
    #[arg(long, global = true, value_name = "PATH", default_value = "run")]
    pub run_dir: PathBuf,
    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Directory of prompt overrides (`P1.txt`..`P9.txt`, `instruction.txt`).
    #[arg(long, global = true, value_name = "DIR")]
    pub prompt_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the extraction pipeline over a document.
    Extract(extract::ExtractArgs),
    /// Validate and lint a specification file.
    Validate {
        /// Path to a `.abmspec.json` file.
        spec: PathBuf,
    },
    /// Write the execution schedule and pseudocode skeleton of a specification.
    Scaffold {
        spec: PathBuf,
        /// Skeleton file, or a directory to write `skeleton.txt` into.
        out: PathBuf,
    },
    /// Inspect the prompt catalog.
    #[command(subcommand)]
    Prompts(prompts::PromptsCommand),
}

/// A command failure carrying its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    pub show_usage: bool,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
            show_usage: false,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            show_usage: true,
            ..Failure::new(exit::USAGE, message)
        }
    }
}

fn no_color() -> bool {
    std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty())
}

fn init_logging(quiet: bool) {
    let default = if quiet { "error" } else { "warn" };
    let mut builder =
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default));
    if no_color() {
        builder.write_style(env_logger::WriteStyle::Never);
    }
    let _ = builder.format_timestamp(None).try_init();
}

fn main() -> ExitCode {
    let color = if no_color() {
        ColorChoice::Never
    } else {
        ColorChoice::Auto
    };
    let matches = Cli::command().color(color).try_get_matches();
    let cli = match matches.and_then(|m| <Cli as clap::FromArgMatches>::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            });
        }
    };
    init_logging(cli.quiet);

    let result = match &cli.command {
        Command::Extract(args) => extract::run(&cli, args),
        Command::Validate { spec } => files::validate(spec),
        Command::Scaffold { spec, out } => files::scaffold(spec, out),
        Command::Prompts(cmd) => prompts::run(&cli, cmd),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            let mut stderr = std::io::stderr().lock();
            let _ = writeln!(stderr, "error: {}", failure.message);
            if failure.show_usage {
                let _ = writeln!(stderr, "\n{}", Cli::command().color(color).render_usage());
            }
            ExitCode::from(failure.code)
        }
    }
}
