use std::io::{self, Write};

use abm_extract::prompts::{Bindings, Catalog, PromptError, PromptId};
use abm_extract::Config;
use clap::Subcommand;

use crate::{exit, Cli, Failure};

const INSTRUCTION_ID: &str = "instruction";

#[derive(Debug, Subcommand)]
pub enum PromptsCommand {
    /// List prompt ids, themes and placeholders.
    List,
    /// Print a template body verbatim (`P1`..`P9` or `instruction`).
    Show { id: String },
    /// Print a template with its placeholders bound.
    Render {
        id: String,
        /// Placeholder binding, e.g. `--bind VAR=pcolor`.
        #[arg(long = "bind", value_name = "KEY=VALUE")]
        bindings: Vec<String>,
    },
}

/// The built-in catalog, or one with overrides from `--prompt-dir` or the
/// config file.
pub fn load_catalog(cli: &Cli, config: Option<&Config>) -> Result<Catalog, Failure> {
    let dir = cli
        .prompt_dir
        .clone()
        .or_else(|| config.and_then(|c| c.paths.prompt_override_dir.clone()));
    match dir {
        Some(dir) => {
            Catalog::with_override_dir(&dir).map_err(|e| Failure::new(exit::CONFIG, e.to_string()))
        }
        None => Ok(Catalog::builtin()),
    }
}

fn parse_id(id: &str) -> Result<PromptId, Failure> {
    id.parse::<PromptId>().map_err(|_| {
        Failure::usage(format!(
            "unknown prompt id `{id}` (expected P1..P9 or {INSTRUCTION_ID})"
        ))
    })
}

pub fn run(cli: &Cli, cmd: &PromptsCommand) -> Result<u8, Failure> {
    let config = match &cli.config {
        Some(path) => {
            Some(Config::load(path).map_err(|e| Failure::new(exit::CONFIG, e.to_string()))?)
        }
        None => None,
    };
    let catalog = load_catalog(cli, config.as_ref())?;
    let mut out = io::stdout().lock();
    let written = match cmd {
        PromptsCommand::List => {
            let mut text = String::new();
            for t in catalog.templates() {
                let placeholders: Vec<&str> = t.placeholders.iter().map(String::as_str).collect();
                let placeholders = if placeholders.is_empty() {
                    "-".to_string()
                } else {
                    placeholders.join(",")
                };
                text.push_str(&format!("{}\t{}\t{}\n", t.id, t.theme, placeholders));
            }
            out.write_all(text.as_bytes())
        }
        PromptsCommand::Show { id } if id.eq_ignore_ascii_case(INSTRUCTION_ID) => {
            out.write_all(catalog.instruction().text.as_bytes())
        }
        PromptsCommand::Show { id } => {
            let id = parse_id(id)?;
            out.write_all(catalog.template(id).body.as_bytes())
        }
        PromptsCommand::Render { id, bindings } => {
            let id = parse_id(id)?;
            let mut map = Bindings::new();
            for b in bindings {
                let (k, v) = b
                    .split_once('=')
                    .ok_or_else(|| Failure::usage(format!("binding `{b}` is not KEY=VALUE")))?;
                map.insert(k.trim().to_string(), v.to_string());
            }
            let text = catalog
                .render(id, &map)
                .map_err(|e: PromptError| Failure::usage(e.to_string()))?;
            out.write_all(text.as_bytes())
        }
    };
    match written.and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
            return Err(Failure::new(
                exit::FAILURE,
                format!("writing to stdout: {e}"),
            ));
        }
        _ => {}
    }
    Ok(exit::OK)
}
