mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use kgmatch_core::generation::ReplayMode;
use kgmatch_core::{ItemKind, MatchQuestion, Strategy, TopN};

use commands::Outcome;
use config::{Loaded, SchemeSetting};

/// Knowledge-graph retrieval for LLM schema matching.
#[derive(Parser, Debug)]
#[command(name = "kgmatch", version)]
struct Cli {
    /// TOML configuration file; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// triple_vec | entity_vec_bfs | entity_llm_bfs | subgraph_llm
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
    /// Paths or triples kept after ranking: a count or `all`.
    #[arg(long, global = true)]
    top: Option<TopN>,
    /// auto | frequency | normalized | similarity
    #[arg(long, global = true)]
    scheme: Option<SchemeSetting>,
    /// record | replay | live
    #[arg(long, global = true)]
    replay: Option<ReplayMode>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for `retrieve` and `eval`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress (-v) or everything (-vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load the knowledge graph dumps and print store statistics.
    Ingest,
    /// Embed entities, relations and triples (resumable).
    Embed {
        /// Restrict to some kinds: entity, relation, triple.
        #[arg(long, value_parser = parse_kind)]
        only: Vec<ItemKind>,
    },
    /// Build vector indexes over the embedding collections.
    Index,
    /// Run the configured retrieval strategy over the dataset.
    Retrieve,
    /// Decide whether two attributes match.
    Match {
        /// Source attribute, e.g. `patients-dod`.
        #[arg(long)]
        q1: String,
        /// Target attribute, e.g. `person-birth_datetime`.
        #[arg(long)]
        q2: String,
        #[arg(long, default_value = "")]
        d1: String,
        #[arg(long, default_value = "")]
        d2: String,
        /// Print the full record as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Answer every dataset question and write the report.
    Eval,
}

fn parse_kind(s: &str) -> Result<ItemKind, String> {
    match s {
        "entity" => Ok(ItemKind::Entity),
        "relation" => Ok(ItemKind::Relation),
        "triple" => Ok(ItemKind::Triple),
        other => Err(format!("unknown kind `{other}` (expected entity|relation|triple)")),
    }
}

/// Loads the configuration and applies flag overrides; flags win.
fn configure(cli: &Cli) -> Result<Loaded> {
    let mut loaded = Loaded::read(cli.config.as_deref())?;
    let c = &mut loaded.config;
    if let Some(s) = cli.strategy {
        c.strategy = s;
    }
    if let Some(t) = cli.top {
        c.ranking.top = t;
    }
    if let Some(s) = cli.scheme {
        c.ranking.scheme = s;
    }
    if let Some(r) = cli.replay {
        c.replay = r;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(out) = &cli.out {
        c.paths.out = std::path::absolute(out)?;
    }
    loaded.validate()?;
    Ok(loaded)
}

fn run(cli: Cli) -> Result<Outcome> {
    let loaded = configure(&cli)?;
    match cli.command {
        Command::Ingest => commands::ingest(&loaded),
        Command::Embed { only } => commands::embed(&loaded, &only),
        Command::Index => commands::index(&loaded),
        Command::Retrieve => commands::retrieve(&loaded),
        Command::Match { q1, q2, d1, d2, json } => {
            let question = MatchQuestion::new("match", q1, q2, d1, d2);
            commands::match_one(&loaded, question, json)
        }
        Command::Eval => commands::eval(&loaded),
    }
}

fn main() -> ExitCode {
    let help = format!(
        "Configuration keys and their defaults (TOML; every key is optional):\n\n{}\nAPI keys are read only from the environment variables named by llm.api_key_env and embedding.http.api_key_env.",
        config::DEFAULT_CONFIG
    );
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::SomeFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
