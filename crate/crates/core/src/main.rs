use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use papertrace::backend::BackendKind;
use papertrace::config::{ConfigError, ConfigLayer, RunConfig};
use papertrace::pipeline::{build_backend, execute, Command};

const EXIT_PIPELINE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Trace research concepts in a paper to the code that implements them.
#[derive(Parser)]
#[command(name = "papertrace", version)]
struct Cli {
    /// TOML file with defaults for any flag (same kebab-case keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More diagnostics on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every stage and write the full bundle.
    Run(Flags),
    /// Segment the repository into code blocks (blocks.json).
    Segment(Flags),
    /// Summarize every leaf block (chunks.json, nlr.json); needs blocks.json.
    Summarize(Flags),
    /// Extract research concepts from the paper (concepts.json).
    Concepts(Flags),
    /// Map concepts to blocks (tracemap.json); needs blocks, nlr and concepts.
    Map(Flags),
    /// Compute metrics and render report.md from the other artifacts.
    Report(Flags),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Lexical,
    Remote,
}

#[derive(Args)]
struct Flags {
    /// Git URL or local directory.
    #[arg(long)]
    repo: Option<String>,
    /// Branch, tag or commit to analyze.
    #[arg(long = "ref")]
    reference: Option<String>,
    /// Paper as text, Markdown, or PDF (with --extractor).
    #[arg(long)]
    paper: Option<PathBuf>,
    /// PDF-to-text command template; `{input}` is replaced by the PDF path.
    #[arg(long)]
    extractor: Option<String>,
    /// Include glob (repeatable; replaces the defaults).
    #[arg(long = "include")]
    include: Vec<String>,
    /// Exclude glob (repeatable; replaces the defaults).
    #[arg(long = "exclude")]
    exclude: Vec<String>,
    #[arg(long)]
    max_file_bytes: Option<u64>,
    #[arg(long)]
    blank_gap: Option<usize>,
    #[arg(long)]
    min_group_lines: Option<usize>,
    #[arg(long)]
    max_group_lines: Option<usize>,
    /// Let the backend propose line groups for unstructured code.
    #[arg(long)]
    llm_grouping: bool,
    #[arg(long)]
    context_budget_tokens: Option<usize>,
    /// Fraction of the budget kept free for prompt framing.
    #[arg(long)]
    prompt_reserve: Option<f64>,
    #[arg(long)]
    max_summary_tokens: Option<usize>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    model: Option<String>,
    /// Chat-completions base URL for the remote backend.
    #[arg(long)]
    base_url: Option<String>,
    /// Environment variable holding the remote credential.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    link_threshold: Option<f64>,
    #[arg(long)]
    essential_min_lines: Option<usize>,
    /// Output directory for the bundle.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl Flags {
    fn into_layer(self) -> ConfigLayer {
        ConfigLayer {
            repo: self.repo,
            reference: self.reference,
            paper: self.paper,
            extractor: self.extractor,
            include: (!self.include.is_empty()).then_some(self.include),
            exclude: (!self.exclude.is_empty()).then_some(self.exclude),
            max_file_bytes: self.max_file_bytes,
            blank_gap: self.blank_gap,
            min_group_lines: self.min_group_lines,
            max_group_lines: self.max_group_lines,
            llm_grouping: self.llm_grouping.then_some(true),
            context_budget_tokens: self.context_budget_tokens,
            prompt_reserve: self.prompt_reserve,
            max_summary_tokens: self.max_summary_tokens,
            backend: self.backend.map(|b| match b {
                BackendArg::Lexical => BackendKind::Lexical,
                BackendArg::Remote => BackendKind::Remote,
            }),
            model: self.model,
            base_url: self.base_url,
            api_key_env: self.api_key_env,
            parallelism: self.parallelism,
            link_threshold: self.link_threshold,
            essential_min_lines: self.essential_min_lines,
            out: self.out,
            force: self.force.then_some(true),
        }
    }
}

fn configure(
    config: Option<PathBuf>,
    command: Command,
    flags: Flags,
) -> Result<(RunConfig, Option<String>), ConfigError> {
    let file = match config {
        Some(path) => ConfigLayer::from_file(&path)?,
        None => ConfigLayer::default(),
    };
    let cfg = RunConfig::resolve(file.overlay(flags.into_layer()))?;
    match command {
        Command::Run => {
            cfg.require_repo()?;
            cfg.require_paper()?;
            cfg.check_out_dir()?;
        }
        Command::Segment => {
            cfg.require_repo()?;
        }
        Command::Concepts => {
            cfg.require_paper()?;
        }
        _ => {}
    }
    let needs_backend =
        !matches!(command, Command::Report) && !(command == Command::Segment && !cfg.segment.llm_grouping);
    let credential = if needs_backend { cfg.credential()? } else { None };
    Ok((cfg, credential))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let (command, flags) = match cli.command {
        Cmd::Run(f) => (Command::Run, f),
        Cmd::Segment(f) => (Command::Segment, f),
        Cmd::Summarize(f) => (Command::Summarize, f),
        Cmd::Concepts(f) => (Command::Concepts, f),
        Cmd::Map(f) => (Command::Map, f),
        Cmd::Report(f) => (Command::Report, f),
    };
    let (cfg, credential) = match configure(cli.config, command, flags) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("papertrace: configuration error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let backend = build_backend(&cfg, credential);
    match execute(command, &cfg, backend.as_ref()) {
        Ok(outcome) => {
            for path in outcome.written {
                println!("{}", path.display());
            }
            log::info!(
                "{} requests, {} retries, {} cached summaries, {} ms",
                outcome.execution.n_requests,
                outcome.execution.n_retries,
                outcome.execution.cache_hits,
                outcome.execution.wall_time_ms
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("papertrace: {e}");
            ExitCode::from(EXIT_PIPELINE)
        }
    }
}
