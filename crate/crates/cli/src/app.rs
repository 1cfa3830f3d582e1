//! Command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use claimdecomp::corpus::load_knowledge;
use claimdecomp::retrieval::{build_index_with, Bm25Params, Index, DEFAULT_TOP_K};
use log::{error, info};

use crate::audit::audit;
use crate::config::{RunConfig, ValidatorKind, ENV_CACHE_DIR, ENV_MODEL, ENV_NLI_URL, ENV_VALIDATOR_MODEL};
use crate::error::{CliError, Result, EXIT_OK};
use crate::io::write_atomic;
use crate::pipeline;
use crate::report::{correlate, correlations_csv, shared_columns, Table};

#[derive(Debug, Parser)]
#[command(name = "claimdecomp", version, about = "Decompose generated text into subclaims and score them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split every sentence into subclaims with each method.
    Decompose(RunArgs),
    /// Judge subclaims against their sentence; write DecompScore tables.
    Decompscore(RunArgs),
    /// Judge subclaims against the knowledge source; write FActScore tables.
    Factscore(RunArgs),
    /// Recount every table cell from the judgment files.
    Audit(RunArgs),
    /// Pearson correlation between columns of two LM-keyed CSV files.
    Correlate(CorrelateArgs),
    /// Build or query a BM25 index.
    #[command(subcommand)]
    Index(IndexCommand),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generations as JSON Lines.
    #[arg(long)]
    pub generations: Option<PathBuf>,
    /// CoNLL-U parses with `# sent_id = p<passage>-s<sentence>`.
    #[arg(long)]
    pub parses: Option<PathBuf>,
    /// Methods, comma-separated: factscore, wice, chen, conllu, rnd, fs2, predpatt.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    /// Example bank for a method, as METHOD=PATH.
    #[arg(long, value_parser = parse_bank)]
    pub bank: Vec<(String, PathBuf)>,
    /// Knowledge corpus as JSON Lines of {title, text}.
    #[arg(long)]
    pub knowledge: Option<PathBuf>,
    /// Prebuilt index from `index build`.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = ENV_CACHE_DIR)]
    pub cache_dir: Option<PathBuf>,
    /// Fail on any completion not already cached.
    #[arg(long)]
    pub cache_only: bool,
    /// Scripted completions (JSON) in place of the endpoint.
    #[arg(long)]
    pub mock: Option<PathBuf>,
    #[arg(long, env = ENV_MODEL)]
    pub model: Option<String>,
    #[arg(long, env = ENV_VALIDATOR_MODEL)]
    pub validator_model: Option<String>,
    #[arg(long, value_enum)]
    pub validator: Option<ValidatorKind>,
    #[arg(long, env = ENV_NLI_URL)]
    pub nli_url: Option<String>,
    /// Scripted NLI verdicts (JSON).
    #[arg(long)]
    pub mock_nli: Option<PathBuf>,
    #[arg(long)]
    pub max_inflight: Option<usize>,
    /// Retrieved chunks per subclaim.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub chunk_words: Option<usize>,
    /// Enable the short-output penalty min(1, n/gamma).
    #[arg(long)]
    pub gamma: Option<f64>,
}

fn parse_bank(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (k, v) = s.split_once('=').ok_or("expected METHOD=PATH")?;
    Ok((k.trim().to_string(), PathBuf::from(v)))
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    pub file_a: PathBuf,
    pub file_b: PathBuf,
    /// Column pairs `a:b`, comma-separated; default: same-named columns.
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    Build {
        #[arg(long)]
        knowledge: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = claimdecomp::retrieval::DEFAULT_CHUNK_WORDS)]
        chunk_words: usize,
        #[arg(long, default_value_t = claimdecomp::retrieval::DEFAULT_K1)]
        k1: f64,
        #[arg(long, default_value_t = claimdecomp::retrieval::DEFAULT_B)]
        b: f64,
    },
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, long, default_value_t = DEFAULT_TOP_K)]
        k: usize,
        /// Only score chunks of this document.
        #[arg(long)]
        title: Option<String>,
    },
}

/// Config file, then environment, then flags.
pub fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok());
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value.clone() {
                $field = v;
            }
        };
    }
    if args.generations.is_some() {
        cfg.generations = args.generations.clone();
    }
    if args.parses.is_some() {
        cfg.parses = args.parses.clone();
    }
    if !args.method.is_empty() {
        cfg.methods = args.method.iter().map(|m| m.trim().to_string()).collect();
    }
    for (k, v) in &args.bank {
        cfg.banks.insert(k.clone(), v.clone());
    }
    if args.knowledge.is_some() {
        cfg.knowledge = args.knowledge.clone();
    }
    if args.index.is_some() {
        cfg.index = args.index.clone();
    }
    set!(cfg.out_dir, args.out);
    if args.cache_dir.is_some() {
        cfg.cache_dir = args.cache_dir.clone();
    }
    cfg.cache_only |= args.cache_only;
    if args.mock.is_some() {
        cfg.mock = args.mock.clone();
    }
    set!(cfg.endpoint.model, args.model);
    set!(cfg.endpoint.validator_model, args.validator_model);
    set!(cfg.validator.kind, args.validator);
    if args.nli_url.is_some() {
        cfg.validator.nli_url = args.nli_url.clone();
    }
    if args.mock_nli.is_some() {
        cfg.validator.mock_nli = args.mock_nli.clone();
    }
    set!(cfg.endpoint.max_inflight, args.max_inflight);
    set!(cfg.retrieval.top_k, args.top_k);
    set!(cfg.retrieval.chunk_words, args.chunk_words);
    if args.gamma.is_some() {
        cfg.length_penalty_gamma = args.gamma;
    }
    cfg.check()?;
    Ok(cfg)
}

fn run_pipeline(command: &Command, args: &RunArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let passages = pipeline::load_passages(&cfg)?;
    info!("{} passages from {:?}", passages.len(), pipeline::lms(&passages));
    if let Command::Audit(_) = command {
        let bad = audit(&cfg.out_dir, &passages, cfg.length_penalty_gamma)?;
        return if bad == 0 { Ok(()) } else { Err(CliError::Audit(bad)) };
    }
    let methods = if cfg.methods.is_empty() && !matches!(command, Command::Decompose(_)) {
        pipeline::methods_in(&cfg.out_dir)
    } else {
        cfg.parsed_methods()?
    };
    if methods.is_empty() {
        return Err(CliError::Config("no method selected".into()));
    }
    let client = pipeline::build_client(&cfg)?;
    match command {
        Command::Decompose(_) => {
            for &m in &methods {
                pipeline::run_decompose(&cfg, client.as_ref(), &passages, m)?;
            }
        }
        Command::Decompscore(_) => {
            pipeline::run_decompscore(&cfg, client.as_ref(), &passages, &methods)?;
        }
        Command::Factscore(_) => {
            pipeline::run_factscore(&cfg, client.as_ref(), &passages, &methods)?;
        }
        _ => unreachable!("handled by caller"),
    }
    Ok(())
}

fn run_correlate(args: &CorrelateArgs) -> Result<()> {
    let a = Table::load(&args.file_a)?;
    let b = Table::load(&args.file_b)?;
    let pairs: Vec<(String, String)> = if args.columns.is_empty() {
        shared_columns(&a, &b)
    } else {
        args.columns
            .iter()
            .map(|p| match p.split_once(':') {
                Some((x, y)) => (x.to_string(), y.to_string()),
                None => (p.clone(), p.clone()),
            })
            .collect()
    };
    if pairs.is_empty() {
        return Err(CliError::Config("no column pairs to correlate".into()));
    }
    let text = correlations_csv(&correlate(&a, &b, &pairs)?);
    print!("{text}");
    if let Some(out) = &args.out {
        write_atomic(out, text.as_bytes())?;
    }
    Ok(())
}

fn run_index(cmd: &IndexCommand) -> Result<()> {
    match cmd {
        IndexCommand::Build {
            knowledge,
            out,
            chunk_words,
            k1,
            b,
        } => {
            let docs = load_knowledge(knowledge)?;
            let index = build_index_with(&docs, *chunk_words, Bm25Params { k1: *k1, b: *b })?;
            write_atomic(out, index.to_json()?.as_bytes())?;
            info!("{} documents, {} chunks -> {}", docs.len(), index.len(), out.display());
        }
        IndexCommand::Search { index, query, k, title } => {
            let text = std::fs::read_to_string(index).map_err(|e| CliError::io(index, e))?;
            let index = Index::from_json(&text)?;
            for hit in index.search(query, *k, title.as_deref()) {
                println!(
                    "{:.6}\t{}#{}\t{}",
                    hit.score, hit.chunk.doc_title, hit.chunk.ordinal, hit.chunk.text
                );
            }
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        c @ (Command::Decompose(a) | Command::Decompscore(a) | Command::Factscore(a) | Command::Audit(a)) => {
            run_pipeline(c, a)
        }
        Command::Correlate(a) => run_correlate(a),
        Command::Index(c) => run_index(c),
    }
}

/// Run and map the outcome to a process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
