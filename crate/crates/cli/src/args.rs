use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_CONFIG: &str = "procalc.toml";

#[derive(Debug, Parser)]
#[command(name = "procalc", version, about = "Answers process-engineering questions by writing and running programs")]
pub struct Cli {
    /// Log verbosity filter (also read from PROCALC_LOG).
    #[arg(long, global = true)]
    pub log: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer one query.
    Ask(AskArgs),
    /// Run an evaluation suite.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Manage the knowledge index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Inspect or clear the program cache.
    #[command(subcommand)]
    Cache(CacheCommand),
    /// Show the tool registry.
    #[command(subcommand)]
    Tools(ToolsCommand),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Agent configuration file.
    #[arg(long, short, env = "PROCALC_CONFIG", default_value = DEFAULT_CONFIG)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// The question; use --query-file for long ones.
    #[arg(required_unless_present = "query_file", conflicts_with = "query_file")]
    pub query: Option<String>,
    #[arg(long)]
    pub query_file: Option<PathBuf>,
    /// Write one file per pipeline stage into this directory.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Print the whole run report as JSON instead of the answer.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub no_react: bool,
    #[arg(long)]
    pub no_external_knowledge: bool,
    #[arg(long)]
    pub no_reflection: bool,
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long)]
    pub cache_path: Option<PathBuf>,
    #[arg(long)]
    pub tools_dir: Option<PathBuf>,
    #[arg(long)]
    pub embed_url: Option<String>,
    #[arg(long)]
    pub rerank_url: Option<String>,
    #[arg(long)]
    pub max_iterations: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grades {
    Binary,
    Graded,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Directory for report.txt and report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Acceptance bound such as `recall@5>=0.9`; repeatable.
    #[arg(long = "require", value_name = "METRIC>=VALUE")]
    pub require: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Planning, retrieval, calling and response metrics from JSONL files.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Cutoffs for the retrieval metrics.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5])]
        k: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Grades::Binary)]
        ndcg: Grades,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Needle-in-a-haystack retrieval over a synthetic corpus.
    Needle {
        /// Directory with corpus.jsonl and qa.jsonl; the bundled corpus otherwise.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        embed_url: Option<String>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Numeric answers checked against worked gold values.
    Gold {
        /// JSON list of cases; the bundled worked examples otherwise.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The agent with one capability removed at a time.
    Ablation {
        #[arg(long)]
        cases: PathBuf,
        /// Ablations to compare with the full agent; all of them by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Scratch directory; a temporary one by default.
        #[arg(long)]
        work: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Chunk, embed and add a text document.
    Add {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        title: Option<String>,
        /// Document id; the file stem by default.
        #[arg(long)]
        id: Option<String>,
        /// Index directory; rag.index_path from the config by default.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Chunk and document counts.
    Stats {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Cache file; cache.path from the config by default.
    #[arg(long)]
    pub cache_path: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    List(CacheArgs),
    Clear(CacheArgs),
    Stats(CacheArgs),
}

#[derive(Debug, Subcommand)]
pub enum ToolsCommand {
    List {
        #[arg(long)]
        tools_dir: Option<PathBuf>,
    },
    Show {
        tool_id: String,
        #[arg(long)]
        tools_dir: Option<PathBuf>,
    },
}
