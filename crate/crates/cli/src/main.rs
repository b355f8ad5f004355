mod commands;
mod flags;

use std::path::PathBuf;
use std::process::ExitCode;

use adaptmt::model::{parse_lang_pair, LangCode};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Adaptive machine translation toolkit.
///
/// Exit status is 0 on success, 1 when a command fails and 2 on bad usage.
/// Any flag can also come from `--config`, a TOML file. Top-level keys apply
/// to every command that has the flag; tables named after subcommands, e.g.
/// `[index.build]`, apply to that command only. Flags given on the command
/// line win.
#[derive(Debug, Parser)]
#[command(name = "adaptmt", version)]
pub struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// TOML file with default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rule-based (and optionally semantic) corpus filtering.
    Filter(FilterArgs),
    /// Build or query an IVF index over a corpus.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Compile or apply a bilingual glossary.
    #[command(subcommand)]
    Glossary(GlossaryCommand),
    /// Translate segments with zero-shot or fuzzy-match prompts.
    Translate(TranslateArgs),
    /// Word-level autocompletion.
    #[command(subcommand)]
    Wlac(WlacCommand),
    /// Synthetic bilingual data from terms.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Evaluation reports.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone)]
pub struct Langs {
    pub src: LangCode,
    pub tgt: LangCode,
}

fn parse_langs(s: &str) -> Result<Langs, String> {
    let (src, tgt) = parse_lang_pair(s).map_err(|e| e.to_string())?;
    Ok(Langs { src, tgt })
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Completion endpoint; without it a deterministic mock answers.
    #[arg(long)]
    pub backend_endpoint: Option<String>,
    /// Environment variable holding the endpoint's bearer token.
    #[arg(long)]
    pub backend_token_env: Option<String>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Input corpus (`.tsv` or `.units.jsonl`).
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Language pair, e.g. `en,es`.
    #[arg(long, value_parser = parse_langs)]
    pub langs: Langs,
    /// Where to write the kept units (default: `<name>.kept.<ext>` next to the input).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the filter report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub max_len_words: usize,
    #[arg(long, default_value_t = 2.0)]
    pub max_ratio: f64,
    #[arg(long)]
    pub keep_html: bool,
    /// Also drop pairs whose source/target cosine is below this.
    #[arg(long)]
    pub semantic_threshold: Option<f64>,
    #[arg(long, default_value_t = adaptmt::embed::DEFAULT_DIM)]
    pub dim: usize,
    /// Seed for unit ids.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Train an index over a corpus and write its snapshot.
    Build(IndexBuildArgs),
    /// Nearest corpus units for a query.
    Search(IndexSearchArgs),
}

#[derive(Debug, Args)]
pub struct IndexBuildArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_langs)]
    pub langs: Langs,
    /// Snapshot path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = adaptmt::embed::DEFAULT_DIM)]
    pub dim: usize,
    /// Number of clusters (default: about 4 sqrt(n)).
    #[arg(long)]
    pub nlist: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IndexSearchArgs {
    /// Snapshot written by `index build`.
    #[arg(long)]
    pub index: PathBuf,
    /// The corpus the index was built from.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_langs)]
    pub langs: Langs,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub nprobe: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum GlossaryCommand {
    /// Compile term occurrences into a glossary.
    Compile(GlossaryCompileArgs),
    /// Glossary entries found in a segment.
    Match(GlossaryMatchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OccurrenceFormat {
    /// `source<TAB>target[<TAB>count]` per line.
    Tsv,
    /// Numbered `source = target` lists as returned by term extraction.
    List,
}

#[derive(Debug, Args)]
pub struct GlossaryCompileArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_langs)]
    pub langs: Langs,
    #[arg(long, value_enum, default_value_t = OccurrenceFormat::Tsv)]
    pub format: OccurrenceFormat,
    /// Separator used by `--format list`.
    #[arg(long, default_value = "=")]
    pub separator: String,
    /// Glossary TSV path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = adaptmt::terminology::MIN_FREQUENCY)]
    pub min_frequency: u32,
    #[arg(long, default_value_t = adaptmt::terminology::MAX_NGRAM)]
    pub max_ngram: usize,
    /// Drop terms contained in a longer entry.
    #[arg(long)]
    pub drop_overlapping: bool,
    /// Keep stopwords.
    #[arg(long)]
    pub no_stopwords: bool,
    /// Source stopword list, one per line (replaces the built-in list).
    #[arg(long)]
    pub src_stopwords: Option<PathBuf>,
    #[arg(long)]
    pub tgt_stopwords: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GlossaryMatchArgs {
    #[arg(long)]
    pub glossary: PathBuf,
    #[arg(long, value_parser = parse_langs)]
    pub langs: Langs,
    #[arg(long)]
    pub text: String,
    #[arg(long, default_value_t = 10)]
    pub max_terms: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    ZeroShot,
    Fuzzy,
    ZeroShotTerms,
    FuzzyGlossary,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long, value_parser = parse_langs)]
    pub langs: Langs,
    /// A single segment.
    #[arg(long, conflicts_with = "input")]
    pub text: Option<String>,
    /// Segments, one per line.
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::ZeroShot)]
    pub mode: Mode,
    /// Translation memory for the fuzzy modes.
    #[arg(long)]
    pub tm: Option<PathBuf>,
    /// Fuzzy matches per segment.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub nlist: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = adaptmt::embed::DEFAULT_DIM)]
    pub dim: usize,
    /// Glossary TSV for the terms modes.
    #[arg(long)]
    pub glossary: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub max_terms: usize,
    /// Include the rendered prompt in JSON output.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum WlacCommand {
    /// Complete one partially typed word.
    Run(WlacRunArgs),
    /// Accuracy over a query suite.
    Eval(WlacEvalArgs),
}

#[derive(Debug, Args)]
pub struct WlacSearchArgs {
    #[arg(long, default_value_t = 10)]
    pub num_hypotheses: u32,
    #[arg(long, default_value_t = 10)]
    pub top_k: u32,
    #[arg(long, default_value_t = 1)]
    pub max_runs: u32,
    #[arg(long, default_value_t = 0.0)]
    pub temp_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temp_hi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct WlacRunArgs {
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub typed: String,
    #[arg(long)]
    pub left: Option<String>,
    #[arg(long)]
    pub right: Option<String>,
    /// Canned sampler entries (JSON list); otherwise the backend samples.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Needed when sampling from the backend.
    #[arg(long, value_parser = parse_langs)]
    pub langs: Option<Langs>,
    #[command(flatten)]
    pub search: WlacSearchArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct WlacEvalArgs {
    /// JSON with `queries` (source, left_context, right_context, typed, gold)
    /// and `sampler` entries.
    #[arg(long)]
    pub suite: PathBuf,
    #[command(flatten)]
    pub search: WlacSearchArgs,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Ask the backend for sentence pairs containing each term.
    Generate(SynthGenerateArgs),
    /// Parse a raw bilingual generation into units.
    Parse(SynthParseArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenerateArgs {
    /// Terms, one per line.
    #[arg(long)]
    pub terms: PathBuf,
    #[arg(long, value_parser = parse_langs)]
    pub langs: Langs,
    /// Sentence pairs requested per term.
    #[arg(long, default_value_t = 10)]
    pub count: u32,
    /// Output `.units.jsonl` or `.tsv` (default: JSON lines on stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct SynthParseArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_langs)]
    pub langs: Langs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum EvaluateCommand {
    /// Term usage percentages per system.
    Terms(EvaluateTermsArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateTermsArgs {
    /// JSON list of {system, term_set, used, total}.
    #[arg(long, required_unless_present = "translations")]
    pub rows: Option<PathBuf>,
    /// JSON lines of {translation, terms: [{source_term, target_term}]}.
    #[arg(long, conflicts_with = "rows")]
    pub translations: Option<PathBuf>,
    #[arg(long, default_value = "system")]
    pub system: String,
    #[arg(long, default_value = "1")]
    pub term_set: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Server config (TOML or JSON).
    #[arg(long)]
    pub server_config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub api_key: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match flags::parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
