use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use vocabforge::analysis::Projection;
use vocabforge::heuristics::{Fallback, Method, NegativePolicy, RandomMoments};
use vocabforge::{MarkerConvention, MatchMode};

/// Vocabulary adaptation and tokenizer analysis.
#[derive(Debug, Parser, Serialize)]
#[command(name = "vocabforge", version, propagate_version = true)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "VOCABFORGE_THREADS")]
    pub threads: Option<usize>,

    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Flat JSON object of flag values; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Split the target vocabulary into tokens shared with the source and novel ones.
    Intersect(IntersectArgs),
    /// Per-dimension and scalar moments of an embedding matrix.
    Stats(StatsArgs),
    /// Build target embeddings: copy shared rows, initialize novel ones.
    Adapt(AdaptArgs),
    /// Train the helper-to-source affine map on shared tokens.
    FitMap(FitMapArgs),
    /// Tokens per word of a tokenizer over a corpus.
    Fertility(FertilityArgs),
    /// Relative-representation similarity of two embedding spaces.
    Similarity(SimilarityArgs),
    /// Parameter totals before and after a vocabulary swap.
    Params(ParamsArgs),
}

pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| format!("invalid value `{s}`"))
}

fn parse_marker(s: &str) -> Result<MarkerConvention, String> {
    s.parse::<MarkerConvention>().map_err(|e| e.to_string())
}

#[derive(Debug, Args, Serialize)]
pub struct IntersectArgs {
    /// Source vocabulary (JSON token -> id).
    #[arg(long)]
    pub source_vocab: PathBuf,
    /// Target vocabulary (JSON token -> id).
    #[arg(long)]
    pub target_vocab: PathBuf,
    /// Source marker: meta-space, byte-marker or none (detected when omitted).
    #[arg(long, value_parser = parse_marker)]
    pub source_marker: Option<MarkerConvention>,
    /// Target marker: meta-space, byte-marker or none (detected when omitted).
    #[arg(long, value_parser = parse_marker)]
    pub target_marker: Option<MarkerConvention>,
    /// Matching mode stored in the partition: exact or canonical.
    #[arg(long, value_parser = parse_enum::<MatchMode>, default_value = "canonical")]
    pub mode: MatchMode,
    /// Report path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// EMB1 matrix.
    #[arg(long)]
    pub matrix: PathBuf,
    /// Print the JSON report instead of a summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct AdaptArgs {
    /// Initialization method: random, fvt, clp or sava.
    #[arg(long, value_parser = parse_enum::<Method>)]
    pub method: Method,
    /// Source input embeddings (EMB1).
    #[arg(long)]
    pub source_emb: PathBuf,
    /// Source output head (EMB1) for untied models.
    #[arg(long, requires = "out_head")]
    pub source_head: Option<PathBuf>,
    #[arg(long)]
    pub source_vocab: PathBuf,
    #[arg(long)]
    pub source_merges: PathBuf,
    #[arg(long)]
    pub target_vocab: PathBuf,
    #[arg(long)]
    pub target_merges: PathBuf,
    /// Source marker convention (detected when omitted).
    #[arg(long, value_parser = parse_marker)]
    pub source_marker: Option<MarkerConvention>,
    /// Target marker convention (detected when omitted).
    #[arg(long, value_parser = parse_marker)]
    pub target_marker: Option<MarkerConvention>,
    /// Helper embeddings indexed by the target vocabulary (clp, sava).
    #[arg(long)]
    pub helper_emb: Option<PathBuf>,
    /// Helper head for the head map of an untied model (sava; defaults to --helper-emb).
    #[arg(long)]
    pub helper_head: Option<PathBuf>,
    /// Keep only the K most similar shared tokens in CLP (0 = all).
    #[arg(long, default_value_t = 0)]
    pub clp_top_k: usize,
    /// CLP handling of negative cosines: clamp-zero, shift-min or absolute.
    #[arg(long, value_parser = parse_enum::<NegativePolicy>, default_value = "clamp-zero")]
    pub clp_negative_policy: NegativePolicy,
    /// Random moments: per-dimension or scalar.
    #[arg(long, value_parser = parse_enum::<RandomMoments>, default_value = "per-dimension")]
    pub random_moments: RandomMoments,
    /// Initializer for tokens the method cannot handle: random or mean-row.
    #[arg(long, value_parser = parse_enum::<Fallback>, default_value = "random")]
    pub fallback: Fallback,
    /// Token matching: exact or canonical.
    #[arg(long, value_parser = parse_enum::<MatchMode>, default_value = "canonical")]
    pub match_mode: MatchMode,
    /// SAVA optimizer steps.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// SAVA learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Unit-normalize standardized helper vectors before the SAVA map.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub l2_normalize: bool,
    /// Train the SAVA map on a seeded subset of this many shared tokens.
    #[arg(long)]
    pub pair_limit: Option<usize>,
    /// Adapted input embeddings (EMB1).
    #[arg(long)]
    pub out: PathBuf,
    /// Adapted head (EMB1) for untied models.
    #[arg(long)]
    pub out_head: Option<PathBuf>,
    /// JSON report path (stdout when omitted).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Include per-token provenance in the report.
    #[arg(long)]
    pub verbose_report: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitMapArgs {
    /// Helper embeddings indexed by the target vocabulary (EMB1).
    #[arg(long)]
    pub helper_emb: PathBuf,
    /// Source embeddings (EMB1).
    #[arg(long)]
    pub source_emb: PathBuf,
    /// Partition JSON written by `intersect`.
    #[arg(long)]
    pub partition: PathBuf,
    /// Train on a seeded subset of this many shared tokens.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Unit-normalize standardized inputs.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub l2_normalize: bool,
    /// Ridge penalty of the closed-form reference fit.
    #[arg(long, default_value_t = 1e-6)]
    pub ridge_lambda: f64,
    /// Also solve the closed form and report the gap to it.
    #[arg(long)]
    pub oracle: bool,
    /// Map container; metadata goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FertilityArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub merges: PathBuf,
    /// Marker convention (detected when omitted).
    #[arg(long, value_parser = parse_marker)]
    pub marker: Option<MarkerConvention>,
    /// Text file (one document per line) or directory of .txt files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Include per-document fertility in the report.
    #[arg(long)]
    pub per_doc: bool,
    /// Write a CSV histogram of per-document fertility (bins of 0.1).
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    /// Report path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub emb_a: PathBuf,
    #[arg(long)]
    pub emb_b: PathBuf,
    /// Vocabulary both matrices are indexed by.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Marker convention (detected when omitted).
    #[arg(long, value_parser = parse_marker)]
    pub marker: Option<MarkerConvention>,
    #[arg(long, default_value_t = 128)]
    pub n_prefix: usize,
    #[arg(long, default_value_t = 128)]
    pub n_nonprefix: usize,
    /// Average over a seeded sample of N tokens instead of all of them.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Anchor projection: cosine or dot.
    #[arg(long, value_parser = parse_enum::<Projection>, default_value = "cosine")]
    pub projection: Projection,
    /// Report path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ParamsArgs {
    /// Vocabulary size before the swap.
    #[arg(long)]
    pub before: u64,
    /// Vocabulary size after the swap.
    #[arg(long)]
    pub after: u64,
    /// Embedding width.
    #[arg(long)]
    pub dim: u64,
    /// Embeddings and head share parameters.
    #[arg(long)]
    pub tied: bool,
    /// Non-embedding parameter count.
    #[arg(long)]
    pub base: u64,
    /// Report path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
