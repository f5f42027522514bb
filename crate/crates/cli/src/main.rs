mod args;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;
use serde_json::{json, Value};
use vocabforge::align::{self, save_map, TrainConfig};
use vocabforge::analysis::{self, format_billions, histogram_csv, load_corpus, sample_tokens};
use vocabforge::heuristics::{self, HeuristicConfig};
use vocabforge::tokenizer::{partition, MatchMode, TokenPartition, TokenizerFormat};
use vocabforge::{
    load_matrix, save_matrix, stats, EmbeddingMatrix, MarkerConvention, TokenizerModel, Vocabulary,
};

use args::{AdaptArgs, Cli, Command, FertilityArgs, FitMapArgs, IntersectArgs, ParamsArgs, SimilarityArgs, StatsArgs};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl<E: Into<vocabforge::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        let e: vocabforge::Error = e.into();
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn emit(report: &Value, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).expect("json") + "\n";
    match out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn envelope(cli: &Cli, command: &str, body: Value) -> Value {
    let mut report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": to_json(cli),
    });
    if let (Value::Object(r), Value::Object(b)) = (&mut report, body) {
        r.extend(b);
    }
    report
}

fn load_tokenizer(vocab: &Path, merges: &Path, marker: Option<MarkerConvention>) -> Result<TokenizerModel, CliError> {
    Ok(TokenizerModel::load(vocab, merges, TokenizerFormat::VocabJsonMergesTxt, marker)?)
}

fn detect(vocab: &Vocabulary, marker: Option<MarkerConvention>) -> MarkerConvention {
    marker.unwrap_or_else(|| MarkerConvention::detect(vocab.tokens().iter().map(String::as_str)))
}

fn intersect(cli: &Cli, a: &IntersectArgs) -> Result<(), CliError> {
    let source = Vocabulary::load_json(&a.source_vocab)?;
    let target = Vocabulary::load_json(&a.target_vocab)?;
    let (sm, tm) = (detect(&source, a.source_marker), detect(&target, a.target_marker));
    let exact = partition(&source, &target, sm, tm, MatchMode::Exact);
    let canonical = partition(&source, &target, sm, tm, MatchMode::Canonical);
    let chosen = if a.mode == MatchMode::Exact { exact.clone() } else { canonical.clone() };
    let body = json!({
        "source_marker": sm,
        "target_marker": tm,
        "source_size": source.len(),
        "target_size": target.len(),
        "mode": a.mode,
        "shared_count": chosen.shared_count(),
        "novel_count": chosen.novel_count(),
        "shared_count_by_mode": { "exact": exact.shared_count(), "canonical": canonical.shared_count() },
        "collision_count": chosen.warnings.len(),
        "partition": chosen,
    });
    emit(&envelope(cli, "intersect", body), a.out.as_deref())
}

fn stats_cmd(cli: &Cli, a: &StatsArgs) -> Result<(), CliError> {
    let m = load_matrix(&a.matrix)?;
    let s = stats(&m)?;
    if a.json {
        return emit(&envelope(cli, "stats", json!({ "stats": s })), None);
    }
    let min_var = s.variance.iter().copied().fold(f64::INFINITY, f64::min);
    let max_var = s.variance.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("matrix          {}", a.matrix.display());
    println!("shape           {} x {}", s.rows, s.dim);
    println!("scalar mean     {:.6e}", s.scalar_mean);
    println!("scalar variance {:.6e}", s.scalar_variance);
    println!("variance range  [{min_var:.6e}, {max_var:.6e}]");
    Ok(())
}

fn load_optional(path: Option<&PathBuf>) -> Result<Option<EmbeddingMatrix>, CliError> {
    path.map(load_matrix).transpose().map_err(CliError::from)
}

fn strip_per_token(mut r: heuristics::AdaptationReport, keep: bool) -> heuristics::AdaptationReport {
    if !keep {
        r.per_token.clear();
    }
    r
}

fn adapt(cli: &Cli, a: &AdaptArgs) -> Result<(), CliError> {
    if a.method.needs_helper() && a.helper_emb.is_none() {
        return Err(CliError::Validation(format!("--method {} requires --helper-emb", a.method)));
    }
    let source_tok = load_tokenizer(&a.source_vocab, &a.source_merges, a.source_marker)?;
    let target_tok = load_tokenizer(&a.target_vocab, &a.target_merges, a.target_marker)?;
    let source = load_matrix(&a.source_emb)?;
    let helper = load_optional(a.helper_emb.as_ref())?;
    let cfg = HeuristicConfig {
        method: a.method,
        seed: cli.seed,
        clp_top_k: a.clp_top_k,
        clp_negative_policy: a.clp_negative_policy,
        random_moments: a.random_moments,
        fallback: a.fallback,
        match_mode: a.match_mode,
        train: TrainConfig {
            steps: a.steps,
            learning_rate: a.lr,
            seed: cli.seed,
            l2_normalize_inputs: a.l2_normalize,
            ..TrainConfig::default()
        },
        pair_limit: a.pair_limit,
    };
    let part = heuristics::partition_for(&source_tok, &target_tok, a.match_mode);
    let summary = json!({
        "mode": part.mode,
        "source_marker": part.source_marker,
        "target_marker": part.target_marker,
        "shared_count": part.shared_count(),
        "novel_count": part.novel_count(),
        "collision_count": part.warnings.len(),
    });

    let body = match &a.source_head {
        None => {
            let (out, report) =
                heuristics::adapt_with_partition(&source, &source_tok, &target_tok, helper.as_ref(), &part, &cfg)?;
            save_matrix(&out, &a.out)?;
            json!({ "partition": summary, "embeddings": strip_per_token(report, a.verbose_report) })
        }
        Some(head_path) => {
            let head = load_matrix(head_path)?;
            let helper_head = load_optional(a.helper_head.as_ref())?;
            let out = heuristics::adapt_untied(
                &source,
                &head,
                &source_tok,
                &target_tok,
                helper.as_ref(),
                helper_head.as_ref(),
                &cfg,
            )?;
            save_matrix(&out.embeddings, &a.out)?;
            let out_head = a.out_head.as_ref().expect("clap enforces --out-head");
            save_matrix(&out.head, out_head)?;
            json!({
                "partition": summary,
                "embeddings": strip_per_token(out.embeddings_report, a.verbose_report),
                "head": strip_per_token(out.head_report, a.verbose_report),
            })
        }
    };
    emit(&envelope(cli, "adapt", body), a.report.as_deref())
}

fn read_partition(path: &Path) -> Result<TokenPartition, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let inner = match value {
        Value::Object(mut o) if o.contains_key("partition") => o.remove("partition").expect("checked"),
        other => other,
    };
    let part: TokenPartition = serde_json::from_value(inner)
        .map_err(|e| CliError::Validation(format!("{}: not a partition: {e}", path.display())))?;
    part.check().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(part)
}

fn fit_map(cli: &Cli, a: &FitMapArgs) -> Result<(), CliError> {
    let part = read_partition(&a.partition)?;
    let helper = load_matrix(&a.helper_emb)?;
    let source = load_matrix(&a.source_emb)?;
    if helper.rows() != part.target_size {
        return Err(CliError::Validation(format!(
            "helper has {} rows but the partition's target vocabulary has {}",
            helper.rows(),
            part.target_size
        )));
    }
    if source.rows() != part.source_size {
        return Err(CliError::Validation(format!(
            "source has {} rows but the partition's source vocabulary has {}",
            source.rows(),
            part.source_size
        )));
    }
    let cfg = TrainConfig {
        steps: a.steps,
        learning_rate: a.lr,
        seed: cli.seed,
        ridge_lambda: a.ridge_lambda,
        l2_normalize_inputs: a.l2_normalize,
        ..TrainConfig::default()
    };
    let pairs = align::collect_pairs(&helper, &source, &part, a.limit, cli.seed)?;
    let (map, report) =
        if a.oracle { align::fit_with_oracle(&pairs, &cfg)? } else { align::fit_gradient(&pairs, &cfg)? };
    save_map(&map, &a.out, Some(&cfg), Some(&report))?;
    emit(&envelope(cli, "fit-map", json!({ "fit_report": report })), None)
}

fn fertility_cmd(cli: &Cli, a: &FertilityArgs) -> Result<(), CliError> {
    let model = load_tokenizer(&a.vocab, &a.merges, a.marker)?;
    let docs = load_corpus(&a.corpus)?;
    let mut report = analysis::fertility(&model, &docs, a.per_doc || a.histogram.is_some())?;
    report.corpus_label = a.corpus.display().to_string();
    report.tokenizer_label = a.vocab.display().to_string();
    if let Some(path) = &a.histogram {
        write_text(path, &histogram_csv(report.per_document.as_deref().unwrap_or(&[]), 0.1))?;
    }
    if !a.per_doc {
        report.per_document = None;
    }
    emit(&envelope(cli, "fertility", json!({ "fertility": report })), a.out.as_deref())
}

fn similarity_cmd(cli: &Cli, a: &SimilarityArgs) -> Result<(), CliError> {
    let vocab = Vocabulary::load_json(&a.vocab)?;
    let ea = load_matrix(&a.emb_a)?;
    let eb = load_matrix(&a.emb_b)?;
    if ea.rows() != vocab.len() || eb.rows() != vocab.len() {
        return Err(CliError::Validation(format!(
            "matrices have {} and {} rows but the vocabulary has {} tokens",
            ea.rows(),
            eb.rows(),
            vocab.len()
        )));
    }
    let marker = detect(&vocab, a.marker);
    let anchors = analysis::select_anchors(&vocab, marker, a.n_prefix, a.n_nonprefix, cli.seed)?;
    let sample = a.sample.map(|n| sample_tokens(vocab.len(), n, cli.seed));
    let mut score = analysis::relative_similarity(&ea, &eb, &anchors, sample.as_deref(), a.projection)?;
    score.seed = Some(cli.seed);
    emit(&envelope(cli, "similarity", json!({ "marker": marker, "similarity": score })), a.out.as_deref())
}

fn params_cmd(cli: &Cli, a: &ParamsArgs) -> Result<(), CliError> {
    if a.before == 0 || a.after == 0 || a.dim == 0 {
        return Err(CliError::Validation("--before, --after and --dim must be positive".into()));
    }
    let r = analysis::param_report(a.before, a.after, a.dim, a.tied, a.base);
    let body = json!({
        "params": r,
        "summary": {
            "total_before": format_billions(r.total_before),
            "total_after": format_billions(r.total_after),
            "delta": format!("{:.2}B", r.delta as f64 / 1e9),
        },
    });
    emit(&envelope(cli, "params", body), a.out.as_deref())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Intersect(a) => intersect(cli, a),
        Command::Stats(a) => stats_cmd(cli, a),
        Command::Adapt(a) => adapt(cli, a),
        Command::FitMap(a) => fit_map(cli, a),
        Command::Fertility(a) => fertility_cmd(cli, a),
        Command::Similarity(a) => similarity_cmd(cli, a),
        Command::Params(a) => params_cmd(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
