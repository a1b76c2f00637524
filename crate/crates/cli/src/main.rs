//! `prosign` command-line entry point.
//!
//! Each subcommand runs one stage on explicit files; `run` executes the
//! whole incremental pipeline from a config file. Exit codes: 0 on success,
//! 2 for invalid configuration or input, 3 when a stage fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use prosign_core::analysis::{
    join_records, join_report_text, read_records_csv, record_variants, resolve_variant, scatter_export,
    write_records_csv, Measure, DEFAULT_MAX_LOSS,
};
use prosign_core::corpus::{
    default_stopwords, load_alignment, load_manifest, load_stopwords, match_words, CorpusLayout, CorpusManifest,
    TextField,
};
use prosign_core::givenness::{assign_distances, read_givenness_csv, write_givenness_csv, GivennessOptions};
use prosign_core::kv::KvFile;
use prosign_core::lm::{
    load_scored_file, write_scored_file, FileBackend, HttpBackend, ScoreBackend, ServiceConfig, UnigramModel,
};
use prosign_core::pipeline::{
    analyze_into, has_errors, run_pipeline, validate_config, write_atomic, PipelineConfig, Severity, StageStatus,
};
use prosign_core::prominence::{prosody_table, read_prosody_csv, write_prosody_csv, Audio, ProminenceConfig};
use prosign_core::surprisal::{
    read_surprisal_csv, score_requests, surprisal_table, unigram_table, write_surprisal_csv, ContextSpec, MAX_CONTEXT,
};
use prosign_core::synth_eval::{
    evaluate_systems, read_predictions_csv, read_word_classes_csv, word_classes_csv, word_classes_from_manifest,
};
use prosign_core::Error;

#[derive(Parser)]
#[command(
    name = "prosign",
    version,
    about = "Word surprisal, prominence and prosody analysis for read speech"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus inspection.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Produce scored-text JSONL for one model and context size.
    Score(ScoreArgs),
    /// Aggregate scored tokens into per-word surprisal.
    Surprisal(SurprisalArgs),
    /// Estimate word prominence and acoustic measures from audio.
    Prominence(ProminenceArgs),
    /// Assign givenness distances to every word.
    Givenness(GivennessArgs),
    /// Join surprisal, prosody and givenness into one records table.
    Join(JoinArgs),
    /// Correlations, givenness profiles, direction checks and scatter data.
    Analyze(AnalyzeArgs),
    /// Scatter/histogram export for one variant and measure.
    Scatter(ScatterArgs),
    /// Objective evaluation of phone-level f0 and duration predictions.
    SynthEval(SynthEvalArgs),
    /// Write the stop/content class of every corpus word.
    WordClasses(WordClassesArgs),
    /// Run the incremental pipeline from a config file.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Check metadata, alignments and audio for consistency.
    Validate(CorpusValidateArgs),
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    metadata: PathBuf,
    /// Which metadata field holds the text: raw or normalized.
    #[arg(long, default_value = "normalized")]
    text_field: TextField,
    /// Stop-word list; the bundled English list when omitted.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self, audio: Option<&Path>, alignments: Option<&Path>) -> prosign_core::Result<CorpusManifest> {
        let layout = CorpusLayout {
            text_field: self.text_field,
            audio_dir: audio.map(Path::to_path_buf),
            alignment_dir: alignments.map(Path::to_path_buf),
        };
        let stop = match &self.stopwords {
            Some(p) => load_stopwords(p)?,
            None => default_stopwords(),
        };
        let m = load_manifest(&self.metadata, &layout)?.with_stopwords(stop);
        m.validate()?;
        Ok(m)
    }
}

#[derive(Args)]
struct CorpusValidateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    alignments: Option<PathBuf>,
    #[arg(long)]
    audio: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Backend {
    File,
    Http,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_enum)]
    backend: Backend,
    #[arg(long)]
    model: String,
    /// Number of preceding segments used as context.
    #[arg(long, default_value_t = 0)]
    context: usize,
    /// Upper bound accepted for --context.
    #[arg(long, default_value_t = MAX_CONTEXT)]
    max_context: usize,
    /// String placed between context segments and before the target.
    #[arg(long, default_value = " ")]
    joiner: String,
    /// Scored JSONL to serve requests from (file backend).
    #[arg(long)]
    scored: Vec<PathBuf>,
    /// Service base URL (http backend).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long)]
    max_context_bytes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SurprisalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, required = true)]
    scored: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5")]
    contexts: Vec<usize>,
    #[arg(long, default_value_t = MAX_CONTEXT)]
    max_context: usize,
    /// Models to aggregate; every model found in the scored files if omitted.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    #[arg(long, default_value = " ")]
    joiner: String,
    /// Unigram counts (`word<TAB>count`) to add a context-free variant.
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProminenceArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    alignments: PathBuf,
    /// Key-value file overriding analysis defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GivennessArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = prosign_core::givenness::DEFAULT_LOOKBACK)]
    lookback: usize,
    /// Let givenness carry across chapter boundaries.
    #[arg(long)]
    no_chapter_reset: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct JoinArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    surprisal: PathBuf,
    #[arg(long)]
    prosody: PathBuf,
    #[arg(long)]
    givenness: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_LOSS)]
    max_loss: f64,
    /// Output directory for records.csv and join_report.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory holding records.csv.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Models whose givenness profile is computed; all found if omitted.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    #[arg(long, default_value_t = prosign_core::givenness::DEFAULT_LOOKBACK)]
    lookback: usize,
}

#[derive(Args)]
struct ScatterArgs {
    /// Directory holding records.csv.
    #[arg(long, default_value = "records")]
    records: PathBuf,
    /// Variant label, e.g. `sup_5` or `gpt2:sup_5`.
    #[arg(long)]
    variant: String,
    #[arg(long, default_value = "prominence")]
    measure: String,
    /// Output JSON file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthEvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Comma-separated `name=path` pairs, in report order.
    #[arg(long, value_delimiter = ',', required = true)]
    systems: Vec<String>,
    #[arg(long)]
    word_classes: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WordClassesArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Only check the config and print diagnostics.
    #[arg(long)]
    check: bool,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Validation(_) => 2,
            _ => 3,
        };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Validation(_)) => 2,
            _ => 3,
        };
        Failure { code, error }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Error::Validation(message.into()).into()
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Corpus(CorpusCommand::Validate(a)) => corpus_validate(a),
        Command::Score(a) => score(a),
        Command::Surprisal(a) => surprisal(a),
        Command::Prominence(a) => prominence(a),
        Command::Givenness(a) => givenness(a),
        Command::Join(a) => join(a),
        Command::Analyze(a) => analyze(a),
        Command::Scatter(a) => scatter(a),
        Command::SynthEval(a) => synth_eval(a),
        Command::WordClasses(a) => word_classes(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn corpus_validate(a: CorpusValidateArgs) -> CmdResult {
    let manifest = a.corpus.load(a.audio.as_deref(), a.alignments.as_deref())?;
    let mut problems = Vec::new();
    for seg in &manifest.segments {
        if let Some(p) = &seg.audio_path {
            if let Err(e) = Audio::read_wav(p) {
                problems.push(format!("{}: audio: {e}", seg.id));
            }
        }
        if let Some(p) = &seg.alignment_path {
            match load_alignment(p) {
                Ok(words) => {
                    let m = match_words(&seg.text, &words);
                    if !m.unmatched_text.is_empty() || !m.unmatched_alignment.is_empty() {
                        problems.push(format!(
                            "{}: {} text word(s) and {} aligned word(s) unmatched",
                            seg.id,
                            m.unmatched_text.len(),
                            m.unmatched_alignment.len()
                        ));
                    }
                }
                Err(e) => problems.push(format!("{}: alignment: {e}", seg.id)),
            }
        }
    }
    for p in &problems {
        eprintln!("{p}");
    }
    println!(
        "{} segments, {} words, {} problem(s)",
        manifest.segments.len(),
        manifest.word_count(),
        problems.len()
    );
    if problems.is_empty() {
        Ok(())
    } else {
        Err(invalid(format!("{} segment(s) failed validation", problems.len())))
    }
}

fn score(a: ScoreArgs) -> CmdResult {
    let manifest = a.corpus.load(None, None)?;
    let spec = ContextSpec::bounded(a.context, a.max_context)?;
    let requests = score_requests(&manifest, &[spec], &a.model, &a.joiner)?;
    let records = match a.backend {
        Backend::File => {
            if a.scored.is_empty() {
                return Err(invalid("--backend file needs --scored"));
            }
            let mut all = Vec::new();
            for p in &a.scored {
                all.extend(load_scored_file(p)?);
            }
            FileBackend::new(all).score_all(&requests)?
        }
        Backend::Http => {
            let endpoint = a.endpoint.ok_or_else(|| invalid("--backend http needs --endpoint"))?;
            let mut cfg = ServiceConfig::new(endpoint);
            cfg.cache_dir = a.cache_dir;
            cfg.max_in_flight = a.max_in_flight;
            cfg.max_context_bytes = a.max_context_bytes;
            HttpBackend::new(cfg)?.score_all(&requests)?
        }
    };
    write_scored_file(&a.out, &records)?;
    log::info!("wrote {} scored segments to {}", records.len(), a.out.display());
    Ok(())
}

fn surprisal(a: SurprisalArgs) -> CmdResult {
    let manifest = a.corpus.load(None, None)?;
    let specs = a
        .contexts
        .iter()
        .map(|&k| ContextSpec::bounded(k, a.max_context))
        .collect::<prosign_core::Result<Vec<_>>>()?;
    let mut records = Vec::new();
    for p in &a.scored {
        records.extend(load_scored_file(p)?);
    }
    let backend = FileBackend::new(records);
    let models: Vec<String> = if a.models.is_empty() {
        backend.model_ids().into_iter().collect()
    } else {
        a.models
    };
    if models.is_empty() {
        return Err(invalid("no models in the scored input"));
    }
    let mut rows = Vec::new();
    for model in &models {
        rows.extend(surprisal_table(&manifest, &backend, &specs, model, &a.joiner)?);
    }
    if let Some(p) = &a.counts {
        rows.extend(unigram_table(&manifest, &UnigramModel::load(p)?, "unigram"));
    }
    write_surprisal_csv(&a.out, &rows)?;
    log::info!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn prominence(a: ProminenceArgs) -> CmdResult {
    let manifest = a.corpus.load(Some(&a.audio), Some(&a.alignments))?;
    let cfg = match &a.config {
        Some(p) => {
            let kv = KvFile::load(p)?;
            for k in kv.unknown_keys(&ProminenceConfig::KEYS) {
                log::warn!("{}: unknown key {k:?} ignored", p.display());
            }
            ProminenceConfig::from_kv(&kv)?
        }
        None => ProminenceConfig::default(),
    };
    let rows = prosody_table(&manifest, &cfg)?;
    write_prosody_csv(&a.out, &rows)?;
    log::info!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn givenness(a: GivennessArgs) -> CmdResult {
    let manifest = a.corpus.load(None, None)?;
    let records = assign_distances(
        &manifest,
        GivennessOptions {
            lookback: a.lookback,
            reset_at_chapter: !a.no_chapter_reset,
        },
    );
    write_givenness_csv(&a.out, &records)?;
    Ok(())
}

fn join(a: JoinArgs) -> CmdResult {
    let manifest = a.corpus.load(None, None)?;
    let sup = read_surprisal_csv(&a.surprisal)?;
    let pros = read_prosody_csv(&a.prosody)?;
    let giv = a.givenness.as_deref().map(read_givenness_csv).transpose()?;
    let (records, report) = join_records(&sup, &pros, giv.as_deref(), &manifest, a.max_loss)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_records_csv(&a.out.join("records.csv"), &records)?;
    let text = join_report_text(&report);
    write_atomic(&a.out.join("join_report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> CmdResult {
    let records = read_records_csv(&a.records.join("records.csv"))?;
    let models: Vec<String> = if a.models.is_empty() {
        let mut m: Vec<String> = record_variants(&records)
            .iter()
            .filter_map(|v| v.split_once(':').map(|(model, _)| model.to_string()))
            .collect();
        m.dedup();
        m
    } else {
        a.models
    };
    let files = analyze_into(&records, &models, a.lookback, true, &a.out)?;
    for f in files {
        println!("{}", a.out.join(f).display());
    }
    Ok(())
}

fn scatter(a: ScatterArgs) -> CmdResult {
    let records = read_records_csv(&a.records.join("records.csv"))?;
    let variant = resolve_variant(&a.variant, &record_variants(&records))?;
    let measure = Measure::ALL
        .into_iter()
        .find(|m| m.name() == a.measure)
        .ok_or_else(|| invalid(format!("unknown measure {:?}", a.measure)))?;
    let json = serde_json::to_string(&scatter_export(&records, &variant, measure)).context("serializing scatter")?;
    match &a.out {
        Some(p) => write_atomic(p, (json + "\n").as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

fn synth_eval(a: SynthEvalArgs) -> CmdResult {
    let reference = read_predictions_csv(&a.reference)?;
    let classes = read_word_classes_csv(&a.word_classes)?;
    let mut systems = Vec::new();
    for spec in &a.systems {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| invalid(format!("--systems entry {spec:?} is not name=path")))?;
        systems.push((name.to_string(), read_predictions_csv(Path::new(path))?));
    }
    let report = evaluate_systems(&reference, &systems, &classes)?;
    write_atomic(&a.out.join("eval.csv"), report.to_csv()?.as_bytes())?;
    let table = report.to_table();
    write_atomic(&a.out.join("eval_table.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn word_classes(a: WordClassesArgs) -> CmdResult {
    let manifest = a.corpus.load(None, None)?;
    let body = word_classes_csv(&word_classes_from_manifest(&manifest))?;
    write_atomic(&a.out, body.as_bytes())?;
    Ok(())
}

fn run(a: RunArgs) -> CmdResult {
    let (config, kv) = PipelineConfig::load(&a.config).map_err(|e| Failure {
        code: 2,
        error: e.into(),
    })?;
    let diags = validate_config(&config, Some(&kv));
    for d in &diags {
        match d.severity {
            Severity::Warning => log::warn!("{}: {}", d.key, d.message),
            Severity::Error => log::error!("{}: {}", d.key, d.message),
        }
    }
    if has_errors(&diags) {
        return Err(invalid(format!("{} has configuration errors", a.config.display())));
    }
    if a.check {
        println!("{}: ok", a.config.display());
        return Ok(());
    }
    let report = run_pipeline(&config)?;
    for (stage, status) in &report.stages {
        let s = match status {
            StageStatus::Ran => "ran",
            StageStatus::Skipped => "skipped",
        };
        println!("{stage:<11} {s}");
    }
    Ok(())
}
