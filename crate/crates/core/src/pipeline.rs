//! End-to-end run: score → surprisal → prominence → givenness → join →
//! analyze, each stage writing into one artifact directory.
//!
//! Every stage records a stamp in `stamps/<stage>.json`: a fingerprint of
//! its inputs (file contents and the settings it depends on, never paths or
//! times) and the hashes of the files it wrote. A stage is skipped when the
//! fingerprint matches and its outputs are intact, so an unchanged rerun does
//! no work and a deleted artifact is rebuilt without touching earlier stages.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    correlation_grid, direction_checks, direction_checks_text, join_records, join_report_text, read_records_csv,
    record_variants, records_givenness_profile, scatter_export, write_records_csv, Group, Measure, DEFAULT_MAX_LOSS,
};
use crate::corpus::{default_stopwords, load_manifest, load_stopwords, CorpusLayout, CorpusManifest, TextField};
use crate::error::{Error, Result};
use crate::givenness::{
    assign_distances, profile_csv, read_givenness_csv, write_givenness_csv, GivennessOptions, DEFAULT_LOOKBACK,
};
use crate::kv::KvFile;
use crate::lm::{to_jsonl, FileBackend, HttpBackend, ScoreBackend, ServiceConfig, UnigramModel};
use crate::prominence::{prosody_table, read_prosody_csv, write_prosody_csv, ProminenceConfig};
use crate::surprisal::{
    read_surprisal_csv, score_requests, surprisal_table, unigram_table, write_surprisal_csv, ContextSpec, MAX_CONTEXT,
};

pub const WORKERS_ENV: &str = "PROSIGN_WORKERS";
pub const STAGES: [&str; 6] = ["score", "surprisal", "prominence", "givenness", "join", "analyze"];

/// Window (in sentences) for the repeated-word direction check.
const REPEAT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    File,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "file" => Ok(BackendKind::File),
            "http" => Ok(BackendKind::Http),
            other => Err(Error::Validation(format!(
                "backend must be file or http, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub metadata: PathBuf,
    pub audio_dir: Option<PathBuf>,
    pub alignment_dir: Option<PathBuf>,
    /// Bundled English list when unset.
    pub stopwords: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub backend: BackendKind,
    /// Scored JSONL inputs for the file backend.
    pub scored: Vec<PathBuf>,
    pub endpoint: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    pub max_context_bytes: Option<usize>,
    pub models: Vec<String>,
    pub contexts: Vec<usize>,
    pub max_context: usize,
    pub joiner: String,
    pub text_field: TextField,
    pub out_dir: PathBuf,
    pub prominence: ProminenceConfig,
    pub lookback: usize,
    pub reset_at_chapter: bool,
    pub max_join_loss: f64,
    pub word_class_analysis: bool,
    pub workers: Option<usize>,
}

impl PipelineConfig {
    pub fn new(metadata: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            metadata: metadata.into(),
            audio_dir: None,
            alignment_dir: None,
            stopwords: None,
            counts: None,
            backend: BackendKind::File,
            scored: Vec::new(),
            endpoint: None,
            cache_dir: None,
            max_in_flight: 4,
            max_context_bytes: None,
            models: Vec::new(),
            contexts: (0..=MAX_CONTEXT).collect(),
            max_context: MAX_CONTEXT,
            joiner: " ".to_string(),
            text_field: TextField::Normalized,
            out_dir: out_dir.into(),
            prominence: ProminenceConfig::default(),
            lookback: DEFAULT_LOOKBACK,
            reset_at_chapter: true,
            max_join_loss: DEFAULT_MAX_LOSS,
            word_class_analysis: true,
            workers: None,
        }
    }

    pub const KEYS: [&'static str; 22] = [
        "metadata",
        "audio_dir",
        "alignment_dir",
        "stopwords",
        "counts",
        "backend",
        "scored",
        "endpoint",
        "cache_dir",
        "max_in_flight",
        "max_context_bytes",
        "models",
        "contexts",
        "max_context",
        "joiner",
        "text_field",
        "out_dir",
        "lookback",
        "reset_at_chapter",
        "max_join_loss",
        "word_class_analysis",
        "workers",
    ];

    /// Reads the flat key-value config. Relative paths resolve against
    /// `base` (normally the config file's directory). Range checks are left
    /// to [`validate_config`].
    pub fn from_kv(kv: &KvFile, base: &Path) -> Result<Self> {
        let path = |key: &str| -> Option<PathBuf> { kv.raw(key).filter(|v| !v.is_empty()).map(|v| base.join(v)) };
        let metadata = path("metadata").ok_or_else(|| Error::Validation("config lacks `metadata`".into()))?;
        let out_dir = path("out_dir").ok_or_else(|| Error::Validation("config lacks `out_dir`".into()))?;
        let mut c = PipelineConfig::new(metadata, out_dir);
        c.audio_dir = path("audio_dir");
        c.alignment_dir = path("alignment_dir");
        c.stopwords = path("stopwords");
        c.counts = path("counts");
        c.cache_dir = path("cache_dir");
        if let Some(b) = kv.get("backend")? {
            c.backend = b;
        }
        if let Some(list) = kv.list::<String>("scored")? {
            c.scored = list.into_iter().map(|p| base.join(p)).collect();
        }
        c.endpoint = kv.raw("endpoint").filter(|v| !v.is_empty()).map(str::to_string);
        if let Some(v) = kv.get("max_in_flight")? {
            c.max_in_flight = v;
        }
        c.max_context_bytes = kv.get("max_context_bytes")?;
        if let Some(m) = kv.list("models")? {
            c.models = m;
        }
        if let Some(ctx) = kv.list("contexts")? {
            c.contexts = ctx;
        }
        if let Some(v) = kv.get("max_context")? {
            c.max_context = v;
        }
        if let Some(j) = kv.raw("joiner") {
            c.joiner = unescape(j);
        }
        if let Some(t) = kv.get("text_field")? {
            c.text_field = t;
        }
        if let Some(v) = kv.get("lookback")? {
            c.lookback = v;
        }
        if let Some(v) = kv.get("reset_at_chapter")? {
            c.reset_at_chapter = v;
        }
        if let Some(v) = kv.get("max_join_loss")? {
            c.max_join_loss = v;
        }
        if let Some(v) = kv.get("word_class_analysis")? {
            c.word_class_analysis = v;
        }
        c.workers = kv.get("workers")?;
        c.prominence = prominence_from_kv_unchecked(kv)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<(Self, KvFile)> {
        let kv = KvFile::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::from_kv(&kv, base)?, kv))
    }

    /// Worker count: `PROSIGN_WORKERS` if set, else the config value.
    pub fn effective_workers(&self) -> Result<Option<usize>> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .map(Some)
                .ok_or_else(|| Error::Validation(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
            Err(_) => Ok(self.workers),
        }
    }
}

/// `\t`, `\n` and `\\` escapes so joiners can be written in a flat file.
fn unescape(s: &str) -> String {
    let mut out = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('s') => out.push(' '),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Prominence overrides without validation, so bad values surface as
/// diagnostics rather than a load failure.
fn prominence_from_kv_unchecked(kv: &KvFile) -> Result<ProminenceConfig> {
    match ProminenceConfig::from_kv(kv) {
        Ok(c) => Ok(c),
        Err(Error::Validation(_)) => {
            let mut c = ProminenceConfig::default();
            macro_rules! set {
                ($field:expr, $key:literal) => {
                    if let Some(v) = kv.get($key)? {
                        $field = v;
                    }
                };
            }
            set!(c.frame_shift_s, "frame_shift_s");
            set!(c.window_s, "window_s");
            set!(c.f0_min_hz, "f0_min_hz");
            set!(c.f0_max_hz, "f0_max_hz");
            set!(c.voicing_threshold, "voicing_threshold");
            set!(c.silence_db, "silence_db");
            set!(c.octave_cost, "octave_cost");
            set!(c.octave_jump_cost, "octave_jump_cost");
            set!(c.voiced_unvoiced_cost, "voiced_unvoiced_cost");
            set!(c.energy_floor_db, "energy_floor_db");
            set!(c.n_scales, "n_scales");
            set!(c.base_scale_s, "base_scale_s");
            set!(c.band.0, "band_lo_s");
            set!(c.band.1, "band_hi_s");
            set!(c.weights.f0, "weight_f0");
            set!(c.weights.energy, "weight_energy");
            set!(c.weights.duration, "weight_duration");
            Ok(c)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level}: {}: {}", self.key, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Checks every path, range and enum in the config. `kv`, when given, is
/// scanned for unknown keys.
pub fn validate_config(c: &PipelineConfig, kv: Option<&KvFile>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |key: &str, message: String| {
        out.push(Diagnostic {
            severity: Severity::Error,
            key: key.to_string(),
            message,
        })
    };
    let file_exists = |p: &Path| p.is_file();

    if !file_exists(&c.metadata) {
        err("metadata", format!("{} is not a readable file", c.metadata.display()));
    }
    for (key, dir) in [("audio_dir", &c.audio_dir), ("alignment_dir", &c.alignment_dir)] {
        match dir {
            None => err(key, "required for the prominence stage".into()),
            Some(d) if !d.is_dir() => err(key, format!("{} is not a directory", d.display())),
            _ => {}
        }
    }
    match &c.stopwords {
        Some(p) if !file_exists(p) => {
            if c.word_class_analysis {
                err(
                    "stopwords",
                    format!("{} not found but word-class analysis is on", p.display()),
                );
            } else {
                err("stopwords", format!("{} not found", p.display()));
            }
        }
        _ => {}
    }
    if let Some(p) = &c.counts {
        if !file_exists(p) {
            err("counts", format!("{} not found", p.display()));
        }
    }
    match c.backend {
        BackendKind::File => {
            if c.scored.is_empty() {
                err("scored", "the file backend needs at least one scored JSONL file".into());
            }
            for p in &c.scored {
                if !file_exists(p) {
                    err("scored", format!("{} not found", p.display()));
                }
            }
        }
        BackendKind::Http => {
            if c.endpoint.is_none() {
                err("endpoint", "the http backend needs an endpoint".into());
            }
            if c.max_in_flight == 0 {
                err("max_in_flight", "must be at least 1".into());
            }
        }
    }
    if c.models.is_empty() {
        err("models", "no model ids given".into());
    }
    if c.models
        .iter()
        .any(|m| m.is_empty() || m.contains(':') || m == "unigram")
    {
        err(
            "models",
            "model ids must be non-empty, must not contain `:` and must not be `unigram`".into(),
        );
    }
    if c.contexts.is_empty() {
        err("contexts", "no context sizes given".into());
    }
    for &k in &c.contexts {
        if k > c.max_context {
            err(
                "contexts",
                format!(
                    "context {k} exceeds the bound of {} (raise max_context to allow it)",
                    c.max_context
                ),
            );
        }
    }
    let mut sorted = c.contexts.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != c.contexts.len() {
        err("contexts", "context sizes repeat".into());
    }
    if !(0.0..=1.0).contains(&c.max_join_loss) {
        err("max_join_loss", format!("{} is not a fraction", c.max_join_loss));
    }
    if c.workers == Some(0) {
        err("workers", "must be at least 1".into());
    }
    if let Err(Error::Validation(m)) = c.prominence.validate() {
        err("prominence", m);
    }
    if c.out_dir.exists() && !c.out_dir.is_dir() {
        err(
            "out_dir",
            format!("{} exists and is not a directory", c.out_dir.display()),
        );
    }

    let mut warn = |key: &str, message: String| {
        out.push(Diagnostic {
            severity: Severity::Warning,
            key: key.to_string(),
            message,
        })
    };
    if c.max_context > MAX_CONTEXT {
        warn(
            "max_context",
            format!("{} is beyond the customary 0..={MAX_CONTEXT} range", c.max_context),
        );
    }
    if c.word_class_analysis && c.stopwords.is_none() {
        warn("stopwords", "using the bundled English stop-word list".into());
    }
    if c.backend == BackendKind::Http && c.cache_dir.is_none() {
        warn("cache_dir", "no score cache; every run queries the service".into());
    }
    if c.word_class_analysis && !(c.contexts.contains(&0) && c.contexts.contains(&5)) {
        warn(
            "contexts",
            "givenness profile and repeat check need contexts 0 and 5".into(),
        );
    }
    if let Some(kv) = kv {
        let mut known: Vec<&str> = PipelineConfig::KEYS.to_vec();
        known.extend(ProminenceConfig::KEYS);
        for k in kv.unknown_keys(&known) {
            warn(k, "unknown key ignored".into());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Stamps

#[derive(Default)]
struct Fingerprint(Sha256);

impl Fingerprint {
    fn field(&mut self, key: &str, value: &[u8]) -> &mut Self {
        for part in [key.as_bytes(), value] {
            self.0.update((part.len() as u64).to_le_bytes());
            self.0.update(part);
        }
        self
    }

    fn str(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.field(key, value.to_string().as_bytes())
    }

    fn file(&mut self, key: &str, path: &Path) -> Result<&mut Self> {
        let h = hash_file(path)?;
        Ok(self.field(key, h.as_bytes()))
    }

    fn finish(&self) -> String {
        hex::encode(self.0.clone().finalize())
    }
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Stamp {
    stage: String,
    inputs: String,
    outputs: BTreeMap<String, String>,
}

fn stamp_path(out: &Path, stage: &str) -> PathBuf {
    out.join("stamps").join(format!("{stage}.json"))
}

fn up_to_date(out: &Path, stage: &str, inputs: &str) -> bool {
    let Ok(body) = fs::read_to_string(stamp_path(out, stage)) else {
        return false;
    };
    let Ok(stamp) = serde_json::from_str::<Stamp>(&body) else {
        return false;
    };
    stamp.inputs == inputs
        && stamp
            .outputs
            .iter()
            .all(|(rel, h)| hash_file(&out.join(rel)).is_ok_and(|actual| &actual == h))
}

fn write_stamp(out: &Path, stage: &str, inputs: &str, outputs: &[String]) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for rel in outputs {
        hashes.insert(rel.clone(), hash_file(&out.join(rel))?);
    }
    let stamp = Stamp {
        stage: stage.to_string(),
        inputs: inputs.to_string(),
        outputs: hashes,
    };
    write_atomic(
        &stamp_path(out, stage),
        (serde_json::to_string_pretty(&stamp)? + "\n").as_bytes(),
    )
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Running

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineReport {
    pub out_dir: PathBuf,
    pub stages: Vec<(&'static str, StageStatus)>,
}

impl PipelineReport {
    pub fn status(&self, stage: &str) -> Option<StageStatus> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, st)| *st)
    }
}

fn in_stage<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage,
            source: Box::new(other),
        },
    })
}

fn load_corpus(c: &PipelineConfig) -> Result<CorpusManifest> {
    let layout = CorpusLayout {
        text_field: c.text_field,
        audio_dir: c.audio_dir.clone(),
        alignment_dir: c.alignment_dir.clone(),
    };
    let stop = match &c.stopwords {
        Some(p) => load_stopwords(p)?,
        None => default_stopwords(),
    };
    let m = load_manifest(&c.metadata, &layout)?.with_stopwords(stop);
    m.validate()?;
    Ok(m)
}

fn context_specs(c: &PipelineConfig) -> Result<Vec<ContextSpec>> {
    c.contexts
        .iter()
        .map(|&k| ContextSpec::bounded(k, c.max_context))
        .collect()
}

fn scored_files(out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join("scored");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn label_file_name(label: &str) -> String {
    label.replace([':', '/', '\\'], "_")
}

/// Runs every stage that is out of date. Configuration problems come back
/// as [`Error::Validation`]; stage failures as [`Error::Stage`].
pub fn run_pipeline(c: &PipelineConfig) -> Result<PipelineReport> {
    let diags = validate_config(c, None);
    if has_errors(&diags) {
        return Err(Error::Validation(
            diags
                .iter()
                .filter(|d| d.severity == Severity::Error)
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("\n"),
        ));
    }
    let workers = c.effective_workers()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_stages(c))
}

fn run_stages(c: &PipelineConfig) -> Result<PipelineReport> {
    let out = c.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest = in_stage("corpus", || load_corpus(c))?;
    let specs = in_stage("corpus", || context_specs(c))?;
    let mut report = PipelineReport {
        out_dir: out.to_path_buf(),
        stages: Vec::new(),
    };

    let metadata_hash = in_stage("corpus", || hash_file(&c.metadata))?;
    let stop_hash = match &c.stopwords {
        Some(p) => in_stage("corpus", || hash_file(p))?,
        None => "bundled".to_string(),
    };
    let contexts = c.contexts.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let models = c.models.join(",");

    let mut run = |stage: &'static str, inputs: String, body: &mut dyn FnMut() -> Result<Vec<String>>| -> Result<()> {
        if up_to_date(out, stage, &inputs) {
            log::info!("{stage}: up to date");
            report.stages.push((stage, StageStatus::Skipped));
            return Ok(());
        }
        log::info!("{stage}: running");
        let written = in_stage(stage, &mut *body)?;
        in_stage(stage, || write_stamp(out, stage, &inputs, &written))?;
        report.stages.push((stage, StageStatus::Ran));
        Ok(())
    };

    // score
    let score_inputs = in_stage("score", || {
        let mut f = Fingerprint::default();
        f.str("metadata", &metadata_hash)
            .str("text_field", format!("{:?}", c.text_field))
            .str("models", &models)
            .str("contexts", &contexts)
            .str("joiner", &c.joiner);
        match c.backend {
            BackendKind::File => {
                for (i, p) in c.scored.iter().enumerate() {
                    f.file(&format!("scored{i}"), p)?;
                }
            }
            BackendKind::Http => {
                f.str("endpoint", c.endpoint.as_deref().unwrap_or_default())
                    .str("max_context_bytes", format!("{:?}", c.max_context_bytes));
            }
        }
        Ok(f.finish())
    })?;
    run("score", score_inputs, &mut || {
        let dir = out.join("scored");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mut written = Vec::new();
        match c.backend {
            BackendKind::File => {
                // Copied verbatim; parsing happens in the surprisal stage.
                for (i, p) in c.scored.iter().enumerate() {
                    let rel = format!("scored/{i:02}.jsonl");
                    let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                    write_atomic(&out.join(&rel), &bytes)?;
                    written.push(rel);
                }
            }
            BackendKind::Http => {
                let mut svc = ServiceConfig::new(c.endpoint.clone().expect("validated"));
                svc.cache_dir = c.cache_dir.clone();
                svc.max_in_flight = c.max_in_flight;
                svc.max_context_bytes = c.max_context_bytes;
                let backend = HttpBackend::new(svc)?;
                let mut records = Vec::new();
                for model in &c.models {
                    let requests = score_requests(&manifest, &specs, model, &c.joiner)?;
                    records.extend(backend.score_all(&requests)?);
                }
                let rel = "scored/http.jsonl".to_string();
                write_atomic(&out.join(&rel), to_jsonl(&records)?.as_bytes())?;
                written.push(rel);
            }
        }
        Ok(written)
    })?;

    // surprisal
    let surprisal_inputs = in_stage("surprisal", || {
        let mut f = Fingerprint::default();
        f.str("metadata", &metadata_hash)
            .str("text_field", format!("{:?}", c.text_field))
            .str("models", &models)
            .str("contexts", &contexts)
            .str("joiner", &c.joiner);
        for p in scored_files(out)? {
            f.file("scored", &p)?;
        }
        if let Some(p) = &c.counts {
            f.file("counts", p)?;
        }
        Ok(f.finish())
    })?;
    run("surprisal", surprisal_inputs, &mut || {
        let mut records = Vec::new();
        for p in scored_files(out)? {
            let loaded = crate::lm::load_scored_file(&p).map_err(|e| match e {
                Error::Record { index, message } => Error::Record {
                    index,
                    message: format!("{}: {message}", p.display()),
                },
                other => other,
            })?;
            records.extend(loaded);
        }
        let backend = FileBackend::new(records);
        let mut rows = Vec::new();
        for model in &c.models {
            rows.extend(surprisal_table(&manifest, &backend, &specs, model, &c.joiner)?);
        }
        if let Some(p) = &c.counts {
            rows.extend(unigram_table(&manifest, &UnigramModel::load(p)?, "unigram"));
        }
        write_surprisal_csv(&out.join("surprisal.csv"), &rows)?;
        Ok(vec!["surprisal.csv".into()])
    })?;

    // prominence
    let prominence_inputs = in_stage("prominence", || {
        let mut f = Fingerprint::default();
        f.str("metadata", &metadata_hash)
            .str("text_field", format!("{:?}", c.text_field))
            .str("config", format!("{:?}", c.prominence));
        for seg in &manifest.segments {
            for p in [&seg.audio_path, &seg.alignment_path].into_iter().flatten() {
                f.file(&seg.id, p)?;
            }
        }
        Ok(f.finish())
    })?;
    run("prominence", prominence_inputs, &mut || {
        let rows = prosody_table(&manifest, &c.prominence)?;
        write_prosody_csv(&out.join("prosody.csv"), &rows)?;
        Ok(vec!["prosody.csv".into()])
    })?;

    // givenness
    let giv_opts = GivennessOptions {
        lookback: c.lookback,
        reset_at_chapter: c.reset_at_chapter,
    };
    let givenness_inputs = {
        let mut f = Fingerprint::default();
        f.str("metadata", &metadata_hash)
            .str("text_field", format!("{:?}", c.text_field))
            .str("stopwords", &stop_hash)
            .str("options", format!("{giv_opts:?}"));
        f.finish()
    };
    run("givenness", givenness_inputs, &mut || {
        let records = assign_distances(&manifest, giv_opts);
        write_givenness_csv(&out.join("givenness.csv"), &records)?;
        Ok(vec!["givenness.csv".into()])
    })?;

    // join
    let join_inputs = in_stage("join", || {
        let mut f = Fingerprint::default();
        f.str("metadata", &metadata_hash)
            .str("text_field", format!("{:?}", c.text_field))
            .str("stopwords", &stop_hash)
            .str("max_loss", c.max_join_loss)
            .file("surprisal", &out.join("surprisal.csv"))?
            .file("prosody", &out.join("prosody.csv"))?
            .file("givenness", &out.join("givenness.csv"))?;
        Ok(f.finish())
    })?;
    run("join", join_inputs, &mut || {
        let sup = read_surprisal_csv(&out.join("surprisal.csv"))?;
        let pros = read_prosody_csv(&out.join("prosody.csv"))?;
        let giv = read_givenness_csv(&out.join("givenness.csv"))?;
        let (records, rep) = join_records(&sup, &pros, Some(&giv), &manifest, c.max_join_loss)?;
        let dir = out.join("records");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_records_csv(&dir.join("records.csv"), &records)?;
        write_atomic(&out.join("records/join_report.txt"), join_report_text(&rep).as_bytes())?;
        Ok(vec!["records/records.csv".into(), "records/join_report.txt".into()])
    })?;

    // analyze
    let analyze_inputs = in_stage("analyze", || {
        let mut f = Fingerprint::default();
        f.str("models", &models)
            .str("lookback", c.lookback)
            .str("word_classes", c.word_class_analysis)
            .file("records", &out.join("records/records.csv"))?;
        Ok(f.finish())
    })?;
    run("analyze", analyze_inputs, &mut || {
        let records = read_records_csv(&out.join("records/records.csv"))?;
        analyze_into(
            &records,
            &c.models,
            c.lookback,
            c.word_class_analysis,
            &out.join("analysis"),
        )
        .map(|files| files.into_iter().map(|f| format!("analysis/{f}")).collect())
    })?;

    Ok(report)
}

/// Writes the analysis artifacts for a records table into `dir` and
/// returns the file names relative to it.
pub fn analyze_into(
    records: &[crate::analysis::WordRecord],
    models: &[String],
    lookback: usize,
    word_classes: bool,
    dir: &Path,
) -> Result<Vec<String>> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut written = Vec::new();
    let variants = record_variants(records);
    let groups: &[Group] = if word_classes { &Group::ALL } else { &[Group::All] };
    let grid = correlation_grid(records, &variants, &Measure::ALL, groups);
    write_atomic(&dir.join("correlations.csv"), grid.to_csv()?.as_bytes())?;
    written.push("correlations.csv".to_string());

    let mut notes = String::new();
    for model in models {
        match records_givenness_profile(records, model, lookback) {
            Ok(rows) => {
                let name = format!("givenness_profile_{}.csv", label_file_name(model));
                write_atomic(&dir.join(&name), profile_csv(&rows)?.as_bytes())?;
                written.push(name);
            }
            Err(e) => notes.push_str(&format!("givenness profile [{model}]: skipped ({e})\n")),
        }
    }
    if word_classes {
        notes.push_str(&direction_checks_text(&direction_checks(records, REPEAT_WINDOW)));
        for v in &variants {
            let s = scatter_export(records, v, Measure::Prominence);
            let name = format!("scatter/{}__prominence.json", label_file_name(v));
            write_atomic(&dir.join(&name), (serde_json::to_string(&s)? + "\n").as_bytes())?;
            written.push(name);
        }
    }
    write_atomic(&dir.join("checks.txt"), notes.as_bytes())?;
    written.push("checks.txt".to_string());
    written.sort();
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(dir: &Path) -> PipelineConfig {
        fs::write(dir.join("meta.txt"), "A-1|a|A.\n").unwrap();
        fs::write(dir.join("s.jsonl"), "").unwrap();
        fs::create_dir_all(dir.join("wav")).unwrap();
        fs::create_dir_all(dir.join("al")).unwrap();
        let mut c = PipelineConfig::new(dir.join("meta.txt"), dir.join("out"));
        c.audio_dir = Some(dir.join("wav"));
        c.alignment_dir = Some(dir.join("al"));
        c.scored = vec![dir.join("s.jsonl")];
        c.models = vec!["gpt2".into()];
        c
    }

    fn errors(d: &[Diagnostic]) -> Vec<&str> {
        d.iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.key.as_str())
            .collect()
    }

    #[test]
    fn valid_config_has_no_errors() {
        let dir = tempfile::tempdir().unwrap();
        let c = base_config(dir.path());
        assert!(errors(&validate_config(&c, None)).is_empty());
    }

    #[test]
    fn context_bound_is_overridable() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = base_config(dir.path());
        c.contexts = vec![0, 6];
        assert_eq!(errors(&validate_config(&c, None)), ["contexts"]);
        c.max_context = 6;
        let d = validate_config(&c, None);
        assert!(errors(&d).is_empty());
        assert!(d
            .iter()
            .any(|d| d.key == "max_context" && d.severity == Severity::Warning));
    }

    #[test]
    fn missing_stopwords_and_empty_models_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = base_config(dir.path());
        c.stopwords = Some(dir.path().join("nope.txt"));
        c.models.clear();
        let d = validate_config(&c, None);
        let e = errors(&d);
        assert!(e.contains(&"stopwords"));
        assert!(e.contains(&"models"));
    }

    #[test]
    fn config_file_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        base_config(dir.path());
        let body = "metadata = meta.txt\nout_dir = out\naudio_dir = wav\nalignment_dir = al\n\
                    scored = s.jsonl\nmodels = gpt2\ncontexts = 0,5\njoiner = \"\\n\"\nn_scales = 10\nbogus = 1\n";
        fs::write(dir.path().join("run.cfg"), body).unwrap();
        let (c, kv) = PipelineConfig::load(&dir.path().join("run.cfg")).unwrap();
        assert_eq!(c.metadata, dir.path().join("meta.txt"));
        assert_eq!(c.contexts, [0, 5]);
        assert_eq!(c.joiner, "\n");
        assert_eq!(c.prominence.n_scales, 10);
        let d = validate_config(&c, Some(&kv));
        assert!(errors(&d).is_empty(), "{d:?}");
        assert!(d.iter().any(|d| d.key == "bogus"));
    }

    #[test]
    fn bad_prominence_values_become_diagnostics() {
        let kv = KvFile::parse("metadata = m\nout_dir = o\nband_lo_s = 9\nband_hi_s = 10\n", "c").unwrap();
        let c = PipelineConfig::from_kv(&kv, Path::new("/")).unwrap();
        assert!(validate_config(&c, None).iter().any(|d| d.key == "prominence"));
    }

    #[test]
    fn fingerprints_separate_fields() {
        let mut a = Fingerprint::default();
        a.str("k", "ab").str("l", "c");
        let mut b = Fingerprint::default();
        b.str("k", "a").str("l", "bc");
        assert_ne!(a.finish(), b.finish());
    }
}
