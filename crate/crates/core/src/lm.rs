//! Per-token log-probabilities from three sources behind one interface:
//! precomputed scored-text files, a remote scoring service, and a unigram
//! model built from a word-count file.
//!
//! Backends speak natural logs. Conversion to bits happens once, in
//! [`crate::surprisal`].

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::word_key;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProb {
    /// Surface form, including the tokenizer's leading-space convention.
    #[serde(rename = "t")]
    pub text: String,
    /// Natural-log conditional probability. `None` marks a token the producer
    /// could not condition (first token without a begin-of-text symbol).
    #[serde(rename = "lp")]
    pub logprob: Option<f64>,
    #[serde(rename = "s")]
    pub start: usize,
    #[serde(rename = "e")]
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub model_id: String,
    /// Requested context size in segments (the `k` of `sup_k`).
    pub context_sentences: usize,
    /// Bytes of prepended context, joiner excluded.
    pub context_char_len: usize,
    pub text: String,
    pub tokens: Vec<TokenLogProb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<String>,
}

impl ScoredText {
    /// Checks the logprob sign and exact span reconstruction. The message
    /// names the offending token or gap offsets.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.context_char_len > self.text.len() || !self.text.is_char_boundary(self.context_char_len) {
            return Err(format!(
                "context_char_len {} is not a boundary of a {}-byte text",
                self.context_char_len,
                self.text.len()
            ));
        }
        let mut cursor = 0;
        for (i, t) in self.tokens.iter().enumerate() {
            if let Some(lp) = t.logprob {
                if lp.is_nan() || lp > 0.0 {
                    return Err(format!("token {i} {:?} has logprob {lp} > 0", t.text));
                }
            }
            if t.start != cursor {
                return Err(if t.start > cursor {
                    format!("gap between offsets {cursor} and {} before token {i}", t.start)
                } else {
                    format!("token {i} starts at {} overlapping previous end {cursor}", t.start)
                });
            }
            if t.end <= t.start || t.end > self.text.len() {
                return Err(format!("token {i} has invalid span {}..{}", t.start, t.end));
            }
            match self.text.get(t.start..t.end) {
                Some(s) if s == t.text => {}
                _ => {
                    return Err(format!(
                        "token {i} {:?} does not match text at {}..{}",
                        t.text, t.start, t.end
                    ))
                }
            }
            cursor = t.end;
        }
        if cursor != self.text.len() {
            return Err(format!(
                "gap between offsets {cursor} and {} at end of text",
                self.text.len()
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(Error::Validation)
    }

    /// Byte offset where `target` begins, if the text ends with it and it
    /// lies entirely after the context.
    pub fn target_offset(&self, target: &str) -> Option<usize> {
        let off = self.text.len().checked_sub(target.len())?;
        (self.text.ends_with(target) && off >= self.context_char_len).then_some(off)
    }
}

pub fn parse_scored(body: &str) -> Result<Vec<ScoredText>> {
    let mut out = Vec::new();
    for line in body.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let index = out.len();
        let rec: ScoredText = serde_json::from_str(line).map_err(|e| Error::Record {
            index,
            message: e.to_string(),
        })?;
        rec.check().map_err(|message| Error::Record { index, message })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_scored_file(path: &Path) -> Result<Vec<ScoredText>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scored(&body)
}

pub fn to_jsonl(records: &[ScoredText]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_scored_file(path: &Path, records: &[ScoredText]) -> Result<()> {
    fs::write(path, to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Unigram model

#[derive(Debug, Clone)]
pub struct UnigramModel {
    counts: HashMap<String, u64>,
    total: u64,
    oov_count: u64,
}

impl UnigramModel {
    /// Keys are normalized with [`word_key`]; case variants are merged.
    pub fn from_counts<I, S>(counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: AsRef<str>,
    {
        let mut map: HashMap<String, u64> = HashMap::new();
        for (w, c) in counts {
            let key = word_key(w.as_ref());
            if key.is_empty() {
                continue;
            }
            *map.entry(key).or_default() += c;
        }
        let total: u64 = map.values().sum();
        if total == 0 {
            return Err(Error::Validation("unigram counts sum to zero".into()));
        }
        Ok(UnigramModel {
            counts: map,
            total,
            oov_count: 1,
        })
    }

    pub fn with_oov_count(mut self, oov_count: u64) -> Self {
        self.oov_count = oov_count.max(1);
        self
    }

    /// Parses `word<TAB>count` lines.
    pub fn parse(body: &str, origin: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (w, c) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected word<TAB>count"))?;
            let c: u64 = c
                .trim()
                .parse()
                .map_err(|_| Error::parse(origin, i + 1, format!("bad count {c:?}")))?;
            rows.push((w.to_string(), c));
        }
        Self::from_counts(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&body, &path.display().to_string())
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(&word_key(word)).copied().unwrap_or(self.oov_count)
    }

    pub fn surprisal_bits(&self, word: &str) -> f64 {
        unigram_surprisal(word, self)
    }
}

/// `-log2(count / total)`, with unseen words taking the OOV pseudo-count.
pub fn unigram_surprisal(word: &str, model: &UnigramModel) -> f64 {
    let p = model.count(word) as f64 / model.total as f64;
    -p.log2()
}

// ---------------------------------------------------------------------------
// Backends

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreRequest {
    pub model_id: String,
    pub segment_id: String,
    pub context_sentences: usize,
    pub context: String,
    pub target: String,
    pub joiner: String,
}

impl ScoreRequest {
    pub fn text(&self) -> String {
        if self.context.is_empty() {
            self.target.clone()
        } else {
            format!("{}{}{}", self.context, self.joiner, self.target)
        }
    }

    pub fn context_char_len(&self) -> usize {
        self.context.len()
    }
}

pub trait ScoreBackend: Sync {
    fn score(&self, request: &ScoreRequest) -> Result<ScoredText>;

    /// Results come back in request order.
    fn score_all(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoredText>> {
        requests.iter().map(|r| self.score(r)).collect()
    }
}

fn check_response(scored: &ScoredText, request: &ScoreRequest) -> Result<()> {
    scored.check().map_err(Error::Protocol)?;
    if scored.model_id != request.model_id {
        return Err(Error::Protocol(format!(
            "asked for model {:?}, got {:?}",
            request.model_id, scored.model_id
        )));
    }
    if scored.target_offset(&request.target).is_none() {
        return Err(Error::Protocol(format!(
            "segment {}: scored text does not end with the target sentence",
            request.segment_id
        )));
    }
    Ok(())
}

/// Serves requests from a set of scored records, looked up by
/// (model, segment, context size) when records carry a segment id and by
/// (model, exact text) otherwise.
#[derive(Debug, Default)]
pub struct FileBackend {
    records: Vec<ScoredText>,
    by_segment: HashMap<(String, String, usize), usize>,
    by_text: HashMap<(String, String), usize>,
}

impl FileBackend {
    pub fn new(records: Vec<ScoredText>) -> Self {
        let mut by_segment = HashMap::new();
        let mut by_text = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if let Some(seg) = &r.segment_id {
                by_segment
                    .entry((r.model_id.clone(), seg.clone(), r.context_sentences))
                    .or_insert(i);
            }
            by_text.entry((r.model_id.clone(), r.text.clone())).or_insert(i);
        }
        FileBackend {
            records,
            by_segment,
            by_text,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(load_scored_file(path)?))
    }

    pub fn model_ids(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.model_id.clone()).collect()
    }
}

impl ScoreBackend for FileBackend {
    fn score(&self, request: &ScoreRequest) -> Result<ScoredText> {
        let idx = self
            .by_segment
            .get(&(
                request.model_id.clone(),
                request.segment_id.clone(),
                request.context_sentences,
            ))
            .or_else(|| self.by_text.get(&(request.model_id.clone(), request.text())))
            .ok_or_else(|| {
                Error::Lookup(format!(
                    "no scored record for model {} segment {} context {}",
                    request.model_id, request.segment_id, request.context_sentences
                ))
            })?;
        let mut rec = self.records[*idx].clone();
        check_response(&rec, request)?;
        rec.context_sentences = request.context_sentences;
        rec.segment_id = Some(request.segment_id.clone());
        Ok(rec)
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Base URL; requests go to `<endpoint>/score`.
    pub endpoint: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    /// Context is trimmed from the left, at whitespace, to fit this many
    /// bytes. The target is never trimmed.
    pub max_context_bytes: Option<usize>,
}

impl ServiceConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ServiceConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(120),
            max_retries: 4,
            backoff_base: Duration::from_millis(200),
            max_in_flight: 4,
            cache_dir: None,
            max_context_bytes: None,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model_id: &'a str,
    text: &'a str,
    context_char_len: usize,
    context_sentences: usize,
}

pub struct HttpBackend {
    config: ServiceConfig,
    client: reqwest::blocking::Client,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl HttpBackend {
    pub fn new(config: ServiceConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if let Some(dir) = &config.cache_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(HttpBackend {
            config,
            client,
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.config.cache_dir.as_ref().map(|d| d.join(format!("{key}.jsonl")))
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.key_locks.lock().unwrap();
        locks.entry(key.to_string()).or_default().clone()
    }

    fn read_cache(&self, key: &str) -> Result<Option<ScoredText>> {
        let Some(path) = self.cache_path(key) else {
            return Ok(None);
        };
        match fs::read_to_string(&path) {
            Ok(body) => Ok(parse_scored(&body)?.into_iter().next()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn write_cache(&self, key: &str, rec: &ScoredText) -> Result<()> {
        let Some(path) = self.cache_path(key) else {
            return Ok(());
        };
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(to_jsonl(std::slice::from_ref(rec))?.as_bytes())
                .map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    fn post(&self, body: &WireRequest<'_>) -> Result<ScoredText> {
        let url = format!("{}/score", self.config.endpoint.trim_end_matches('/'));
        let mut attempt = 0;
        loop {
            let outcome = self.client.post(&url).json(body).send();
            let retryable = match outcome {
                Ok(resp) if resp.status().is_success() => {
                    let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
                    return serde_json::from_str(&text)
                        .map_err(|e| Error::Protocol(format!("undecodable response: {e}")));
                }
                Ok(resp) => {
                    let status = resp.status();
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(Error::Transport(format!("{url} returned {status}")));
                    }
                    format!("{url} returned {status}")
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.config.max_retries {
                return Err(Error::Transport(format!(
                    "giving up after {} attempts: {retryable}",
                    attempt + 1
                )));
            }
            log::warn!("scoring request failed ({retryable}); retrying");
            thread::sleep(self.config.backoff_base * 2u32.pow(attempt));
            attempt += 1;
        }
    }
}

/// Cache key for a (model, text) pair.
pub fn cache_key(model_id: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

/// Drops whole whitespace-delimited pieces from the left of `context` until
/// it fits in `max_bytes`.
pub fn truncate_context_left(context: &str, max_bytes: usize) -> &str {
    if context.len() <= max_bytes {
        return context;
    }
    let cut = context.len() - max_bytes;
    let mut start = context.len();
    for (i, c) in context.char_indices() {
        if i >= cut && (i == 0 || context[..i].ends_with(char::is_whitespace)) && !c.is_whitespace() {
            start = i;
            break;
        }
    }
    &context[start..]
}

impl ScoreBackend for HttpBackend {
    fn score(&self, request: &ScoreRequest) -> Result<ScoredText> {
        let mut request = request.clone();
        if let Some(max) = self.config.max_context_bytes {
            let kept = truncate_context_left(&request.context, max);
            if kept.len() != request.context.len() {
                log::debug!(
                    "segment {}: context trimmed from {} to {} bytes",
                    request.segment_id,
                    request.context.len(),
                    kept.len()
                );
                request.context = kept.to_string();
            }
        }
        let text = request.text();
        let key = cache_key(&request.model_id, &text);

        let lock = self.key_lock(&key);
        let _guard = lock.lock().unwrap();
        let mut rec = match self.read_cache(&key)? {
            Some(rec) => rec,
            None => {
                let rec = self.post(&WireRequest {
                    model_id: &request.model_id,
                    text: &text,
                    context_char_len: request.context_char_len(),
                    context_sentences: request.context_sentences,
                })?;
                check_response(&rec, &request)?;
                if !text.ends_with(&rec.text) {
                    return Err(Error::Protocol(format!(
                        "segment {}: service returned text that is not a suffix of the request",
                        request.segment_id
                    )));
                }
                self.write_cache(&key, &rec)?;
                rec
            }
        };
        check_response(&rec, &request)?;
        rec.context_sentences = request.context_sentences;
        rec.segment_id = Some(request.segment_id.clone());
        Ok(rec)
    }

    fn score_all(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoredText>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.max_in_flight.max(1))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        pool.install(|| requests.par_iter().map(|r| self.score(r)).collect())
    }
}

/// Every record in a cache directory, sorted by file name.
pub fn dump_cache(dir: &Path) -> Result<Vec<ScoredText>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let f = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&p, e))?;
            if !line.trim().is_empty() {
                out.extend(parse_scored(&line)?);
            }
        }
    }
    Ok(out)
}
