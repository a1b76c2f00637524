//! Word surprisal from token log-probabilities.
//!
//! A word's surprisal is the left-to-right sum of its tokens' surprisals,
//! each `-log2 P(token | preceding text)`. Context is built from whole
//! preceding segments of the same chapter (`sup_0` .. `sup_5`).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::lm::{ScoreBackend, ScoreRequest, ScoredText, TokenLogProb, UnigramModel};
use crate::text;

pub const MAX_CONTEXT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    Unigram,
    Context(usize),
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Unigram => f.write_str("unigram"),
            Variant::Context(k) => write!(f, "sup_{k}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "unigram" {
            return Ok(Variant::Unigram);
        }
        s.strip_prefix("sup_")
            .and_then(|k| k.parse().ok())
            .map(Variant::Context)
            .ok_or_else(|| Error::Validation(format!("unknown surprisal variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextSpec {
    n_segments: usize,
}

impl ContextSpec {
    pub fn new(n_segments: usize) -> Result<Self> {
        Self::bounded(n_segments, MAX_CONTEXT)
    }

    pub fn bounded(n_segments: usize, max: usize) -> Result<Self> {
        if n_segments > max {
            return Err(Error::Validation(format!(
                "context size {n_segments} outside 0..={max}"
            )));
        }
        Ok(ContextSpec { n_segments })
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn variant(&self) -> Variant {
        Variant::Context(self.n_segments)
    }
}

/// Returns `(context, target)`. The context is up to `n_segments` preceding
/// segments of the same chapter, oldest first, joined with `joiner`.
pub fn build_context(
    manifest: &CorpusManifest,
    segment_id: &str,
    spec: ContextSpec,
    joiner: &str,
) -> Result<(String, String)> {
    let pos = manifest
        .position(segment_id)
        .ok_or_else(|| Error::Lookup(format!("segment {segment_id}")))?;
    let target = &manifest.segments[pos];
    let mut first = pos;
    while first > 0 && pos - first < spec.n_segments && manifest.segments[first - 1].chapter_id == target.chapter_id {
        first -= 1;
    }
    let context = manifest.segments[first..pos]
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(joiner);
    Ok((context, target.text.clone()))
}

pub fn token_surprisal_bits(t: &TokenLogProb) -> Result<Option<f64>> {
    match t.logprob {
        None => Ok(None),
        Some(lp) if lp.is_nan() || lp > 0.0 => Err(Error::Validation(format!(
            "token {:?} has positive logprob {lp}",
            t.text
        ))),
        Some(lp) => Ok(Some(-lp / std::f64::consts::LN_2)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordAggregate {
    /// Sum over tokens with a defined logprob.
    pub partial_bits: f64,
    /// False when any assigned token had a null logprob.
    pub complete: bool,
    pub tokens: Vec<usize>,
}

impl WordAggregate {
    pub fn bits(&self) -> Option<f64> {
        self.complete.then_some(self.partial_bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub words: Vec<WordAggregate>,
    /// Target tokens attached to no word (whitespace-only tokens, or
    /// punctuation when the target has no words at all).
    pub orphans: Vec<usize>,
    pub orphan_bits: f64,
    /// Sum over all target tokens, in token order.
    pub target_bits: f64,
}

/// Assigns every target token (start offset at or after the context) to the
/// word whose span contains its midpoint. Tokens outside every span attach
/// to the preceding word (following word at the start) unless they are pure
/// whitespace, which go to the orphan bucket.
pub fn aggregate_word_surprisal(scored: &ScoredText, word_spans: &[(usize, usize)]) -> Result<Aggregation> {
    for (i, &(s, e)) in word_spans.iter().enumerate() {
        if s < scored.context_char_len || e > scored.text.len() || e <= s {
            return Err(Error::Validation(format!(
                "word span {i} ({s}..{e}) lies outside the target region"
            )));
        }
        if i > 0 && word_spans[i - 1].1 > s {
            return Err(Error::Validation(format!("word spans {} and {i} overlap", i - 1)));
        }
    }

    let mut words: Vec<WordAggregate> = word_spans
        .iter()
        .map(|_| WordAggregate {
            partial_bits: 0.0,
            complete: true,
            tokens: Vec::new(),
        })
        .collect();
    let mut orphans = Vec::new();
    let mut orphan_bits = 0.0;
    let mut target_bits = 0.0;

    for (ti, tok) in scored.tokens.iter().enumerate() {
        if tok.start < scored.context_char_len {
            continue;
        }
        let bits = token_surprisal_bits(tok)?;
        target_bits += bits.unwrap_or(0.0);
        let mid2 = tok.start + tok.end;
        // Number of words starting at or before the midpoint.
        let before = word_spans.partition_point(|&(s, _)| 2 * s <= mid2);
        let inside = before > 0 && mid2 < 2 * word_spans[before - 1].1;
        let owner = if inside {
            Some(before - 1)
        } else if tok.text.trim().is_empty() || word_spans.is_empty() {
            None
        } else if before > 0 {
            Some(before - 1)
        } else {
            Some(0)
        };
        match owner {
            Some(w) => {
                let agg = &mut words[w];
                match bits {
                    Some(b) => agg.partial_bits += b,
                    None => agg.complete = false,
                }
                agg.tokens.push(ti);
            }
            None => {
                orphan_bits += bits.unwrap_or(0.0);
                orphans.push(ti);
            }
        }
    }

    if let Some(i) = words.iter().position(|w| w.tokens.is_empty()) {
        let (start, end) = word_spans[i];
        return Err(Error::Coverage {
            word: scored.text[start..end].to_string(),
            start,
            end,
        });
    }
    Ok(Aggregation {
        words,
        orphans,
        orphan_bits,
        target_bits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSurprisal {
    pub segment_id: String,
    pub word_index: usize,
    pub word: String,
    pub variant: Variant,
    pub model_id: String,
    /// `None` when a constituent token carried no logprob.
    pub bits: Option<f64>,
    pub n_tokens: usize,
}

/// Word rows for one scored segment.
pub fn segment_surprisal(scored: &ScoredText, segment_id: &str, target: &str) -> Result<Vec<WordSurprisal>> {
    let offset = scored.target_offset(target).ok_or_else(|| {
        Error::Validation(format!(
            "segment {segment_id}: scored text does not end with the target"
        ))
    })?;
    let words = text::words(target);
    let spans: Vec<(usize, usize)> = words.iter().map(|w| (w.start + offset, w.end + offset)).collect();
    let agg = aggregate_word_surprisal(scored, &spans)?;
    Ok(words
        .iter()
        .zip(agg.words)
        .enumerate()
        .map(|(i, (w, a))| WordSurprisal {
            segment_id: segment_id.to_string(),
            word_index: i,
            word: w.stripped().to_string(),
            variant: Variant::Context(scored.context_sentences),
            model_id: scored.model_id.clone(),
            bits: a.bits(),
            n_tokens: a.tokens.len(),
        })
        .collect())
}

/// Score requests for every segment × spec, segment-major.
pub fn score_requests(
    manifest: &CorpusManifest,
    specs: &[ContextSpec],
    model_id: &str,
    joiner: &str,
) -> Result<Vec<ScoreRequest>> {
    let mut out = Vec::with_capacity(manifest.segments.len() * specs.len());
    for seg in &manifest.segments {
        for spec in specs {
            let (context, target) = build_context(manifest, &seg.id, *spec, joiner)?;
            out.push(ScoreRequest {
                model_id: model_id.to_string(),
                segment_id: seg.id.clone(),
                context_sentences: spec.n_segments(),
                context,
                target,
                joiner: joiner.to_string(),
            });
        }
    }
    Ok(out)
}

/// One row per word occurrence × context variant, in segment order, then
/// variant order as given, then word order.
pub fn surprisal_table(
    manifest: &CorpusManifest,
    backend: &dyn ScoreBackend,
    specs: &[ContextSpec],
    model_id: &str,
    joiner: &str,
) -> Result<Vec<WordSurprisal>> {
    let requests = score_requests(manifest, specs, model_id, joiner)?;
    let scored = backend.score_all(&requests)?;
    let rows: Vec<Vec<WordSurprisal>> = requests
        .par_iter()
        .zip(scored.par_iter())
        .map(|(req, sc)| {
            segment_surprisal(sc, &req.segment_id, &req.target).map_err(|e| match e {
                Error::Coverage { .. } | Error::Validation(_) => Error::Validation(format!(
                    "segment {} ({} sup_{}): {e}",
                    req.segment_id, req.model_id, req.context_sentences
                )),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Context-free rows from a unigram model. `label` fills the model column.
pub fn unigram_table(manifest: &CorpusManifest, model: &UnigramModel, label: &str) -> Vec<WordSurprisal> {
    manifest
        .segments
        .iter()
        .flat_map(|seg| {
            text::words(&seg.text)
                .into_iter()
                .enumerate()
                .map(move |(i, w)| WordSurprisal {
                    segment_id: seg.id.clone(),
                    word_index: i,
                    word: w.stripped().to_string(),
                    variant: Variant::Unigram,
                    model_id: label.to_string(),
                    bits: Some(model.surprisal_bits(w.stripped())),
                    n_tokens: 1,
                })
        })
        .collect()
}

pub const SURPRISAL_HEADER: [&str; 7] = [
    "segment_id",
    "word_index",
    "word",
    "variant",
    "model_id",
    "bits",
    "n_tokens",
];

pub fn write_surprisal_csv(path: &Path, rows: &[WordSurprisal]) -> Result<()> {
    fs::write(path, surprisal_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn surprisal_csv(rows: &[WordSurprisal]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SURPRISAL_HEADER)?;
    for r in rows {
        w.write_record([
            r.segment_id.clone(),
            r.word_index.to_string(),
            r.word.clone(),
            r.variant.to_string(),
            r.model_id.clone(),
            r.bits.map(|b| b.to_string()).unwrap_or_default(),
            r.n_tokens.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?).expect("csv output is utf-8"))
}

pub fn read_surprisal_csv(path: &Path) -> Result<Vec<WordSurprisal>> {
    let mut r = csv::Reader::from_path(path)?;
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |what: &str| Error::parse(&origin, line, format!("bad {what}"));
        out.push(WordSurprisal {
            segment_id: field(0).to_string(),
            word_index: field(1).parse().map_err(|_| bad("word_index"))?,
            word: field(2).to_string(),
            variant: field(3).parse()?,
            model_id: field(4).to_string(),
            bits: match field(5) {
                "" => None,
                b => Some(b.parse().map_err(|_| bad("bits"))?),
            },
            n_tokens: field(6).parse().map_err(|_| bad("n_tokens"))?,
        });
    }
    Ok(out)
}
