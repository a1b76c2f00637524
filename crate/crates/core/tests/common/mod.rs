//! Shared fixtures for integration tests: a deterministic fake language
//! model with GPT-2-style tokenization, and a generator for small synthetic
//! corpora (metadata, alignments and WAV audio).

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use prosign_core::corpus::{alignment_to_json, PhoneInterval, WordAlignment};
use prosign_core::lm::{ScoreBackend, ScoreRequest, ScoredText, TokenLogProb};
use prosign_core::pipeline::PipelineConfig;
use prosign_core::prominence::Audio;
use prosign_core::text::{strip_punctuation, words};
use prosign_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Splits text the way byte-level BPE tokenizers usually do: a single space
/// sticks to the following piece, other whitespace runs stand alone, letter
/// runs are cut into pieces of at most five bytes and each punctuation mark
/// is its own token.
pub fn gpt2_like_spans(text: &str) -> Vec<(usize, usize)> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let start = i;
        let mut k = i;
        if b[i].is_ascii_whitespace() {
            let mut j = i;
            while j < b.len() && b[j].is_ascii_whitespace() {
                j += 1;
            }
            if j == b.len() || b[j - 1] != b' ' {
                out.push((i, j));
                i = j;
                continue;
            }
            // The run's final space joins the next piece.
            if j - 1 > i {
                out.push((i, j - 1));
                i = j - 1;
                continue;
            }
            k = j;
        }
        let mut end = k;
        if b[k].is_ascii_alphanumeric() {
            while end < b.len() && b[end].is_ascii_alphanumeric() && end - k < 5 {
                end += 1;
            }
        } else {
            end += text[k..].chars().next().map_or(1, char::len_utf8);
        }
        out.push((start, end));
        i = end;
    }
    out
}

fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic stand-in for a causal LM. A token's surprisal depends on
/// its form and the model id; short pieces are cheap and a piece already
/// seen earlier in the text is much cheaper, so context lowers the surprisal
/// of repeated words as a real model would.
#[derive(Debug, Clone)]
pub struct FakeLm {
    pub model_id: String,
}

impl FakeLm {
    pub fn new(model_id: &str) -> Self {
        FakeLm {
            model_id: model_id.to_string(),
        }
    }

    pub fn score_text(&self, text: &str, context_char_len: usize) -> ScoredText {
        let mut seen = std::collections::HashSet::new();
        let tokens = gpt2_like_spans(text)
            .into_iter()
            .map(|(s, e)| {
                let t = &text[s..e];
                let key = t.trim().to_lowercase();
                let mut bits = 1.0 + (fnv(&format!("{}\u{1}{key}", self.model_id)) % 1000) as f64 / 1000.0 * 6.0;
                if key.len() <= 3 {
                    bits *= 0.4;
                }
                if !key.is_empty() && !seen.insert(key) {
                    bits *= 0.35;
                }
                TokenLogProb {
                    text: t.to_string(),
                    logprob: Some(-bits * std::f64::consts::LN_2),
                    start: s,
                    end: e,
                }
            })
            .collect();
        ScoredText {
            model_id: self.model_id.clone(),
            context_sentences: 0,
            context_char_len,
            text: text.to_string(),
            tokens,
            segment_id: None,
        }
    }
}

impl ScoreBackend for FakeLm {
    fn score(&self, r: &ScoreRequest) -> Result<ScoredText> {
        let mut s = self.score_text(&r.text(), r.context_char_len());
        s.model_id = r.model_id.clone();
        s.context_sentences = r.context_sentences;
        s.segment_id = Some(r.segment_id.clone());
        Ok(s)
    }
}

/// Chapters of the default synthetic corpus. Content words repeat within a
/// chapter so that givenness and context effects have something to find.
pub const CHAPTERS: [(&str, &[&str]); 3] = [
    (
        "LJ001",
        &[
            "The printer set the type by hand.",
            "Each letter of the type was cast in metal.",
            "Printing spread quickly -- within a few decades.",
            "The printer and his workers sold the books.",
            "Metal type made printing cheaper.",
        ],
    ),
    (
        "LJ002",
        &[
            "A prison stood near the river.",
            "The prison held debtors and thieves.",
            "Debtors waited for years in the cells.",
            "The river flooded the cells in winter.",
        ],
    ),
    (
        "LJ003",
        &[
            "Reformers visited the prison often.",
            "They wrote long reports about the conditions.",
            "Their reports changed the laws slowly.",
        ],
    ),
];

pub struct MiniCorpus {
    pub root: PathBuf,
    pub metadata: PathBuf,
    pub audio_dir: PathBuf,
    pub alignment_dir: PathBuf,
    pub counts: PathBuf,
}

fn segment_ids(chapters: &[(&str, &[&str])]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (ch, sentences) in chapters {
        for (i, s) in sentences.iter().enumerate() {
            out.push((format!("{ch}-{:04}", i + 1), s.to_string()));
        }
    }
    out
}

const SAMPLE_RATE: u32 = 16_000;

fn is_short_function_word(w: &str) -> bool {
    matches!(
        w.to_lowercase().as_str(),
        "the"
            | "a"
            | "of"
            | "by"
            | "in"
            | "and"
            | "his"
            | "for"
            | "was"
            | "near"
            | "they"
            | "their"
            | "about"
            | "within"
    )
}

fn push_silence(
    rng: &mut ChaCha8Rng,
    samples: &mut Vec<f64>,
    alignment: &mut Vec<WordAlignment>,
    t: &mut f64,
    dur: f64,
) {
    let n = (dur * SAMPLE_RATE as f64).round() as usize;
    let start = *t;
    samples.extend((0..n).map(|_| 0.002 * (rng.gen::<f64>() - 0.5)));
    *t += n as f64 / SAMPLE_RATE as f64;
    alignment.push(WordAlignment {
        word: String::new(),
        start_s: start,
        end_s: *t,
        phones: vec![PhoneInterval {
            label: "sil".into(),
            start_s: start,
            end_s: *t,
        }],
    });
}

/// Synthesises one utterance: each word is a harmonic tone whose pitch,
/// loudness and length depend on the word, separated by short pauses that
/// the alignment marks as silence.
pub fn synth_utterance(text: &str, seed: u64) -> (Audio, Vec<WordAlignment>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    let mut samples: Vec<f64> = Vec::new();
    let mut alignment = Vec::new();
    let mut t = 0.0;
    push_silence(&mut rng, &mut samples, &mut alignment, &mut t, 0.15);
    for w in words(text) {
        let bare = strip_punctuation(&w.surface).to_string();
        let function = is_short_function_word(&bare);
        let h = fnv(&bare.to_lowercase());
        let (f0, amp) = if function {
            (115.0 + (h % 10) as f64, 0.15)
        } else {
            (150.0 + (h % 70) as f64, 0.45 + (h % 5) as f64 * 0.05)
        };
        let dur = if function {
            0.14
        } else {
            0.16 + 0.035 * bare.len() as f64
        };
        let n = (dur * sr).round() as usize;
        let start = t;
        let mut phase: f64 = 0.0;
        for i in 0..n {
            let frac = i as f64 / n as f64;
            // Slight declination within the word and a smooth envelope.
            let f = f0 * (1.0 - 0.05 * frac);
            phase += 2.0 * std::f64::consts::PI * f / sr;
            let env = (std::f64::consts::PI * frac).sin().powf(0.5);
            let s = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
            samples.push(amp * env * s / 1.75 + 0.002 * (rng.gen::<f64>() - 0.5));
        }
        t += n as f64 / sr;
        let n_phones = bare.len().clamp(1, 4);
        let phones = (0..n_phones)
            .map(|k| PhoneInterval {
                label: format!("p{k}"),
                start_s: start + (t - start) * k as f64 / n_phones as f64,
                end_s: start + (t - start) * (k + 1) as f64 / n_phones as f64,
            })
            .collect();
        alignment.push(WordAlignment {
            word: bare.to_lowercase(),
            start_s: start,
            end_s: t,
            phones,
        });
        push_silence(&mut rng, &mut samples, &mut alignment, &mut t, 0.06);
    }
    (
        Audio {
            samples,
            sample_rate: SAMPLE_RATE,
        },
        alignment,
    )
}

/// Writes a corpus under `root`: `metadata.csv`, `wav/`, `align/` and a
/// unigram `counts.tsv`.
pub fn write_corpus(root: &Path, chapters: &[(&str, &[&str])]) -> MiniCorpus {
    let audio_dir = root.join("wav");
    let alignment_dir = root.join("align");
    fs::create_dir_all(&audio_dir).unwrap();
    fs::create_dir_all(&alignment_dir).unwrap();
    let mut meta = String::new();
    let mut counts = std::collections::BTreeMap::<String, u64>::new();
    for (i, (id, text)) in segment_ids(chapters).into_iter().enumerate() {
        meta.push_str(&format!("{id}|{text}|{text}\n"));
        let (audio, alignment) = synth_utterance(&text, i as u64);
        audio.write_wav(&audio_dir.join(format!("{id}.wav"))).unwrap();
        fs::write(
            alignment_dir.join(format!("{id}.json")),
            alignment_to_json(&alignment).unwrap(),
        )
        .unwrap();
        for w in words(&text) {
            *counts.entry(strip_punctuation(&w.surface).to_lowercase()).or_default() += 1;
        }
    }
    let metadata = root.join("metadata.csv");
    fs::write(&metadata, meta).unwrap();
    let counts_path = root.join("counts.tsv");
    let body: String = counts.iter().map(|(w, c)| format!("{w}\t{}\n", c * 1000)).collect();
    fs::write(&counts_path, body).unwrap();
    MiniCorpus {
        root: root.to_path_buf(),
        metadata,
        audio_dir,
        alignment_dir,
        counts: counts_path,
    }
}

pub fn write_default_corpus(root: &Path) -> MiniCorpus {
    write_corpus(root, &CHAPTERS)
}

/// Scores every segment × context for each model with [`FakeLm`] and
/// writes one JSONL file per model into `root`.
pub fn write_scored(corpus: &MiniCorpus, models: &[&str], contexts: &[usize]) -> Vec<PathBuf> {
    use prosign_core::corpus::{load_manifest, CorpusLayout};
    use prosign_core::lm::write_scored_file;
    use prosign_core::surprisal::{score_requests, ContextSpec};

    let manifest = load_manifest(&corpus.metadata, &CorpusLayout::default()).unwrap();
    let specs: Vec<ContextSpec> = contexts.iter().map(|&k| ContextSpec::new(k).unwrap()).collect();
    models
        .iter()
        .map(|m| {
            let requests = score_requests(&manifest, &specs, m, " ").unwrap();
            let records = FakeLm::new(m).score_all(&requests).unwrap();
            let path = corpus.root.join(format!("scored_{m}.jsonl"));
            write_scored_file(&path, &records).unwrap();
            path
        })
        .collect()
}

/// A file-backend pipeline config over the corpus, writing into `out`.
pub fn pipeline_config(corpus: &MiniCorpus, scored: Vec<PathBuf>, models: &[&str], out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::new(&corpus.metadata, out);
    c.audio_dir = Some(corpus.audio_dir.clone());
    c.alignment_dir = Some(corpus.alignment_dir.clone());
    c.counts = Some(corpus.counts.clone());
    c.scored = scored;
    c.models = models.iter().map(|m| m.to_string()).collect();
    c
}

/// Every file under `dir`, relative path → bytes, sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
