//! Corpus ingestion: LJ-Speech-style metadata, word/phone alignments and the
//! stop-word lexicon.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{self, word_key};

/// Which transcription column of the metadata file becomes `Segment::text`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextField {
    Raw,
    #[default]
    Normalized,
}

impl std::str::FromStr for TextField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(TextField::Raw),
            "normalized" => Ok(TextField::Normalized),
            other => Err(Error::Validation(format!(
                "unknown text field {other:?} (expected raw|normalized)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusLayout {
    pub text_field: TextField,
    /// `<audio_dir>/<id>.wav`
    pub audio_dir: Option<PathBuf>,
    /// `<alignment_dir>/<id>.json`
    pub alignment_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub chapter_id: String,
    /// Position within the chapter's running text.
    pub order_index: usize,
    pub text: String,
    pub audio_path: Option<PathBuf>,
    pub alignment_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub segments: Vec<Segment>,
    pub stopwords: BTreeSet<String>,
}

impl CorpusManifest {
    pub fn position(&self, segment_id: &str) -> Option<usize> {
        // Segments are sorted by id.
        self.segments.binary_search_by(|s| s.id.as_str().cmp(segment_id)).ok()
    }

    pub fn segment(&self, segment_id: &str) -> Option<&Segment> {
        self.position(segment_id).map(|i| &self.segments[i])
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(&word_key(word))
    }

    pub fn with_stopwords(mut self, stopwords: BTreeSet<String>) -> Self {
        self.stopwords = stopwords;
        self
    }

    /// Number of words over all segments.
    pub fn word_count(&self) -> usize {
        self.segments.iter().map(|s| text::words(&s.text).len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut last_order: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &self.segments {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate segment id {}", s.id)));
            }
            if s.text.trim().is_empty() {
                return Err(Error::Validation(format!("segment {} has empty text", s.id)));
            }
            let expected = last_order.get(s.chapter_id.as_str()).map_or(0, |o| o + 1);
            if s.order_index != expected {
                return Err(Error::Validation(format!(
                    "segment {}: order_index {} but expected {expected}",
                    s.id, s.order_index
                )));
            }
            last_order.insert(&s.chapter_id, s.order_index);
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: CorpusManifest = serde_json::from_str(&body)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// `LJ001-0007` -> `LJ001`. Ids without a trailing `-<digits>` form their own
/// chapter.
pub fn chapter_of(id: &str) -> &str {
    match id.rsplit_once('-') {
        Some((prefix, num)) if !num.is_empty() && num.bytes().all(|b| b.is_ascii_digit()) => prefix,
        _ => id,
    }
}

pub fn load_manifest(metadata_path: &Path, layout: &CorpusLayout) -> Result<CorpusManifest> {
    let body = fs::read_to_string(metadata_path).map_err(|e| Error::io(metadata_path, e))?;
    parse_manifest(&body, &metadata_path.display().to_string(), layout)
}

pub fn parse_manifest(body: &str, origin: &str, layout: &CorpusLayout) -> Result<CorpusManifest> {
    let mut rows: Vec<(String, String)> = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                origin,
                lineno + 1,
                format!("expected 3 `|`-delimited fields, found {}", fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::parse(origin, lineno + 1, "empty id"));
        }
        let text = match layout.text_field {
            TextField::Raw => fields[1],
            TextField::Normalized => fields[2],
        }
        .trim();
        if text.is_empty() {
            return Err(Error::parse(origin, lineno + 1, "empty transcription"));
        }
        rows.push((id.to_string(), text.to_string()));
    }

    rows.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in rows.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Validation(format!("duplicate segment id {}", pair[0].0)));
        }
    }

    let mut segments = Vec::with_capacity(rows.len());
    let mut current_chapter: Option<String> = None;
    let mut order = 0;
    for (id, text) in rows {
        let chapter = chapter_of(&id).to_string();
        if current_chapter.as_deref() == Some(chapter.as_str()) {
            order += 1;
        } else {
            order = 0;
            current_chapter = Some(chapter.clone());
        }
        segments.push(Segment {
            audio_path: layout.audio_dir.as_ref().map(|d| d.join(format!("{id}.wav"))),
            alignment_path: layout.alignment_dir.as_ref().map(|d| d.join(format!("{id}.json"))),
            id,
            chapter_id: chapter,
            order_index: order,
            text,
        });
    }
    Ok(CorpusManifest {
        segments,
        stopwords: BTreeSet::new(),
    })
}

/// Writes segments back as `id|text|text` lines.
pub fn write_metadata(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in &manifest.segments {
        out.push_str(&format!("{}|{}|{}\n", s.id, s.text, s.text));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn parse_stopwords(body: &str) -> BTreeSet<String> {
    body.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&body))
}

/// English stop list bundled with the crate.
pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopwords(include_str!("../data/stopwords_en.txt"))
}

// ---------------------------------------------------------------------------
// Alignments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneInterval {
    pub label: String,
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAlignment {
    pub word: String,
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
    #[serde(default)]
    pub phones: Vec<PhoneInterval>,
}

const SILENCE_LABELS: &[&str] = &["", "sil", "sp", "spn", "<sil>", "<eps>", "pau"];

pub fn is_silence_label(label: &str) -> bool {
    SILENCE_LABELS.contains(&word_key(label).as_str()) || SILENCE_LABELS.contains(&label.trim().to_lowercase().as_str())
}

impl WordAlignment {
    pub fn is_silence(&self) -> bool {
        is_silence_label(&self.word)
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AlignmentDoc {
    words: Vec<WordAlignment>,
}

const TIME_EPS: f64 = 1e-9;

pub fn validate_alignment(words: &[WordAlignment]) -> Result<()> {
    for (i, w) in words.iter().enumerate() {
        if !(w.start_s.is_finite() && w.end_s.is_finite()) || w.start_s < 0.0 || w.end_s <= w.start_s {
            return Err(Error::Validation(format!(
                "word {i} {:?}: invalid interval [{}, {}]",
                w.word, w.start_s, w.end_s
            )));
        }
        let mut prev_end = w.start_s;
        for (j, p) in w.phones.iter().enumerate() {
            if p.end_s <= p.start_s {
                return Err(Error::Validation(format!(
                    "word {i} {:?}: phone {j} {:?} has invalid interval [{}, {}]",
                    w.word, p.label, p.start_s, p.end_s
                )));
            }
            if p.start_s < prev_end - TIME_EPS || p.end_s > w.end_s + TIME_EPS {
                return Err(Error::Validation(format!(
                    "word {i} {:?}: phone {j} {:?} [{}, {}] overlaps its neighbour or leaves the word span",
                    w.word, p.label, p.start_s, p.end_s
                )));
            }
            prev_end = p.end_s;
        }
    }
    for (i, pair) in words.windows(2).enumerate() {
        if pair[0].end_s > pair[1].start_s + TIME_EPS {
            return Err(Error::Validation(format!(
                "words {i} {:?} [{}, {}] and {} {:?} [{}, {}] overlap",
                pair[0].word,
                pair[0].start_s,
                pair[0].end_s,
                i + 1,
                pair[1].word,
                pair[1].start_s,
                pair[1].end_s
            )));
        }
    }
    Ok(())
}

pub fn parse_alignment(body: &str) -> Result<Vec<WordAlignment>> {
    let doc: AlignmentDoc = serde_json::from_str(body)?;
    let mut words = doc.words;
    words.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    validate_alignment(&words)?;
    Ok(words)
}

pub fn load_alignment(path: &Path) -> Result<Vec<WordAlignment>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignment(&body).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn alignment_to_json(words: &[WordAlignment]) -> Result<String> {
    Ok(serde_json::to_string(&serde_json::json!({ "words": words }))?)
}

// ---------------------------------------------------------------------------
// Text/alignment matching

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordMatch {
    /// (text word index, alignment index), strictly increasing on both sides.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_text: Vec<usize>,
    /// Non-silence alignment entries that were skipped.
    pub unmatched_alignment: Vec<usize>,
}

/// How many non-silence alignment entries a text word may skip over to find
/// its partner. Keeps one missing text word from swallowing the rest of the
/// utterance.
const MATCH_LOOKAHEAD: usize = 3;

pub fn match_words(segment_text: &str, alignments: &[WordAlignment]) -> WordMatch {
    let text_keys: Vec<String> = text::words(segment_text).iter().map(|w| w.key()).collect();
    let align_keys: Vec<Option<String>> = alignments
        .iter()
        .map(|a| (!a.is_silence()).then(|| word_key(&a.word)))
        .collect();

    let mut out = WordMatch::default();
    let mut cursor = 0;
    for (ti, key) in text_keys.iter().enumerate() {
        let mut skipped = 0;
        let mut found = None;
        for (ai, ak) in align_keys.iter().enumerate().skip(cursor) {
            let Some(ak) = ak else { continue };
            if ak == key {
                found = Some(ai);
                break;
            }
            skipped += 1;
            if skipped > MATCH_LOOKAHEAD {
                break;
            }
        }
        match found {
            Some(ai) => {
                out.unmatched_alignment
                    .extend((cursor..ai).filter(|&k| align_keys[k].is_some()));
                out.pairs.push((ti, ai));
                cursor = ai + 1;
            }
            None => out.unmatched_text.push(ti),
        }
    }
    out.unmatched_alignment
        .extend((cursor..alignments.len()).filter(|&k| align_keys[k].is_some()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(w: &str, s: f64, e: f64) -> WordAlignment {
        WordAlignment {
            word: w.into(),
            start_s: s,
            end_s: e,
            phones: vec![],
        }
    }

    #[test]
    fn reorders_by_id_and_splits_chapters() {
        let body = "LJ001-0002|text b|Text B.\nLJ002-0001|c|C.\nLJ001-0001|text a|Text A.\n";
        let m = parse_manifest(body, "meta", &CorpusLayout::default()).unwrap();
        let ids: Vec<_> = m.segments.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["LJ001-0001", "LJ001-0002", "LJ002-0001"]);
        assert_eq!(m.segments[1].order_index, 1);
        assert_eq!(m.segments[2].chapter_id, "LJ002");
        assert_eq!(m.segments[2].order_index, 0);
        assert_eq!(m.segments[0].text, "Text A.");
        m.validate().unwrap();
    }

    #[test]
    fn raw_field_is_selectable() {
        let layout = CorpusLayout {
            text_field: TextField::Raw,
            ..Default::default()
        };
        let m = parse_manifest("LJ001-0001|in 1850|in eighteen fifty\n", "m", &layout).unwrap();
        assert_eq!(m.segments[0].text, "in 1850");
    }

    #[test]
    fn empty_metadata_is_empty_manifest() {
        let m = parse_manifest("", "m", &CorpusLayout::default()).unwrap();
        assert!(m.segments.is_empty());
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let err = parse_manifest(
            "LJ001-0001|a|a\nLJ001-0002|only two\n",
            "meta",
            &CorpusLayout::default(),
        )
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = parse_manifest("A-1|x|x\nA-1|y|y\n", "m", &CorpusLayout::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn layout_paths() {
        let layout = CorpusLayout {
            audio_dir: Some("wavs".into()),
            alignment_dir: Some("align".into()),
            ..Default::default()
        };
        let m = parse_manifest("LJ001-0001|a|a\n", "m", &layout).unwrap();
        assert_eq!(
            m.segments[0].audio_path.as_deref(),
            Some(Path::new("wavs/LJ001-0001.wav"))
        );
        assert_eq!(
            m.segments[0].alignment_path.as_deref(),
            Some(Path::new("align/LJ001-0001.json"))
        );
    }

    #[test]
    fn chapter_prefix() {
        assert_eq!(chapter_of("LJ001-0007"), "LJ001");
        assert_eq!(chapter_of("book-a-12"), "book-a");
        assert_eq!(chapter_of("plain"), "plain");
        assert_eq!(chapter_of("x-y"), "x-y");
    }

    #[test]
    fn stopword_file_comments() {
        let s = parse_stopwords("# header\nThe\n\nand\n");
        assert_eq!(s.into_iter().collect::<Vec<_>>(), ["and", "the"]);
        let d = default_stopwords();
        assert!(d.contains("the") && d.contains("and") && !d.contains("bear"));
    }

    #[test]
    fn single_word_alignment() {
        let body = r#"{"words":[{"word":"cat","start":0.100,"end":0.450,"phones":[
            {"label":"k","start":0.100,"end":0.200},
            {"label":"ae","start":0.200,"end":0.350},
            {"label":"t","start":0.350,"end":0.450}]}]}"#;
        let words = parse_alignment(body).unwrap();
        assert_eq!(words.len(), 1);
        assert_eq!(words[0].phones.len(), 3);
        assert_eq!(words[0].word, "cat");
    }

    #[test]
    fn inverted_word_interval_rejected() {
        let body = r#"{"words":[{"word":"cat","start":0.5,"end":0.5,"phones":[]}]}"#;
        assert!(matches!(parse_alignment(body), Err(Error::Validation(_))));
    }

    #[test]
    fn overlapping_words_rejected_with_names() {
        let body = r#"{"words":[{"word":"a","start":0.0,"end":0.3},{"word":"b","start":0.2,"end":0.5}]}"#;
        let err = parse_alignment(body).unwrap_err().to_string();
        assert!(err.contains("\"a\"") && err.contains("\"b\""), "{err}");
    }

    #[test]
    fn overlapping_phones_rejected() {
        let body = r#"{"words":[{"word":"ab","start":0.0,"end":0.4,"phones":[
            {"label":"a","start":0.0,"end":0.25},{"label":"b","start":0.2,"end":0.4}]}]}"#;
        assert!(parse_alignment(body).is_err());
    }

    #[test]
    fn alignment_json_round_trip() {
        let words = vec![word("hello", 0.1, 0.4), word("world", 0.5, 0.9)];
        let back = parse_alignment(&alignment_to_json(&words).unwrap()).unwrap();
        assert_eq!(back, words);
    }

    #[test]
    fn exact_match_after_punctuation_strip() {
        let al = vec![word("the", 0.0, 0.1), word("cat", 0.1, 0.2), word("sat", 0.2, 0.3)];
        let m = match_words("The cat sat.", &al);
        assert_eq!(m.pairs, [(0, 0), (1, 1), (2, 2)]);
        assert!(m.unmatched_text.is_empty() && m.unmatched_alignment.is_empty());
    }

    #[test]
    fn silence_entries_are_skipped() {
        let al = vec![
            word("the", 0.0, 0.1),
            word("sil", 0.1, 0.3),
            word("cat", 0.3, 0.4),
            word("", 0.4, 0.5),
            word("sat", 0.5, 0.6),
        ];
        let m = match_words("The cat sat.", &al);
        assert_eq!(m.pairs, [(0, 0), (1, 2), (2, 4)]);
        assert!(m.unmatched_alignment.is_empty());
    }

    #[test]
    fn deleted_text_word_is_reported() {
        // Hand-traced greedy alignment: "c" finds no partner within the
        // lookahead (d, e are the only candidates), so it is unmatched and
        // the cursor stays on "d".
        let al = vec![
            word("a", 0.0, 0.1),
            word("b", 0.1, 0.2),
            word("d", 0.2, 0.3),
            word("e", 0.3, 0.4),
        ];
        let m = match_words("a b c d e", &al);
        assert_eq!(m.pairs, [(0, 0), (1, 1), (3, 2), (4, 3)]);
        assert_eq!(m.unmatched_text, [2]);
        assert!(m.unmatched_alignment.is_empty());
    }

    #[test]
    fn extra_alignment_word_is_reported() {
        let al = vec![word("a", 0.0, 0.1), word("uh", 0.1, 0.2), word("b", 0.2, 0.3)];
        let m = match_words("a b", &al);
        assert_eq!(m.pairs, [(0, 0), (1, 2)]);
        assert_eq!(m.unmatched_alignment, [1]);
    }
}
