//! Word segmentation shared by every stage that indexes words.
//!
//! A word is a whitespace-delimited chunk containing at least one
//! alphanumeric character. Chunks made only of punctuation (`--`, `;`) are
//! not words; they stay in the text and their LM tokens attach to a
//! neighbouring word. Word indices everywhere in the toolkit refer to the
//! order produced by [`words`].

/// A word occurrence inside a piece of text, with byte offsets of the whole
/// chunk (punctuation included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

impl WordSpan {
    /// Surface form with leading/trailing punctuation removed.
    pub fn stripped(&self) -> &str {
        strip_punctuation(&self.surface)
    }

    pub fn key(&self) -> String {
        word_key(&self.surface)
    }
}

pub fn words(text: &str) -> Vec<WordSpan> {
    let mut out = Vec::new();
    let mut chunk_start: Option<usize> = None;
    let push = |start: usize, end: usize, out: &mut Vec<WordSpan>| {
        let surface = &text[start..end];
        if surface.chars().any(char::is_alphanumeric) {
            out.push(WordSpan {
                surface: surface.to_string(),
                start,
                end,
            });
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                push(s, i, &mut out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(s) = chunk_start {
        push(s, text.len(), &mut out);
    }
    out
}

pub fn strip_punctuation(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Identity used for matching, givenness and lexicon lookups: case-folded
/// and punctuation-stripped.
pub fn word_key(word: &str) -> String {
    strip_punctuation(word).to_lowercase()
}
