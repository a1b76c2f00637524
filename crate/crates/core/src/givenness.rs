//! Givenness: how many sentences back a word was last mentioned.
//!
//! A word seen earlier in the same segment has distance 0, in the previous
//! segment distance 1, and so on. Anything not seen within the lookback
//! window is novel. Values are then z-scored against the novel population,
//! which is what the per-distance profile plots.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::fmt::sig6;
use crate::stats::{mean, population_sd};
use crate::text;

pub const DEFAULT_LOOKBACK: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Distance {
    Given(usize),
    Novel,
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Given(d) => write!(f, "{d}"),
            Distance::Novel => f.write_str("novel"),
        }
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "novel" {
            return Ok(Distance::Novel);
        }
        s.parse()
            .map(Distance::Given)
            .map_err(|_| Error::Validation(format!("bad distance {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GivennessRecord {
    pub segment_id: String,
    pub word_index: usize,
    /// Case-folded, punctuation-stripped.
    pub word: String,
    pub distance: Distance,
    pub is_content: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GivennessOptions {
    /// Largest distance still counted as given.
    pub lookback: usize,
    /// Forget history at chapter boundaries.
    pub reset_at_chapter: bool,
}

impl Default for GivennessOptions {
    fn default() -> Self {
        GivennessOptions {
            lookback: DEFAULT_LOOKBACK,
            reset_at_chapter: true,
        }
    }
}

/// One record per word occurrence, in running-text order. Distances are
/// computed for every word; `is_content` marks the ones the profile uses.
pub fn assign_distances(manifest: &CorpusManifest, opts: GivennessOptions) -> Vec<GivennessRecord> {
    let mut last_seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::with_capacity(manifest.word_count());
    let mut chapter: Option<&str> = None;
    for (pos, seg) in manifest.segments.iter().enumerate() {
        if opts.reset_at_chapter && chapter != Some(seg.chapter_id.as_str()) {
            last_seen.clear();
        }
        chapter = Some(seg.chapter_id.as_str());
        for (i, w) in text::words(&seg.text).iter().enumerate() {
            let key = w.key();
            let distance = match last_seen.get(&key) {
                Some(&prev) if pos - prev <= opts.lookback => Distance::Given(pos - prev),
                _ => Distance::Novel,
            };
            last_seen.insert(key.clone(), pos);
            out.push(GivennessRecord {
                segment_id: seg.id.clone(),
                word_index: i,
                is_content: !manifest.is_stopword(&key),
                word: key,
                distance,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub novel_mean: f64,
    /// Population standard deviation of the novel values.
    pub novel_sd: f64,
    pub novel_count: usize,
    pub values: Vec<Option<f64>>,
}

/// Maps each value to `(v - mean_novel) / sd_novel`, where the novel
/// population is the content words with a novel distance and a finite value.
/// `values` is parallel to `records`; missing values stay missing.
pub fn novelty_normalize(values: &[Option<f64>], records: &[GivennessRecord]) -> Result<Normalized> {
    if values.len() != records.len() {
        return Err(Error::Validation(format!(
            "{} values for {} givenness records",
            values.len(),
            records.len()
        )));
    }
    let novel: Vec<f64> = records
        .iter()
        .zip(values)
        .filter(|(r, _)| r.is_content && r.distance == Distance::Novel)
        .filter_map(|(_, v)| v.filter(|x| x.is_finite()))
        .collect();
    if novel.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 novel content words with values, found {}",
            novel.len()
        )));
    }
    let m = mean(&novel);
    let sd = population_sd(&novel);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("novel values have zero standard deviation".into()));
    }
    Ok(Normalized {
        novel_mean: m,
        novel_sd: sd,
        novel_count: novel.len(),
        values: values.iter().map(|v| v.map(|x| (x - m) / sd)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub distance: Distance,
    /// One mean per input series; `None` when the bucket has no value.
    pub means: Vec<Option<f64>>,
    /// Content words in the bucket.
    pub count: usize,
}

/// Per-distance means over content words, buckets `0..=lookback` then novel.
/// Each series is parallel to `records`.
pub fn givenness_profile(
    series: &[&[Option<f64>]],
    records: &[GivennessRecord],
    lookback: usize,
) -> Result<Vec<ProfileRow>> {
    for s in series {
        if s.len() != records.len() {
            return Err(Error::Validation(format!(
                "profile series has {} values for {} records",
                s.len(),
                records.len()
            )));
        }
    }
    let buckets: Vec<Distance> = (0..=lookback).map(Distance::Given).chain([Distance::Novel]).collect();
    let slot = |d: Distance| match d {
        Distance::Given(k) if k <= lookback => Some(k),
        Distance::Given(_) => None,
        Distance::Novel => Some(lookback + 1),
    };
    let mut sums = vec![vec![(0.0, 0usize); series.len()]; buckets.len()];
    let mut counts = vec![0usize; buckets.len()];
    for (i, r) in records.iter().enumerate().filter(|(_, r)| r.is_content) {
        let Some(b) = slot(r.distance) else { continue };
        counts[b] += 1;
        for (k, s) in series.iter().enumerate() {
            if let Some(v) = s[i].filter(|v| v.is_finite()) {
                sums[b][k].0 += v;
                sums[b][k].1 += 1;
            }
        }
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(b, distance)| ProfileRow {
            distance,
            means: sums[b].iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect(),
            count: counts[b],
        })
        .collect())
}

pub const GIVENNESS_HEADER: [&str; 5] = ["segment_id", "word_index", "word", "distance", "is_content"];
pub const PROFILE_HEADER: [&str; 5] = ["distance", "mean_prom", "mean_sup0", "mean_sup5", "count"];

pub fn givenness_csv(records: &[GivennessRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GIVENNESS_HEADER)?;
    for r in records {
        w.write_record([
            r.segment_id.clone(),
            r.word_index.to_string(),
            r.word.clone(),
            r.distance.to_string(),
            u8::from(r.is_content).to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?).expect("csv output is utf-8"))
}

pub fn write_givenness_csv(path: &Path, records: &[GivennessRecord]) -> Result<()> {
    fs::write(path, givenness_csv(records)?).map_err(|e| Error::io(path, e))
}

pub fn read_givenness_csv(path: &Path) -> Result<Vec<GivennessRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |what: &str| Error::parse(&origin, line, format!("bad {what}"));
        out.push(GivennessRecord {
            segment_id: field(0).to_string(),
            word_index: field(1).parse().map_err(|_| bad("word_index"))?,
            word: field(2).to_string(),
            distance: field(3).parse().map_err(|_| bad("distance"))?,
            is_content: match field(4) {
                "1" => true,
                "0" => false,
                _ => return Err(bad("is_content")),
            },
        });
    }
    Ok(out)
}

/// Profile with exactly three series (prominence, sup_0, sup_5). Empty
/// buckets leave their means blank.
pub fn profile_csv(rows: &[ProfileRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PROFILE_HEADER)?;
    for r in rows {
        if r.means.len() != 3 {
            return Err(Error::Validation(format!(
                "profile rows need 3 series, found {}",
                r.means.len()
            )));
        }
        let mut rec = vec![r.distance.to_string()];
        rec.extend(r.means.iter().map(|m| m.map(sig6).unwrap_or_default()));
        rec.push(r.count.to_string());
        w.write_record(rec)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?).expect("csv output is utf-8"))
}
