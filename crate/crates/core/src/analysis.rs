//! Joined word records and the statistics run over them: Spearman
//! correlation grids, sqrt-transformed scatter data and the qualitative
//! direction checks (stop words less surprising than content words, repeated
//! words less surprising with context).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::fmt::{sig6, sig6_opt};
use crate::givenness::{givenness_profile, novelty_normalize, Distance, GivennessRecord, ProfileRow};
use crate::prominence::WordProsody;
use crate::stats::spearman_rho;
use crate::surprisal::{Variant, WordSurprisal};
use crate::text;

pub const DEFAULT_MAX_LOSS: f64 = 0.05;
pub const HIST_BINS: usize = 64;

/// Column label for a surprisal variant: `unigram` or `<model>:sup_<k>`.
pub fn variant_label(model_id: &str, variant: Variant) -> String {
    match variant {
        Variant::Unigram => "unigram".to_string(),
        Variant::Context(_) => format!("{model_id}:{variant}"),
    }
}

/// Resolves a user-supplied variant name against the available labels. An
/// exact label wins; otherwise a bare `sup_k` matches when exactly one
/// model provides it.
pub fn resolve_variant(name: &str, available: &[String]) -> Result<String> {
    if available.iter().any(|v| v == name) {
        return Ok(name.to_string());
    }
    let suffix = format!(":{name}");
    let hits: Vec<&String> = available.iter().filter(|v| v.ends_with(&suffix)).collect();
    match hits.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(Error::Lookup(format!(
            "variant {name:?}; available: {}",
            available.join(", ")
        ))),
        many => Err(Error::Validation(format!(
            "variant {name:?} is ambiguous: {}",
            many.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Measure {
    #[serde(rename = "prominence")]
    Prominence,
    #[serde(rename = "duration")]
    Duration,
    #[serde(rename = "f0-mean")]
    F0Mean,
    #[serde(rename = "f0-sd")]
    F0Sd,
    #[serde(rename = "intensity-mean")]
    IntensityMean,
    #[serde(rename = "intensity-sd")]
    IntensitySd,
}

impl Measure {
    pub const ALL: [Measure; 6] = [
        Measure::Prominence,
        Measure::Duration,
        Measure::F0Mean,
        Measure::F0Sd,
        Measure::IntensityMean,
        Measure::IntensitySd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Prominence => "prominence",
            Measure::Duration => "duration",
            Measure::F0Mean => "f0-mean",
            Measure::F0Sd => "f0-sd",
            Measure::IntensityMean => "intensity-mean",
            Measure::IntensitySd => "intensity-sd",
        }
    }

    pub fn of(self, p: &WordProsody) -> f64 {
        match self {
            Measure::Prominence => p.prominence,
            Measure::Duration => p.duration_s,
            Measure::F0Mean => p.f0_mean,
            Measure::F0Sd => p.f0_sd,
            Measure::IntensityMean => p.intensity_mean,
            Measure::IntensitySd => p.intensity_sd,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown measure {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    All,
    Stop,
    Content,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::All, Group::Stop, Group::Content];

    pub fn name(self) -> &'static str {
        match self {
            Group::All => "all",
            Group::Stop => "stop",
            Group::Content => "content",
        }
    }

    pub fn contains(self, is_stopword: bool) -> bool {
        match self {
            Group::All => true,
            Group::Stop => is_stopword,
            Group::Content => !is_stopword,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown word group {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordRecord {
    pub segment_id: String,
    pub word_index: usize,
    pub word: String,
    pub is_stopword: bool,
    /// Variant label → bits; `None` when that variant had no value.
    pub surprisal: BTreeMap<String, Option<f64>>,
    pub prosody: WordProsody,
    pub givenness: Option<GivennessRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinReport {
    pub corpus_words: usize,
    pub joined: usize,
    /// Corpus words with no row in each table.
    pub missing_surprisal: usize,
    pub missing_prosody: usize,
    pub missing_givenness: usize,
    pub variants: Vec<String>,
}

impl JoinReport {
    pub fn loss_fraction(&self) -> f64 {
        if self.corpus_words == 0 {
            0.0
        } else {
            (self.corpus_words - self.joined) as f64 / self.corpus_words as f64
        }
    }
}

type Key = (String, usize);

fn duplicate(table: &str, key: &Key) -> Error {
    Error::Join(format!("{table} table has key ({}, {}) twice", key.0, key.1))
}

/// Inner join of surprisal and prosody on `(segment_id, word_index)`, with
/// givenness attached when available. Fails on duplicate or unknown keys
/// and when more than `max_loss` of the corpus words are dropped.
pub fn join_records(
    surprisal: &[WordSurprisal],
    prosody: &[WordProsody],
    givenness: Option<&[GivennessRecord]>,
    manifest: &CorpusManifest,
    max_loss: f64,
) -> Result<(Vec<WordRecord>, JoinReport)> {
    // (key, stripped surface, lexicon key)
    let corpus: Vec<(Key, String, String)> = manifest
        .segments
        .iter()
        .flat_map(|s| {
            text::words(&s.text)
                .into_iter()
                .enumerate()
                .map(move |(i, w)| ((s.id.clone(), i), w.stripped().to_string(), w.key()))
        })
        .collect();
    let known: HashMap<&Key, usize> = corpus.iter().enumerate().map(|(i, (k, _, _))| (k, i)).collect();
    let check_known = |table: &str, key: &Key| -> Result<usize> {
        known
            .get(key)
            .copied()
            .ok_or_else(|| Error::Join(format!("{table} table references unknown word ({}, {})", key.0, key.1)))
    };

    let variants: Vec<String> = surprisal
        .iter()
        .map(|r| variant_label(&r.model_id, r.variant))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut sup: Vec<Option<BTreeMap<String, Option<f64>>>> = vec![None; corpus.len()];
    let mut seen: BTreeSet<(usize, String)> = BTreeSet::new();
    for r in surprisal {
        let key = (r.segment_id.clone(), r.word_index);
        let i = check_known("surprisal", &key)?;
        let label = variant_label(&r.model_id, r.variant);
        if !seen.insert((i, label.clone())) {
            return Err(Error::Join(format!(
                "surprisal table has key ({}, {}) twice for {label}",
                key.0, key.1
            )));
        }
        sup[i]
            .get_or_insert_with(|| variants.iter().map(|v| (v.clone(), None)).collect())
            .insert(label, r.bits);
    }

    let mut pros: Vec<Option<&WordProsody>> = vec![None; corpus.len()];
    for r in prosody {
        let key = (r.segment_id.clone(), r.word_index);
        let i = check_known("prosody", &key)?;
        if pros[i].replace(r).is_some() {
            return Err(duplicate("prosody", &key));
        }
    }

    let mut giv: Vec<Option<&GivennessRecord>> = vec![None; corpus.len()];
    if let Some(g) = givenness {
        for r in g {
            let key = (r.segment_id.clone(), r.word_index);
            let i = check_known("givenness", &key)?;
            if giv[i].replace(r).is_some() {
                return Err(duplicate("givenness", &key));
            }
        }
    }

    let mut report = JoinReport {
        corpus_words: corpus.len(),
        variants: variants.clone(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for (i, ((seg, idx), surface, key)) in corpus.iter().enumerate() {
        report.missing_surprisal += usize::from(sup[i].is_none());
        report.missing_prosody += usize::from(pros[i].is_none());
        report.missing_givenness += usize::from(givenness.is_some() && giv[i].is_none());
        let (Some(s), Some(p)) = (sup[i].take(), pros[i]) else {
            continue;
        };
        records.push(WordRecord {
            segment_id: seg.clone(),
            word_index: *idx,
            word: surface.clone(),
            is_stopword: manifest.is_stopword(key),
            surprisal: s,
            prosody: WordProsody {
                word: surface.clone(),
                ..p.clone()
            },
            givenness: giv[i].cloned(),
        });
    }
    report.joined = records.len();
    if report.loss_fraction() > max_loss {
        return Err(Error::Join(format!(
            "join dropped {} of {} words ({:.1}%, limit {:.1}%): {} without surprisal, {} without prosody",
            report.corpus_words - report.joined,
            report.corpus_words,
            100.0 * report.loss_fraction(),
            100.0 * max_loss,
            report.missing_surprisal,
            report.missing_prosody
        )));
    }
    Ok((records, report))
}

// ---------------------------------------------------------------------------
// Records table

const RECORD_FIXED: [&str; 13] = [
    "segment_id",
    "word_index",
    "word",
    "is_stopword",
    "distance",
    "is_content",
    "prominence",
    "duration_s",
    "f0_mean",
    "f0_sd",
    "int_mean",
    "int_sd",
    "voiced_flag",
];
const BITS_PREFIX: &str = "bits:";

/// Wide table: fixed columns, then one `bits:<variant>` column per variant.
pub fn records_csv(records: &[WordRecord]) -> Result<String> {
    let variants: Vec<String> = records
        .iter()
        .flat_map(|r| r.surprisal.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = RECORD_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(variants.iter().map(|v| format!("{BITS_PREFIX}{v}")));
    w.write_record(&header)?;
    for r in records {
        let p = &r.prosody;
        let mut row = vec![
            r.segment_id.clone(),
            r.word_index.to_string(),
            r.word.clone(),
            u8::from(r.is_stopword).to_string(),
            r.givenness.as_ref().map(|g| g.distance.to_string()).unwrap_or_default(),
            r.givenness
                .as_ref()
                .map(|g| u8::from(g.is_content).to_string())
                .unwrap_or_default(),
            p.prominence.to_string(),
            p.duration_s.to_string(),
            p.f0_mean.to_string(),
            p.f0_sd.to_string(),
            p.intensity_mean.to_string(),
            p.intensity_sd.to_string(),
            u8::from(p.voiced).to_string(),
        ];
        row.extend(variants.iter().map(|v| {
            r.surprisal
                .get(v)
                .copied()
                .flatten()
                .map(|b| b.to_string())
                .unwrap_or_default()
        }));
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?).expect("csv output is utf-8"))
}

pub fn write_records_csv(path: &Path, records: &[WordRecord]) -> Result<()> {
    fs::write(path, records_csv(records)?).map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<WordRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let origin = path.display().to_string();
    let header = r.headers()?.clone();
    if header.len() < RECORD_FIXED.len() || header.iter().zip(RECORD_FIXED).any(|(a, b)| a != b) {
        return Err(Error::parse(&origin, 1, "unexpected records header"));
    }
    let variants: Vec<String> = header
        .iter()
        .skip(RECORD_FIXED.len())
        .map(|h| {
            h.strip_prefix(BITS_PREFIX)
                .map(str::to_string)
                .ok_or_else(|| Error::parse(&origin, 1, format!("unexpected column {h:?}")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |k: usize| Error::parse(&origin, line, format!("bad {}", header.get(k).unwrap_or("?")));
        let num = |k: usize| -> Result<f64> { field(k).parse().map_err(|_| bad(k)) };
        let flag = |k: usize| -> Result<bool> {
            match field(k) {
                "1" => Ok(true),
                "0" => Ok(false),
                _ => Err(bad(k)),
            }
        };
        let segment_id = field(0).to_string();
        let word_index: usize = field(1).parse().map_err(|_| bad(1))?;
        let word = field(2).to_string();
        let givenness = match (field(4), field(5)) {
            ("", "") => None,
            (d, _) => Some(GivennessRecord {
                segment_id: segment_id.clone(),
                word_index,
                word: text::word_key(&word),
                distance: d.parse().map_err(|_| bad(4))?,
                is_content: flag(5)?,
            }),
        };
        let surprisal = variants
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let col = RECORD_FIXED.len() + k;
                let val = match field(col) {
                    "" => None,
                    s => Some(s.parse().map_err(|_| bad(col))?),
                };
                Ok((v.clone(), val))
            })
            .collect::<Result<_>>()?;
        out.push(WordRecord {
            is_stopword: flag(3)?,
            prosody: WordProsody {
                segment_id: segment_id.clone(),
                word_index,
                word: word.clone(),
                prominence: num(6)?,
                duration_s: num(7)?,
                f0_mean: num(8)?,
                f0_sd: num(9)?,
                intensity_mean: num(10)?,
                intensity_sd: num(11)?,
                voiced: flag(12)?,
            },
            segment_id,
            word_index,
            word,
            surprisal,
            givenness,
        });
    }
    Ok(out)
}

/// Variant labels present in any record, sorted.
pub fn record_variants(records: &[WordRecord]) -> Vec<String> {
    records
        .iter()
        .flat_map(|r| r.surprisal.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

// ---------------------------------------------------------------------------
// Correlations

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Quantity {
    Surprisal(String),
    Measure(Measure),
}

impl Quantity {
    pub fn of(&self, r: &WordRecord) -> Option<f64> {
        match self {
            Quantity::Surprisal(v) => r.surprisal.get(v).copied().flatten(),
            Quantity::Measure(m) => Some(m.of(&r.prosody)),
        }
        .filter(|v| v.is_finite())
    }
}

/// Spearman rho over complete pairs in `group`; `None` when fewer than 3
/// pairs or either side has no rank variance.
pub fn correlate(records: &[WordRecord], a: &Quantity, b: &Quantity, group: Group) -> (Option<f64>, usize) {
    let (xs, ys): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| group.contains(r.is_stopword))
        .filter_map(|r| Some((a.of(r)?, b.of(r)?)))
        .unzip();
    (spearman_rho(&xs, &ys).ok(), xs.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEntry {
    pub variant: String,
    pub measure: Measure,
    pub group: Group,
    pub rho: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrelationReport {
    pub entries: Vec<CorrelationEntry>,
}

/// Cells in variant-major, then measure, then group order.
pub fn correlation_grid(
    records: &[WordRecord],
    variants: &[String],
    measures: &[Measure],
    groups: &[Group],
) -> CorrelationReport {
    let cells: Vec<(&String, Measure, Group)> = variants
        .iter()
        .flat_map(|v| {
            measures
                .iter()
                .flat_map(move |&m| groups.iter().map(move |&g| (v, m, g)))
        })
        .collect();
    let entries = cells
        .par_iter()
        .map(|&(v, m, g)| {
            let (rho, n) = correlate(records, &Quantity::Surprisal(v.clone()), &Quantity::Measure(m), g);
            CorrelationEntry {
                variant: v.clone(),
                measure: m,
                group: g,
                rho,
                n,
            }
        })
        .collect();
    CorrelationReport { entries }
}

impl CorrelationReport {
    pub fn get(&self, variant: &str, measure: Measure, group: Group) -> Option<&CorrelationEntry> {
        self.entries
            .iter()
            .find(|e| e.variant == variant && e.measure == measure && e.group == group)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variant", "measure", "group", "rho", "n"])?;
        for e in &self.entries {
            w.write_record([
                e.variant.clone(),
                e.measure.to_string(),
                e.group.to_string(),
                sig6_opt(e.rho),
                e.n.to_string(),
            ])?;
        }
        Ok(
            String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?)
                .expect("csv output is utf-8"),
        )
    }
}

// ---------------------------------------------------------------------------
// Scatter export

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterGroup {
    pub group: String,
    pub points: Vec<[f64; 2]>,
    pub hist_x: Vec<usize>,
    pub hist_y: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterExport {
    pub variant: String,
    pub measure: Measure,
    pub transform: &'static str,
    /// Added to every raw value before the square root so the minimum is 0
    /// when the raw data go negative; 0 otherwise.
    pub shift_x: f64,
    pub shift_y: f64,
    pub bins: usize,
    /// Histogram edges span these transformed ranges for every group.
    pub range_x: [f64; 2],
    pub range_y: [f64; 2],
    pub groups: Vec<ScatterGroup>,
}

fn histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for v in values {
        let b = if width > 0.0 {
            (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize
        } else {
            0
        };
        h[b] += 1;
    }
    h
}

/// Square-root transformed (surprisal, measure) points per word group,
/// with 64-bin marginal histograms on shared edges. Records missing either
/// value are left out.
pub fn scatter_export(records: &[WordRecord], variant: &str, measure: Measure) -> ScatterExport {
    let xq = Quantity::Surprisal(variant.to_string());
    let yq = Quantity::Measure(measure);
    let raw: Vec<(bool, f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.is_stopword, xq.of(r)?, yq.of(r)?)))
        .collect();
    let shift = |vals: &mut dyn Iterator<Item = f64>| {
        let min = vals.fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            -min
        } else {
            0.0
        }
    };
    let shift_x = shift(&mut raw.iter().map(|p| p.1));
    let shift_y = shift(&mut raw.iter().map(|p| p.2));
    let pts: Vec<(bool, f64, f64)> = raw
        .iter()
        .map(|&(s, x, y)| (s, (x + shift_x).max(0.0).sqrt(), (y + shift_y).max(0.0).sqrt()))
        .collect();
    let range = |f: fn(&(bool, f64, f64)) -> f64| -> [f64; 2] {
        if pts.is_empty() {
            return [0.0, 0.0];
        }
        [
            pts.iter().map(f).fold(f64::INFINITY, f64::min),
            pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max),
        ]
    };
    let range_x = range(|p| p.1);
    let range_y = range(|p| p.2);
    let groups = [Group::Stop, Group::Content]
        .into_iter()
        .map(|g| {
            let mine: Vec<&(bool, f64, f64)> = pts.iter().filter(|p| g.contains(p.0)).collect();
            ScatterGroup {
                group: g.to_string(),
                points: mine.iter().map(|p| [p.1, p.2]).collect(),
                hist_x: histogram(mine.iter().map(|p| p.1), range_x[0], range_x[1], HIST_BINS),
                hist_y: histogram(mine.iter().map(|p| p.2), range_y[0], range_y[1], HIST_BINS),
            }
        })
        .collect();
    ScatterExport {
        variant: variant.to_string(),
        measure,
        transform: "sqrt",
        shift_x,
        shift_y,
        bins: HIST_BINS,
        range_x,
        range_y,
        groups,
    }
}

// ---------------------------------------------------------------------------
// Givenness profile and direction checks

/// Novelty-normalized prominence, `<model>:sup_0` and `<model>:sup_5`
/// bucketed by givenness distance, over records that carry givenness.
pub fn records_givenness_profile(records: &[WordRecord], model_id: &str, lookback: usize) -> Result<Vec<ProfileRow>> {
    let with: Vec<&WordRecord> = records.iter().filter(|r| r.givenness.is_some()).collect();
    let giv: Vec<GivennessRecord> = with.iter().map(|r| r.givenness.clone().expect("filtered")).collect();
    let prom: Vec<Option<f64>> = with.iter().map(|r| Some(r.prosody.prominence)).collect();
    let series = |k: usize| -> Vec<Option<f64>> {
        let label = variant_label(model_id, Variant::Context(k));
        with.iter()
            .map(|r| r.surprisal.get(&label).copied().flatten())
            .collect()
    };
    let prom = novelty_normalize(&prom, &giv)?.values;
    let sup0 = novelty_normalize(&series(0), &giv)?.values;
    let sup5 = novelty_normalize(&series(5), &giv)?.values;
    givenness_profile(&[&prom, &sup0, &sup5], &giv, lookback)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionCheck {
    pub name: String,
    /// Expected to be the smaller mean.
    pub lower: Option<f64>,
    pub higher: Option<f64>,
    pub n_lower: usize,
    pub n_higher: usize,
}

impl DirectionCheck {
    /// `higher - lower`; positive when the expected direction holds.
    pub fn margin(&self) -> Option<f64> {
        Some(self.higher? - self.lower?)
    }

    pub fn passed(&self) -> bool {
        self.margin().is_some_and(|m| m > 0.0)
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} (lower {} n={}, higher {} n={}, margin {})",
            self.name,
            if self.passed() { "pass" } else { "FAIL" },
            sig6_opt(self.lower),
            self.n_lower,
            sig6_opt(self.higher),
            self.n_higher,
            sig6_opt(self.margin())
        )
    }
}

fn mean_of(vals: &[f64]) -> Option<f64> {
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// (a) stop-word mean surprisal below content-word mean, for every context
/// variant; (b) for content words repeated within `window` sentences, mean
/// sup_5 below mean sup_0, for every model that has both.
pub fn direction_checks(records: &[WordRecord], window: usize) -> Vec<DirectionCheck> {
    let variants = record_variants(records);
    let mut out = Vec::new();
    for v in variants.iter().filter(|v| v.contains(":sup_")) {
        let q = Quantity::Surprisal(v.clone());
        let split = |stop: bool| -> Vec<f64> {
            records
                .iter()
                .filter(|r| r.is_stopword == stop)
                .filter_map(|r| q.of(r))
                .collect()
        };
        let (stop, content) = (split(true), split(false));
        out.push(DirectionCheck {
            name: format!("stop < content surprisal [{v}]"),
            lower: mean_of(&stop),
            higher: mean_of(&content),
            n_lower: stop.len(),
            n_higher: content.len(),
        });
    }
    let models: BTreeSet<&str> = variants
        .iter()
        .filter_map(|v| v.split_once(":sup_").map(|(m, _)| m))
        .collect();
    for model in models {
        let s0 = Quantity::Surprisal(variant_label(model, Variant::Context(0)));
        let s5 = Quantity::Surprisal(variant_label(model, Variant::Context(5)));
        if !variants.contains(&variant_label(model, Variant::Context(0)))
            || !variants.contains(&variant_label(model, Variant::Context(5)))
        {
            continue;
        }
        let (a, b): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|r| {
                !r.is_stopword
                    && matches!(r.givenness.as_ref().map(|g| g.distance), Some(Distance::Given(d)) if d <= window)
            })
            .filter_map(|r| Some((s5.of(r)?, s0.of(r)?)))
            .unzip();
        out.push(DirectionCheck {
            name: format!("repeated content words: sup_5 < sup_0 [{model}]"),
            lower: mean_of(&a),
            higher: mean_of(&b),
            n_lower: a.len(),
            n_higher: b.len(),
        });
    }
    out
}

pub fn direction_checks_text(checks: &[DirectionCheck]) -> String {
    checks.iter().map(|c| c.summary() + "\n").collect()
}

/// `key = value` summary of a join, for the artifact directory.
pub fn join_report_text(r: &JoinReport) -> String {
    format!(
        "corpus_words = {}\njoined = {}\nloss_fraction = {}\nmissing_surprisal = {}\nmissing_prosody = {}\nmissing_givenness = {}\nvariants = {}\n",
        r.corpus_words,
        r.joined,
        sig6(r.loss_fraction()),
        r.missing_surprisal,
        r.missing_prosody,
        r.missing_givenness,
        r.variants.join(",")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_manifest, CorpusLayout};

    fn manifest() -> CorpusManifest {
        parse_manifest(
            "S-1|x|The cat sat.\nS-2|x|A dog ran far.\n",
            "m",
            &CorpusLayout::default(),
        )
        .unwrap()
        .with_stopwords(["the", "a"].iter().map(|s| s.to_string()).collect())
    }

    fn sup(seg: &str, i: usize, k: usize, bits: f64) -> WordSurprisal {
        WordSurprisal {
            segment_id: seg.into(),
            word_index: i,
            word: "w".into(),
            variant: Variant::Context(k),
            model_id: "m".into(),
            bits: Some(bits),
            n_tokens: 1,
        }
    }

    fn pros(seg: &str, i: usize, p: f64) -> WordProsody {
        WordProsody {
            segment_id: seg.into(),
            word_index: i,
            word: "w".into(),
            prominence: p,
            duration_s: 0.2,
            f0_mean: 0.1,
            f0_sd: 0.0,
            intensity_mean: -0.3,
            intensity_sd: 0.5,
            voiced: true,
        }
    }

    fn keys() -> Vec<(&'static str, usize)> {
        vec![
            ("S-1", 0),
            ("S-1", 1),
            ("S-1", 2),
            ("S-2", 0),
            ("S-2", 1),
            ("S-2", 2),
            ("S-2", 3),
        ]
    }

    #[test]
    fn aligned_tables_join_without_loss() {
        let s: Vec<_> = keys().iter().map(|&(g, i)| sup(g, i, 0, i as f64)).collect();
        let p: Vec<_> = keys().iter().map(|&(g, i)| pros(g, i, 1.0)).collect();
        let (recs, rep) = join_records(&s, &p, None, &manifest(), DEFAULT_MAX_LOSS).unwrap();
        assert_eq!(recs.len(), 7);
        assert_eq!(rep.loss_fraction(), 0.0);
        assert!(recs[0].is_stopword);
        assert!(!recs[1].is_stopword);
        assert_eq!(recs[2].surprisal["m:sup_0"], Some(2.0));
    }

    #[test]
    fn missing_row_counts_as_loss_and_threshold_applies() {
        let s: Vec<_> = keys().iter().map(|&(g, i)| sup(g, i, 0, 1.0)).collect();
        let p: Vec<_> = keys().iter().skip(1).map(|&(g, i)| pros(g, i, 1.0)).collect();
        let (recs, rep) = join_records(&s, &p, None, &manifest(), 0.2).unwrap();
        assert_eq!(recs.len(), 6);
        assert_eq!(rep.missing_prosody, 1);
        assert!(matches!(
            join_records(&s, &p, None, &manifest(), 0.05),
            Err(Error::Join(_))
        ));
    }

    #[test]
    fn duplicates_and_unknown_keys_are_errors() {
        let mut s: Vec<_> = keys().iter().map(|&(g, i)| sup(g, i, 0, 1.0)).collect();
        let p: Vec<_> = keys().iter().map(|&(g, i)| pros(g, i, 1.0)).collect();
        s.push(sup("S-1", 0, 0, 2.0));
        let err = join_records(&s, &p, None, &manifest(), 0.05).unwrap_err();
        assert!(err.to_string().contains("twice"), "{err}");
        s.pop();
        s.push(sup("S-9", 0, 0, 2.0));
        let err = join_records(&s, &p, None, &manifest(), 0.05).unwrap_err();
        assert!(err.to_string().contains("unknown"), "{err}");
        s.pop();
        let mut p2 = p.clone();
        p2.push(pros("S-2", 3, 0.0));
        assert!(join_records(&s, &p2, None, &manifest(), 0.05).is_err());
    }

    #[test]
    fn records_round_trip() {
        let mut s: Vec<_> = keys().iter().map(|&(g, i)| sup(g, i, 0, 0.1 + i as f64)).collect();
        s.extend(keys().iter().map(|&(g, i)| WordSurprisal {
            bits: None,
            ..sup(g, i, 5, 0.0)
        }));
        let p: Vec<_> = keys().iter().map(|&(g, i)| pros(g, i, 1.0 / 3.0)).collect();
        let giv = crate::givenness::assign_distances(&manifest(), Default::default());
        let (recs, _) = join_records(&s, &p, Some(&giv), &manifest(), 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        write_records_csv(&path, &recs).unwrap();
        let back = read_records_csv(&path).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn variant_resolution() {
        let v = vec![
            "gpt2:sup_0".to_string(),
            "gpt2:sup_5".to_string(),
            "unigram".to_string(),
        ];
        assert_eq!(resolve_variant("sup_5", &v).unwrap(), "gpt2:sup_5");
        assert_eq!(resolve_variant("unigram", &v).unwrap(), "unigram");
        assert!(resolve_variant("sup_3", &v).is_err());
        let two = vec!["a:sup_5".to_string(), "b:sup_5".to_string()];
        assert!(resolve_variant("sup_5", &two).is_err());
    }

    fn record(stop: bool, bits: f64, prom: f64) -> WordRecord {
        WordRecord {
            segment_id: "s".into(),
            word_index: 0,
            word: "w".into(),
            is_stopword: stop,
            surprisal: [("m:sup_0".to_string(), Some(bits))].into_iter().collect(),
            prosody: pros("s", 0, prom),
            givenness: None,
        }
    }

    #[test]
    fn grid_shape_and_undefined_cells() {
        let recs: Vec<_> = (0..6).map(|i| record(i < 2, i as f64, (i * i) as f64)).collect();
        let g = correlation_grid(&recs, &["m:sup_0".to_string()], &Measure::ALL, &Group::ALL);
        assert_eq!(g.entries.len(), 18);
        let all = g.get("m:sup_0", Measure::Prominence, Group::All).unwrap();
        assert_eq!((all.rho, all.n), (Some(1.0), 6));
        let stop = g.get("m:sup_0", Measure::Prominence, Group::Stop).unwrap();
        assert_eq!((stop.rho, stop.n), (None, 2));
        // constant duration -> undefined
        assert_eq!(g.get("m:sup_0", Measure::Duration, Group::All).unwrap().rho, None);
        let csv = g.to_csv().unwrap();
        assert!(
            csv.starts_with("variant,measure,group,rho,n\nm:sup_0,prominence,all,1,6\nm:sup_0,prominence,stop,NA,2\n")
        );
    }

    #[test]
    fn self_correlation_is_one() {
        let recs: Vec<_> = (0..9)
            .map(|i| record(false, (i % 4) as f64, ((i * 7) % 5) as f64))
            .collect();
        let q = Quantity::Measure(Measure::Prominence);
        let (rho, _) = correlate(&recs, &q, &q, Group::All);
        assert!((rho.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scatter_transform_and_histograms() {
        let recs = vec![
            record(true, 4.0, -1.0),
            record(false, 9.0, 3.0),
            record(false, 0.0, 0.0),
        ];
        let s = scatter_export(&recs, "m:sup_0", Measure::Prominence);
        assert_eq!(s.shift_x, 0.0);
        assert_eq!(s.shift_y, 1.0);
        assert_eq!(s.groups[0].points, [[2.0, 0.0]]);
        assert_eq!(s.groups[1].points, [[3.0, 2.0], [0.0, 1.0]]);
        for g in &s.groups {
            assert_eq!(g.hist_x.len(), HIST_BINS);
            assert_eq!(g.hist_x.iter().sum::<usize>(), g.points.len());
            assert_eq!(g.hist_y.iter().sum::<usize>(), g.points.len());
        }
        assert_eq!(s.groups[1].hist_x[HIST_BINS - 1], 1, "maximum lands in the last bin");
    }

    #[test]
    fn direction_checks_report_margins() {
        let mut recs: Vec<_> = (0..4)
            .map(|i| record(i < 2, if i < 2 { 1.0 } else { 5.0 }, 0.0))
            .collect();
        for r in &mut recs {
            let s0 = r.surprisal["m:sup_0"];
            r.surprisal.insert("m:sup_5".into(), s0.map(|b| b - 0.5));
            r.givenness = Some(GivennessRecord {
                segment_id: "s".into(),
                word_index: 0,
                word: "w".into(),
                distance: Distance::Given(2),
                is_content: !r.is_stopword,
            });
        }
        let checks = direction_checks(&recs, 5);
        assert_eq!(checks.len(), 3);
        assert!(checks.iter().all(DirectionCheck::passed));
        assert_eq!(checks[0].margin(), Some(4.0));
        assert_eq!(checks[2].margin(), Some(0.5));
        assert!(checks[2].summary().contains("pass"));
    }
}
