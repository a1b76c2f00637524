//! Objective prosody evaluation of synthesis systems.
//!
//! Each system supplies phone-level f0 (standard units) and duration (20 ms
//! frames) predictions for the same phones as the reference. Metrics are
//! RMSE and Pearson correlation over all phones, and over the phones of
//! content and stop words separately.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::analysis::Group;
use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::fmt::sig6_opt;
use crate::stats::{pearson, rmse};
use crate::text;

#[derive(Debug, Clone, PartialEq)]
pub struct PhonePrediction {
    pub segment_id: String,
    pub phone_index: usize,
    pub word_index: usize,
    /// Standard (z) units.
    pub f0: f64,
    /// 20 ms frames.
    pub dur: f64,
}

pub const PREDICTION_HEADER: [&str; 5] = ["segment_id", "phone_index", "word_index", "f0", "dur"];

pub fn predictions_csv(rows: &[PhonePrediction]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PREDICTION_HEADER)?;
    for r in rows {
        w.write_record([
            r.segment_id.clone(),
            r.phone_index.to_string(),
            r.word_index.to_string(),
            r.f0.to_string(),
            r.dur.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?).expect("csv output is utf-8"))
}

pub fn write_predictions_csv(path: &Path, rows: &[PhonePrediction]) -> Result<()> {
    fs::write(path, predictions_csv(rows)?).map_err(|e| Error::io(path, e))
}

/// Reads and validates a prediction table: finite values, non-negative
/// durations, unique `(segment_id, phone_index)`.
pub fn read_predictions_csv(path: &Path) -> Result<Vec<PhonePrediction>> {
    let mut r = csv::Reader::from_path(path)?;
    let origin = path.display().to_string();
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |k: usize| Error::parse(&origin, line, format!("bad {}", PREDICTION_HEADER[k]));
        let p = PhonePrediction {
            segment_id: field(0).to_string(),
            phone_index: field(1).parse().map_err(|_| bad(1))?,
            word_index: field(2).parse().map_err(|_| bad(2))?,
            f0: field(3).parse().map_err(|_| bad(3))?,
            dur: field(4).parse().map_err(|_| bad(4))?,
        };
        if !p.f0.is_finite() {
            return Err(bad(3));
        }
        if !(p.dur >= 0.0 && p.dur.is_finite()) {
            return Err(Error::parse(&origin, line, "duration must be finite and non-negative"));
        }
        if !seen.insert((p.segment_id.clone(), p.phone_index)) {
            return Err(Error::parse(
                &origin,
                line,
                format!("duplicate phone ({}, {})", p.segment_id, p.phone_index),
            ));
        }
        out.push(p);
    }
    Ok(out)
}

/// `(segment_id, word_index)` → stop/content.
pub type WordClasses = HashMap<(String, usize), Group>;

pub fn word_classes_from_manifest(manifest: &CorpusManifest) -> WordClasses {
    manifest
        .segments
        .iter()
        .flat_map(|s| {
            text::words(&s.text).into_iter().enumerate().map(move |(i, w)| {
                let g = if manifest.is_stopword(&w.key()) {
                    Group::Stop
                } else {
                    Group::Content
                };
                ((s.id.clone(), i), g)
            })
        })
        .collect()
}

pub fn word_classes_csv(classes: &WordClasses) -> Result<String> {
    let sorted: BTreeMap<&(String, usize), &Group> = classes.iter().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["segment_id", "word_index", "class"])?;
    for ((seg, i), g) in sorted {
        w.write_record([seg.clone(), i.to_string(), g.to_string()])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?).expect("csv output is utf-8"))
}

pub fn read_word_classes_csv(path: &Path) -> Result<WordClasses> {
    let mut r = csv::Reader::from_path(path)?;
    let origin = path.display().to_string();
    let mut out = WordClasses::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let idx: usize = field(1)
            .parse()
            .map_err(|_| Error::parse(&origin, line, "bad word_index"))?;
        let group = match field(2) {
            "stop" => Group::Stop,
            "content" => Group::Content,
            other => {
                return Err(Error::parse(
                    &origin,
                    line,
                    format!("class must be stop or content, got {other:?}"),
                ))
            }
        };
        if out.insert((field(0).to_string(), idx), group).is_some() {
            return Err(Error::parse(&origin, line, "duplicate word"));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub f0_rmse: Option<f64>,
    pub f0_cor: Option<f64>,
    pub dur_rmse: Option<f64>,
    pub dur_cor: Option<f64>,
}

impl Metrics {
    pub fn compute(pred_f0: &[f64], ref_f0: &[f64], pred_dur: &[f64], ref_dur: &[f64]) -> Metrics {
        Metrics {
            f0_rmse: rmse(pred_f0, ref_f0).ok(),
            f0_cor: pearson(pred_f0, ref_f0).ok(),
            dur_rmse: rmse(pred_dur, ref_dur).ok(),
            dur_cor: pearson(pred_dur, ref_dur).ok(),
        }
    }

    fn values(&self) -> [Option<f64>; 4] {
        [self.f0_rmse, self.f0_cor, self.dur_rmse, self.dur_cor]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub system: String,
    pub group: Group,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    /// System order as given, groups all / content / stop within each.
    pub rows: Vec<EvalRow>,
}

pub const TABLE_GROUPS: [Group; 3] = [Group::All, Group::Content, Group::Stop];

type PhoneKey = (String, usize);

fn list_keys(keys: &[&PhoneKey]) -> String {
    const SHOWN: usize = 10;
    let mut s: Vec<String> = keys.iter().take(SHOWN).map(|(g, i)| format!("({g}, {i})")).collect();
    if keys.len() > SHOWN {
        s.push(format!("... {} more", keys.len() - SHOWN));
    }
    s.join(", ")
}

/// Metrics for every system and word group. Every system must cover
/// exactly the reference phones, and every reference word needs a class.
pub fn evaluate_systems(
    reference: &[PhonePrediction],
    systems: &[(String, Vec<PhonePrediction>)],
    classes: &WordClasses,
) -> Result<EvalReport> {
    let mut ref_sorted: Vec<&PhonePrediction> = reference.iter().collect();
    ref_sorted.sort_by(|a, b| (&a.segment_id, a.phone_index).cmp(&(&b.segment_id, b.phone_index)));
    for w in ref_sorted.windows(2) {
        if (&w[0].segment_id, w[0].phone_index) == (&w[1].segment_id, w[1].phone_index) {
            return Err(Error::Validation(format!(
                "reference has phone ({}, {}) twice",
                w[0].segment_id, w[0].phone_index
            )));
        }
    }
    let unclassified: BTreeSet<(String, usize)> = ref_sorted
        .iter()
        .map(|p| (p.segment_id.clone(), p.word_index))
        .filter(|k| !classes.contains_key(k))
        .collect();
    if !unclassified.is_empty() {
        let keys: Vec<&PhoneKey> = unclassified.iter().collect();
        return Err(Error::Validation(format!(
            "no word class for {} reference word(s): {}",
            keys.len(),
            list_keys(&keys)
        )));
    }
    let ref_groups: Vec<Group> = ref_sorted
        .iter()
        .map(|p| classes[&(p.segment_id.clone(), p.word_index)])
        .collect();
    let ref_keys: BTreeSet<PhoneKey> = ref_sorted
        .iter()
        .map(|p| (p.segment_id.clone(), p.phone_index))
        .collect();

    let mut aligned: Vec<(&str, Vec<&PhonePrediction>)> = Vec::with_capacity(systems.len());
    let mut names = BTreeSet::new();
    for (name, preds) in systems {
        if !names.insert(name.as_str()) {
            return Err(Error::Validation(format!("system {name:?} given twice")));
        }
        let mut by_key: HashMap<PhoneKey, &PhonePrediction> = HashMap::with_capacity(preds.len());
        for p in preds {
            if by_key.insert((p.segment_id.clone(), p.phone_index), p).is_some() {
                return Err(Error::Validation(format!(
                    "system {name}: phone ({}, {}) predicted twice",
                    p.segment_id, p.phone_index
                )));
            }
        }
        let mut missing: Vec<&PhoneKey> = ref_keys.iter().filter(|k| !by_key.contains_key(*k)).collect();
        missing.sort();
        let mut extra: Vec<&PhoneKey> = by_key.keys().filter(|k| !ref_keys.contains(*k)).collect();
        extra.sort();
        if !missing.is_empty() || !extra.is_empty() {
            let mut msg = format!("system {name} does not cover the reference phones:");
            if !missing.is_empty() {
                let _ = write!(msg, " missing {}: {}", missing.len(), list_keys(&missing));
            }
            if !extra.is_empty() {
                let _ = write!(msg, "; extra {}: {}", extra.len(), list_keys(&extra));
            }
            return Err(Error::Validation(msg));
        }
        let row: Vec<&PhonePrediction> = ref_sorted
            .iter()
            .map(|r| by_key[&(r.segment_id.clone(), r.phone_index)])
            .collect();
        aligned.push((name.as_str(), row));
    }

    let cells: Vec<(usize, Group)> = (0..aligned.len())
        .flat_map(|s| TABLE_GROUPS.iter().map(move |&g| (s, g)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(s, g)| {
            let (name, preds) = &aligned[s];
            let idx: Vec<usize> = (0..ref_sorted.len())
                .filter(|&i| g.contains(ref_groups[i] == Group::Stop))
                .collect();
            let pf0: Vec<f64> = idx.iter().map(|&i| preds[i].f0).collect();
            let rf0: Vec<f64> = idx.iter().map(|&i| ref_sorted[i].f0).collect();
            let pdur: Vec<f64> = idx.iter().map(|&i| preds[i].dur).collect();
            let rdur: Vec<f64> = idx.iter().map(|&i| ref_sorted[i].dur).collect();
            EvalRow {
                system: name.to_string(),
                group: g,
                metrics: Metrics::compute(&pf0, &rf0, &pdur, &rdur),
            }
        })
        .collect();
    Ok(EvalReport { rows })
}

fn group_heading(g: Group) -> &'static str {
    match g {
        Group::All => "All words",
        Group::Content => "content words",
        Group::Stop => "stop words",
    }
}

const METRIC_NAMES: [&str; 4] = ["f0 RMSE", "f0 cor", "dur RMSE", "dur cor"];
const NUM_WIDTH: usize = 10;

impl EvalReport {
    pub fn systems(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.system.as_str()) {
                out.push(&r.system);
            }
        }
        out
    }

    pub fn get(&self, system: &str, group: Group) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.group == group)
            .map(|r| &r.metrics)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["system", "group", "f0_rmse", "f0_cor", "dur_rmse", "dur_cor"])?;
        for r in &self.rows {
            let mut rec = vec![r.system.clone(), r.group.to_string()];
            rec.extend(r.metrics.values().iter().map(|v| sig6_opt(*v)));
            w.write_record(rec)?;
        }
        Ok(
            String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?)
                .expect("csv output is utf-8"),
        )
    }

    /// Sectioned text table with three decimals: one section per word
    /// group, one row per system.
    pub fn to_table(&self) -> String {
        let systems = self.systems();
        let name_width = systems.iter().map(|s| s.len()).max().unwrap_or(0).max(14) + 2;
        let mut out = String::new();
        let _ = write!(out, "{:name_width$}", "");
        for m in METRIC_NAMES {
            let _ = write!(out, "{m:>NUM_WIDTH$}");
        }
        out.push('\n');
        for g in TABLE_GROUPS {
            out.push_str(group_heading(g));
            out.push('\n');
            for s in &systems {
                let Some(m) = self.get(s, g) else { continue };
                let _ = write!(out, "{s:name_width$}");
                for v in m.values() {
                    let cell = v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "NA".into());
                    let _ = write!(out, "{cell:>NUM_WIDTH$}");
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parses the layout written by [`EvalReport::to_table`]. Values come back
    /// at the table's three-decimal precision.
    pub fn parse_table(body: &str) -> Result<EvalReport> {
        let mut lines = body.lines().enumerate();
        let header = lines.next().ok_or_else(|| Error::parse("table", 1, "empty table"))?.1;
        let cols: Vec<&str> = header.split("  ").map(str::trim).filter(|s| !s.is_empty()).collect();
        if cols != METRIC_NAMES {
            return Err(Error::parse("table", 1, format!("unexpected header {cols:?}")));
        }
        let mut group = None;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(g) = TABLE_GROUPS.into_iter().find(|&g| group_heading(g) == line) {
                group = Some(g);
                continue;
            }
            let g = group.ok_or_else(|| Error::parse("table", i + 1, "row before any section heading"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(Error::parse(
                    "table",
                    i + 1,
                    format!("expected 5 fields, found {}", fields.len()),
                ));
            }
            let v = |k: usize| -> Result<Option<f64>> {
                match fields[k] {
                    "NA" => Ok(None),
                    s => s
                        .parse()
                        .map(Some)
                        .map_err(|_| Error::parse("table", i + 1, format!("bad number {s:?}"))),
                }
            };
            rows.push(EvalRow {
                system: fields[0].to_string(),
                group: g,
                metrics: Metrics {
                    f0_rmse: v(1)?,
                    f0_cor: v(2)?,
                    dur_rmse: v(3)?,
                    dur_cor: v(4)?,
                },
            });
        }
        // Back to system-major order.
        let order: Vec<String> = {
            let mut seen = Vec::new();
            for r in &rows {
                if !seen.contains(&r.system) {
                    seen.push(r.system.clone());
                }
            }
            seen
        };
        rows.sort_by_key(|r| {
            (
                order.iter().position(|s| *s == r.system),
                TABLE_GROUPS.iter().position(|g| *g == r.group),
            )
        });
        Ok(EvalReport { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phone(seg: &str, p: usize, w: usize, f0: f64, dur: f64) -> PhonePrediction {
        PhonePrediction {
            segment_id: seg.into(),
            phone_index: p,
            word_index: w,
            f0,
            dur,
        }
    }

    fn reference() -> Vec<PhonePrediction> {
        vec![
            phone("A", 0, 0, -1.0, 2.0),
            phone("A", 1, 0, 0.5, 3.0),
            phone("A", 2, 1, 1.0, 5.0),
            phone("A", 3, 1, 0.0, 4.0),
            phone("A", 4, 2, -0.5, 1.0),
            phone("A", 5, 2, 2.0, 6.0),
        ]
    }

    fn classes() -> WordClasses {
        [
            (("A".to_string(), 0), Group::Stop),
            (("A".to_string(), 1), Group::Content),
            (("A".to_string(), 2), Group::Content),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn identical_system_is_perfect() {
        let r = reference();
        let rep = evaluate_systems(&r, &[("same".into(), r.clone())], &classes()).unwrap();
        for g in [Group::All, Group::Content] {
            let m = rep.get("same", g).unwrap();
            assert_eq!(m.f0_rmse, Some(0.0));
            assert_eq!(m.f0_cor, Some(1.0));
            assert_eq!(m.dur_rmse, Some(0.0));
            assert_eq!(m.dur_cor, Some(1.0));
        }
        // two stop phones -> correlation undefined
        assert_eq!(rep.get("same", Group::Stop).unwrap().f0_cor, None);
    }

    #[test]
    fn offset_and_affine_systems() {
        let r = reference();
        let shifted: Vec<_> = r
            .iter()
            .map(|p| {
                phone(
                    &p.segment_id,
                    p.phone_index,
                    p.word_index,
                    p.f0 + 0.5,
                    p.dur * 2.0 + 1.0,
                )
            })
            .collect();
        let rep = evaluate_systems(&r, &[("s".into(), shifted)], &classes()).unwrap();
        let m = rep.get("s", Group::All).unwrap();
        assert!((m.f0_rmse.unwrap() - 0.5).abs() < 1e-15);
        assert!((m.f0_cor.unwrap() - 1.0).abs() < 1e-15);
        assert!((m.dur_cor.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn coverage_errors_list_keys() {
        let r = reference();
        let mut short = r.clone();
        short.remove(2);
        short.push(phone("B", 9, 0, 0.0, 0.0));
        let err = evaluate_systems(&r, &[("x".into(), short)], &classes())
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing 1: (A, 2)"), "{err}");
        assert!(err.contains("extra 1: (B, 9)"), "{err}");

        let mut partial = classes();
        partial.remove(&("A".to_string(), 2));
        assert!(evaluate_systems(&r, &[("x".into(), r.clone())], &partial).is_err());
    }

    #[test]
    fn swapping_inputs_swaps_rows() {
        let r = reference();
        let a: Vec<_> = r
            .iter()
            .map(|p| phone(&p.segment_id, p.phone_index, p.word_index, p.f0 * 0.5, p.dur))
            .collect();
        let b: Vec<_> = r
            .iter()
            .map(|p| phone(&p.segment_id, p.phone_index, p.word_index, -p.f0, p.dur + 1.0))
            .collect();
        let one = evaluate_systems(&r, &[("a".into(), a.clone()), ("b".into(), b.clone())], &classes()).unwrap();
        let two = evaluate_systems(&r, &[("a".into(), b), ("b".into(), a)], &classes()).unwrap();
        for g in TABLE_GROUPS {
            assert_eq!(one.get("a", g), two.get("b", g));
            assert_eq!(one.get("b", g), two.get("a", g));
        }
    }

    #[test]
    fn table_round_trip() {
        let r = reference();
        let rep = evaluate_systems(&r, &[("ref".into(), r.clone())], &classes()).unwrap();
        let table = rep.to_table();
        let back = EvalReport::parse_table(&table).unwrap();
        assert_eq!(back.to_table(), table);
        assert_eq!(back.systems(), ["ref"]);
    }

    #[test]
    fn prediction_csv_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        write_predictions_csv(&p, &reference()).unwrap();
        assert_eq!(read_predictions_csv(&p).unwrap(), reference());
        fs::write(&p, "segment_id,phone_index,word_index,f0,dur\nA,0,0,1.0,-2\n").unwrap();
        assert!(read_predictions_csv(&p).is_err());
        fs::write(
            &p,
            "segment_id,phone_index,word_index,f0,dur\nA,0,0,1.0,2\nA,0,1,1.0,2\n",
        )
        .unwrap();
        assert!(read_predictions_csv(&p).is_err());
    }
}
