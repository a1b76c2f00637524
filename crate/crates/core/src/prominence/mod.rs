//! Continuous word prominence from speech.
//!
//! f0, energy and a phone-duration curve are z-scored per utterance and
//! summed into a composite signal. A Mexican-hat CWT of the composite is
//! summed over a word-to-phrase band of scales, and each word's prominence
//! is the peak of that salience curve within the word. Values are left
//! continuous.
//!
//! Every numeric constant lives in [`ProminenceConfig`]; the defaults are
//! reasonable approximations of common wavelet-prosody setups, not a claim of
//! equivalence with any particular toolkit.

pub mod composite;
pub mod cwt;
pub mod duration;
pub mod energy;
pub mod pitch;
pub mod track;
pub mod words;

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{load_alignment, match_words, CorpusManifest, Segment, WordAlignment};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::text;

pub use composite::{combine_signals, Weights};
pub use cwt::{cwt, Scalogram};
pub use duration::duration_signal;
pub use energy::extract_energy;
pub use pitch::extract_f0;
pub use track::FrameTrack;
pub use words::{word_measures, word_prominence, WordMeasures};

pub const MIN_SAMPLE_RATE: u32 = 16_000;

/// Mono PCM in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Audio {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads a 16-bit (or float) PCM WAV; multi-channel input is averaged.
    pub fn read_wav(path: &Path) -> Result<Audio> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        let channels = spec.channels.max(1) as usize;
        let raw: Vec<f64> = match spec.sample_format {
            hound::SampleFormat::Int => {
                let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f64 / scale))
                    .collect::<std::result::Result<_, _>>()?
            }
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()?,
        };
        let samples = raw
            .chunks(channels)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let audio = Audio {
            samples,
            sample_rate: spec.sample_rate,
        };
        audio.check().map_err(|e| match e {
            Error::Signal(m) => Error::Signal(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(audio)
    }

    /// Writes 16-bit mono PCM, clipping to `[-1, 1]`.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if self.sample_rate < MIN_SAMPLE_RATE {
            return Err(Error::Signal(format!(
                "sample rate {} Hz is below the supported minimum of {MIN_SAMPLE_RATE} Hz",
                self.sample_rate
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::Signal("empty audio".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProminenceConfig {
    pub frame_shift_s: f64,
    pub window_s: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Minimum normalized autocorrelation for a voiced candidate.
    pub voicing_threshold: f64,
    /// Frames whose RMS is this many dB below the loudest frame are unvoiced.
    pub silence_db: f64,
    /// Bias towards shorter lags (higher f0) per octave, against sub-octave errors.
    pub octave_cost: f64,
    /// Viterbi cost per octave of f0 change between adjacent frames.
    pub octave_jump_cost: f64,
    /// Viterbi cost of a voiced/unvoiced transition.
    pub voiced_unvoiced_cost: f64,
    /// Energy floor below the utterance peak, in dB.
    pub energy_floor_db: f64,
    pub n_scales: usize,
    pub base_scale_s: f64,
    /// Scales (seconds) summed into the salience curve, inclusive.
    pub band: (f64, f64),
    pub weights: Weights,
}

impl Default for ProminenceConfig {
    fn default() -> Self {
        ProminenceConfig {
            frame_shift_s: 0.005,
            window_s: 0.025,
            f0_min_hz: 100.0,
            f0_max_hz: 400.0,
            voicing_threshold: 0.45,
            silence_db: -40.0,
            octave_cost: 0.01,
            octave_jump_cost: 0.35,
            voiced_unvoiced_cost: 0.14,
            energy_floor_db: 60.0,
            n_scales: 12,
            base_scale_s: 0.02,
            band: (0.08, 0.6),
            weights: Weights::default(),
        }
    }
}

impl ProminenceConfig {
    pub const KEYS: [&'static str; 17] = [
        "frame_shift_s",
        "window_s",
        "f0_min_hz",
        "f0_max_hz",
        "voicing_threshold",
        "silence_db",
        "octave_cost",
        "octave_jump_cost",
        "voiced_unvoiced_cost",
        "energy_floor_db",
        "n_scales",
        "base_scale_s",
        "band_lo_s",
        "band_hi_s",
        "weight_f0",
        "weight_energy",
        "weight_duration",
    ];

    /// Defaults overridden by any of [`Self::KEYS`] present in `kv`; other
    /// keys are ignored so one file can configure several stages.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
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
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.frame_shift_s > 0.0) {
            problems.push("frame_shift_s must be positive".to_string());
        }
        if !(self.window_s > 0.0) {
            problems.push("window_s must be positive".to_string());
        }
        if !(self.f0_min_hz > 0.0 && self.f0_min_hz < self.f0_max_hz) {
            problems.push(format!(
                "need 0 < f0_min_hz < f0_max_hz, got {} and {}",
                self.f0_min_hz, self.f0_max_hz
            ));
        }
        if !(0.0..1.0).contains(&self.voicing_threshold) {
            problems.push("voicing_threshold must be in [0, 1)".to_string());
        }
        if !(self.energy_floor_db > 0.0) {
            problems.push("energy_floor_db must be positive".to_string());
        }
        if self.n_scales == 0 || !(self.base_scale_s > 0.0) {
            problems.push("need n_scales > 0 and base_scale_s > 0".to_string());
        }
        if !(self.band.0 <= self.band.1) {
            problems.push(format!("empty scale band [{}, {}]", self.band.0, self.band.1));
        } else {
            let scales = cwt::scales(self.n_scales, self.base_scale_s);
            if !scales
                .iter()
                .any(|&s| s >= self.band.0 * (1.0 - 1e-9) && s <= self.band.1 * (1.0 + 1e-9))
            {
                problems.push(format!(
                    "scale band [{}, {}] s contains none of the {} scales from {} s",
                    self.band.0, self.band.1, self.n_scales, self.base_scale_s
                ));
            }
        }
        let w = self.weights;
        if ![w.f0, w.energy, w.duration].iter().all(|v| v.is_finite()) {
            problems.push("weights must be finite".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }
}

/// Intermediate signals for one utterance, kept for inspection.
#[derive(Debug, Clone)]
pub struct UtteranceSignals {
    pub f0: FrameTrack,
    pub energy: FrameTrack,
    pub duration: FrameTrack,
    pub composite: FrameTrack,
    pub scalogram: Scalogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedProsody {
    pub prominence: f64,
    pub measures: WordMeasures,
}

/// Prominence and measures for every non-silence alignment entry.
pub fn analyze_utterance(
    audio: &Audio,
    alignment: &[WordAlignment],
    cfg: &ProminenceConfig,
) -> Result<(UtteranceSignals, Vec<AlignedProsody>)> {
    audio.check()?;
    let f0 = extract_f0(audio, cfg)?;
    if f0.is_empty() {
        return Err(Error::Signal("audio shorter than one analysis window".into()));
    }
    let energy = extract_energy(audio, cfg)?;
    let duration = duration_signal(alignment, f0.len(), cfg.frame_shift_s)?;
    let composite = combine_signals(&f0, &energy, &duration, cfg.weights)?;
    let scalogram = cwt(&composite, cfg.n_scales, cfg.base_scale_s)?;
    let prominence = word_prominence(&scalogram, alignment, cfg.band)?;
    let measures = word_measures(&f0, &energy, alignment);
    let words = prominence
        .into_iter()
        .zip(measures)
        .map(|((idx, p), m)| {
            debug_assert_eq!(idx, m.alignment_index);
            AlignedProsody {
                prominence: p,
                measures: m,
            }
        })
        .collect();
    Ok((
        UtteranceSignals {
            f0,
            energy,
            duration,
            composite,
            scalogram,
        },
        words,
    ))
}

/// One row of the prosody table, keyed like the surprisal table.
#[derive(Debug, Clone, PartialEq)]
pub struct WordProsody {
    pub segment_id: String,
    pub word_index: usize,
    pub word: String,
    pub prominence: f64,
    pub duration_s: f64,
    pub f0_mean: f64,
    pub f0_sd: f64,
    pub intensity_mean: f64,
    pub intensity_sd: f64,
    /// False when f0 statistics fell back to the interpolated contour.
    pub voiced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentProsody {
    pub rows: Vec<WordProsody>,
    pub unmatched_text: Vec<usize>,
    pub unmatched_alignment: Vec<usize>,
}

/// Text-indexed prosody rows for one segment. Text words without an
/// alignment partner get no row and are reported.
pub fn segment_prosody(
    segment_id: &str,
    text: &str,
    audio: &Audio,
    alignment: &[WordAlignment],
    cfg: &ProminenceConfig,
) -> Result<SegmentProsody> {
    let (_, aligned) = analyze_utterance(audio, alignment, cfg)?;
    let words = text::words(text);
    let matching = match_words(text, alignment);
    let by_alignment: std::collections::HashMap<usize, &AlignedProsody> =
        aligned.iter().map(|a| (a.measures.alignment_index, a)).collect();
    let rows = matching
        .pairs
        .iter()
        .map(|&(ti, ai)| {
            let a = by_alignment[&ai];
            WordProsody {
                segment_id: segment_id.to_string(),
                word_index: ti,
                word: words[ti].stripped().to_string(),
                prominence: a.prominence,
                duration_s: a.measures.duration_s,
                f0_mean: a.measures.f0_mean,
                f0_sd: a.measures.f0_sd,
                intensity_mean: a.measures.intensity_mean,
                intensity_sd: a.measures.intensity_sd,
                voiced: a.measures.voiced,
            }
        })
        .collect();
    Ok(SegmentProsody {
        rows,
        unmatched_text: matching.unmatched_text,
        unmatched_alignment: matching.unmatched_alignment,
    })
}

fn load_segment(seg: &Segment, cfg: &ProminenceConfig) -> Result<SegmentProsody> {
    let audio_path = seg
        .audio_path
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("segment {} has no audio path", seg.id)))?;
    let alignment_path = seg
        .alignment_path
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("segment {} has no alignment path", seg.id)))?;
    let audio = Audio::read_wav(audio_path)?;
    let alignment = load_alignment(alignment_path)?;
    segment_prosody(&seg.id, &seg.text, &audio, &alignment, cfg)
        .map_err(|e| Error::Validation(format!("segment {}: {e}", seg.id)))
}

/// Prosody rows for every segment, in manifest order. Runs on the current
/// rayon pool. Unmatched words are logged.
pub fn prosody_table(manifest: &CorpusManifest, cfg: &ProminenceConfig) -> Result<Vec<WordProsody>> {
    cfg.validate()?;
    let per_segment: Vec<SegmentProsody> = manifest
        .segments
        .par_iter()
        .map(|seg| load_segment(seg, cfg))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (seg, sp) in manifest.segments.iter().zip(per_segment) {
        if !sp.unmatched_text.is_empty() || !sp.unmatched_alignment.is_empty() {
            log::warn!(
                "segment {}: {} text word(s) and {} aligned word(s) unmatched",
                seg.id,
                sp.unmatched_text.len(),
                sp.unmatched_alignment.len()
            );
        }
        rows.extend(sp.rows);
    }
    Ok(rows)
}

pub const PROSODY_HEADER: [&str; 10] = [
    "segment_id",
    "word_index",
    "word",
    "prominence",
    "duration_s",
    "f0_mean",
    "f0_sd",
    "int_mean",
    "int_sd",
    "voiced_flag",
];

pub fn prosody_csv(rows: &[WordProsody]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PROSODY_HEADER)?;
    for r in rows {
        w.write_record([
            r.segment_id.clone(),
            r.word_index.to_string(),
            r.word.clone(),
            r.prominence.to_string(),
            r.duration_s.to_string(),
            r.f0_mean.to_string(),
            r.f0_sd.to_string(),
            r.intensity_mean.to_string(),
            r.intensity_sd.to_string(),
            u8::from(r.voiced).to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?).expect("csv output is utf-8"))
}

pub fn write_prosody_csv(path: &Path, rows: &[WordProsody]) -> Result<()> {
    fs::write(path, prosody_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn read_prosody_csv(path: &Path) -> Result<Vec<WordProsody>> {
    let mut r = csv::Reader::from_path(path)?;
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k)
                .parse()
                .map_err(|_| Error::parse(&origin, line, format!("bad {}", PROSODY_HEADER[k])))
        };
        out.push(WordProsody {
            segment_id: field(0).to_string(),
            word_index: field(1)
                .parse()
                .map_err(|_| Error::parse(&origin, line, "bad word_index"))?,
            word: field(2).to_string(),
            prominence: num(3)?,
            duration_s: num(4)?,
            f0_mean: num(5)?,
            f0_sd: num(6)?,
            intensity_mean: num(7)?,
            intensity_sd: num(8)?,
            voiced: match field(9) {
                "1" => true,
                "0" => false,
                _ => return Err(Error::parse(&origin, line, "bad voiced_flag")),
            },
        });
    }
    Ok(out)
}
