use super::composite::interpolated_semitones;
use super::cwt::Scalogram;
use super::track::{zscore, FrameTrack};
use crate::corpus::WordAlignment;
use crate::error::{Error, Result};
use crate::stats::{mean, population_sd};

/// Band-limited salience curve: coefficients summed over scales within
/// `[lo, hi]` seconds.
pub fn salience(scalogram: &Scalogram, band: (f64, f64)) -> Result<Vec<f64>> {
    let (lo, hi) = band;
    let picked: Vec<usize> = scalogram
        .scales_s
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= lo * (1.0 - 1e-9) && s <= hi * (1.0 + 1e-9))
        .map(|(i, _)| i)
        .collect();
    if picked.is_empty() {
        return Err(Error::Validation(format!(
            "scale band [{lo}, {hi}] s contains none of the scales {:?}",
            scalogram.scales_s
        )));
    }
    let n = scalogram.n_frames();
    Ok((0..n)
        .map(|t| picked.iter().map(|&k| scalogram.coefficients[k][t]).sum())
        .collect())
}

/// `(alignment index, prominence)` for every non-silence word: the maximum
/// of the salience curve over the word's frames.
pub fn word_prominence(
    scalogram: &Scalogram,
    alignment: &[WordAlignment],
    band: (f64, f64),
) -> Result<Vec<(usize, f64)>> {
    let curve = salience(scalogram, band)?;
    let frames = FrameTrack {
        values: curve,
        frame_shift_s: scalogram.frame_shift_s,
        start_s: scalogram.start_s,
        voiced: None,
    };
    let extent = (
        frames.start_s - frames.frame_shift_s,
        frames.end_s() + frames.frame_shift_s,
    );
    let mut out = Vec::new();
    for (i, w) in alignment.iter().enumerate() {
        if w.is_silence() {
            continue;
        }
        if w.start_s < extent.0 || w.end_s > extent.1 {
            return Err(Error::Signal(format!(
                "word {i} {:?} [{}, {}] lies outside the signal ({} frames)",
                w.word,
                w.start_s,
                w.end_s,
                frames.len()
            )));
        }
        let peak = frames.values[frames.frames_in(w.start_s, w.end_s)]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        out.push((i, peak));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordMeasures {
    pub alignment_index: usize,
    pub duration_s: f64,
    pub f0_mean: f64,
    pub f0_sd: f64,
    pub intensity_mean: f64,
    pub intensity_sd: f64,
    /// False when the word had no voiced frame and f0 statistics come from
    /// the interpolated contour.
    pub voiced: bool,
}

/// Per-word duration plus f0 and intensity statistics in utterance z units.
/// f0 is z-scored in the semitone domain over voiced frames.
pub fn word_measures(f0: &FrameTrack, energy: &FrameTrack, alignment: &[WordAlignment]) -> Vec<WordMeasures> {
    let mask: Vec<bool> = f0
        .voiced
        .clone()
        .unwrap_or_else(|| f0.values.iter().map(|&v| v > 0.0).collect());
    let semis = interpolated_semitones(f0);
    let (f0_z, any_voiced): (Vec<f64>, bool) = match &semis {
        Some(st) => {
            let voiced_vals: Vec<f64> = st.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
            let m = mean(&voiced_vals);
            let sd = population_sd(&voiced_vals);
            let z = if sd > 1e-12 {
                st.iter().map(|v| (v - m) / sd).collect()
            } else {
                vec![0.0; st.len()]
            };
            (z, true)
        }
        None => (vec![0.0; f0.len()], false),
    };
    let energy = energy.resampled_like(f0);
    let int_z = zscore(&energy.values);

    let stats = |vals: &[f64]| -> (f64, f64) {
        if vals.is_empty() {
            (0.0, 0.0)
        } else {
            (mean(vals), population_sd(vals))
        }
    };

    alignment
        .iter()
        .enumerate()
        .filter(|(_, w)| !w.is_silence())
        .map(|(i, w)| {
            let range = f0.frames_in(w.start_s, w.end_s);
            let voiced_f0: Vec<f64> = range.clone().filter(|&k| mask[k]).map(|k| f0_z[k]).collect();
            let voiced = any_voiced && !voiced_f0.is_empty();
            let (f0_mean, f0_sd) = if voiced {
                stats(&voiced_f0)
            } else {
                stats(&f0_z[range.clone()])
            };
            let (intensity_mean, intensity_sd) = stats(&int_z[range]);
            WordMeasures {
                alignment_index: i,
                duration_s: w.duration_s(),
                f0_mean,
                f0_sd,
                intensity_mean,
                intensity_sd,
                voiced,
            }
        })
        .collect()
}
