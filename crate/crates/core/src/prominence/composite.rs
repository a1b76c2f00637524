use super::track::{zscore, FrameTrack};
use crate::error::{Error, Result};

/// Semitones re 100 Hz.
pub fn hz_to_semitones(f0: f64) -> f64 {
    12.0 * (f0 / 100.0).log2()
}

/// f0 in semitones with unvoiced stretches linearly interpolated between
/// voiced neighbours and edge-extended. `None` when nothing is voiced.
pub fn interpolated_semitones(f0: &FrameTrack) -> Option<Vec<f64>> {
    let n = f0.len();
    let voiced: Vec<bool> = match &f0.voiced {
        Some(m) => m.clone(),
        None => f0.values.iter().map(|&v| v > 0.0).collect(),
    };
    let anchors: Vec<usize> = (0..n).filter(|&i| voiced[i] && f0.values[i] > 0.0).collect();
    let first = *anchors.first()?;
    let last = *anchors.last()?;
    let st: Vec<f64> = f0
        .values
        .iter()
        .map(|&v| if v > 0.0 { hz_to_semitones(v) } else { 0.0 })
        .collect();
    let mut out = vec![0.0; n];
    out[..first].fill(st[first]);
    out[last..].fill(st[last]);
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (i, o) in out.iter_mut().enumerate().take(b + 1).skip(a) {
            *o = st[a] + (i - a) as f64 / (b - a) as f64 * (st[b] - st[a]);
        }
    }
    if anchors.len() == 1 {
        out[first] = st[first];
    }
    Some(out)
}

/// Utterance z-scored, gap-filled log f0. All zeros when nothing is voiced.
pub fn normalized_f0(f0: &FrameTrack) -> Vec<f64> {
    match interpolated_semitones(f0) {
        Some(st) => zscore(&st),
        None => vec![0.0; f0.len()],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub f0: f64,
    pub energy: f64,
    pub duration: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            f0: 1.0,
            energy: 1.0,
            duration: 1.0,
        }
    }
}

/// Weighted sum of the z-scored tracks on the f0 framing. Energy and
/// duration are resampled when their framing differs.
pub fn combine_signals(f0: &FrameTrack, energy: &FrameTrack, dur: &FrameTrack, weights: Weights) -> Result<FrameTrack> {
    if f0.is_empty() {
        return Err(Error::Signal("empty f0 track".into()));
    }
    let zf = normalized_f0(f0);
    let ze = zscore(&energy.resampled_like(f0).values);
    let zd = zscore(&dur.resampled_like(f0).values);
    let values = (0..f0.len())
        .map(|i| weights.f0 * zf[i] + weights.energy * ze[i] + weights.duration * zd[i])
        .collect();
    FrameTrack::new(values, f0.frame_shift_s, f0.start_s)
}
