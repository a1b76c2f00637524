//! Normalized cross-correlation f0 tracker.
//!
//! Each frame correlates a window of `window_s` seconds with its lagged copy
//! over the configured f0 range. Local maxima of the correlation become
//! candidates; a Viterbi pass over candidates plus an unvoiced state picks
//! the path, penalising octave jumps and voicing flips.

use super::track::FrameTrack;
use super::{Audio, ProminenceConfig};
use crate::error::Result;

const MAX_CANDIDATES: usize = 6;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    f0: f64,
    strength: f64,
}

pub(crate) fn frame_count(audio: &Audio, cfg: &ProminenceConfig) -> usize {
    let duration = audio.samples.len() as f64 / audio.sample_rate as f64;
    if duration < cfg.window_s {
        return 0;
    }
    (duration / cfg.frame_shift_s).floor() as usize + 1
}

/// Sample at `i`, zero outside the signal.
fn at(x: &[f64], i: isize) -> f64 {
    if i < 0 || i as usize >= x.len() {
        0.0
    } else {
        x[i as usize]
    }
}

fn frame_candidates(
    x: &[f64],
    origin: isize,
    n: usize,
    min_lag: usize,
    max_lag: usize,
    sr: f64,
    cfg: &ProminenceConfig,
) -> Vec<Candidate> {
    let seg: Vec<f64> = (0..(n + max_lag + 2) as isize).map(|i| at(x, origin + i)).collect();
    let e0: f64 = seg[..n].iter().map(|v| v * v).sum();
    if e0 <= 0.0 {
        return Vec::new();
    }
    // Energy of the lagged window, updated incrementally.
    let mut e_lag: f64 = seg[min_lag - 1..min_lag - 1 + n].iter().map(|v| v * v).sum();
    let mut r = vec![0.0; max_lag + 2];
    for lag in (min_lag - 1)..=(max_lag + 1) {
        if lag > min_lag - 1 {
            e_lag += seg[lag + n - 1] * seg[lag + n - 1] - seg[lag - 1] * seg[lag - 1];
        }
        let cross: f64 = seg[..n].iter().zip(&seg[lag..lag + n]).map(|(a, b)| a * b).sum();
        let denom = (e0 * e_lag.max(0.0)).sqrt();
        r[lag] = if denom > 0.0 { cross / denom } else { 0.0 };
    }

    let mut cands = Vec::new();
    for lag in min_lag..=max_lag {
        let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
        if b > 0.0 && b >= a && b >= c {
            let curv = a - 2.0 * b + c;
            let (shift, peak) = if curv < 0.0 {
                let d = 0.5 * (a - c) / curv;
                (d, b - 0.25 * (a - c) * d)
            } else {
                (0.0, b)
            };
            let f0 = sr / (lag as f64 + shift);
            if f0 < cfg.f0_min_hz * 0.98 || f0 > cfg.f0_max_hz * 1.02 {
                continue;
            }
            let strength = peak.min(1.0) + cfg.octave_cost * (f0 / cfg.f0_min_hz).log2();
            cands.push(Candidate { f0, strength });
        }
    }
    cands.sort_by(|a, b| b.strength.total_cmp(&a.strength));
    cands.truncate(MAX_CANDIDATES);
    cands
}

pub fn extract_f0(audio: &Audio, cfg: &ProminenceConfig) -> Result<FrameTrack> {
    let n_frames = frame_count(audio, cfg);
    if n_frames == 0 {
        log::warn!("audio shorter than one analysis window; empty f0 track");
        return FrameTrack::new(Vec::new(), cfg.frame_shift_s, 0.0)?.with_voicing(Vec::new());
    }
    let sr = audio.sample_rate as f64;
    let x = &audio.samples;
    let n = (cfg.window_s * sr).round() as usize;
    let min_lag = ((sr / cfg.f0_max_hz).floor() as usize).max(2);
    let max_lag = (sr / cfg.f0_min_hz).ceil() as usize;
    let hop = cfg.frame_shift_s * sr;

    let rms: Vec<f64> = (0..n_frames)
        .map(|k| {
            let origin = (k as f64 * hop).round() as isize - (n / 2) as isize;
            let e: f64 = (0..n as isize).map(|i| at(x, origin + i).powi(2)).sum();
            (e / n as f64).sqrt()
        })
        .collect();
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    let silence = peak * 10f64.powf(cfg.silence_db / 20.0);

    let frames: Vec<Vec<Candidate>> = (0..n_frames)
        .map(|k| {
            if peak <= 0.0 || rms[k] < silence {
                return Vec::new();
            }
            let origin = (k as f64 * hop).round() as isize - (n / 2) as isize;
            frame_candidates(x, origin, n, min_lag, max_lag, sr, cfg)
        })
        .collect();

    let path = viterbi(&frames, cfg);
    let mut values = Vec::with_capacity(n_frames);
    let mut voiced = Vec::with_capacity(n_frames);
    for (k, choice) in path.into_iter().enumerate() {
        match choice {
            Some(c) => {
                values.push(frames[k][c].f0);
                voiced.push(true);
            }
            None => {
                values.push(0.0);
                voiced.push(false);
            }
        }
    }
    FrameTrack::new(values, cfg.frame_shift_s, 0.0)?.with_voicing(voiced)
}

/// Best path; `None` is the unvoiced state.
fn viterbi(frames: &[Vec<Candidate>], cfg: &ProminenceConfig) -> Vec<Option<usize>> {
    // state 0 = unvoiced, state i+1 = candidate i
    let local = |cands: &[Candidate], s: usize| -> f64 {
        if s == 0 {
            if cands.is_empty() {
                1.0
            } else {
                cfg.voicing_threshold
            }
        } else {
            cands[s - 1].strength
        }
    };
    let transition = |a: &[Candidate], sa: usize, b: &[Candidate], sb: usize| -> f64 {
        match (sa, sb) {
            (0, 0) => 0.0,
            (0, _) | (_, 0) => cfg.voiced_unvoiced_cost,
            _ => cfg.octave_jump_cost * (a[sa - 1].f0 / b[sb - 1].f0).log2().abs(),
        }
    };

    let mut score: Vec<f64> = (0..=frames.first().map_or(0, Vec::len))
        .map(|s| local(&frames[0], s))
        .collect();
    let mut back: Vec<Vec<usize>> = vec![vec![0; score.len()]];
    for k in 1..frames.len() {
        let (prev, cur) = (&frames[k - 1], &frames[k]);
        let mut next = Vec::with_capacity(cur.len() + 1);
        let mut ptr = Vec::with_capacity(cur.len() + 1);
        for s in 0..=cur.len() {
            let (best_p, best) = score
                .iter()
                .enumerate()
                .map(|(p, sc)| (p, sc - transition(prev, p, cur, s)))
                .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
            next.push(best + local(cur, s));
            ptr.push(best_p);
        }
        score = next;
        back.push(ptr);
    }

    let mut state = score
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        )
        .0;
    let mut path = vec![None; frames.len()];
    for k in (0..frames.len()).rev() {
        path[k] = state.checked_sub(1);
        state = back[k][state];
    }
    path
}
