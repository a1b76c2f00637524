use super::pitch::frame_count;
use super::track::FrameTrack;
use super::{Audio, ProminenceConfig};
use crate::error::Result;

/// Floor used when the whole utterance is digital silence (dB re full scale).
pub const SILENT_UTTERANCE_DB: f64 = -100.0;

/// Hann-weighted log RMS energy in dB, framed like the f0 track, floored
/// `energy_floor_db` below the utterance peak.
pub fn extract_energy(audio: &Audio, cfg: &ProminenceConfig) -> Result<FrameTrack> {
    let n_frames = frame_count(audio, cfg);
    let sr = audio.sample_rate as f64;
    let n = (cfg.window_s * sr).round() as usize;
    let hop = cfg.frame_shift_s * sr;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos())
        .collect();
    let wsum: f64 = window.iter().sum();

    let x = &audio.samples;
    let mut db: Vec<f64> = (0..n_frames)
        .map(|k| {
            let origin = (k as f64 * hop).round() as isize - (n / 2) as isize;
            let e: f64 = window
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let j = origin + i as isize;
                    if j < 0 || j as usize >= x.len() {
                        0.0
                    } else {
                        w * x[j as usize] * x[j as usize]
                    }
                })
                .sum();
            10.0 * (e / wsum).log10()
        })
        .collect();

    let peak = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = if peak.is_finite() {
        peak - cfg.energy_floor_db
    } else {
        SILENT_UTTERANCE_DB
    };
    for v in &mut db {
        if !(*v >= floor) {
            *v = floor;
        }
    }
    FrameTrack::new(db, cfg.frame_shift_s, 0.0)
}
