use super::track::FrameTrack;
use crate::corpus::{is_silence_label, WordAlignment};
use crate::error::{Error, Result};

/// (centre, duration) for every non-silence phone. Words without phones
/// count as one unit.
fn units(alignment: &[WordAlignment]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for w in alignment.iter().filter(|w| !w.is_silence()) {
        if w.phones.is_empty() {
            out.push((0.5 * (w.start_s + w.end_s), w.duration_s()));
            continue;
        }
        for p in w.phones.iter().filter(|p| !is_silence_label(&p.label)) {
            out.push((0.5 * (p.start_s + p.end_s), p.end_s - p.start_s));
        }
    }
    out
}

/// Piecewise-linear curve through (phone centre, phone duration) points,
/// held constant outside the first and last centre.
pub fn duration_signal(alignment: &[WordAlignment], n_frames: usize, frame_shift_s: f64) -> Result<FrameTrack> {
    let pts = units(alignment);
    if pts.is_empty() {
        return Err(Error::Signal("alignment has no speech units".into()));
    }
    let mut values = Vec::with_capacity(n_frames);
    let mut seg = 0;
    for i in 0..n_frames {
        let t = i as f64 * frame_shift_s;
        while seg + 1 < pts.len() && pts[seg + 1].0 <= t {
            seg += 1;
        }
        let v = if t <= pts[0].0 {
            pts[0].1
        } else if seg + 1 >= pts.len() {
            pts[pts.len() - 1].1
        } else {
            let (t0, v0) = pts[seg];
            let (t1, v1) = pts[seg + 1];
            v0 + (t - t0) / (t1 - t0) * (v1 - v0)
        };
        values.push(v);
    }
    FrameTrack::new(values, frame_shift_s, 0.0)
}
