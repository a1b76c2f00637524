//! Mexican-hat continuous wavelet transform on a frame track.

use super::track::FrameTrack;
use crate::error::{Error, Result};

pub const MIN_FRAMES: usize = 8;
/// Kernel support in units of the scale; the wavelet is below 1e-12 beyond.
const SUPPORT: f64 = 8.0;

/// Unit Ricker wavelet `(1 - u^2) exp(-u^2 / 2)`.
pub fn ricker(u: f64) -> f64 {
    let u2 = u * u;
    (1.0 - u2) * (-0.5 * u2).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    /// `coefficients[scale][frame]`
    pub coefficients: Vec<Vec<f64>>,
    pub scales_s: Vec<f64>,
    pub frame_shift_s: f64,
    pub start_s: f64,
}

impl Scalogram {
    pub fn n_frames(&self) -> usize {
        self.coefficients.first().map_or(0, Vec::len)
    }

    pub fn time(&self, frame: usize) -> f64 {
        self.start_s + frame as f64 * self.frame_shift_s
    }
}

/// Half-sample symmetric reflection into `0..n`, valid for any offset.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Sampled kernel for a scale of `s` frames: `s^(-1/2) * ricker(j / s)`.
pub fn kernel(scale_frames: f64) -> Vec<f64> {
    let half = (SUPPORT * scale_frames).ceil() as isize;
    let norm = scale_frames.powf(-0.5);
    (-half..=half).map(|j| norm * ricker(j as f64 / scale_frames)).collect()
}

pub fn scales(n_scales: usize, base_scale_s: f64) -> Vec<f64> {
    (0..n_scales)
        .map(|k| base_scale_s * 2f64.powf(k as f64 / 2.0))
        .collect()
}

/// Scales are `base_scale_s * 2^(k/2)` for `k < n_scales`. The signal mean
/// is removed first and edges are mirror-padded.
pub fn cwt(signal: &FrameTrack, n_scales: usize, base_scale_s: f64) -> Result<Scalogram> {
    let n = signal.len();
    if n < MIN_FRAMES {
        return Err(Error::Signal(format!(
            "cwt needs at least {MIN_FRAMES} frames, got {n}"
        )));
    }
    if n_scales == 0 || !(base_scale_s > 0.0) {
        return Err(Error::Validation(
            "cwt needs n_scales > 0 and a positive base scale".into(),
        ));
    }
    let mean = crate::stats::mean(&signal.values);
    let x: Vec<f64> = signal.values.iter().map(|v| v - mean).collect();
    let scales_s = scales(n_scales, base_scale_s);
    let coefficients = scales_s
        .iter()
        .map(|&s| {
            let k = kernel(s / signal.frame_shift_s);
            let half = (k.len() / 2) as isize;
            (0..n as isize)
                .map(|t| {
                    k.iter()
                        .enumerate()
                        .map(|(j, w)| w * x[reflect(t + j as isize - half, n)])
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(Scalogram {
        coefficients,
        scales_s,
        frame_shift_s: signal.frame_shift_s,
        start_s: signal.start_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(v: Vec<f64>) -> FrameTrack {
        FrameTrack::new(v, 0.005, 0.0).unwrap()
    }

    #[test]
    fn reflection_indices() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, [3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
    }

    #[test]
    fn dyadic_scales() {
        let s = scales(12, 0.02);
        assert_eq!(s[0], 0.02);
        assert_eq!(s[4], 0.08);
        assert!((s[11] - 0.02 * 2f64.powf(5.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_signal_zero_scalogram() {
        let sg = cwt(&track(vec![0.0; 64]), 6, 0.02).unwrap();
        assert!(sg.coefficients.iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(cwt(&track(vec![1.0; 7]), 4, 0.02).is_err());
    }

    #[test]
    fn kernel_sums_to_about_zero() {
        for s in [4.0, 11.3, 90.5] {
            let k = kernel(s);
            let total: f64 = k.iter().sum();
            let peak = k.iter().cloned().fold(0.0, f64::max);
            assert!(total.abs() < 1e-9 * peak * k.len() as f64);
        }
    }
}
