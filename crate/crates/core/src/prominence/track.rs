use crate::error::{Error, Result};

/// Frame-synchronous track. Frame `i` is centred at `start_s + i * frame_shift_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrack {
    pub values: Vec<f64>,
    pub frame_shift_s: f64,
    pub start_s: f64,
    /// Only set for f0 tracks.
    pub voiced: Option<Vec<bool>>,
}

impl FrameTrack {
    pub fn new(values: Vec<f64>, frame_shift_s: f64, start_s: f64) -> Result<Self> {
        if !(frame_shift_s > 0.0) {
            return Err(Error::Validation(format!(
                "frame shift {frame_shift_s} must be positive"
            )));
        }
        Ok(FrameTrack {
            values,
            frame_shift_s,
            start_s,
            voiced: None,
        })
    }

    pub fn with_voicing(mut self, voiced: Vec<bool>) -> Result<Self> {
        if voiced.len() != self.values.len() {
            return Err(Error::Validation(format!(
                "voicing mask has {} frames, track has {}",
                voiced.len(),
                self.values.len()
            )));
        }
        self.voiced = Some(voiced);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, frame: usize) -> f64 {
        self.start_s + frame as f64 * self.frame_shift_s
    }

    pub fn end_s(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn same_framing(&self, other: &FrameTrack) -> bool {
        self.len() == other.len()
            && (self.frame_shift_s - other.frame_shift_s).abs() < 1e-12
            && (self.start_s - other.start_s).abs() < 1e-12
    }

    /// Linear interpolation at time `t`, edge-extended.
    pub fn sample(&self, t: f64) -> f64 {
        let n = self.values.len();
        if n == 0 {
            return 0.0;
        }
        let pos = (t - self.start_s) / self.frame_shift_s;
        if pos <= 0.0 {
            return self.values[0];
        }
        if pos >= (n - 1) as f64 {
            return self.values[n - 1];
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    /// This track's values on `like`'s framing.
    pub fn resampled_like(&self, like: &FrameTrack) -> FrameTrack {
        if self.same_framing(like) {
            return FrameTrack {
                voiced: None,
                ..self.clone()
            };
        }
        FrameTrack {
            values: (0..like.len()).map(|i| self.sample(like.time(i))).collect(),
            frame_shift_s: like.frame_shift_s,
            start_s: like.start_s,
            voiced: None,
        }
    }

    /// Frames whose centres fall inside `[start_s, end_s]`; the nearest frame
    /// when none does.
    pub fn frames_in(&self, start_s: f64, end_s: f64) -> std::ops::Range<usize> {
        let n = self.len();
        if n == 0 {
            return 0..0;
        }
        let lo = ((start_s - self.start_s) / self.frame_shift_s - 1e-9).ceil().max(0.0) as usize;
        let hi = (((end_s - self.start_s) / self.frame_shift_s + 1e-9).floor() + 1.0).max(0.0) as usize;
        let hi = hi.min(n);
        if lo < hi {
            lo..hi
        } else {
            let mid = ((0.5 * (start_s + end_s) - self.start_s) / self.frame_shift_s).round();
            let i = (mid.max(0.0) as usize).min(n - 1);
            i..i + 1
        }
    }
}

/// z-scores with population sd; a constant input maps to zeros.
pub fn zscore(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let m = crate::stats::mean(values);
    let sd = crate::stats::population_sd(values);
    if !(sd > 1e-12 * (1.0 + m.abs())) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - m) / sd).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_in_range() {
        let t = FrameTrack::new(vec![0.0; 100], 0.01, 0.0).unwrap();
        assert_eq!(t.frames_in(0.10, 0.30), 10..31);
        assert_eq!(t.frames_in(0.101, 0.104), 10..11);
        assert_eq!(t.frames_in(2.0, 3.0), 99..100);
    }

    #[test]
    fn sampling_interpolates_and_extends() {
        let t = FrameTrack::new(vec![0.0, 1.0, 3.0], 0.5, 1.0).unwrap();
        assert_eq!(t.sample(0.0), 0.0);
        assert_eq!(t.sample(1.25), 0.5);
        assert_eq!(t.sample(1.75), 2.0);
        assert_eq!(t.sample(9.0), 3.0);
    }

    #[test]
    fn zscore_constant_is_zero() {
        assert_eq!(zscore(&[2.0, 2.0, 2.0]), [0.0, 0.0, 0.0]);
        let z = zscore(&[1.0, 3.0]);
        assert_eq!(z, [-1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_shift_and_mask() {
        assert!(FrameTrack::new(vec![], 0.0, 0.0).is_err());
        let t = FrameTrack::new(vec![1.0, 2.0], 0.01, 0.0).unwrap();
        assert!(t.with_voicing(vec![true]).is_err());
    }
}
