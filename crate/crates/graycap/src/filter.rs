//! Window-based sensitivity filtering.
//!
//! Slides a window of `w` frames over a stream, computes mean-absolute pixel
//! differences between consecutive frames, and keeps windows showing
//! *sustained* motion: at least `min_significant` of the `w-1` differences
//! must exceed `sigma` times the window's largest difference. Sensor noise
//! (one sporadic spike, everything else near zero) yields a single
//! significant difference and is dropped; a person moving through the scene
//! produces a train of comparable differences and is kept.
//!
//! The significance test is relative to the window's own maximum, so scaling
//! all differences by a constant never changes a score. A separate absolute
//! `activity_floor` on the window's mean difference rejects fully static
//! windows, which the relative rule alone cannot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameStream};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Window size in frames, at least 3.
    pub window_size: usize,
    /// Relative significance threshold in (0,1).
    pub sigma: f64,
    /// Minimum number of significant differences for sustained motion.
    pub min_significant: usize,
    /// Absolute mean-difference floor below which a window is static.
    pub activity_floor: f64,
    /// Flip the decision-sum test: drop windows with `C >= N` instead of
    /// keeping them.
    pub invert_rule: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            window_size: 8,
            sigma: 0.5,
            min_significant: 2,
            activity_floor: 0.005,
            invert_rule: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 {
            return Err(Error::InvalidConfig(format!(
                "window_size must be >= 3, got {}",
                self.window_size
            )));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sigma must lie in (0,1), got {}",
                self.sigma
            )));
        }
        if self.min_significant < 1 || self.min_significant > self.window_size - 1 {
            return Err(Error::InvalidConfig(format!(
                "min_significant must lie in [1, window_size-1], got {}",
                self.min_significant
            )));
        }
        if self.activity_floor < 0.0 {
            return Err(Error::InvalidConfig("activity_floor must be >= 0".into()));
        }
        Ok(())
    }
}

/// Scored differences of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffWindow {
    /// The `w-1` consecutive-frame differences.
    pub diffs: Vec<f64>,
    /// Largest difference in the window.
    pub d_max: f64,
    /// Per-difference significance bits.
    pub scores: Vec<bool>,
    /// Number of significant differences.
    pub decision_sum: usize,
}

/// One window's diagnostics as reported by [`filter_stream`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowDiagnostic {
    pub start: usize,
    pub mean_diff: f64,
    pub d_max: f64,
    pub decision_sum: usize,
    pub retained: bool,
}

/// Half-open retained frame range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

/// Retained segments plus the per-window evidence behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetainedSegments {
    pub segments: Vec<Segment>,
    pub windows: Vec<WindowDiagnostic>,
}

impl RetainedSegments {
    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.end - s.start).sum()
    }
}

/// Mean absolute per-pixel intensity difference of two equally sized grids.
pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    sum / a.len() as f64
}

/// Mean absolute per-pixel difference between two frames.
pub fn pixel_diff(a: &Frame, b: &Frame) -> Result<f64> {
    if !a.same_dimensions(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(mean_abs_diff(a.pixels(), b.pixels()))
}

/// Score a precomputed difference sequence against the relative threshold.
pub fn score_diffs(diffs: &[f64], sigma: f64) -> DiffWindow {
    let d_max = diffs.iter().copied().fold(0.0_f64, f64::max);
    let threshold = sigma * d_max;
    let scores: Vec<bool> = diffs.iter().map(|&d| d > threshold).collect();
    let decision_sum = scores.iter().filter(|&&s| s).count();
    DiffWindow {
        diffs: diffs.to_vec(),
        d_max,
        scores,
        decision_sum,
    }
}

/// Score a window of exactly `config.window_size` frames.
pub fn score_window(window: &[Frame], config: &FilterConfig) -> Result<DiffWindow> {
    config.validate()?;
    if window.len() != config.window_size {
        return Err(Error::InvalidConfig(format!(
            "expected exactly {} frames, got {}",
            config.window_size,
            window.len()
        )));
    }
    let mut diffs = Vec::with_capacity(window.len() - 1);
    for pair in window.windows(2) {
        diffs.push(pixel_diff(&pair[0], &pair[1])?);
    }
    Ok(score_diffs(&diffs, config.sigma))
}

/// Slide the window over the stream (stride 1), keep windows with sustained
/// motion, and merge overlapping retained windows into maximal segments.
pub fn filter_stream(stream: &FrameStream, config: &FilterConfig) -> Result<RetainedSegments> {
    config.validate()?;
    let w = config.window_size;
    if stream.len() < w {
        return Err(Error::InvalidStream(format!(
            "stream of {} frames is shorter than window {w}",
            stream.len()
        )));
    }

    let frames = stream.frames();
    let mut diffs = Vec::with_capacity(frames.len() - 1);
    for pair in frames.windows(2) {
        diffs.push(pixel_diff(&pair[0], &pair[1])?);
    }

    let mut windows = Vec::with_capacity(frames.len() - w + 1);
    let mut segments: Vec<Segment> = Vec::new();
    for start in 0..=frames.len() - w {
        let slice = &diffs[start..start + w - 1];
        let scored = score_diffs(slice, config.sigma);
        let mean_diff = slice.iter().sum::<f64>() / slice.len() as f64;
        let sum_ok = if config.invert_rule {
            scored.decision_sum < config.min_significant
        } else {
            scored.decision_sum >= config.min_significant
        };
        let retained = mean_diff >= config.activity_floor && sum_ok;
        windows.push(WindowDiagnostic {
            start,
            mean_diff,
            d_max: scored.d_max,
            decision_sum: scored.decision_sum,
            retained,
        });
        if retained {
            let end = start + w;
            match segments.last_mut() {
                Some(last) if start <= last.end => last.end = end,
                _ => segments.push(Segment { start, end }),
            }
        }
    }

    Ok(RetainedSegments { segments, windows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Modality;
    use rand::Rng;

    fn constant_frames(values: &[f64]) -> FrameStream {
        let frames = values
            .iter()
            .enumerate()
            .map(|(i, &v)| Frame::constant(8, 8, v, i as u64, Modality::Synthetic).unwrap())
            .collect();
        FrameStream::from_frames("t", Modality::Synthetic, 255, frames).unwrap()
    }

    #[test]
    fn identical_frames_have_zero_diff() {
        let a = Frame::constant(8, 8, 0.3, 0, Modality::Depth).unwrap();
        let b = Frame::constant(8, 8, 0.3, 1, Modality::Depth).unwrap();
        assert_eq!(pixel_diff(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn opposite_frames_have_unit_diff() {
        let a = Frame::constant(8, 8, 0.0, 0, Modality::Depth).unwrap();
        let b = Frame::constant(8, 8, 1.0, 1, Modality::Depth).unwrap();
        assert_eq!(pixel_diff(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn single_changed_pixel_averages_out() {
        // 2x2 grids: one pixel differs by 0.4, mean diff is 0.4/4 = 0.1.
        let a = [0.0, 0.0, 0.0, 0.0];
        let b = [0.4, 0.0, 0.0, 0.0];
        assert!((mean_abs_diff(&a, &b) - 0.1).abs() < 1e-15);
        assert_eq!(mean_abs_diff(&a, &b), mean_abs_diff(&b, &a));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let a = Frame::constant(8, 8, 0.0, 0, Modality::Depth).unwrap();
        let b = Frame::constant(16, 8, 0.0, 1, Modality::Depth).unwrap();
        assert!(pixel_diff(&a, &b).is_err());
    }

    #[test]
    fn scores_monotone_decaying_diffs() {
        // Threshold is 0.5 * 10 = 5; all three diffs exceed it.
        let w = score_diffs(&[10.0, 9.0, 8.0], 0.5);
        assert_eq!(w.scores, vec![true, true, true]);
        assert_eq!(w.decision_sum, 3);
        assert_eq!(w.d_max, 10.0);
    }

    #[test]
    fn scores_single_spike() {
        let w = score_diffs(&[10.0, 0.1, 0.2], 0.5);
        assert_eq!(w.scores, vec![true, false, false]);
        assert_eq!(w.decision_sum, 1);
    }

    #[test]
    fn static_window_scores_zero() {
        let w = score_diffs(&[0.0, 0.0, 0.0], 0.5);
        assert_eq!(w.scores, vec![false, false, false]);
        assert_eq!(w.decision_sum, 0);
        assert_eq!(w.d_max, 0.0);
    }

    #[test]
    fn score_window_requires_exact_length() {
        let config = FilterConfig {
            window_size: 4,
            ..FilterConfig::default()
        };
        let stream = constant_frames(&[0.0, 0.1, 0.2]);
        assert!(score_window(stream.frames(), &config).is_err());
    }

    #[test]
    fn scale_invariance_of_scores() {
        let mut rng = crate::rng::rng_for(crate::Seed(11), "filter-scale");
        for _ in 0..200 {
            let diffs: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
            let sigma = 0.1 + 0.8 * rng.random::<f64>();
            let base = score_diffs(&diffs, sigma);
            for c in [0.1, 10.0, 1234.5] {
                let scaled: Vec<f64> = diffs.iter().map(|d| d * c).collect();
                let s = score_diffs(&scaled, sigma);
                assert_eq!(s.scores, base.scores);
                assert_eq!(s.decision_sum, base.decision_sum);
            }
        }
    }

    #[test]
    fn raising_sigma_never_raises_decision_sum() {
        let mut rng = crate::rng::rng_for(crate::Seed(12), "filter-mono");
        for _ in 0..200 {
            let diffs: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
            let mut last = usize::MAX;
            for step in 1..10 {
                let sigma = step as f64 / 10.0;
                let sum = score_diffs(&diffs, sigma).decision_sum;
                assert!(sum <= last);
                last = sum;
            }
        }
    }

    /// Stream whose consecutive diffs decay geometrically from `d0`, built
    /// from constant-intensity frames bouncing inside [0,1].
    fn decaying_motion_stream(d0: f64, gamma: f64, frames: usize) -> FrameStream {
        let mut values = vec![0.1_f64];
        let mut step = d0;
        let mut dir = 1.0;
        for _ in 1..frames {
            let prev = *values.last().unwrap();
            if prev + dir * step < 0.0 || prev + dir * step > 1.0 {
                dir = -dir;
            }
            values.push(prev + dir * step);
            step *= gamma;
        }
        constant_frames(&values)
    }

    #[test]
    fn person_enters_yields_one_segment() {
        // Static lead-in, decaying motion burst, static tail.
        let mut values = vec![0.1; 6];
        let motion = decaying_motion_stream(0.2, 0.85, 10);
        values.extend(motion.frames().iter().map(|f| f.pixels()[0]));
        values.extend(std::iter::repeat_n(*values.last().unwrap(), 6));
        // Re-time the merged sequence.
        let stream = constant_frames(&values);
        let out = filter_stream(&stream, &FilterConfig::default()).unwrap();
        assert_eq!(out.segments.len(), 1, "windows: {:?}", out.windows);
        let seg = out.segments[0];
        // The motion lives in frames [6, 16); the retained span must cover it.
        assert!(seg.start <= 6 && seg.end >= 14, "got {seg:?}");
    }

    #[test]
    fn single_spike_noise_is_dropped() {
        // One step change in an otherwise static stream: exactly one large diff.
        let mut values = vec![0.1; 8];
        values.extend(vec![0.6; 8]);
        let stream = constant_frames(&values);
        let out = filter_stream(&stream, &FilterConfig::default()).unwrap();
        assert!(out.segments.is_empty(), "windows: {:?}", out.windows);
    }

    #[test]
    fn static_stream_is_dropped() {
        let stream = constant_frames(&[0.4; 16]);
        let out = filter_stream(&stream, &FilterConfig::default()).unwrap();
        assert!(out.segments.is_empty());
        assert!(out.windows.iter().all(|w| !w.retained));
    }

    #[test]
    fn short_stream_is_error() {
        let stream = constant_frames(&[0.1; 4]);
        assert!(filter_stream(&stream, &FilterConfig::default()).is_err());
    }

    #[test]
    fn invert_rule_flips_the_sum_test() {
        let stream = decaying_motion_stream(0.2, 0.85, 16);
        let keep = filter_stream(&stream, &FilterConfig::default()).unwrap();
        let inverted = filter_stream(
            &stream,
            &FilterConfig {
                invert_rule: true,
                ..FilterConfig::default()
            },
        )
        .unwrap();
        assert!(!keep.segments.is_empty());
        assert!(inverted.segments.is_empty());
    }

    #[test]
    fn segments_match_brute_force_union() {
        let mut rng = crate::rng::rng_for(crate::Seed(13), "filter-merge");
        for _ in 0..50 {
            let values: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
            let stream = constant_frames(&values);
            let config = FilterConfig::default();
            let out = filter_stream(&stream, &config).unwrap();

            let mut covered = vec![false; stream.len()];
            for w in &out.windows {
                if w.retained {
                    for slot in covered.iter_mut().skip(w.start).take(config.window_size) {
                        *slot = true;
                    }
                }
            }
            let mut from_segments = vec![false; stream.len()];
            for s in &out.segments {
                for slot in from_segments.iter_mut().take(s.end).skip(s.start) {
                    *slot = true;
                }
            }
            assert_eq!(covered, from_segments);
            // Disjoint and sorted.
            for pair in out.segments.windows(2) {
                assert!(pair[0].end < pair[1].start);
            }
        }
    }
}
