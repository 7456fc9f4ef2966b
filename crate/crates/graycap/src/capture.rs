//! Person localization and crop extraction for retained segments.
//!
//! Detection is a pluggable port: anything that maps a frame to candidate
//! boxes works, from the built-in background-subtraction blob detector to an
//! external model whose output is imported from `boxes.jsonl`. Detections are
//! then coherence-filtered: consecutive boxes whose geometry jumps by `eps`
//! or more split the track, so only temporally consistent detections reach
//! the cropper.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameStream};

/// A detection box: center, extent, and confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub p: f64,
}

impl BoundingBox {
    /// Euclidean displacement over the geometric fields (cx, cy, w, h).
    /// Confidence is not a displacement and is excluded.
    pub fn displacement(&self, other: &BoundingBox) -> f64 {
        let d = [
            self.cx - other.cx,
            self.cy - other.cy,
            self.w - other.w,
            self.h - other.h,
        ];
        d.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Detection port. Implementations return candidate boxes for one frame,
/// strongest first. The frame index lets imported detections line up with
/// the stream without the detector holding mutable state.
pub trait Detector {
    fn detect(&self, index: usize, frame: &Frame) -> Result<Vec<BoundingBox>>;
}

/// Built-in brute-force detector: threshold |frame - background| and report
/// each 4-connected foreground component as a box. Confidence is the fill
/// ratio of the component inside its tight box.
pub struct BlobDetector {
    pub background: Frame,
    pub threshold: f64,
}

impl Detector for BlobDetector {
    fn detect(&self, _index: usize, frame: &Frame) -> Result<Vec<BoundingBox>> {
        blob_detect(frame, &self.background, self.threshold)
    }
}

/// Detector that replays a fixed per-frame box list (the import port).
pub struct PrecomputedBoxes {
    boxes: Vec<Vec<BoundingBox>>,
}

impl PrecomputedBoxes {
    pub fn new(boxes: Vec<Vec<BoundingBox>>) -> Self {
        PrecomputedBoxes { boxes }
    }
}

impl Detector for PrecomputedBoxes {
    fn detect(&self, index: usize, _frame: &Frame) -> Result<Vec<BoundingBox>> {
        Ok(self.boxes.get(index).cloned().unwrap_or_default())
    }
}

/// Run a detector over every frame of a stream.
pub fn detect_all(detector: &dyn Detector, stream: &FrameStream) -> Result<Vec<Vec<BoundingBox>>> {
    stream
        .frames()
        .iter()
        .enumerate()
        .map(|(i, frame)| detector.detect(i, frame))
        .collect()
}

/// Threshold against a background frame and extract 4-connected components,
/// largest area first.
pub fn blob_detect(frame: &Frame, background: &Frame, threshold: f64) -> Result<Vec<BoundingBox>> {
    if !frame.same_dimensions(background) {
        return Err(Error::DimensionMismatch(format!(
            "frame {}x{} vs background {}x{}",
            frame.width(),
            frame.height(),
            background.width(),
            background.height()
        )));
    }
    let (w, h) = (frame.width(), frame.height());
    let fg: Vec<bool> = frame
        .pixels()
        .iter()
        .zip(background.pixels())
        .map(|(a, b)| (a - b).abs() > threshold)
        .collect();

    let mut visited = vec![false; w * h];
    let mut components: Vec<(usize, BoundingBox)> = Vec::new();
    let mut queue = Vec::new();

    for start in 0..w * h {
        if !fg[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.clear();
        queue.push(start);
        let (mut min_x, mut max_x) = (start % w, start % w);
        let (mut min_y, mut max_y) = (start / w, start / w);
        let mut area = 0usize;
        while let Some(idx) = queue.pop() {
            area += 1;
            let (x, y) = (idx % w, idx / w);
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
            let mut visit = |nx: usize, ny: usize| {
                let nidx = ny * w + nx;
                if fg[nidx] && !visited[nidx] {
                    visited[nidx] = true;
                    queue.push(nidx);
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
        let bw = (max_x - min_x + 1) as f64;
        let bh = (max_y - min_y + 1) as f64;
        components.push((
            area,
            BoundingBox {
                cx: (min_x + max_x) as f64 / 2.0,
                cy: (min_y + max_y) as f64 / 2.0,
                w: bw,
                h: bh,
                p: area as f64 / (bw * bh),
            },
        ));
    }

    // Largest component first; ties broken by position for determinism.
    components.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(a.1.cy.partial_cmp(&b.1.cy).unwrap())
            .then(a.1.cx.partial_cmp(&b.1.cx).unwrap())
    });
    Ok(components.into_iter().map(|(_, b)| b).collect())
}

/// Per-pixel temporal median over the first `min(15, len)` frames, used as
/// the background model for [`BlobDetector`].
pub fn median_background(stream: &FrameStream) -> Result<Frame> {
    let frames = stream.frames();
    if frames.is_empty() {
        return Err(Error::EmptyInput("cannot build background from an empty stream".into()));
    }
    let take = frames.len().min(15);
    let (w, h) = (frames[0].width(), frames[0].height());
    let mut out = Vec::with_capacity(w * h);
    let mut column = Vec::with_capacity(take);
    for i in 0..w * h {
        column.clear();
        column.extend(frames[..take].iter().map(|f| f.pixels()[i]));
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = take / 2;
        let median = if take % 2 == 1 {
            column[mid]
        } else {
            (column[mid - 1] + column[mid]) / 2.0
        };
        out.push(median);
    }
    Frame::new(w, h, out, frames[0].timestamp_ms, frames[0].modality)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CoherenceConfig {
    /// Maximum allowed displacement between adjacent boxes, in pixels.
    pub epsilon: f64,
    /// Detections below this confidence are treated as misses.
    pub min_confidence: f64,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        CoherenceConfig {
            epsilon: 16.0,
            min_confidence: 0.25,
        }
    }
}

impl CoherenceConfig {
    /// Default epsilon for a frame size: 20% of the frame diagonal.
    pub fn for_frame(width: usize, height: usize) -> Self {
        let diag = ((width * width + height * height) as f64).sqrt();
        CoherenceConfig {
            epsilon: 0.2 * diag,
            ..CoherenceConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-frame best boxes with the coherent sub-tracks they form.
#[derive(Debug, Clone)]
pub struct BoxTrack {
    pub boxes: Vec<Option<BoundingBox>>,
    /// Half-open frame-index intervals; within each, consecutive boxes
    /// satisfy the displacement bound.
    pub sub_tracks: Vec<(usize, usize)>,
}

impl BoxTrack {
    /// Restrict to a single sub-track.
    pub fn sub_track(&self, i: usize) -> BoxTrack {
        let (start, end) = self.sub_tracks[i];
        let mut boxes = vec![None; self.boxes.len()];
        boxes[start..end].clone_from_slice(&self.boxes[start..end]);
        BoxTrack {
            boxes,
            sub_tracks: vec![(start, end)],
        }
    }
}

/// Pick the strongest box above the confidence floor for each frame.
pub fn best_boxes(
    detections: &[Vec<BoundingBox>],
    min_confidence: f64,
) -> Vec<Option<BoundingBox>> {
    detections
        .iter()
        .map(|frame_boxes| {
            frame_boxes
                .iter()
                .filter(|b| b.p >= min_confidence)
                .max_by(|a, b| a.p.partial_cmp(&b.p).unwrap())
                .copied()
        })
        .collect()
}

/// Split a per-frame box sequence into maximal coherent sub-tracks.
pub fn coherence_filter(boxes: &[Option<BoundingBox>], config: &CoherenceConfig) -> Result<BoxTrack> {
    config.validate()?;
    let mut sub_tracks = Vec::new();
    let mut open: Option<usize> = None;
    for i in 0..boxes.len() {
        match (&boxes[i], open) {
            (None, Some(start)) => {
                sub_tracks.push((start, i));
                open = None;
            }
            (None, None) => {}
            (Some(_), None) => open = Some(i),
            (Some(b), Some(start)) => {
                let prev = boxes[i - 1].as_ref().expect("open track has a previous box");
                if prev.displacement(b) >= config.epsilon {
                    sub_tracks.push((start, i));
                    open = Some(i);
                }
            }
        }
    }
    if let Some(start) = open {
        sub_tracks.push((start, boxes.len()));
    }
    Ok(BoxTrack {
        boxes: boxes.to_vec(),
        sub_tracks,
    })
}

/// Margin added around a box before cropping, as a fraction of its extent.
pub const CROP_MARGIN: f64 = 0.10;

/// Cut out each tracked box (expanded by 10%, clamped to the frame) and
/// resample it to `out_size` with bilinear interpolation.
pub fn crop_track(
    stream: &FrameStream,
    track: &BoxTrack,
    out_size: (usize, usize),
) -> Result<FrameStream> {
    let (out_h, out_w) = out_size;
    if track.sub_tracks.is_empty() {
        return Err(Error::EmptyInput("track has no coherent sub-tracks".into()));
    }
    let mut crops = FrameStream::new(
        format!("{}-crops", stream.source_id),
        stream.modality,
        stream.max_value,
    )?;
    for &(start, end) in &track.sub_tracks {
        if end > stream.len() {
            return Err(Error::InvalidStream(format!(
                "track [{start},{end}) exceeds stream of {} frames",
                stream.len()
            )));
        }
        for i in start..end {
            let frame = &stream.frames()[i];
            let bx = track.boxes[i]
                .as_ref()
                .ok_or_else(|| Error::InvalidStream(format!("no box at tracked frame {i}")))?;
            let pixels = crop_box(frame, bx, out_w, out_h);
            crops.push(Frame::new(
                out_w,
                out_h,
                pixels,
                frame.timestamp_ms,
                frame.modality,
            )?)?;
        }
    }
    Ok(crops)
}

fn crop_box(frame: &Frame, bx: &BoundingBox, out_w: usize, out_h: usize) -> Vec<f64> {
    let half_w = bx.w * (1.0 + CROP_MARGIN) / 2.0;
    let half_h = bx.h * (1.0 + CROP_MARGIN) / 2.0;
    // Box centers are pixel-center coordinates; the continuous region spans
    // half a pixel beyond the outermost centers.
    let x0 = (bx.cx - half_w + 0.5).max(0.0);
    let x1 = (bx.cx + half_w + 0.5).min(frame.width() as f64);
    let y0 = (bx.cy - half_h + 0.5).max(0.0);
    let y1 = (bx.cy + half_h + 0.5).min(frame.height() as f64);
    resample_region(frame, x0, y0, x1, y1, out_w, out_h)
}

/// Bilinear resample of the continuous region `[x0,x1) x [y0,y1)` to an
/// `out_w x out_h` grid, sampling at output pixel centers with clamped edges.
pub fn resample_region(
    frame: &Frame,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let region_w = x1 - x0;
    let region_h = y1 - y0;
    let mut out = Vec::with_capacity(out_w * out_h);
    for r in 0..out_h {
        let sy = y0 + (r as f64 + 0.5) * region_h / out_h as f64 - 0.5;
        for c in 0..out_w {
            let sx = x0 + (c as f64 + 0.5) * region_w / out_w as f64 - 0.5;
            out.push(sample_bilinear(frame, sx, sy));
        }
    }
    out
}

fn sample_bilinear(frame: &Frame, x: f64, y: f64) -> f64 {
    let max_x = (frame.width() - 1) as f64;
    let max_y = (frame.height() - 1) as f64;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x_lo = x.floor() as usize;
    let y_lo = y.floor() as usize;
    let x_hi = (x_lo + 1).min(frame.width() - 1);
    let y_hi = (y_lo + 1).min(frame.height() - 1);
    let fx = x - x_lo as f64;
    let fy = y - y_lo as f64;
    let top = frame.get(x_lo, y_lo) * (1.0 - fx) + frame.get(x_hi, y_lo) * fx;
    let bottom = frame.get(x_lo, y_hi) * (1.0 - fx) + frame.get(x_hi, y_hi) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// One `boxes.jsonl` line: detections for one frame index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameBoxes {
    pub index: usize,
    pub boxes: Vec<BoundingBox>,
}

/// Write per-frame detections as JSON Lines.
pub fn write_boxes_jsonl(path: impl AsRef<Path>, detections: &[Vec<BoundingBox>]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for (index, boxes) in detections.iter().enumerate() {
        let line = serde_json::to_string(&FrameBoxes {
            index,
            boxes: boxes.clone(),
        })?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Read per-frame detections from JSON Lines produced by an external
/// detector. Missing indices are treated as frames without detections.
pub fn read_boxes_jsonl(path: impl AsRef<Path>, num_frames: usize) -> Result<Vec<Vec<BoundingBox>>> {
    let file = fs::File::open(path.as_ref())?;
    let mut out = vec![Vec::new(); num_frames];
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FrameBoxes = serde_json::from_str(&line)?;
        if parsed.index >= num_frames {
            return Err(Error::InvalidStream(format!(
                "box index {} out of range for {num_frames} frames",
                parsed.index
            )));
        }
        out[parsed.index] = parsed.boxes;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Modality;

    fn zero_frame(w: usize, h: usize) -> Frame {
        Frame::constant(w, h, 0.0, 0, Modality::Synthetic).unwrap()
    }

    fn frame_with_square(
        w: usize,
        h: usize,
        x: usize,
        y: usize,
        side: usize,
        value: f64,
    ) -> Frame {
        let mut pixels = vec![0.0; w * h];
        for dy in 0..side {
            for dx in 0..side {
                pixels[(y + dy) * w + (x + dx)] = value;
            }
        }
        Frame::new(w, h, pixels, 0, Modality::Synthetic).unwrap()
    }

    #[test]
    fn no_foreground_no_boxes() {
        let bg = zero_frame(16, 16);
        let boxes = blob_detect(&bg, &bg, 0.1).unwrap();
        assert!(boxes.is_empty());
    }

    #[test]
    fn single_square_gives_tight_box() {
        let bg = zero_frame(16, 16);
        let frame = frame_with_square(16, 16, 5, 7, 4, 0.9);
        let boxes = blob_detect(&frame, &bg, 0.1).unwrap();
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        // Square covers x in [5,8], y in [7,10]; center is the midpoint.
        assert_eq!(b.cx, 6.5);
        assert_eq!(b.cy, 8.5);
        assert_eq!(b.w, 4.0);
        assert_eq!(b.h, 4.0);
        assert_eq!(b.p, 1.0);
    }

    #[test]
    fn two_squares_sorted_by_area() {
        let bg = zero_frame(24, 24);
        let mut pixels = vec![0.0; 24 * 24];
        for dy in 0..4 {
            for dx in 0..4 {
                pixels[(2 + dy) * 24 + (2 + dx)] = 0.9; // area 16
            }
        }
        for dy in 0..2 {
            for dx in 0..2 {
                pixels[(16 + dy) * 24 + (16 + dx)] = 0.9; // area 4
            }
        }
        let frame = Frame::new(24, 24, pixels, 0, Modality::Synthetic).unwrap();
        let boxes = blob_detect(&frame, &bg, 0.1).unwrap();
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[0].w * boxes[0].h, 16.0);
        assert_eq!(boxes[1].w * boxes[1].h, 4.0);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let a = zero_frame(16, 16);
        let b = zero_frame(16, 8);
        assert!(blob_detect(&a, &b, 0.1).is_err());
    }

    fn boxed(cx: f64, cy: f64, w: f64, h: f64) -> Option<BoundingBox> {
        Some(BoundingBox {
            cx,
            cy,
            w,
            h,
            p: 0.9,
        })
    }

    #[test]
    fn static_box_is_one_sub_track() {
        let boxes = vec![boxed(10.0, 10.0, 4.0, 4.0); 10];
        let track = coherence_filter(
            &boxes,
            &CoherenceConfig {
                epsilon: 10.0,
                ..CoherenceConfig::default()
            },
        )
        .unwrap();
        assert_eq!(track.sub_tracks, vec![(0, 10)]);
    }

    #[test]
    fn displacement_within_epsilon_keeps_the_track() {
        // 3-4-5 triangle: centers move by (3,4), extents unchanged, delta = 5.
        let boxes = vec![boxed(10.0, 10.0, 4.0, 4.0), boxed(13.0, 14.0, 4.0, 4.0)];
        assert_eq!(
            boxes[0].unwrap().displacement(&boxes[1].unwrap()),
            5.0
        );
        let track = coherence_filter(
            &boxes,
            &CoherenceConfig {
                epsilon: 10.0,
                ..CoherenceConfig::default()
            },
        )
        .unwrap();
        assert_eq!(track.sub_tracks, vec![(0, 2)]);
    }

    #[test]
    fn large_jump_splits_the_track() {
        let boxes = vec![
            boxed(10.0, 10.0, 4.0, 4.0),
            boxed(60.0, 10.0, 4.0, 4.0),
            boxed(60.0, 10.0, 4.0, 4.0),
        ];
        let track = coherence_filter(
            &boxes,
            &CoherenceConfig {
                epsilon: 10.0,
                ..CoherenceConfig::default()
            },
        )
        .unwrap();
        assert_eq!(track.sub_tracks, vec![(0, 1), (1, 3)]);
    }

    #[test]
    fn missing_detection_splits_the_track() {
        let boxes = vec![
            boxed(10.0, 10.0, 4.0, 4.0),
            None,
            boxed(10.0, 10.0, 4.0, 4.0),
        ];
        let track = coherence_filter(&boxes, &CoherenceConfig::default()).unwrap();
        assert_eq!(track.sub_tracks, vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn sub_track_pairs_satisfy_the_bound() {
        let mut rng = crate::rng::rng_for(crate::Seed(7), "capture-prop");
        use rand::Rng;
        for _ in 0..100 {
            let boxes: Vec<Option<BoundingBox>> = (0..30)
                .map(|_| {
                    if rng.random::<f64>() < 0.2 {
                        None
                    } else {
                        boxed(
                            rng.random::<f64>() * 64.0,
                            rng.random::<f64>() * 64.0,
                            4.0 + rng.random::<f64>() * 8.0,
                            4.0 + rng.random::<f64>() * 8.0,
                        )
                    }
                })
                .collect();
            let config = CoherenceConfig {
                epsilon: 12.0,
                ..CoherenceConfig::default()
            };
            let track = coherence_filter(&boxes, &config).unwrap();
            for &(start, end) in &track.sub_tracks {
                for i in start..end.saturating_sub(1) {
                    let a = track.boxes[i].unwrap();
                    let b = track.boxes[i + 1].unwrap();
                    assert!(a.displacement(&b) < config.epsilon);
                }
            }
            // Every split point violates the bound or lacks a detection.
            for pair in track.sub_tracks.windows(2) {
                let boundary = pair[0].1;
                let violated = track.boxes[boundary].is_none()
                    || track.boxes[boundary - 1].is_none()
                    || track.boxes[boundary - 1]
                        .unwrap()
                        .displacement(&track.boxes[boundary].unwrap())
                        >= config.epsilon;
                assert!(violated);
            }
        }
    }

    #[test]
    fn full_frame_box_crop_equals_resized_frame() {
        let mut pixels = Vec::with_capacity(64 * 64);
        for y in 0..64 {
            for x in 0..64 {
                pixels.push((x + y) as f64 / 126.0);
            }
        }
        let frame = Frame::new(64, 64, pixels, 0, Modality::Synthetic).unwrap();
        // A box spanning the entire frame; the 10% margin clamps back to it.
        let bx = BoundingBox {
            cx: 31.5,
            cy: 31.5,
            w: 64.0,
            h: 64.0,
            p: 1.0,
        };
        let crop = crop_box(&frame, &bx, 32, 32);
        let resized = resample_region(&frame, 0.0, 0.0, 64.0, 64.0, 32, 32);
        assert_eq!(crop, resized);
    }

    #[test]
    fn constant_field_crops_to_constant() {
        let frame = Frame::constant(64, 64, 0.7, 0, Modality::Synthetic).unwrap();
        let bx = BoundingBox {
            cx: 31.5,
            cy: 31.5,
            w: 16.0,
            h: 16.0,
            p: 1.0,
        };
        let crop = crop_box(&frame, &bx, 32, 32);
        assert!(crop.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    /// Reference resampler: independent, slower formulation of the same
    /// half-pixel-center bilinear mapping.
    fn reference_bilinear(
        frame: &Frame,
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        out_w: usize,
        out_h: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; out_w * out_h];
        for (idx, slot) in out.iter_mut().enumerate() {
            let r = idx / out_w;
            let c = idx % out_w;
            let sx = x0 + (x1 - x0) * (2.0 * c as f64 + 1.0) / (2.0 * out_w as f64) - 0.5;
            let sy = y0 + (y1 - y0) * (2.0 * r as f64 + 1.0) / (2.0 * out_h as f64) - 0.5;
            let cx = sx.clamp(0.0, (frame.width() - 1) as f64);
            let cy = sy.clamp(0.0, (frame.height() - 1) as f64);
            let ix = cx.floor();
            let iy = cy.floor();
            let fx = cx - ix;
            let fy = cy - iy;
            let mut acc = 0.0;
            for (dy, wy) in [(0usize, 1.0 - fy), (1usize, fy)] {
                for (dx, wx) in [(0usize, 1.0 - fx), (1usize, fx)] {
                    let px = ((ix as usize) + dx).min(frame.width() - 1);
                    let py = ((iy as usize) + dy).min(frame.height() - 1);
                    acc += wy * wx * frame.get(px, py);
                }
            }
            *slot = acc;
        }
        out
    }

    #[test]
    fn crop_matches_reference_resampler_on_gradient() {
        let mut pixels = Vec::with_capacity(64 * 48);
        for y in 0..48 {
            for x in 0..64 {
                pixels.push((x as f64 * 0.7 + y as f64 * 1.3) / 110.0);
            }
        }
        let frame = Frame::new(64, 48, pixels, 0, Modality::Synthetic).unwrap();
        let got = resample_region(&frame, 3.25, 5.5, 41.75, 30.0, 32, 32);
        let want = reference_bilinear(&frame, 3.25, 5.5, 41.75, 30.0, 32, 32);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6);
        }
    }

    #[test]
    fn crop_track_is_deterministic() {
        let frames: Vec<Frame> = (0..6)
            .map(|i| {
                let mut f = frame_with_square(64, 64, 10 + i, 20, 6, 0.9);
                f.timestamp_ms = i as u64;
                f
            })
            .collect();
        let stream = FrameStream::from_frames("s", Modality::Synthetic, 65535, frames).unwrap();
        let bg = zero_frame(64, 64);
        let detections: Vec<Vec<BoundingBox>> = stream
            .frames()
            .iter()
            .map(|f| blob_detect(f, &bg, 0.1).unwrap())
            .collect();
        let best = best_boxes(&detections, 0.25);
        let track = coherence_filter(&best, &CoherenceConfig::for_frame(64, 64)).unwrap();
        let a = crop_track(&stream, &track, (32, 32)).unwrap();
        let b = crop_track(&stream, &track, (32, 32)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn empty_track_is_error() {
        let stream = FrameStream::from_frames(
            "s",
            Modality::Synthetic,
            255,
            vec![zero_frame(16, 16)],
        )
        .unwrap();
        let track = BoxTrack {
            boxes: vec![None],
            sub_tracks: vec![],
        };
        assert!(crop_track(&stream, &track, (32, 32)).is_err());
    }

    #[test]
    fn boxes_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boxes.jsonl");
        let detections = vec![
            vec![BoundingBox {
                cx: 1.0,
                cy: 2.0,
                w: 3.0,
                h: 4.0,
                p: 0.5,
            }],
            vec![],
            vec![
                BoundingBox {
                    cx: 5.0,
                    cy: 6.0,
                    w: 7.0,
                    h: 8.0,
                    p: 0.9,
                },
                BoundingBox {
                    cx: 0.0,
                    cy: 0.0,
                    w: 1.0,
                    h: 1.0,
                    p: 0.1,
                },
            ],
        ];
        write_boxes_jsonl(&path, &detections).unwrap();
        let back = read_boxes_jsonl(&path, 3).unwrap();
        assert_eq!(back, detections);
    }
}
