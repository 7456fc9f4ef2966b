//! Frames, frame streams, and labeled clips.
//!
//! A [`Frame`] is an immutable grayscale intensity grid normalized to `[0,1]`.
//! A [`FrameStream`] is an ordered sequence of equally sized frames with
//! strictly increasing timestamps, the unit every pipeline stage consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sensor modality of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Depth,
    Thermal,
    Infrared,
    Synthetic,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Modality::Depth => "depth",
            Modality::Thermal => "thermal",
            Modality::Infrared => "infrared",
            Modality::Synthetic => "synthetic",
        };
        f.write_str(name)
    }
}

/// Minimum frame edge length. Anything smaller carries no usable content.
pub const MIN_FRAME_EDGE: usize = 8;

/// A single grayscale frame with intensities in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    pub timestamp_ms: u64,
    pub modality: Modality,
}

impl Frame {
    /// Build a frame from row-major pixels. Rejects wrong-sized buffers,
    /// out-of-range intensities, and frames smaller than 8x8.
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        timestamp_ms: u64,
        modality: Modality,
    ) -> Result<Self> {
        if width < MIN_FRAME_EDGE || height < MIN_FRAME_EDGE {
            return Err(Error::InvalidFrame(format!(
                "frame must be at least {MIN_FRAME_EDGE}x{MIN_FRAME_EDGE}, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidFrame(format!(
                "pixel intensity {bad} outside [0,1]"
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
            timestamp_ms,
            modality,
        })
    }

    /// A frame filled with a constant intensity.
    pub fn constant(
        width: usize,
        height: usize,
        value: f64,
        timestamp_ms: u64,
        modality: Modality,
    ) -> Result<Self> {
        Frame::new(width, height, vec![value; width * height], timestamp_ms, modality)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x]
    }

    pub fn same_dimensions(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// An ordered sequence of frames from one source.
///
/// Invariants: timestamps strictly increase and all frames share dimensions
/// and modality. `max_value` is the quantization ceiling frames are stored at
/// on disk (255 for 8-bit sources, 65535 for 16-bit).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    pub source_id: String,
    pub modality: Modality,
    pub max_value: u16,
    frames: Vec<Frame>,
}

impl FrameStream {
    pub fn new(source_id: impl Into<String>, modality: Modality, max_value: u16) -> Result<Self> {
        if max_value == 0 {
            return Err(Error::InvalidStream("max_value must be positive".into()));
        }
        Ok(FrameStream {
            source_id: source_id.into(),
            modality,
            max_value,
            frames: Vec::new(),
        })
    }

    pub fn from_frames(
        source_id: impl Into<String>,
        modality: Modality,
        max_value: u16,
        frames: Vec<Frame>,
    ) -> Result<Self> {
        let mut stream = FrameStream::new(source_id, modality, max_value)?;
        for frame in frames {
            stream.push(frame)?;
        }
        Ok(stream)
    }

    /// Append a frame, enforcing the stream invariants.
    pub fn push(&mut self, frame: Frame) -> Result<()> {
        if frame.modality != self.modality {
            return Err(Error::InvalidStream(format!(
                "frame modality {} != stream modality {}",
                frame.modality, self.modality
            )));
        }
        if let Some(last) = self.frames.last() {
            if !last.same_dimensions(&frame) {
                return Err(Error::DimensionMismatch(format!(
                    "frame {}x{} does not match stream {}x{}",
                    frame.width, frame.height, last.width, last.height
                )));
            }
            if frame.timestamp_ms <= last.timestamp_ms {
                return Err(Error::InvalidStream(format!(
                    "timestamps must strictly increase: {} after {}",
                    frame.timestamp_ms, last.timestamp_ms
                )));
            }
        }
        self.frames.push(frame);
        Ok(())
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Width/height of the frames, or `None` for an empty stream.
    pub fn dimensions(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.width, f.height))
    }

    /// Clone of the half-open frame range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<FrameStream> {
        if start > end || end > self.frames.len() {
            return Err(Error::InvalidStream(format!(
                "slice [{start},{end}) out of bounds for {} frames",
                self.frames.len()
            )));
        }
        Ok(FrameStream {
            source_id: self.source_id.clone(),
            modality: self.modality,
            max_value: self.max_value,
            frames: self.frames[start..end].to_vec(),
        })
    }
}

/// A labeled stream segment for supervised training.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub frames: FrameStream,
    pub label: usize,
}

impl LabeledClip {
    pub fn new(frames: FrameStream, label: usize, num_classes: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("labeled clip has no frames".into()));
        }
        if label >= num_classes {
            return Err(Error::InvalidConfig(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledClip { frames, label })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(ts: u64) -> Frame {
        Frame::constant(8, 8, 0.5, ts, Modality::Synthetic).unwrap()
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        let err = Frame::new(8, 8, vec![1.5; 64], 0, Modality::Depth);
        assert!(matches!(err, Err(Error::InvalidFrame(_))));
    }

    #[test]
    fn rejects_tiny_frames() {
        let err = Frame::new(4, 4, vec![0.0; 16], 0, Modality::Depth);
        assert!(matches!(err, Err(Error::InvalidFrame(_))));
    }

    #[test]
    fn rejects_wrong_pixel_count() {
        let err = Frame::new(8, 8, vec![0.0; 63], 0, Modality::Depth);
        assert!(matches!(err, Err(Error::InvalidFrame(_))));
    }

    #[test]
    fn stream_enforces_monotone_timestamps() {
        let mut s = FrameStream::new("s", Modality::Synthetic, 255).unwrap();
        s.push(frame(10)).unwrap();
        let err = s.push(frame(10));
        assert!(matches!(err, Err(Error::InvalidStream(_))));
    }

    #[test]
    fn stream_enforces_uniform_dimensions() {
        let mut s = FrameStream::new("s", Modality::Synthetic, 255).unwrap();
        s.push(frame(0)).unwrap();
        let other = Frame::constant(16, 8, 0.5, 1, Modality::Synthetic).unwrap();
        let err = s.push(other);
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn labeled_clip_rejects_bad_label() {
        let mut s = FrameStream::new("s", Modality::Synthetic, 255).unwrap();
        s.push(frame(0)).unwrap();
        assert!(LabeledClip::new(s, 3, 3).is_err());
    }
}
