//! Synthetic dataset generation.
//!
//! Desk-scale stand-ins for real sensor recordings. Each action class is a
//! deterministic parametric motion of a bright blob over a low-amplitude
//! textured background, with a distinct blob shape per class so single
//! frames stay distinguishable. Noise clips carry sporadic step changes in
//! brightness (one large inter-frame difference at a time, the signature the
//! filter must reject); static clips never change at all.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::save_stream;
use crate::error::{Error, Result};
use crate::frame::{Frame, FrameStream, Modality};
use crate::rng::{rng_for, Seed};

/// Motion pattern of a labeled class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    /// Square blob moving on a straight line.
    Translating,
    /// Plus-shaped blob swinging horizontally around its base position.
    Oscillating,
    /// Disc blob with a growing radius.
    Expanding,
    /// Motionless blob; never passes the filter, useful for ablations.
    Static,
}

impl MotionClass {
    pub fn name(&self) -> &'static str {
        match self {
            MotionClass::Translating => "translating",
            MotionClass::Oscillating => "oscillating",
            MotionClass::Expanding => "expanding",
            MotionClass::Static => "static",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub frame_size: usize,
    pub frames_per_clip: usize,
    pub clips_per_class: usize,
    pub classes: Vec<MotionClass>,
    /// Probability that a noise clip carries a second step change.
    pub spike_probability: f64,
    /// Brightness jump of a step change.
    pub spike_amplitude: f64,
    pub seed: Seed,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            frame_size: 48,
            frames_per_clip: 20,
            clips_per_class: 4,
            classes: vec![
                MotionClass::Translating,
                MotionClass::Oscillating,
                MotionClass::Expanding,
            ],
            spike_probability: 0.5,
            spike_amplitude: 0.25,
            seed: Seed(7),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 classes, got {}",
                self.classes.len()
            )));
        }
        let mut unique = self.classes.clone();
        unique.dedup();
        if unique.len() != self.classes.len() {
            return Err(Error::InvalidConfig("classes must be distinct".into()));
        }
        if self.frame_size < 32 {
            return Err(Error::InvalidConfig("frame_size must be >= 32".into()));
        }
        if self.frames_per_clip < 16 {
            return Err(Error::InvalidConfig("frames_per_clip must be >= 16".into()));
        }
        if self.clips_per_class == 0 {
            return Err(Error::InvalidConfig("clips_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    Action,
    Noise,
    Static,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipEntry {
    pub path: String,
    pub kind: ClipKind,
    pub label: Option<usize>,
}

/// `labels.json`: the dataset index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub classes: Vec<String>,
    pub clips: Vec<ClipEntry>,
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = dir.as_ref().join("labels.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::InvalidConfig(format!("missing dataset index {}: {e}", path.display())))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    for clip in &index.clips {
        if let Some(label) = clip.label {
            if label >= index.classes.len() {
                return Err(Error::InvalidConfig(format!(
                    "clip {} has label {label} but only {} classes exist",
                    clip.path,
                    index.classes.len()
                )));
            }
        }
    }
    Ok(index)
}

const FRAME_PERIOD_MS: u64 = 100;
const BLOB_VALUE: f64 = 0.9;

fn textured_background(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let kx = 0.15 + 0.2 * rng.random::<f64>();
    let ky = 0.15 + 0.2 * rng.random::<f64>();
    let phase_x = rng.random::<f64>() * std::f64::consts::TAU;
    let phase_y = rng.random::<f64>() * std::f64::consts::TAU;
    let mut pixels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let v = 0.14
                + 0.04 * (x as f64 * kx + phase_x).sin() * (y as f64 * ky + phase_y).sin();
            pixels.push(v);
        }
    }
    pixels
}

fn stamp_square(pixels: &mut [f64], size: usize, cx: i64, cy: i64, side: i64) {
    let half = side / 2;
    for dy in -half..=half {
        for dx in -half..=half {
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                pixels[y as usize * size + x as usize] = BLOB_VALUE;
            }
        }
    }
}

fn stamp_plus(pixels: &mut [f64], size: usize, cx: i64, cy: i64, arm: i64) {
    for d in -arm..=arm {
        for thick in -1..=1i64 {
            for (x, y) in [(cx + d, cy + thick), (cx + thick, cy + d)] {
                if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                    pixels[y as usize * size + x as usize] = BLOB_VALUE;
                }
            }
        }
    }
}

fn stamp_disc(pixels: &mut [f64], size: usize, cx: i64, cy: i64, radius: f64) {
    let r = radius.ceil() as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx * dx + dy * dy) as f64 <= radius * radius {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                    pixels[y as usize * size + x as usize] = BLOB_VALUE;
                }
            }
        }
    }
}

/// Analytic center of a translating blob at frame `t`: start plus velocity
/// times `t`, exactly. Start positions are chosen so the path never leaves
/// the frame, which keeps this closed form exact.
pub fn translating_center(start: (i64, i64), velocity: (i64, i64), t: usize) -> (i64, i64) {
    (
        start.0 + velocity.0 * t as i64,
        start.1 + velocity.1 * t as i64,
    )
}

struct ClipParams {
    background: Vec<f64>,
    start: (i64, i64),
    velocity: (i64, i64),
}

/// Side of the translating square; sized so a one-pixel step changes enough
/// of the frame to clear the filter's activity floor.
const SQUARE_SIDE: i64 = 13;
const PLUS_ARM: i64 = 5;
const OSCILLATION_AMPLITUDE: f64 = 6.0;
const OSCILLATION_PERIOD: f64 = 12.0;
const DISC_RADIUS_START: f64 = 3.0;
const DISC_RADIUS_GROWTH: f64 = 0.7;

fn clip_params(spec: &SyntheticSpec, class: MotionClass, rng: &mut ChaCha8Rng) -> ClipParams {
    let size = spec.frame_size as i64;
    let frames = spec.frames_per_clip as i64;
    let background = textured_background(spec.frame_size, rng);
    match class {
        MotionClass::Translating => {
            let velocity = *[(1, 0), (0, 1), (1, 1), (-1, 0), (0, -1)]
                .get(rng.random_range(0..5usize))
                .unwrap();
            let margin = SQUARE_SIDE / 2 + 2;
            let travel = |v: i64| v * (frames - 1);
            let pick = |rng: &mut ChaCha8Rng, v: i64| -> i64 {
                let (lo, hi) = if travel(v) >= 0 {
                    (margin, size - 1 - margin - travel(v))
                } else {
                    (margin - travel(v), size - 1 - margin)
                };
                rng.random_range(lo..=hi.max(lo))
            };
            let start = (pick(rng, velocity.0), pick(rng, velocity.1));
            ClipParams {
                background,
                start,
                velocity,
            }
        }
        MotionClass::Expanding => {
            // Leave room for the largest rendered disc.
            let final_radius =
                (DISC_RADIUS_START + DISC_RADIUS_GROWTH * (frames - 1) as f64).ceil() as i64;
            let margin = final_radius + 2;
            let lo = margin;
            let hi = (size - 1 - margin).max(lo);
            let start = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
            ClipParams {
                background,
                start,
                velocity: (0, 0),
            }
        }
        _ => {
            let margin = PLUS_ARM + OSCILLATION_AMPLITUDE as i64 + 2;
            let lo = margin;
            let hi = (size - 1 - margin).max(lo);
            let start = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
            ClipParams {
                background,
                start,
                velocity: (0, 0),
            }
        }
    }
}

fn render_action_clip(
    spec: &SyntheticSpec,
    class: MotionClass,
    source_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<FrameStream> {
    let params = clip_params(spec, class, rng);
    let size = spec.frame_size;
    let mut stream = FrameStream::new(source_id, Modality::Synthetic, u16::MAX)?;
    for t in 0..spec.frames_per_clip {
        let mut pixels = params.background.clone();
        match class {
            MotionClass::Translating => {
                let (cx, cy) = translating_center(params.start, params.velocity, t);
                stamp_square(&mut pixels, size, cx, cy, SQUARE_SIDE);
            }
            MotionClass::Oscillating => {
                let offset = (OSCILLATION_AMPLITUDE
                    * (std::f64::consts::TAU * t as f64 / OSCILLATION_PERIOD).sin())
                .round() as i64;
                stamp_plus(
                    &mut pixels,
                    size,
                    params.start.0 + offset,
                    params.start.1,
                    PLUS_ARM,
                );
            }
            MotionClass::Expanding => {
                let radius = DISC_RADIUS_START + DISC_RADIUS_GROWTH * t as f64;
                stamp_disc(&mut pixels, size, params.start.0, params.start.1, radius);
            }
            MotionClass::Static => {
                stamp_square(&mut pixels, size, params.start.0, params.start.1, SQUARE_SIDE);
            }
        }
        stream.push(Frame::new(
            size,
            size,
            pixels,
            t as u64 * FRAME_PERIOD_MS,
            Modality::Synthetic,
        )?)?;
    }
    Ok(stream)
}

fn render_noise_clip(
    spec: &SyntheticSpec,
    source_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<FrameStream> {
    let background = textured_background(spec.frame_size, rng);
    // Step changes spaced at least a filter window apart, so each window
    // sees at most one large difference.
    let first = rng.random_range(4..spec.frames_per_clip / 2);
    let mut steps = vec![first];
    if rng.random::<f64>() < spec.spike_probability {
        steps.push(first + rng.random_range(9..=11));
    }
    let mut level = 0.0;
    let mut stream = FrameStream::new(source_id, Modality::Synthetic, u16::MAX)?;
    for t in 0..spec.frames_per_clip {
        if let Some(pos) = steps.iter().position(|&s| s == t) {
            // Alternate up/down so intensities stay inside [0,1].
            level = if pos % 2 == 0 { spec.spike_amplitude } else { 0.0 };
        }
        let pixels: Vec<f64> = background.iter().map(|v| (v + level).min(1.0)).collect();
        stream.push(Frame::new(
            spec.frame_size,
            spec.frame_size,
            pixels,
            t as u64 * FRAME_PERIOD_MS,
            Modality::Synthetic,
        )?)?;
    }
    Ok(stream)
}

fn render_static_clip(
    spec: &SyntheticSpec,
    source_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<FrameStream> {
    let background = textured_background(spec.frame_size, rng);
    let mut stream = FrameStream::new(source_id, Modality::Synthetic, u16::MAX)?;
    for t in 0..spec.frames_per_clip {
        stream.push(Frame::new(
            spec.frame_size,
            spec.frame_size,
            background.clone(),
            t as u64 * FRAME_PERIOD_MS,
            Modality::Synthetic,
        )?)?;
    }
    Ok(stream)
}

#[derive(Debug)]
pub struct DatasetSummary {
    pub dir: PathBuf,
    pub labeled_clips: usize,
    pub noise_clips: usize,
    pub static_clips: usize,
}

/// Generate a labeled dataset plus noise/static clips under `out_dir`.
///
/// Layout: `out_dir/labels.json` and one frame container per clip under
/// `out_dir/clips/`. Deterministic in the spec's seed.
pub fn gen_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<DatasetSummary> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let clips_dir = out_dir.join("clips");
    fs::create_dir_all(&clips_dir)?;

    let mut entries = Vec::new();
    for (label, class) in spec.classes.iter().enumerate() {
        for i in 0..spec.clips_per_class {
            let name = format!("action_{}_{i:03}", class.name());
            let mut rng = rng_for(spec.seed, &format!("clip-{name}"));
            let stream = render_action_clip(spec, *class, &name, &mut rng)?;
            save_stream(&stream, clips_dir.join(&name))?;
            entries.push(ClipEntry {
                path: format!("clips/{name}"),
                kind: ClipKind::Action,
                label: Some(label),
            });
        }
    }
    for i in 0..spec.clips_per_class {
        let name = format!("noise_{i:03}");
        let mut rng = rng_for(spec.seed, &format!("clip-{name}"));
        let stream = render_noise_clip(spec, &name, &mut rng)?;
        save_stream(&stream, clips_dir.join(&name))?;
        entries.push(ClipEntry {
            path: format!("clips/{name}"),
            kind: ClipKind::Noise,
            label: None,
        });
    }
    for i in 0..spec.clips_per_class {
        let name = format!("static_{i:03}");
        let mut rng = rng_for(spec.seed, &format!("clip-{name}"));
        let stream = render_static_clip(spec, &name, &mut rng)?;
        save_stream(&stream, clips_dir.join(&name))?;
        entries.push(ClipEntry {
            path: format!("clips/{name}"),
            kind: ClipKind::Static,
            label: None,
        });
    }

    let index = DatasetIndex {
        classes: spec.classes.iter().map(|c| c.name().to_string()).collect(),
        clips: entries,
    };
    fs::write(
        out_dir.join("labels.json"),
        serde_json::to_string_pretty(&index)? + "\n",
    )?;

    Ok(DatasetSummary {
        dir: out_dir.to_path_buf(),
        labeled_clips: spec.classes.len() * spec.clips_per_class,
        noise_clips: spec.clips_per_class,
        static_clips: spec.clips_per_class,
    })
}

/// Linearly separable 32x32 crops: class `c` is a bright horizontal band at
/// a class-specific height over a dim noisy background. Bands are symmetric
/// under horizontal flips, so augmentation cannot merge classes.
pub fn separable_crops(num_classes: usize, per_class: usize, seed: Seed) -> Vec<(Frame, usize)> {
    assert!((2..=5).contains(&num_classes));
    let mut rng = rng_for(seed, "separable-crops");
    let mut out = Vec::with_capacity(num_classes * per_class);
    let band_height = 6usize;
    let spacing = 32 / num_classes;
    for class in 0..num_classes {
        let band_top = class * spacing + (spacing - band_height) / 2;
        for _ in 0..per_class {
            let jitter = rng.random_range(0..3usize);
            let mut pixels = Vec::with_capacity(32 * 32);
            for y in 0..32 {
                let in_band = y >= band_top + jitter && y < band_top + jitter + band_height;
                let base = if in_band { 0.85 } else { 0.15 };
                for _ in 0..32 {
                    let noise = (rng.random::<f64>() - 0.5) * 0.08;
                    pixels.push((base + noise).clamp(0.0, 1.0));
                }
            }
            out.push((
                Frame::new(32, 32, pixels, 0, Modality::Synthetic).unwrap(),
                class,
            ));
        }
    }
    out
}

/// Stream kinds in the filter benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKind {
    Motion,
    Noise,
    Static,
}

/// One-window streams with constructed margins for the filter. Motion
/// windows carry geometrically decaying differences (several significant at
/// sigma = 0.5), noise windows a single spike, static windows only
/// sub-floor jitter.
pub fn filter_benchmark(
    motion: usize,
    noise: usize,
    staticn: usize,
    window_size: usize,
    seed: Seed,
) -> Vec<(BenchKind, FrameStream)> {
    let mut rng = rng_for(seed, "filter-benchmark");
    let mut out = Vec::with_capacity(motion + noise + staticn);

    let ladder = |diffs: &[f64], id: &str| -> FrameStream {
        let mut values = vec![0.05f64];
        let mut dir = 1.0;
        for &d in diffs {
            let prev = *values.last().unwrap();
            if prev + dir * d > 0.98 || prev + dir * d < 0.02 {
                dir = -dir;
            }
            values.push(prev + dir * d);
        }
        let frames: Vec<Frame> = values
            .iter()
            .enumerate()
            .map(|(t, &v)| {
                Frame::constant(8, 8, v.clamp(0.0, 1.0), t as u64 * FRAME_PERIOD_MS, Modality::Synthetic)
                    .unwrap()
            })
            .collect();
        FrameStream::from_frames(id, Modality::Synthetic, u16::MAX, frames).unwrap()
    };

    for i in 0..motion {
        let d0 = 0.1 + 0.2 * rng.random::<f64>();
        let gamma = 0.8 + 0.1 * rng.random::<f64>();
        let diffs: Vec<f64> = (0..window_size - 1).map(|k| d0 * gamma.powi(k as i32)).collect();
        out.push((BenchKind::Motion, ladder(&diffs, &format!("motion_{i:03}"))));
    }
    for i in 0..noise {
        let spike_at = rng.random_range(0..window_size - 1);
        let spike = 0.2 + 0.3 * rng.random::<f64>();
        let diffs: Vec<f64> = (0..window_size - 1)
            .map(|k| {
                if k == spike_at {
                    spike
                } else {
                    rng.random::<f64>() * 0.002
                }
            })
            .collect();
        out.push((BenchKind::Noise, ladder(&diffs, &format!("noise_{i:03}"))));
    }
    for i in 0..staticn {
        let diffs: Vec<f64> = (0..window_size - 1).map(|_| rng.random::<f64>() * 0.002).collect();
        out.push((BenchKind::Static, ladder(&diffs, &format!("static_{i:03}"))));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::blob_detect;

    #[test]
    fn counting_contract_holds() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            clips_per_class: 2,
            frames_per_clip: 16,
            ..SyntheticSpec::default()
        };
        let summary = gen_synthetic(&spec, dir.path()).unwrap();
        assert_eq!(summary.labeled_clips, 6);
        assert_eq!(summary.noise_clips, 2);
        assert_eq!(summary.static_clips, 2);
        let index = load_dataset(dir.path()).unwrap();
        assert_eq!(index.clips.len(), 10);
        assert_eq!(index.classes.len(), 3);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = SyntheticSpec {
            clips_per_class: 1,
            frames_per_clip: 16,
            ..SyntheticSpec::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        gen_synthetic(&spec, dir_a.path()).unwrap();
        gen_synthetic(&spec, dir_b.path()).unwrap();

        fn walk(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) {
            let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap()).collect();
            entries.sort_by_key(|e| e.path());
            for entry in entries {
                let path = entry.path();
                if path.is_dir() {
                    walk(&path, base, out);
                } else {
                    let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                    out.push((rel, fs::read(&path).unwrap()));
                }
            }
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        walk(dir_a.path(), dir_a.path(), &mut a);
        walk(dir_b.path(), dir_b.path(), &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn translating_blob_moves_by_its_velocity() {
        let spec = SyntheticSpec {
            clips_per_class: 1,
            frames_per_clip: 16,
            ..SyntheticSpec::default()
        };
        let mut rng = rng_for(spec.seed, "clip-check");
        let stream =
            render_action_clip(&spec, MotionClass::Translating, "check", &mut rng).unwrap();
        // Re-derive the same parameters from the identical rng stream and
        // detect against the clean texture the clip was stamped onto.
        let mut rng = rng_for(spec.seed, "clip-check");
        let params = clip_params(&spec, MotionClass::Translating, &mut rng);
        let background = Frame::new(
            spec.frame_size,
            spec.frame_size,
            params.background.clone(),
            0,
            Modality::Synthetic,
        )
        .unwrap();

        for (t, frame) in stream.frames().iter().enumerate() {
            let boxes = blob_detect(frame, &background, 0.3).unwrap();
            assert!(!boxes.is_empty(), "no blob at frame {t}");
            let expected = translating_center(params.start, params.velocity, t);
            assert_eq!(boxes[0].cx, expected.0 as f64, "t={t}");
            assert_eq!(boxes[0].cy, expected.1 as f64, "t={t}");
            assert_eq!(boxes[0].w, SQUARE_SIDE as f64);
        }
    }

    #[test]
    fn separable_crops_are_valid_and_balanced() {
        let crops = separable_crops(3, 5, Seed(50));
        assert_eq!(crops.len(), 15);
        for class in 0..3 {
            assert_eq!(crops.iter().filter(|(_, l)| *l == class).count(), 5);
        }
        for (frame, _) in &crops {
            assert_eq!((frame.width(), frame.height()), (32, 32));
        }
    }

    #[test]
    fn benchmark_margins_hold_by_construction() {
        use crate::filter::{filter_stream, FilterConfig};
        let streams = filter_benchmark(20, 10, 10, 8, Seed(51));
        let config = FilterConfig::default();
        for (kind, stream) in &streams {
            let out = filter_stream(stream, &config).unwrap();
            match kind {
                BenchKind::Motion => assert!(!out.segments.is_empty(), "motion dropped"),
                _ => assert!(out.segments.is_empty(), "{kind:?} retained"),
            }
        }
    }
}
