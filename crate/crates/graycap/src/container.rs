//! The on-disk frame container.
//!
//! A container is a directory holding `manifest.json` plus one binary PGM
//! (`P5`) file per frame under `frames/`, named by zero-padded six-digit
//! index. The manifest fixes iteration order; file names are never sorted.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/frames/000000.pgm
//! <dir>/frames/000001.pgm
//! ```
//!
//! Intensities are normalized by the PGM `maxval` on load, so an 8-bit and a
//! 16-bit source both map their brightest representable value to `1.0`.
//! Saving quantizes back to the stream's `max_value`; a loaded stream
//! round-trips losslessly because its intensities already sit on that grid.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameStream, Modality};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub source_id: String,
    pub modality: Modality,
    pub frames: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub timestamp_ms: u64,
}

/// True when `dir` looks like a frame container.
pub fn is_container(dir: &Path) -> bool {
    dir.join("manifest.json").is_file()
}

/// Load a frame stream from a container directory.
pub fn load_stream(dir: impl AsRef<Path>) -> Result<FrameStream> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::InvalidStream(format!("missing manifest {}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)?;

    let mut stream: Option<FrameStream> = None;
    for entry in &manifest.frames {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path)
            .map_err(|e| Error::MissingFrame(format!("{}: {e}", path.display())))?;
        let pgm = decode_pgm(&bytes)
            .map_err(|e| Error::InvalidStream(format!("{}: {e}", path.display())))?;
        let frame = Frame::new(
            pgm.width,
            pgm.height,
            pgm.normalized(),
            entry.timestamp_ms,
            manifest.modality,
        )?;
        match &mut stream {
            None => {
                let mut s =
                    FrameStream::new(manifest.source_id.clone(), manifest.modality, pgm.maxval)?;
                s.push(frame)?;
                stream = Some(s);
            }
            Some(s) => {
                if pgm.maxval != s.max_value {
                    return Err(Error::InvalidStream(format!(
                        "{}: maxval {} differs from stream maxval {}",
                        path.display(),
                        pgm.maxval,
                        s.max_value
                    )));
                }
                s.push(frame)?;
            }
        }
    }
    match stream {
        Some(s) => Ok(s),
        // Zero-entry manifests are legal; default to 16-bit quantization.
        None => FrameStream::new(manifest.source_id, manifest.modality, u16::MAX),
    }
}

/// Save a frame stream as a container directory, overwriting existing files.
pub fn save_stream(stream: &FrameStream, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;

    let mut entries = Vec::with_capacity(stream.len());
    for (i, frame) in stream.frames().iter().enumerate() {
        let name = format!("frames/{i:06}.pgm");
        let bytes = encode_pgm(frame, stream.max_value);
        fs::write(dir.join(&name), bytes)?;
        entries.push(ManifestEntry {
            file: name,
            timestamp_ms: frame.timestamp_ms,
        });
    }

    let manifest = Manifest {
        source_id: stream.source_id.clone(),
        modality: stream.modality,
        frames: entries,
    };
    let mut file = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    file.write_all(b"\n")?;
    Ok(dir.to_path_buf())
}

struct Pgm {
    width: usize,
    height: usize,
    maxval: u16,
    samples: Vec<u16>,
}

impl Pgm {
    fn normalized(&self) -> Vec<f64> {
        let max = f64::from(self.maxval);
        self.samples.iter().map(|&s| f64::from(s) / max).collect()
    }
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Pgm, String> {
    let mut pos = 0usize;

    fn skip_ws(bytes: &[u8], pos: &mut usize) {
        while *pos < bytes.len() {
            match bytes[*pos] {
                b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
                b'#' => {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn read_token<'a>(bytes: &'a [u8], pos: &mut usize) -> std::result::Result<&'a [u8], String> {
        skip_ws(bytes, pos);
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("truncated header".into());
        }
        Ok(&bytes[start..*pos])
    }

    fn read_number(bytes: &[u8], pos: &mut usize) -> std::result::Result<u64, String> {
        let token = read_token(bytes, pos)?;
        std::str::from_utf8(token)
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| "bad number in header".into())
    }

    if read_token(bytes, &mut pos)? != b"P5" {
        return Err("not a binary PGM (expected P5 magic)".into());
    }
    let width = read_number(bytes, &mut pos)? as usize;
    let height = read_number(bytes, &mut pos)? as usize;
    let maxval = read_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let maxval = maxval as u16;
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing raster separator".into());
    }
    pos += 1;

    let count = width * height;
    let wide = maxval > 255;
    let expected = count * if wide { 2 } else { 1 };
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(format!(
            "raster too short: expected {expected} bytes, got {}",
            raster.len()
        ));
    }
    let mut samples = Vec::with_capacity(count);
    if wide {
        for chunk in raster[..expected].chunks_exact(2) {
            // PGM stores 16-bit samples most-significant byte first.
            samples.push(u16::from_be_bytes([chunk[0], chunk[1]]));
        }
    } else {
        samples.extend(raster[..expected].iter().map(|&b| u16::from(b)));
    }
    if let Some(&bad) = samples.iter().find(|&&s| s > maxval) {
        return Err(format!("sample {bad} exceeds maxval {maxval}"));
    }
    Ok(Pgm {
        width,
        height,
        maxval,
        samples,
    })
}

fn encode_pgm(frame: &Frame, maxval: u16) -> Vec<u8> {
    let header = format!("P5\n{} {}\n{}\n", frame.width(), frame.height(), maxval);
    let wide = maxval > 255;
    let mut out = Vec::with_capacity(header.len() + frame.pixels().len() * if wide { 2 } else { 1 });
    out.extend_from_slice(header.as_bytes());
    let max = f64::from(maxval);
    for &v in frame.pixels() {
        let q = (v * max).round() as u16;
        if wide {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn stream_with(values: &[f64], maxval: u16) -> FrameStream {
        let mut s = FrameStream::new("test", Modality::Synthetic, maxval).unwrap();
        for (i, &v) in values.iter().enumerate() {
            s.push(Frame::constant(8, 8, v, i as u64 * 10, Modality::Synthetic).unwrap())
                .unwrap();
        }
        s
    }

    #[test]
    fn loads_three_valid_frames() {
        let dir = tempdir().unwrap();
        let s = stream_with(&[0.0, 0.5019607843137255, 1.0], 255);
        save_stream(&s, dir.path()).unwrap();
        let loaded = load_stream(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.dimensions(), Some((8, 8)));
    }

    #[test]
    fn missing_frame_file_is_reported() {
        let dir = tempdir().unwrap();
        let s = stream_with(&[0.2, 0.4], 255);
        save_stream(&s, dir.path()).unwrap();
        fs::remove_file(dir.path().join("frames/000001.pgm")).unwrap();
        let err = load_stream(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MissingFrame(_)), "got {err}");
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempdir().unwrap();
        let err = load_stream(dir.path()).unwrap_err();
        assert!(matches!(err, Error::InvalidStream(_)));
    }

    #[test]
    fn sixteen_bit_normalization() {
        // A 16-bit sample of 32768 at maxval 65535 normalizes to 32768/65535.
        let mut bytes = b"P5\n8 8\n65535\n".to_vec();
        for _ in 0..64 {
            bytes.extend_from_slice(&32768u16.to_be_bytes());
        }
        let pgm = decode_pgm(&bytes).unwrap();
        let values = pgm.normalized();
        let expected = 32768.0 / 65535.0;
        assert!((values[0] - expected).abs() < 1e-12);
        assert!((values[0] - 0.50001).abs() < 1e-4);
    }

    #[test]
    fn empty_stream_round_trips() {
        let dir = tempdir().unwrap();
        let s = FrameStream::new("empty", Modality::Depth, 255).unwrap();
        save_stream(&s, dir.path()).unwrap();
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert!(manifest.frames.is_empty());
        let loaded = load_stream(dir.path()).unwrap();
        assert!(loaded.is_empty());
        assert_eq!(loaded.source_id, "empty");
    }

    #[test]
    fn hundred_frames_yield_hundred_files() {
        let dir = tempdir().unwrap();
        let values: Vec<f64> = (0..100).map(|i| i as f64 / 255.0).collect();
        save_stream(&stream_with(&values, 255), dir.path()).unwrap();
        let count = fs::read_dir(dir.path().join("frames")).unwrap().count();
        assert_eq!(count, 100);
    }

    #[test]
    fn manifest_order_wins_over_file_names() {
        let dir = tempdir().unwrap();
        let s = stream_with(&[0.0, 1.0], 255);
        save_stream(&s, dir.path()).unwrap();
        // Swap the file references so lexical order disagrees with manifest order.
        let manifest_path = dir.path().join("manifest.json");
        let mut manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        manifest.frames.swap(0, 1);
        manifest.frames[0].timestamp_ms = 0;
        manifest.frames[1].timestamp_ms = 10;
        fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();

        let loaded = load_stream(dir.path()).unwrap();
        assert_eq!(loaded.frames()[0].pixels()[0], 1.0);
        assert_eq!(loaded.frames()[1].pixels()[0], 0.0);
    }

    #[test]
    fn non_monotone_manifest_is_rejected() {
        let dir = tempdir().unwrap();
        let s = stream_with(&[0.1, 0.2], 255);
        save_stream(&s, dir.path()).unwrap();
        let manifest_path = dir.path().join("manifest.json");
        let mut manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        manifest.frames[1].timestamp_ms = 0;
        fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(load_stream(dir.path()).is_err());
    }

    proptest! {
        // Round-trip is exact for any stream whose intensities sit on the
        // stored quantization grid.
        #[test]
        fn round_trip_is_identity(
            raw in proptest::collection::vec(proptest::collection::vec(0u16..=255, 64), 1..6),
            use_wide in proptest::bool::ANY,
        ) {
            let maxval: u16 = if use_wide { 65535 } else { 255 };
            let mut s = FrameStream::new("rt", Modality::Thermal, maxval).unwrap();
            for (i, frame_raw) in raw.iter().enumerate() {
                let scale = if use_wide { 257 } else { 1 };
                let pixels: Vec<f64> = frame_raw
                    .iter()
                    .map(|&q| f64::from(q * scale) / f64::from(maxval))
                    .collect();
                s.push(Frame::new(8, 8, pixels, i as u64, Modality::Thermal).unwrap()).unwrap();
            }
            let dir = tempdir().unwrap();
            save_stream(&s, dir.path()).unwrap();
            let loaded = load_stream(dir.path()).unwrap();
            prop_assert_eq!(loaded, s);
        }
    }
}
