//! End-to-end orchestration: dataset in, captions and a report out.
//!
//! Stages run sequentially — filter, capture, train (centralized or
//! federated), pseudo-label, caption — and talk to each other only through
//! files under the output directory. Every stage re-reads its input through
//! the typed parser for that format, so a schema violation surfaces at the
//! stage boundary where it happened, with the stage's name on the error.
//!
//! One global seed makes the whole run reproducible: two runs with the same
//! config, dataset, and a deterministic LLM backend (mock or replay) emit
//! byte-identical artifacts, except for wall-clock timing fields in
//! `report.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::capture::{
    best_boxes, coherence_filter, crop_track, detect_all, BlobDetector, CoherenceConfig, Detector,
    median_background,
};
use crate::captioner::{
    build_prompt, generate_caption, make_states, segment, temporal_filter, write_captions_jsonl,
    CaptionRecord, ConsistencyRules, PromptTemplates,
};
use crate::container::{load_stream, save_stream};
use crate::error::{Error, Result};
use crate::eval::lexical_f1;
use crate::fed::{dirichlet_partition, run_rounds, write_timings_csv};
use crate::filter::{filter_stream, FilterConfig, Segment};
use crate::frame::{Frame, FrameStream};
use crate::labeler::{
    predict, read_records_jsonl, save_model, train, write_records_jsonl, ContrastiveConfig,
    load_model, PseudoLabelRecord,
};
use crate::llm::{LlmClient, LlmConfig};
use crate::rng::Seed;
use crate::synth::{load_dataset, ClipKind, DatasetIndex};

pub use crate::eval::lexical_f1 as lexical_score;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CoherenceSettings {
    /// Max box displacement in pixels; `None` uses 20% of the frame diagonal.
    pub epsilon: Option<f64>,
    pub min_confidence: f64,
}

impl Default for CoherenceSettings {
    fn default() -> Self {
        CoherenceSettings {
            epsilon: None,
            min_confidence: 0.25,
        }
    }
}

impl CoherenceSettings {
    pub fn for_frame(&self, width: usize, height: usize) -> CoherenceConfig {
        let mut config = CoherenceConfig::for_frame(width, height);
        if let Some(e) = self.epsilon {
            config.epsilon = e;
        }
        config.min_confidence = self.min_confidence;
        config
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    /// `mock`, `http`, or `replay`.
    pub mode: String,
    pub config: LlmConfig,
    /// Record exchanges as fixtures into this directory.
    pub record: Option<PathBuf>,
    /// Fixture directory for replay mode.
    pub replay_dir: Option<PathBuf>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            mode: "mock".into(),
            config: LlmConfig::default(),
            record: None,
            replay_dir: None,
        }
    }
}

impl LlmSettings {
    pub fn build_client(&self) -> Result<LlmClient> {
        match self.mode.as_str() {
            "mock" => Ok(LlmClient::Mock {
                record: self.record.clone(),
            }),
            "http" => Ok(LlmClient::Http {
                config: self.config.clone(),
                record: self.record.clone(),
            }),
            "replay" => {
                let dir = self.replay_dir.clone().ok_or_else(|| {
                    Error::InvalidConfig("llm.replay_dir is required in replay mode".into())
                })?;
                Ok(LlmClient::Replay { dir })
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown llm mode {other:?}; expected mock, http, or replay"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FedSettings {
    pub clients: usize,
    pub alpha: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    /// Where to write the per-round timing breakdown.
    pub timing_csv: Option<PathBuf>,
}

impl Default for FedSettings {
    fn default() -> Self {
        FedSettings {
            clients: 4,
            alpha: 1.0,
            rounds: 20,
            local_epochs: 1,
            timing_csv: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraSettings {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraSettings {
    fn default() -> Self {
        LoraSettings {
            rank: 8,
            alpha: 1.0,
        }
    }
}

/// Full pipeline configuration. Serializable as JSON or TOML; one file per
/// reproducible run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Action names, one per class. Empty means: use the dataset's classes.
    pub taxonomy: Vec<String>,
    pub fps: f64,
    pub topk: usize,
    /// Action clips per class whose crops count as labeled.
    pub labeled_clips_per_class: usize,
    pub crop_size: usize,
    /// Foreground threshold of the built-in blob detector.
    pub detect_threshold: f64,
    pub filter: FilterConfig,
    pub coherence: CoherenceSettings,
    pub contrastive: ContrastiveConfig,
    pub rules: ConsistencyRules,
    pub llm: LlmSettings,
    /// Train across simulated clients instead of centrally.
    pub federated: Option<FedSettings>,
    pub lora: LoraSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            taxonomy: Vec::new(),
            fps: 10.0,
            topk: 3,
            labeled_clips_per_class: 2,
            crop_size: 32,
            detect_threshold: 0.25,
            filter: FilterConfig::default(),
            coherence: CoherenceSettings::default(),
            contrastive: ContrastiveConfig {
                epochs: 30,
                ..ContrastiveConfig::default()
            },
            rules: ConsistencyRules::default(),
            llm: LlmSettings::default(),
            federated: None,
            lora: LoraSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.contrastive.validate()?;
        self.rules.validate()?;
        if self.topk == 0 {
            return Err(Error::InvalidConfig("topk must be >= 1".into()));
        }
        if self.fps <= 0.0 {
            return Err(Error::InvalidConfig("fps must be > 0".into()));
        }
        if self.crop_size < 8 {
            return Err(Error::InvalidConfig("crop_size must be >= 8".into()));
        }
        if !self.taxonomy.is_empty() {
            let mut names = self.taxonomy.clone();
            names.sort();
            names.dedup();
            if names.len() != self.taxonomy.len() {
                return Err(Error::InvalidConfig("taxonomy names must be unique".into()));
            }
        }
        Ok(())
    }
}

/// Load a config from `.json` or `.toml`, by extension.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
    let config: PipelineConfig = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("bad TOML config: {e}")))?,
        _ => serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("bad JSON config: {e}")))?,
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub clips: usize,
    pub retained_clips: usize,
    pub segments: usize,
    pub retained_frames: usize,
    pub tracks: usize,
    pub crops: usize,
    pub labeled_crops: usize,
    pub unlabeled_crops: usize,
    pub records: usize,
    pub captions: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub classes: Vec<String>,
    pub train_mode: String,
    pub final_loss: Option<f64>,
    pub counts: StageCounts,
    pub captions: Vec<CaptionRecord>,
    /// Wall-clock per stage; the only non-reproducible part of the report.
    pub timings_ms: BTreeMap<String, u64>,
}

/// Track metadata persisted between the capture and training stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrackEntry {
    name: String,
    clip: String,
    label: Option<usize>,
    labeled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrackIndex {
    tracks: Vec<TrackEntry>,
}

fn stage<T>(name: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        // External-service failures keep their own type so callers can map
        // them to a distinct exit code.
        Error::Llm(_) => e,
        other => Error::stage(name, other),
    })
}

fn clip_name(path: &str) -> String {
    path.rsplit('/').next().unwrap_or(path).to_string()
}

/// Run the whole pipeline on a dataset directory, writing all artifacts
/// beneath `out_dir`.
pub fn run_all(
    config: &PipelineConfig,
    dataset_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
) -> Result<RunReport> {
    config.validate()?;
    let dataset_dir = dataset_dir.as_ref();
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let seed = Seed(config.seed);

    let mut counts = StageCounts::default();
    let mut timings_ms = BTreeMap::new();

    // ---- dataset ----------------------------------------------------
    let index = stage("dataset", load_dataset(dataset_dir))?;
    let classes: Vec<String> = if config.taxonomy.is_empty() {
        index.classes.clone()
    } else {
        if config.taxonomy.len() != index.classes.len() {
            return Err(Error::InvalidConfig(format!(
                "taxonomy has {} names but the dataset declares {} classes",
                config.taxonomy.len(),
                index.classes.len()
            )));
        }
        config.taxonomy.clone()
    };

    // ---- stage 1: filter --------------------------------------------
    let started = Instant::now();
    let segments_dir = out_dir.join("segments");
    fs::create_dir_all(&segments_dir)?;
    counts.clips = index.clips.len();
    for clip in &index.clips {
        let outcome = stage("filter", {
            let stream = load_stream(dataset_dir.join(&clip.path))?;
            filter_stream(&stream, &config.filter)
        })?;
        if !outcome.segments.is_empty() {
            counts.retained_clips += 1;
        }
        counts.segments += outcome.segments.len();
        counts.retained_frames += outcome.total_frames();
        let path = segments_dir.join(format!("{}.json", clip_name(&clip.path)));
        stage(
            "filter",
            fs::write(
                &path,
                serde_json::to_string_pretty(&outcome.segments)? + "\n",
            )
            .map_err(Error::from),
        )?;
    }
    timings_ms.insert("filter".into(), started.elapsed().as_millis() as u64);

    // ---- stage 2: capture -------------------------------------------
    let started = Instant::now();
    let crops_dir = out_dir.join("crops");
    fs::create_dir_all(&crops_dir)?;
    let mut tracks: Vec<TrackEntry> = Vec::new();
    let mut labeled_budget: BTreeMap<usize, usize> = BTreeMap::new();
    for clip in &index.clips {
        if clip.kind != ClipKind::Action {
            continue;
        }
        let name = clip_name(&clip.path);
        let segs: Vec<Segment> = stage("capture", {
            let text = fs::read_to_string(segments_dir.join(format!("{name}.json")))?;
            serde_json::from_str(&text).map_err(Error::from)
        })?;
        if segs.is_empty() {
            continue;
        }
        let stream = stage("capture", load_stream(dataset_dir.join(&clip.path)))?;
        let mut clip_tracks: Vec<(String, FrameStream)> = Vec::new();
        for (si, seg) in segs.iter().enumerate() {
            let slice = stage("capture", stream.slice(seg.start, seg.end))?;
            let track_streams = stage("capture", capture_tracks(config, &slice, None))?;
            for (ti, mut crops) in track_streams.into_iter().enumerate() {
                if crops.is_empty() {
                    continue;
                }
                let track_name = format!("{name}_s{si:02}_t{ti:02}");
                crops.source_id = track_name.clone();
                clip_tracks.push((track_name, crops));
            }
        }
        if clip_tracks.is_empty() {
            continue;
        }
        // Spend the labeled-clip quota only on clips that produced crops.
        let labeled = if let Some(label) = clip.label {
            let used = labeled_budget.entry(label).or_insert(0);
            if *used < config.labeled_clips_per_class {
                *used += 1;
                true
            } else {
                false
            }
        } else {
            false
        };
        for (track_name, crops) in clip_tracks {
            counts.crops += crops.len();
            counts.tracks += 1;
            stage("capture", save_stream(&crops, crops_dir.join(&track_name)).map(|_| ()))?;
            tracks.push(TrackEntry {
                name: track_name,
                clip: clip.path.clone(),
                label: clip.label,
                labeled,
            });
        }
    }
    let track_index = TrackIndex { tracks };
    stage(
        "capture",
        fs::write(
            crops_dir.join("index.json"),
            serde_json::to_string_pretty(&track_index)? + "\n",
        )
        .map_err(Error::from),
    )?;
    timings_ms.insert("capture".into(), started.elapsed().as_millis() as u64);

    // ---- empty flow: nothing retained -------------------------------
    if track_index.tracks.is_empty() {
        let report = RunReport {
            seed: config.seed,
            classes,
            train_mode: "skipped".into(),
            final_loss: None,
            counts,
            captions: Vec::new(),
            timings_ms,
        };
        write_captions_jsonl(out_dir.join("captions.jsonl"), &[])?;
        fs::write(
            out_dir.join("report.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        return Ok(report);
    }

    // ---- stage 3: train ----------------------------------------------
    let started = Instant::now();
    let mut labeled_crops: Vec<(Frame, usize)> = Vec::new();
    let mut unlabeled_crops: Vec<Frame> = Vec::new();
    for entry in &track_index.tracks {
        let crops = stage("train", load_stream(crops_dir.join(&entry.name)))?;
        match (entry.labeled, entry.label) {
            (true, Some(label)) => {
                labeled_crops.extend(crops.frames().iter().map(|f| (f.clone(), label)));
            }
            _ => unlabeled_crops.extend(crops.frames().iter().cloned()),
        }
    }
    counts.labeled_crops = labeled_crops.len();
    counts.unlabeled_crops = unlabeled_crops.len();

    let (model, final_loss, train_mode) = if let Some(fed) = &config.federated {
        let labels: Vec<usize> = labeled_crops.iter().map(|(_, l)| *l).collect();
        let partitions = stage(
            "train",
            dirichlet_partition(&labels, fed.clients, fed.alpha, seed),
        )?;
        let outcome = stage(
            "train",
            run_rounds(
                &labeled_crops,
                &partitions,
                classes.len(),
                fed.rounds,
                fed.local_epochs,
                &config.contrastive,
                seed,
            ),
        )?;
        if let Some(csv) = &fed.timing_csv {
            stage("train", write_timings_csv(csv, &outcome.timings))?;
        }
        (outcome.network, None, "federated".to_string())
    } else {
        let outcome = stage(
            "train",
            train(
                &labeled_crops,
                &unlabeled_crops,
                classes.len(),
                &config.contrastive,
                seed,
            ),
        )?;
        let final_loss = outcome.epoch_losses.last().copied();
        (outcome.network, final_loss, "centralized".to_string())
    };
    stage(
        "train",
        save_model(out_dir.join("model.bin"), &model, seed, &config.contrastive),
    )?;
    timings_ms.insert("train".into(), started.elapsed().as_millis() as u64);

    // ---- stage 4: pseudo-label ----------------------------------------
    let started = Instant::now();
    let (model, _, _) = stage("pseudo-label", load_model(out_dir.join("model.bin")))?;
    let mut records: Vec<PseudoLabelRecord> = Vec::new();
    for entry in &track_index.tracks {
        let crops = stage("pseudo-label", load_stream(crops_dir.join(&entry.name)))?;
        for (i, crop) in crops.frames().iter().enumerate() {
            let mut record = stage("pseudo-label", predict(&model, crop, i, config.topk))?;
            record.source_id = Some(entry.name.clone());
            records.push(record);
        }
    }
    counts.records = records.len();
    stage(
        "pseudo-label",
        write_records_jsonl(out_dir.join("labels.jsonl"), &records),
    )?;
    timings_ms.insert("pseudo_label".into(), started.elapsed().as_millis() as u64);

    // ---- stage 5: caption ----------------------------------------------
    let started = Instant::now();
    let all_records = stage("caption", read_records_jsonl(out_dir.join("labels.jsonl")))?;
    let mut by_track: BTreeMap<String, Vec<PseudoLabelRecord>> = BTreeMap::new();
    for record in all_records {
        let key = record.source_id.clone().unwrap_or_default();
        by_track.entry(key).or_default().push(record);
    }
    let client = config.llm.build_client()?;
    let templates = PromptTemplates::default();
    let mut captions: Vec<CaptionRecord> = Vec::new();
    for (track, mut records) in by_track {
        records.sort_by_key(|r| r.frame_index);
        let states = stage(
            "caption",
            make_states(&records, &classes, config.topk, config.rules.p_min),
        )?;
        let filtered = stage("caption", temporal_filter(&states, &config.rules))?;
        let segments = segment(&filtered);
        if segments.is_empty() {
            counts.skipped += 1;
            continue;
        }
        let (system, runtime) = stage(
            "caption",
            build_prompt(&segments, &classes, config.fps, &templates),
        )?;
        let outcome = generate_caption(&system, &runtime, &client)?;
        captions.push(CaptionRecord {
            source_id: track,
            caption: outcome.caption,
            segments,
            prompt_sha256: outcome.prompt_sha256,
        });
    }
    counts.captions = captions.len();
    stage(
        "caption",
        write_captions_jsonl(out_dir.join("captions.jsonl"), &captions),
    )?;
    timings_ms.insert("caption".into(), started.elapsed().as_millis() as u64);

    let report = RunReport {
        seed: config.seed,
        classes,
        train_mode,
        final_loss,
        counts,
        captions,
        timings_ms,
    };
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}

/// Detect, coherence-filter, and crop one retained stream slice. Returns one
/// crop stream per coherent sub-track. An imported box list replaces the
/// built-in detector when provided.
pub fn capture_tracks(
    config: &PipelineConfig,
    slice: &FrameStream,
    imported: Option<&dyn Detector>,
) -> Result<Vec<FrameStream>> {
    let Some((width, height)) = slice.dimensions() else {
        return Ok(Vec::new());
    };
    let background = median_background(slice)?;
    let blob;
    let detector: &dyn Detector = match imported {
        Some(d) => d,
        None => {
            blob = BlobDetector {
                background,
                threshold: config.detect_threshold,
            };
            &blob
        }
    };
    let detections = detect_all(detector, slice)?;
    let best = best_boxes(&detections, config.coherence.min_confidence);
    let coherence = config.coherence.for_frame(width, height);
    let track = coherence_filter(&best, &coherence)?;
    let mut out = Vec::new();
    for i in 0..track.sub_tracks.len() {
        let sub = track.sub_track(i);
        out.push(crop_track(slice, &sub, (config.crop_size, config.crop_size))?);
    }
    Ok(out)
}

/// Dataset metadata helper for CLI reporting.
pub fn describe_dataset(index: &DatasetIndex) -> String {
    let action = index
        .clips
        .iter()
        .filter(|c| c.kind == ClipKind::Action)
        .count();
    let noise = index.clips.iter().filter(|c| c.kind == ClipKind::Noise).count();
    let staticn = index.clips.iter().filter(|c| c.kind == ClipKind::Static).count();
    format!(
        "{} classes, {action} action / {noise} noise / {staticn} static clips",
        index.classes.len()
    )
}

/// Compare two captions (or caption files' contents) lexically.
pub fn evaluate_lexical(candidate: &str, reference: &str) -> f64 {
    lexical_f1(candidate, reference)
}
