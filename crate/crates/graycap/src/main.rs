//! Thin command-line front end. All behavior lives in the library; this
//! binary parses flags, wires files to library calls, and maps errors to
//! exit codes (0 ok, 2 config error, 3 stage failure, 4 external-service
//! failure).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use graycap::capture::{read_boxes_jsonl, write_boxes_jsonl, PrecomputedBoxes};
use graycap::captioner::{
    build_prompt, generate_caption, load_rules, make_states, segment, temporal_filter,
    write_captions_jsonl, CaptionRecord, ConsistencyRules, PromptTemplates, DEFAULT_TAXONOMY,
};
use graycap::container::{is_container, load_stream, save_stream};
use graycap::error::Error;
use graycap::eval::lexical_f1;
use graycap::fed::{dirichlet_partition, run_rounds, write_timings_csv};
use graycap::filter::{filter_stream, FilterConfig, RetainedSegments, Segment};
use graycap::labeler::{
    load_model, predict, read_records_jsonl, save_model, train, write_records_jsonl,
    ContrastiveConfig, PseudoLabelRecord,
};
use graycap::llm::{LlmClient, LlmConfig};
use graycap::lora::{init_adapter, load_adapter, load_matrix, merge, param_budget, save_adapter, save_matrix};
use graycap::pipeline::{capture_tracks, load_config, run_all, PipelineConfig};
use graycap::synth::{gen_synthetic, load_dataset, SyntheticSpec};
use graycap::{Frame, Seed};

#[derive(Parser)]
#[command(name = "graycap", version, about = "Low-resolution behavior understanding pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset.
    GenSynth(GenSynthArgs),
    /// Select behavior-relevant windows from a frame container.
    Filter(FilterArgs),
    /// Detect, coherence-filter, and crop retained segments.
    Capture(CaptureArgs),
    /// Train the pseudo-labeler centrally.
    TrainLabeler(TrainArgs),
    /// Train the pseudo-labeler across simulated federated clients.
    FedSim(FedSimArgs),
    /// Pseudo-label crops with a trained model.
    PseudoLabel(PseudoLabelArgs),
    /// Turn pseudo-label sequences into captions via an LLM backend.
    Caption(CaptionArgs),
    /// Merge a low-rank adapter into a base weight matrix.
    LoraMerge(LoraMergeArgs),
    /// Report adapter/full trainable-parameter counts.
    LoraBudget(LoraBudgetArgs),
    /// Run the whole pipeline on a dataset.
    RunAll(RunAllArgs),
    /// Token-F1 between a candidate and a reference text file.
    EvalLexical(EvalArgs),
    /// Write a fresh randomly initialized adapter (useful with lora-merge).
    LoraInit(LoraInitArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    clips_per_class: usize,
    #[arg(long, default_value_t = 20)]
    frames_per_clip: usize,
    #[arg(long, default_value_t = 48)]
    frame_size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    window: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 2)]
    min_significant: usize,
    #[arg(long, default_value_t = 0.005)]
    activity_floor: f64,
    #[arg(long)]
    invert_rule: bool,
    /// Also emit per-window diagnostics.
    #[arg(long)]
    debug: bool,
}

#[derive(Args)]
struct CaptureArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Import per-frame boxes from an external detector instead of running
    /// the built-in one.
    #[arg(long)]
    boxes: Option<PathBuf>,
    /// Write the boxes the detector produced (global frame indices).
    #[arg(long)]
    dump_boxes: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    min_confidence: f64,
    #[arg(long, default_value_t = 32)]
    crop_size: usize,
    #[arg(long, default_value_t = 0.25)]
    threshold: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory with one subdirectory per class index, each holding frame
    /// containers of 32x32 crops.
    #[arg(long)]
    labeled: PathBuf,
    /// Directory of frame containers without labels.
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long)]
    standard_denominator: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct FedSimArgs {
    /// Labeled data directory (same layout as `train-labeler --labeled`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    clients: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 20)]
    rounds: usize,
    #[arg(long, default_value_t = 1)]
    local_epochs: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-round compute/communication/waiting breakdown CSV.
    #[arg(long)]
    timing: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct PseudoLabelArgs {
    #[arg(long)]
    model: PathBuf,
    /// A frame container, or a directory of frame containers.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    topk: usize,
}

#[derive(Args)]
struct CaptionArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Consistency-rules JSON file; defaults are built in.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Plain-text file with one action name per line; defaults to the
    /// built-in 16-action taxonomy.
    #[arg(long)]
    taxonomy_file: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    topk: usize,
    #[arg(long, default_value_t = 10.0)]
    fps: f64,
    /// System prompt template file ({taxonomy} placeholder).
    #[arg(long)]
    system_template: Option<PathBuf>,
    /// Runtime prompt template file ({segments} placeholder).
    #[arg(long)]
    runtime_template: Option<PathBuf>,
    /// Use the deterministic mock backend (default when no endpoint given).
    #[arg(long)]
    mock: bool,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "llama-3.1-70b")]
    model: String,
    #[arg(long, default_value = "LLM_API_KEY")]
    api_key_env: String,
    /// Record request/response fixtures into this directory.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Replay fixtures from this directory instead of any backend.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct LoraMergeArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    adapter: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LoraBudgetArgs {
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 8)]
    r: usize,
}

#[derive(Args)]
struct LoraInitArgs {
    #[arg(long)]
    d_out: usize,
    #[arg(long)]
    d_in: usize,
    #[arg(long, default_value_t = 8)]
    r: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a zero base matrix of matching shape next to the adapter.
    #[arg(long)]
    with_base: Option<PathBuf>,
}

#[derive(Args)]
struct RunAllArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    reference: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Llm(_) => 4,
        Error::InvalidConfig(_) | Error::Json(_) => 2,
        _ => 3,
    }
}

fn dispatch(command: Command) -> graycap::Result<()> {
    match command {
        Command::GenSynth(args) => {
            let spec = SyntheticSpec {
                clips_per_class: args.clips_per_class,
                frames_per_clip: args.frames_per_clip,
                frame_size: args.frame_size,
                seed: Seed(args.seed),
                ..SyntheticSpec::default()
            };
            let summary = gen_synthetic(&spec, &args.out)?;
            let index = load_dataset(&args.out)?;
            println!(
                "wrote {} ({})",
                summary.dir.display(),
                graycap::pipeline::describe_dataset(&index)
            );
            Ok(())
        }
        Command::Filter(args) => {
            let config = FilterConfig {
                window_size: args.window,
                sigma: args.sigma,
                min_significant: args.min_significant,
                activity_floor: args.activity_floor,
                invert_rule: args.invert_rule,
            };
            let stream = load_stream(&args.input)?;
            let outcome = filter_stream(&stream, &config)?;
            let json = if args.debug {
                serde_json::to_string_pretty(&outcome)?
            } else {
                serde_json::to_string_pretty(&outcome.segments)?
            };
            fs::write(&args.out, json + "\n")?;
            println!(
                "{} windows, {} retained segments covering {} frames",
                outcome.windows.len(),
                outcome.segments.len(),
                outcome.total_frames()
            );
            Ok(())
        }
        Command::Capture(args) => run_capture(args),
        Command::TrainLabeler(args) => {
            let (labeled, num_classes) = load_labeled_dir(&args.labeled)?;
            let unlabeled = match &args.unlabeled {
                Some(dir) => load_unlabeled_dir(dir)?,
                None => Vec::new(),
            };
            let config = ContrastiveConfig {
                epochs: args.epochs,
                lambda: args.lambda,
                tau: args.tau,
                batch_size: args.batch_size,
                learning_rate: args.learning_rate,
                standard_denominator: args.standard_denominator,
                ..ContrastiveConfig::default()
            };
            let outcome = train(&labeled, &unlabeled, num_classes, &config, Seed(args.seed))?;
            save_model(&args.out, &outcome.network, Seed(args.seed), &config)?;
            println!(
                "trained {} classes on {} labeled + {} unlabeled crops; final loss {:.4}",
                num_classes,
                labeled.len(),
                unlabeled.len(),
                outcome.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::FedSim(args) => {
            let (samples, num_classes) = load_labeled_dir(&args.data)?;
            let labels: Vec<usize> = samples.iter().map(|(_, l)| *l).collect();
            let partitions = dirichlet_partition(&labels, args.clients, args.alpha, Seed(args.seed))?;
            let config = ContrastiveConfig {
                epochs: args.local_epochs,
                lambda: args.lambda,
                batch_size: args.batch_size,
                learning_rate: args.learning_rate,
                ..ContrastiveConfig::default()
            };
            let outcome = run_rounds(
                &samples,
                &partitions,
                num_classes,
                args.rounds,
                args.local_epochs,
                &config,
                Seed(args.seed),
            )?;
            save_model(&args.out, &outcome.network, Seed(args.seed), &config)?;
            if let Some(csv) = &args.timing {
                write_timings_csv(csv, &outcome.timings)?;
            }
            println!(
                "federated run: {} clients, {} rounds, model written to {}",
                args.clients,
                args.rounds,
                args.out.display()
            );
            Ok(())
        }
        Command::PseudoLabel(args) => {
            let (model, _, _) = load_model(&args.model)?;
            let containers = collect_containers(&args.input)?;
            let mut records: Vec<PseudoLabelRecord> = Vec::new();
            for dir in containers {
                let stream = load_stream(&dir)?;
                let name = stream.source_id.clone();
                for (i, crop) in stream.frames().iter().enumerate() {
                    let mut record = predict(&model, crop, i, args.topk)?;
                    record.source_id = Some(name.clone());
                    records.push(record);
                }
            }
            write_records_jsonl(&args.out, &records)?;
            println!("wrote {} records to {}", records.len(), args.out.display());
            Ok(())
        }
        Command::Caption(args) => run_caption(args),
        Command::LoraMerge(args) => {
            let base = load_matrix(&args.base)?;
            let adapter = load_adapter(&args.adapter)?;
            let merged = merge(&base, &adapter)?;
            save_matrix(&args.out, &merged)?;
            println!(
                "merged rank-{} adapter into {}x{} base -> {}",
                adapter.rank,
                base.rows(),
                base.cols(),
                args.out.display()
            );
            Ok(())
        }
        Command::LoraBudget(args) => {
            let budget = param_budget(args.d, args.r);
            println!(
                "adapter_params={} full_params={} ratio={:.6}%",
                budget.adapter_params,
                budget.full_params,
                budget.ratio * 100.0
            );
            Ok(())
        }
        Command::LoraInit(args) => {
            let adapter = init_adapter(args.d_out, args.d_in, args.r, Seed(args.seed))?;
            save_adapter(&args.out, &adapter, Seed(args.seed))?;
            if let Some(base_path) = &args.with_base {
                save_matrix(base_path, &graycap::lora::WeightMatrix::zeros(args.d_out, args.d_in))?;
            }
            println!("wrote rank-{} adapter to {}", args.r, args.out.display());
            Ok(())
        }
        Command::RunAll(args) => {
            let mut config = match &args.config {
                Some(path) => load_config(path)?,
                None => PipelineConfig::default(),
            };
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            let report = run_all(&config, &args.data, &args.out)?;
            println!(
                "pipeline done: {} captions from {} retained clips ({} tracks); report at {}",
                report.counts.captions,
                report.counts.retained_clips,
                report.counts.tracks,
                args.out.join("report.json").display()
            );
            Ok(())
        }
        Command::EvalLexical(args) => {
            let candidate = fs::read_to_string(&args.candidate)?;
            let reference = fs::read_to_string(&args.reference)?;
            println!("{:.6}", lexical_f1(&candidate, &reference));
            Ok(())
        }
    }
}

fn run_capture(args: CaptureArgs) -> graycap::Result<()> {
    let stream = load_stream(&args.input)?;
    let segments: Vec<Segment> = {
        let text = fs::read_to_string(&args.segments)?;
        // Accept both the plain list and the --debug object.
        match serde_json::from_str::<Vec<Segment>>(&text) {
            Ok(list) => list,
            Err(_) => serde_json::from_str::<RetainedSegments>(&text)?.segments,
        }
    };
    let imported = match &args.boxes {
        Some(path) => Some(read_boxes_jsonl(path, stream.len())?),
        None => None,
    };

    let mut config = PipelineConfig::default();
    config.coherence.epsilon = args.epsilon;
    config.coherence.min_confidence = args.min_confidence;
    config.crop_size = args.crop_size;
    config.detect_threshold = args.threshold;

    fs::create_dir_all(&args.out)?;
    let mut dumped: Vec<Vec<graycap::capture::BoundingBox>> = vec![Vec::new(); stream.len()];
    let mut tracks = 0usize;
    let mut crops_total = 0usize;
    for (si, seg) in segments.iter().enumerate() {
        let slice = stream.slice(seg.start, seg.end)?;
        let track_streams = match &imported {
            Some(all_boxes) => {
                let slice_boxes = all_boxes[seg.start..seg.end].to_vec();
                let detector = PrecomputedBoxes::new(slice_boxes);
                capture_tracks(&config, &slice, Some(&detector))?
            }
            None => {
                if args.dump_boxes.is_some() {
                    let background = graycap::capture::median_background(&slice)?;
                    for (offset, frame) in slice.frames().iter().enumerate() {
                        dumped[seg.start + offset] =
                            graycap::capture::blob_detect(frame, &background, args.threshold)?;
                    }
                }
                capture_tracks(&config, &slice, None)?
            }
        };
        for (ti, mut crops) in track_streams.into_iter().enumerate() {
            let name = format!("s{si:02}_t{ti:02}");
            crops.source_id = name.clone();
            crops_total += crops.len();
            tracks += 1;
            save_stream(&crops, args.out.join(&name))?;
        }
    }
    if let Some(path) = &args.dump_boxes {
        write_boxes_jsonl(path, &dumped)?;
    }
    println!(
        "captured {tracks} coherent tracks ({crops_total} crops) into {}",
        args.out.display()
    );
    Ok(())
}

fn run_caption(args: CaptionArgs) -> graycap::Result<()> {
    let rules = match &args.rules {
        Some(path) => load_rules(path)?,
        None => ConsistencyRules::default(),
    };
    let taxonomy: Vec<String> = match &args.taxonomy_file {
        Some(path) => fs::read_to_string(path)?
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect(),
        None => DEFAULT_TAXONOMY.iter().map(|s| s.to_string()).collect(),
    };
    let templates = match (&args.system_template, &args.runtime_template) {
        (Some(s), Some(r)) => PromptTemplates::from_files(s, r)?,
        (None, None) => PromptTemplates::default(),
        _ => {
            return Err(Error::InvalidConfig(
                "provide both --system-template and --runtime-template or neither".into(),
            ))
        }
    };

    let client = if let Some(dir) = &args.replay {
        LlmClient::Replay { dir: dir.clone() }
    } else if let Some(endpoint) = &args.endpoint {
        LlmClient::Http {
            config: LlmConfig {
                endpoint: endpoint.clone(),
                model: args.model.clone(),
                api_key_env: args.api_key_env.clone(),
                ..LlmConfig::default()
            },
            record: args.record.clone(),
        }
    } else {
        LlmClient::Mock {
            record: args.record.clone(),
        }
    };

    let all_records = read_records_jsonl(&args.labels)?;
    let mut by_track: std::collections::BTreeMap<String, Vec<PseudoLabelRecord>> =
        std::collections::BTreeMap::new();
    for record in all_records {
        by_track
            .entry(record.source_id.clone().unwrap_or_default())
            .or_default()
            .push(record);
    }

    let mut captions: Vec<CaptionRecord> = Vec::new();
    let mut skipped = 0usize;
    for (track, mut records) in by_track {
        records.sort_by_key(|r| r.frame_index);
        let states = make_states(&records, &taxonomy, args.topk, rules.p_min)?;
        let filtered = temporal_filter(&states, &rules)?;
        let segments = segment(&filtered);
        if segments.is_empty() {
            skipped += 1;
            continue;
        }
        let (system, runtime) = build_prompt(&segments, &taxonomy, args.fps, &templates)?;
        let outcome = generate_caption(&system, &runtime, &client)?;
        captions.push(CaptionRecord {
            source_id: track,
            caption: outcome.caption,
            segments,
            prompt_sha256: outcome.prompt_sha256,
        });
    }
    write_captions_jsonl(&args.out, &captions)?;
    println!(
        "wrote {} captions ({skipped} tracks skipped) to {}",
        captions.len(),
        args.out.display()
    );
    Ok(())
}

/// A single container, or every immediate subdirectory that is one.
fn collect_containers(dir: &Path) -> graycap::Result<Vec<PathBuf>> {
    if is_container(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && is_container(p))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::InvalidStream(format!(
            "{} is neither a frame container nor a directory of containers",
            dir.display()
        )));
    }
    Ok(out)
}

/// Labeled layout: `<dir>/<class index>/<container>/...`.
fn load_labeled_dir(dir: &Path) -> graycap::Result<(Vec<(Frame, usize)>, usize)> {
    let mut class_dirs: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let label: usize = name.parse().map_err(|_| {
            Error::InvalidConfig(format!(
                "labeled subdirectory {name:?} is not a class index"
            ))
        })?;
        class_dirs.push((label, path));
    }
    if class_dirs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} contains no class subdirectories",
            dir.display()
        )));
    }
    class_dirs.sort();
    let num_classes = class_dirs.iter().map(|(l, _)| l + 1).max().unwrap_or(0);
    let mut samples = Vec::new();
    for (label, class_dir) in class_dirs {
        for container in collect_containers(&class_dir)? {
            let stream = load_stream(&container)?;
            samples.extend(stream.frames().iter().map(|f| (f.clone(), label)));
        }
    }
    Ok((samples, num_classes))
}

fn load_unlabeled_dir(dir: &Path) -> graycap::Result<Vec<Frame>> {
    let mut out = Vec::new();
    for container in collect_containers(dir)? {
        let stream = load_stream(&container)?;
        out.extend(stream.frames().iter().cloned());
    }
    Ok(out)
}
