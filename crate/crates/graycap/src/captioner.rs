//! From pseudo-label sequences to consistency-checked LLM prompts.
//!
//! Three steps, all pure: per-frame states keep the top-k classes and flag
//! low-confidence frames (spatial consistency); a rule-based temporal pass
//! corrects isolated labels that contradict their neighborhood (temporal
//! consistency); run-length segments compress the sequence into one prompt
//! line per action.
//!
//! The temporal pass never touches a run of two or more frames. A lone frame
//! is corrected in two ways: if it is incompatibility-paired with the label
//! of the run enclosing it on both sides (combined length at least
//! `min_run`), it takes that label; otherwise, if one label dominates its
//! `window`-frame neighborhood (majority count), it takes the dominant
//! label. The pass repeats until the sequence stops changing, so applying
//! the filter twice equals applying it once; a progress guard on the number
//! of agreeing neighbor pairs bounds the iteration.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::PseudoLabelRecord;
use crate::llm::{ChatExchange, LlmClient};

/// The default action taxonomy: 16 daily-living activities as captured by a
/// desk-scale depth testbed.
pub const DEFAULT_TAXONOMY: [&str; 16] = [
    "Sitting",
    "Other actions",
    "Standing",
    "Walking",
    "Eating/Medication",
    "Grooming/Hair styling",
    "Exercising",
    "Handling objects",
    "Interacting/Socializing",
    "Sleeping/Lying down",
    "Transitioning (Sit/Stand)",
    "Using mobile phone",
    "Drinking",
    "Cleaning",
    "Dressing/Undressing",
    "Rubbing/Washing hands",
];

/// One frame's truncated pseudo label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub frame_index: usize,
    /// Top-k `(action, probability)` pairs, descending.
    pub top_k: Vec<(String, f64)>,
    pub uncertain: bool,
}

impl FrameState {
    pub fn top1(&self) -> &(String, f64) {
        &self.top_k[0]
    }
}

/// Temporal-consistency rules. Ships as a JSON file so taxonomies and their
/// incompatibilities are swappable without a rebuild.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyRules {
    /// Minimum enclosing-run length for the incompatibility correction.
    pub min_run: usize,
    /// Odd smoothing window for the majority correction.
    pub window: usize,
    /// Unordered action-name pairs that cannot alternate frame to frame.
    pub incompatible: Vec<(String, String)>,
    /// Frames whose best probability falls below this are uncertain.
    pub p_min: f64,
}

impl Default for ConsistencyRules {
    fn default() -> Self {
        ConsistencyRules {
            min_run: 4,
            window: 5,
            incompatible: vec![
                ("Walking".into(), "Sleeping/Lying down".into()),
                ("Exercising".into(), "Sleeping/Lying down".into()),
                ("running".into(), "sleeping".into()),
            ],
            p_min: 0.4,
        }
    }
}

impl ConsistencyRules {
    pub fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "smoothing window must be odd, got {}",
                self.window
            )));
        }
        if self.min_run < 2 {
            return Err(Error::InvalidConfig("min_run must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.p_min) {
            return Err(Error::InvalidConfig("p_min must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn incompatible_pair(&self, a: &str, b: &str) -> bool {
        self.incompatible
            .iter()
            .any(|(x, y)| (x == a && y == b) || (x == b && y == a))
    }
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<ConsistencyRules> {
    let rules: ConsistencyRules = serde_json::from_str(&fs::read_to_string(path.as_ref())?)?;
    rules.validate()?;
    Ok(rules)
}

pub fn save_rules(path: impl AsRef<Path>, rules: &ConsistencyRules) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(rules)? + "\n")?;
    Ok(())
}

/// Truncate each record to its top-k classes and flag uncertain frames
/// (best probability below `p_min`).
pub fn make_states(
    records: &[PseudoLabelRecord],
    taxonomy: &[String],
    k: usize,
    p_min: f64,
) -> Result<Vec<FrameState>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no pseudo-label records".into()));
    }
    if k == 0 || k > taxonomy.len() {
        return Err(Error::InvalidConfig(format!(
            "k must lie in [1, {}], got {k}",
            taxonomy.len()
        )));
    }
    let mut states = Vec::with_capacity(records.len());
    for record in records {
        if record.probs.len() != taxonomy.len() {
            return Err(Error::DimensionMismatch(format!(
                "record has {} classes, taxonomy has {}",
                record.probs.len(),
                taxonomy.len()
            )));
        }
        let mut order: Vec<usize> = (0..record.probs.len()).collect();
        order.sort_by(|&a, &b| {
            record.probs[b]
                .partial_cmp(&record.probs[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let top_k: Vec<(String, f64)> = order
            .iter()
            .take(k)
            .map(|&c| (taxonomy[c].clone(), record.probs[c]))
            .collect();
        let uncertain = top_k[0].1 < p_min;
        states.push(FrameState {
            frame_index: record.frame_index,
            top_k,
            uncertain,
        });
    }
    Ok(states)
}

fn agreements(labels: &[String]) -> usize {
    labels.windows(2).filter(|pair| pair[0] == pair[1]).count()
}

/// Maximal runs of equal labels as `(start, end)` half-open index ranges.
fn runs(labels: &[String]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0usize;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i] != labels[start] {
            out.push((start, i));
            start = i;
        }
    }
    out
}

/// One parallel incompatibility pass: a lone label incompatibility-paired
/// with the label of the run enclosing it on both sides (combined length
/// >= min_run) takes the enclosing label and its mean probability.
fn incompatibility_pass(
    labels: &[String],
    probs: &[f64],
    rules: &ConsistencyRules,
) -> (Vec<String>, Vec<f64>) {
    let mut new_labels = labels.to_vec();
    let mut new_probs = probs.to_vec();
    let runs = runs(labels);
    for (ri, &(start, end)) in runs.iter().enumerate() {
        if end - start != 1 || ri == 0 || ri + 1 == runs.len() {
            continue;
        }
        let (ls, le) = runs[ri - 1];
        let (rs, re) = runs[ri + 1];
        if labels[ls] != labels[rs] {
            continue;
        }
        let context_len = (le - ls) + (re - rs);
        if context_len < rules.min_run {
            continue;
        }
        if !rules.incompatible_pair(&labels[start], &labels[ls]) {
            continue;
        }
        let context_mean = (probs[ls..le].iter().sum::<f64>()
            + probs[rs..re].iter().sum::<f64>())
            / context_len as f64;
        new_labels[start] = labels[ls].clone();
        new_probs[start] = context_mean;
    }
    (new_labels, new_probs)
}

/// One parallel majority pass: a lone label takes the dominant label of its
/// `window`-frame neighborhood when that label reaches a majority count
/// (at least ceil(window/2)). Windows shift at the sequence edges so they
/// keep their full width whenever possible.
fn majority_pass(
    labels: &[String],
    probs: &[f64],
    rules: &ConsistencyRules,
) -> (Vec<String>, Vec<f64>) {
    let mut new_labels = labels.to_vec();
    let mut new_probs = probs.to_vec();
    let n = labels.len();
    // Shorter sequences use what they have; the majority threshold stays
    // tied to the configured window, which is conservative.
    let m = rules.window.min(n);
    let threshold = rules.window.div_ceil(2);
    for (start, end) in runs(labels) {
        if end - start != 1 {
            continue;
        }
        let p = start;
        let half = m / 2;
        let lo = if p < half {
            0
        } else {
            (p - half).min(n.saturating_sub(m))
        };
        let hi = (lo + m).min(n);
        // Count labels in the window.
        let mut counts: Vec<(usize, usize)> = Vec::new(); // (first index, count)
        for i in lo..hi {
            match counts.iter_mut().find(|(j, _)| labels[*j] == labels[i]) {
                Some((_, c)) => *c += 1,
                None => counts.push((i, 1)),
            }
        }
        let Some(&(mode_at, mode_count)) = counts.iter().max_by_key(|(_, c)| *c) else {
            continue;
        };
        if mode_count < threshold || labels[mode_at] == labels[p] {
            continue;
        }
        let mode_label = &labels[mode_at];
        let mode_mean = {
            let (mut sum, mut count) = (0.0, 0usize);
            for i in lo..hi {
                if &labels[i] == mode_label {
                    sum += probs[i];
                    count += 1;
                }
            }
            sum / count as f64
        };
        new_labels[p] = mode_label.clone();
        new_probs[p] = mode_mean;
    }
    (new_labels, new_probs)
}

/// Correct temporally inconsistent lone labels. Uncertain frames are
/// excluded from all run statistics and never modified.
pub fn temporal_filter(states: &[FrameState], rules: &ConsistencyRules) -> Result<Vec<FrameState>> {
    rules.validate()?;
    let active: Vec<usize> = (0..states.len()).filter(|&i| !states[i].uncertain).collect();
    let mut out = states.to_vec();
    if active.len() < 2 {
        return Ok(out);
    }
    let mut labels: Vec<String> = active.iter().map(|&i| states[i].top1().0.clone()).collect();
    let mut probs: Vec<f64> = active.iter().map(|&i| states[i].top1().1).collect();

    // Iterate to a fixed point. Each productive round strictly increases the
    // number of agreeing neighbor pairs, which caps the loop.
    for _round in 0..=labels.len() {
        let (l1, p1) = incompatibility_pass(&labels, &probs, rules);
        let (l2, p2) = majority_pass(&l1, &p1, rules);
        if l2 == labels {
            break;
        }
        if agreements(&l2) <= agreements(&labels) {
            break;
        }
        labels = l2;
        probs = p2;
    }

    for (slot, &i) in active.iter().enumerate() {
        if states[i].top1().0 != labels[slot] {
            out[i].top_k = vec![(labels[slot].clone(), probs[slot])];
        }
    }
    Ok(out)
}

/// A maximal run of frames sharing a top-1 action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSegment {
    pub start: usize,
    pub end: usize,
    pub action: String,
    pub mean_prob: f64,
}

/// Run-length encode consecutive equal top-1 labels. Uncertain frames close
/// the current segment and belong to none.
pub fn segment(states: &[FrameState]) -> Vec<ActionSegment> {
    let mut out: Vec<ActionSegment> = Vec::new();
    let mut open: Option<(usize, String, f64, usize)> = None; // start, label, prob sum, count
    for (i, state) in states.iter().enumerate() {
        if state.uncertain {
            if let Some((start, label, sum, count)) = open.take() {
                out.push(ActionSegment {
                    start,
                    end: i,
                    action: label,
                    mean_prob: sum / count as f64,
                });
            }
            continue;
        }
        let (label, prob) = state.top1();
        match &mut open {
            Some((_, current, sum, count)) if current == label => {
                *sum += prob;
                *count += 1;
            }
            _ => {
                if let Some((start, label, sum, count)) = open.take() {
                    out.push(ActionSegment {
                        start,
                        end: i,
                        action: label,
                        mean_prob: sum / count as f64,
                    });
                }
                open = Some((i, label.clone(), *prob, 1));
            }
        }
    }
    if let Some((start, label, sum, count)) = open.take() {
        out.push(ActionSegment {
            start,
            end: states.len(),
            action: label,
            mean_prob: sum / count as f64,
        });
    }
    out
}

/// Expand segments back to a per-frame top-1 label sequence (None where no
/// segment covers the frame). The round-trip inverse of [`segment`].
pub fn expand_segments(segments: &[ActionSegment], len: usize) -> Vec<Option<String>> {
    let mut out = vec![None; len];
    for seg in segments {
        for slot in out.iter_mut().take(seg.end).skip(seg.start) {
            *slot = Some(seg.action.clone());
        }
    }
    out
}

/// Prompt templates with `{taxonomy}` and `{segments}` placeholders.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub system: String,
    pub runtime: String,
}

pub const DEFAULT_SYSTEM_TEMPLATE: &str = "You are an assistant that writes short captions describing human behavior\nrecorded by a low-resolution sensor (depth, thermal, or infrared).\n\nThe only actions that can occur are: {taxonomy}.\n\nYou will receive a chronological list of action segments. Each line gives a\ntime range in seconds, the detected action, and the detector's confidence.\nPer-frame detections keep only their strongest candidate actions, and\nisolated one-frame detections that contradict their neighborhood have been\ncorrected, but the labels remain probabilistic: prefer readings that keep\nneighboring segments physically plausible, and give higher-confidence\nsegments more weight.\n\nWrite one short paragraph describing what the person does over the whole\nrecording, in order. Mention every listed action, and do not invent actions\nthat are not in the list above.\n";

pub const DEFAULT_RUNTIME_TEMPLATE: &str = "Detected action segments:\n{segments}\n";

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            system: DEFAULT_SYSTEM_TEMPLATE.to_string(),
            runtime: DEFAULT_RUNTIME_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn from_files(system: impl AsRef<Path>, runtime: impl AsRef<Path>) -> Result<Self> {
        Ok(PromptTemplates {
            system: fs::read_to_string(system)?,
            runtime: fs::read_to_string(runtime)?,
        })
    }
}

/// Render the system and runtime prompts. Byte-deterministic: one line per
/// segment, `[t0 s – t1 s] action (confidence 0.xx)`, times at `index/fps`.
pub fn build_prompt(
    segments: &[ActionSegment],
    taxonomy: &[String],
    fps: f64,
    templates: &PromptTemplates,
) -> Result<(String, String)> {
    if segments.is_empty() {
        return Err(Error::EmptyInput("no segments to prompt about".into()));
    }
    if fps <= 0.0 {
        return Err(Error::InvalidConfig(format!("fps must be > 0, got {fps}")));
    }
    let system = templates.system.replace("{taxonomy}", &taxonomy.join(", "));
    let lines: Vec<String> = segments
        .iter()
        .map(|seg| {
            format!(
                "[{:.1} s \u{2013} {:.1} s] {} (confidence {:.2})",
                seg.start as f64 / fps,
                seg.end as f64 / fps,
                seg.action,
                seg.mean_prob
            )
        })
        .collect();
    let runtime = templates.runtime.replace("{segments}", &lines.join("\n"));
    Ok((system, runtime))
}

pub fn prompt_sha256(system: &str, runtime: &str) -> String {
    crate::rng::sha256_hex(&[system.as_bytes(), &[0x1f], runtime.as_bytes()])
}

/// The result of one captioning call.
#[derive(Debug, Clone)]
pub struct CaptionOutcome {
    pub caption: String,
    pub prompt_sha256: String,
    pub exchange: ChatExchange,
}

/// Send the prompts through the client port and return the trimmed caption
/// with the full exchange kept for audit.
pub fn generate_caption(
    system: &str,
    runtime: &str,
    client: &LlmClient,
) -> Result<CaptionOutcome> {
    let exchange = client.complete(system, runtime)?;
    let caption = exchange.response.trim().to_string();
    if caption.is_empty() {
        return Err(Error::EmptyInput("llm returned an empty completion".into()));
    }
    Ok(CaptionOutcome {
        caption,
        prompt_sha256: prompt_sha256(system, runtime),
        exchange,
    })
}

/// One `captions.jsonl` line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub source_id: String,
    pub caption: String,
    pub segments: Vec<ActionSegment>,
    pub prompt_sha256: String,
}

pub fn write_captions_jsonl(path: impl AsRef<Path>, records: &[CaptionRecord]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for record in records {
        writeln!(file, "{}", serde_json::to_string(record)?)?;
    }
    Ok(())
}
