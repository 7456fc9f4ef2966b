//! From a frame-level pseudo-label sequence to an LLM caption: top-k
//! truncation, temporal consistency corrections, run-length segments,
//! prompt construction, and a deterministic mock completion.
//!
//! ```sh
//! cargo run --example caption_sequence
//! ```

use graycap::captioner::{
    build_prompt, generate_caption, make_states, segment, temporal_filter, ConsistencyRules,
    PromptTemplates,
};
use graycap::labeler::PseudoLabelRecord;
use graycap::llm::LlmClient;

fn record(frame: usize, probs: &[f64]) -> PseudoLabelRecord {
    PseudoLabelRecord {
        source_id: None,
        frame_index: frame,
        probs: probs.to_vec(),
        top_k: vec![],
    }
}

fn main() -> graycap::Result<()> {
    let taxonomy: Vec<String> = ["running", "sleeping", "sitting"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    // Ten frames of running with one absurd sleeping reading in the middle,
    // then a stretch of sitting.
    let mut records = Vec::new();
    for i in 0..10 {
        if i == 4 {
            records.push(record(i, &[0.15, 0.8, 0.05]));
        } else {
            records.push(record(i, &[0.85, 0.1, 0.05]));
        }
    }
    for i in 10..16 {
        records.push(record(i, &[0.1, 0.05, 0.85]));
    }

    let rules = ConsistencyRules {
        incompatible: vec![("running".into(), "sleeping".into())],
        ..ConsistencyRules::default()
    };
    let states = make_states(&records, &taxonomy, 3, rules.p_min)?;
    println!("raw top-1 sequence:");
    println!(
        "  {}",
        states.iter().map(|s| s.top_k[0].0.as_str()).collect::<Vec<_>>().join(" ")
    );

    let fixed = temporal_filter(&states, &rules)?;
    println!("after temporal consistency:");
    println!(
        "  {}",
        fixed.iter().map(|s| s.top_k[0].0.as_str()).collect::<Vec<_>>().join(" ")
    );

    let segments = segment(&fixed);
    let (system, runtime) = build_prompt(&segments, &taxonomy, 10.0, &PromptTemplates::default())?;
    println!("\nruntime prompt:\n{runtime}");

    let outcome = generate_caption(&system, &runtime, &LlmClient::mock())?;
    println!("mock caption:\n  {}", outcome.caption);
    println!("prompt sha256: {}", outcome.prompt_sha256);
    Ok(())
}
