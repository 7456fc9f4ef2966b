//! The whole pipeline in one run: synthetic dataset, filtering, capture,
//! training, pseudo-labels, and mock captions, with the report on stdout.
//!
//! ```sh
//! cargo run --example end_to_end
//! ```

use graycap::pipeline::{run_all, PipelineConfig};
use graycap::synth::{gen_synthetic, SyntheticSpec};
use graycap::Seed;

fn main() -> graycap::Result<()> {
    let data = "target/examples-output/e2e/dataset";
    let out = "target/examples-output/e2e/run";
    gen_synthetic(
        &SyntheticSpec {
            clips_per_class: 2,
            seed: Seed(61),
            ..SyntheticSpec::default()
        },
        data,
    )?;

    let config = PipelineConfig {
        seed: 62,
        labeled_clips_per_class: 1,
        ..PipelineConfig::default()
    };
    let report = run_all(&config, data, out)?;

    println!("classes: {}", report.classes.join(", "));
    println!(
        "filter: {} clips in, {} retained ({} segments, {} frames)",
        report.counts.clips,
        report.counts.retained_clips,
        report.counts.segments,
        report.counts.retained_frames
    );
    println!(
        "capture: {} tracks, {} crops ({} labeled / {} unlabeled for training)",
        report.counts.tracks,
        report.counts.crops,
        report.counts.labeled_crops,
        report.counts.unlabeled_crops
    );
    println!(
        "train: {} (final loss {:?})",
        report.train_mode, report.final_loss
    );
    println!(
        "labels: {} records; captions: {}",
        report.counts.records, report.counts.captions
    );
    for caption in report.captions.iter().take(3) {
        println!("\n[{}]\n  {}", caption.source_id, caption.caption);
    }
    println!("\nfull report: {out}/report.json");
    Ok(())
}
