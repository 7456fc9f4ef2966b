//! Generate a deterministic synthetic dataset and describe its contents.
//!
//! ```sh
//! cargo run --example generate_dataset
//! ```

use graycap::synth::{gen_synthetic, load_dataset, SyntheticSpec};
use graycap::Seed;

fn main() -> graycap::Result<()> {
    let out = "target/examples-output/dataset";
    let spec = SyntheticSpec {
        clips_per_class: 3,
        seed: Seed(42),
        ..SyntheticSpec::default()
    };
    let summary = gen_synthetic(&spec, out)?;
    println!(
        "wrote {} labeled, {} noise, {} static clips under {}",
        summary.labeled_clips,
        summary.noise_clips,
        summary.static_clips,
        summary.dir.display()
    );

    let index = load_dataset(out)?;
    println!("classes: {}", index.classes.join(", "));
    for clip in index.clips.iter().take(4) {
        println!("  {:?} {} (label {:?})", clip.kind, clip.path, clip.label);
    }
    println!("  ... {} clips total", index.clips.len());
    println!("run it twice: the bytes are identical for the same seed.");
    Ok(())
}
