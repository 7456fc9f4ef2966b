//! Train the contrastive pseudo-labeler on a linearly separable toy set and
//! inspect its predictions.
//!
//! ```sh
//! cargo run --example train_labeler
//! ```

use graycap::labeler::{predict, save_model, train, train_accuracy, ContrastiveConfig};
use graycap::synth::separable_crops;
use graycap::Seed;

fn main() -> graycap::Result<()> {
    let samples = separable_crops(3, 15, Seed(21));
    // Half the crops keep their labels, the rest act as the unlabeled pool.
    let labeled: Vec<_> = samples.iter().step_by(2).cloned().collect();
    let unlabeled: Vec<_> = samples
        .iter()
        .skip(1)
        .step_by(2)
        .map(|(f, _)| f.clone())
        .collect();

    let config = ContrastiveConfig {
        lambda: 0.5,
        epochs: 80,
        ..ContrastiveConfig::default()
    };
    println!(
        "training on {} labeled + {} unlabeled crops (lambda {}, tau {}, {} epochs)",
        labeled.len(),
        unlabeled.len(),
        config.lambda,
        config.tau,
        config.epochs
    );
    let outcome = train(&labeled, &unlabeled, 3, &config, Seed(22))?;
    println!(
        "loss: first epoch {:.4} -> last epoch {:.4}",
        outcome.epoch_losses.first().unwrap(),
        outcome.epoch_losses.last().unwrap()
    );
    println!(
        "train accuracy on all crops: {:.1}%",
        100.0 * train_accuracy(&outcome.network, &samples)?
    );

    let record = predict(&outcome.network, &samples[0].0, 0, 3)?;
    println!("sample prediction (true class {}):", samples[0].1);
    for (class, prob) in &record.top_k {
        println!("  class {class}: {prob:.3}");
    }

    std::fs::create_dir_all("target/examples-output")?;
    save_model(
        "target/examples-output/labeler.bin",
        &outcome.network,
        Seed(22),
        &config,
    )?;
    println!("saved weights to target/examples-output/labeler.bin");
    Ok(())
}
