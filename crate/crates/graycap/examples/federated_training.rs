//! Federated training: a non-IID Dirichlet split across four clients,
//! FedAvg aggregation each round, and the per-round timing breakdown.
//!
//! ```sh
//! cargo run --example federated_training
//! ```

use graycap::fed::{dirichlet_partition, run_rounds, write_timings_csv};
use graycap::labeler::{train, train_accuracy, ContrastiveConfig};
use graycap::synth::separable_crops;
use graycap::Seed;

fn main() -> graycap::Result<()> {
    let samples = separable_crops(3, 16, Seed(31));
    let labels: Vec<usize> = samples.iter().map(|(_, l)| *l).collect();
    let seed = Seed(32);

    let partitions = dirichlet_partition(&labels, 4, 1.0, seed)?;
    println!("Dirichlet(1.0) split over 4 clients:");
    for part in &partitions {
        let mut per_class = [0usize; 3];
        for &i in &part.indices {
            per_class[labels[i]] += 1;
        }
        println!(
            "  client {}: {} samples, per-class {:?}",
            part.client_id,
            part.size(),
            per_class
        );
    }

    let config = ContrastiveConfig {
        epochs: 1,
        ..ContrastiveConfig::default()
    };
    let rounds = 12;
    let outcome = run_rounds(&samples, &partitions, 3, rounds, 1, &config, seed)?;
    let fed_acc = train_accuracy(&outcome.network, &samples)?;

    let centralized = train(
        &samples,
        &[],
        3,
        &ContrastiveConfig {
            epochs: rounds,
            ..config
        },
        seed,
    )?;
    let central_acc = train_accuracy(&centralized.network, &samples)?;
    println!("\nafter {rounds} rounds x 1 local epoch:");
    println!("  federated accuracy:   {:.1}%", 100.0 * fed_acc);
    println!("  centralized accuracy: {:.1}%", 100.0 * central_acc);

    std::fs::create_dir_all("target/examples-output")?;
    let csv = "target/examples-output/fed_timings.csv";
    write_timings_csv(csv, &outcome.timings)?;
    let last_round: Vec<_> = outcome
        .timings
        .iter()
        .filter(|t| t.round == rounds - 1)
        .collect();
    println!("\nlast round timings (simulated 4-20 Mbit/s links):");
    for t in last_round {
        println!(
            "  client {}: compute {:.1} ms, comm {:.1} ms, wait {:.1} ms",
            t.client, t.compute_ms, t.comm_ms, t.wait_ms
        );
    }
    println!("full breakdown in {csv}");
    Ok(())
}
