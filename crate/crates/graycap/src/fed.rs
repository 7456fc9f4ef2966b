//! Federated training simulation.
//!
//! Clients are in-process: a non-IID split is drawn with a per-class
//! Dirichlet over clients, every round broadcasts the global weights, each
//! client runs local SGD epochs, and the server aggregates with FedAvg (the
//! dataset-size-weighted mean of client weights). Per-round compute,
//! communication, and barrier-waiting times are logged per client;
//! communication is simulated from the model size over a deterministic
//! client bandwidth in the 4-20 Mbit/s range.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::labeler::{train_epochs, ContrastiveConfig, EmbeddingNetwork};
use crate::rng::{rng_for, Seed};

/// One client's share of the dataset: indices into the sample list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientPartition {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientPartition {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

const PARTITION_RETRIES: usize = 100;

/// Split sample indices across clients with per-class Dirichlet(alpha)
/// proportions. Every client ends up with at least one sample; draws are
/// repeated (bounded) until that holds.
pub fn dirichlet_partition(
    labels: &[usize],
    num_clients: usize,
    alpha: f64,
    seed: Seed,
) -> Result<Vec<ClientPartition>> {
    if num_clients == 0 {
        return Err(Error::InvalidConfig("num_clients must be >= 1".into()));
    }
    if alpha <= 0.0 {
        return Err(Error::InvalidConfig(format!("alpha must be > 0, got {alpha}")));
    }
    if labels.len() < num_clients {
        return Err(Error::InvalidConfig(format!(
            "{} samples cannot cover {num_clients} clients",
            labels.len()
        )));
    }
    if num_clients == 1 {
        return Ok(vec![ClientPartition {
            client_id: 0,
            indices: (0..labels.len()).collect(),
        }]);
    }

    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (idx, &label) in labels.iter().enumerate() {
        by_class[label].push(idx);
    }

    let mut rng = rng_for(seed, "dirichlet-partition");
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidConfig(format!("bad alpha {alpha}: {e}")))?;

    for _attempt in 0..PARTITION_RETRIES {
        let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
        for class_indices in &by_class {
            if class_indices.is_empty() {
                continue;
            }
            // Dirichlet proportions via normalized Gamma draws.
            let mut draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            if total <= 0.0 {
                continue;
            }
            for d in draws.iter_mut() {
                *d /= total;
            }
            // Largest-remainder rounding of proportions to counts.
            let n = class_indices.len();
            let ideal: Vec<f64> = draws.iter().map(|p| p * n as f64).collect();
            let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
            let mut leftover = n - counts.iter().sum::<usize>();
            let mut order: Vec<usize> = (0..num_clients).collect();
            order.sort_by(|&a, &b| {
                let fa = ideal[a] - ideal[a].floor();
                let fb = ideal[b] - ideal[b].floor();
                fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
            });
            for &client in order.iter().cycle() {
                if leftover == 0 {
                    break;
                }
                counts[client] += 1;
                leftover -= 1;
            }
            // Hand out a shuffled copy of the class.
            let mut shuffled = class_indices.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            let mut cursor = 0usize;
            for (client, &count) in counts.iter().enumerate() {
                assignments[client].extend_from_slice(&shuffled[cursor..cursor + count]);
                cursor += count;
            }
        }
        if assignments.iter().all(|a| !a.is_empty()) {
            let mut partitions = Vec::with_capacity(num_clients);
            for (client_id, mut indices) in assignments.into_iter().enumerate() {
                indices.sort_unstable();
                partitions.push(ClientPartition { client_id, indices });
            }
            return Ok(partitions);
        }
    }
    Err(Error::InvalidConfig(format!(
        "could not give every one of {num_clients} clients a sample in {PARTITION_RETRIES} draws"
    )))
}

/// Dataset-size-weighted mean of client weight vectors.
///
/// Computed as `w_0 + sum_i coef_i * (w_i - w_0)`, which returns identical
/// inputs exactly and keeps the result inside the per-element convex hull up
/// to rounding. Accumulation order is fixed by client index.
pub fn fedavg(client_weights: &[Vec<f64>], sizes: &[usize]) -> Result<Vec<f64>> {
    if client_weights.is_empty() {
        return Err(Error::EmptyInput("fedavg needs at least one client".into()));
    }
    if client_weights.len() != sizes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weight vectors vs {} sizes",
            client_weights.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig("client dataset sizes must be > 0".into()));
    }
    let dim = client_weights[0].len();
    if let Some(bad) = client_weights.iter().find(|w| w.len() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "weight vectors differ in length: {} vs {dim}",
            bad.len()
        )));
    }
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    let mut out = client_weights[0].clone();
    for (client, weights) in client_weights.iter().enumerate().skip(1) {
        let coef = sizes[client] as f64 / total;
        for (o, (&w, &w0)) in out.iter_mut().zip(weights.iter().zip(&client_weights[0])) {
            *o += coef * (w - w0);
        }
    }
    // The first client's deviation from itself is zero, so only the shared
    // baseline coefficient remains implicit; nothing else to add.
    Ok(out)
}

/// Per-round, per-client timing breakdown (all milliseconds).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundTiming {
    pub round: usize,
    pub client: usize,
    pub compute_ms: f64,
    pub comm_ms: f64,
    pub wait_ms: f64,
}

/// Write timings as CSV with a `round,client,compute_ms,comm_ms,wait_ms`
/// header.
pub fn write_timings_csv(path: impl AsRef<Path>, timings: &[RoundTiming]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "round,client,compute_ms,comm_ms,wait_ms")?;
    for t in timings {
        writeln!(
            file,
            "{},{},{:.3},{:.3},{:.3}",
            t.round, t.client, t.compute_ms, t.comm_ms, t.wait_ms
        )?;
    }
    Ok(())
}

pub struct FedOutcome {
    pub network: EmbeddingNetwork,
    pub timings: Vec<RoundTiming>,
}

/// Simulated per-client downlink+uplink bandwidth in Mbit/s, spread evenly
/// over the 4-20 range observed across heterogeneous links.
fn client_bandwidth_mbps(client: usize, num_clients: usize) -> f64 {
    if num_clients <= 1 {
        20.0
    } else {
        4.0 + 16.0 * client as f64 / (num_clients - 1) as f64
    }
}

/// Run federated rounds over a labeled sample pool.
///
/// Each round: broadcast the global weights, run `local_epochs` of local SGD
/// per client on its partition, aggregate with [`fedavg`]. Local epochs
/// advance one shared global epoch schedule, so a single-client run is
/// bit-identical to centralized training with `rounds * local_epochs`
/// epochs.
pub fn run_rounds(
    samples: &[(Frame, usize)],
    partitions: &[ClientPartition],
    num_classes: usize,
    rounds: usize,
    local_epochs: usize,
    config: &ContrastiveConfig,
    seed: Seed,
) -> Result<FedOutcome> {
    config.validate()?;
    if partitions.is_empty() {
        return Err(Error::EmptyInput("no client partitions".into()));
    }
    for partition in partitions {
        if partition.indices.is_empty() {
            return Err(Error::EmptyInput(format!(
                "client {} has no samples",
                partition.client_id
            )));
        }
        if let Some(&bad) = partition.indices.iter().find(|&&i| i >= samples.len()) {
            return Err(Error::InvalidConfig(format!(
                "client {} references sample {bad} beyond {}",
                partition.client_id,
                samples.len()
            )));
        }
    }

    let client_data: Vec<Vec<(Frame, usize)>> = partitions
        .iter()
        .map(|p| p.indices.iter().map(|&i| samples[i].clone()).collect())
        .collect();
    let sizes: Vec<usize> = partitions.iter().map(|p| p.size()).collect();

    let mut global = EmbeddingNetwork::init(num_classes, &mut rng_for(seed, "labeler-init"));
    let param_bytes = (global.param_count() * 8) as f64;

    let mut timings = Vec::with_capacity(rounds * partitions.len());
    for round in 0..rounds {
        let mut local_weights = Vec::with_capacity(partitions.len());
        let mut busy_ms = Vec::with_capacity(partitions.len());
        for (client, data) in client_data.iter().enumerate() {
            let mut local = global.clone();
            let started = Instant::now();
            train_epochs(
                &mut local,
                data,
                &[],
                config,
                round * local_epochs,
                local_epochs,
                seed,
            )
            .map_err(|e| {
                Error::Diverged(format!("client {client} diverged in round {round}: {e}"))
            })?;
            let compute_ms = started.elapsed().as_secs_f64() * 1e3;
            if !local.all_finite() {
                return Err(Error::Diverged(format!(
                    "client {client} produced non-finite weights in round {round}"
                )));
            }
            // Download + upload of the full parameter vector.
            let mbps = client_bandwidth_mbps(client, partitions.len());
            let comm_ms = 2.0 * param_bytes * 8.0 / (mbps * 1e6) * 1e3;
            busy_ms.push(compute_ms + comm_ms);
            timings.push(RoundTiming {
                round,
                client,
                compute_ms,
                comm_ms,
                wait_ms: 0.0,
            });
            local_weights.push(local.params_flat());
        }
        // The barrier: everyone waits for the slowest client.
        let slowest = busy_ms.iter().copied().fold(0.0_f64, f64::max);
        let base = timings.len() - partitions.len();
        for (client, &busy) in busy_ms.iter().enumerate() {
            timings[base + client].wait_ms = slowest - busy;
        }

        let aggregated = fedavg(&local_weights, &sizes)?;
        global = EmbeddingNetwork::from_flat(num_classes, &aggregated)?;
    }

    Ok(FedOutcome {
        network: global,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeler::train;
    use crate::synth::separable_crops;
    use proptest::prelude::*;

    #[test]
    fn single_client_gets_everything() {
        let labels = vec![0, 1, 2, 0, 1, 2];
        let parts = dirichlet_partition(&labels, 1, 1.0, Seed(60)).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].indices, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn huge_alpha_approaches_uniform_split() {
        // Law of large numbers over 20 seeds: with alpha ~ 1e6 every client's
        // share of every class sits within 5 points of uniform.
        let per_class = 100usize;
        let labels: Vec<usize> = (0..3).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
        let clients = 4usize;
        for seed in 0..20u64 {
            let parts = dirichlet_partition(&labels, clients, 1e6, Seed(seed)).unwrap();
            for part in &parts {
                for class in 0..3usize {
                    let count = part
                        .indices
                        .iter()
                        .filter(|&&i| labels[i] == class)
                        .count();
                    let proportion = count as f64 / per_class as f64;
                    assert!(
                        (proportion - 1.0 / clients as f64).abs() <= 0.05,
                        "seed {seed} client {} class {class}: {proportion}",
                        part.client_id
                    );
                }
            }
        }
    }

    #[test]
    fn fewer_samples_than_clients_is_error() {
        assert!(dirichlet_partition(&[0, 1], 3, 1.0, Seed(61)).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_and_covering(
            seed in 0u64..500,
            clients in 2usize..6,
            per_class in 3usize..12,
        ) {
            let labels: Vec<usize> =
                (0..3).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
            prop_assume!(labels.len() >= clients);
            let parts = dirichlet_partition(&labels, clients, 1.0, Seed(seed)).unwrap();
            let mut seen = vec![false; labels.len()];
            for part in &parts {
                prop_assert!(!part.indices.is_empty());
                for &i in &part.indices {
                    prop_assert!(!seen[i], "index {} assigned twice", i);
                    seen[i] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn fedavg_weighted_mean_examples() {
        // sizes {1,3}, scalar weights {0,4} -> (1*0 + 3*4)/4 = 3.
        let avg = fedavg(&[vec![0.0], vec![4.0]], &[1, 3]).unwrap();
        assert_eq!(avg, vec![3.0]);
        // sizes {2,2}, weights {1,3} -> midpoint 2.
        let avg = fedavg(&[vec![1.0], vec![3.0]], &[2, 2]).unwrap();
        assert_eq!(avg, vec![2.0]);
    }

    #[test]
    fn fedavg_identical_inputs_is_exact() {
        let w = vec![0.123456789, -4.5e-3, 1e9, 0.0];
        let avg = fedavg(&[w.clone(), w.clone(), w.clone()], &[3, 5, 7]).unwrap();
        assert_eq!(avg, w);
    }

    #[test]
    fn fedavg_rejects_bad_inputs() {
        assert!(fedavg(&[], &[]).is_err());
        assert!(fedavg(&[vec![1.0], vec![1.0, 2.0]], &[1, 1]).is_err());
        assert!(fedavg(&[vec![1.0]], &[0]).is_err());
        assert!(fedavg(&[vec![1.0]], &[1, 2]).is_err());
    }

    #[test]
    fn fedavg_affine_equivariance_and_hull() {
        use rand::Rng;
        let mut rng = rng_for(Seed(62), "fedavg-props");
        for _ in 0..200 {
            let clients = rng.random_range(2..6usize);
            let dim = rng.random_range(1..20usize);
            let weights: Vec<Vec<f64>> = (0..clients)
                .map(|_| (0..dim).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect())
                .collect();
            let sizes: Vec<usize> = (0..clients).map(|_| rng.random_range(1..50usize)).collect();
            let avg = fedavg(&weights, &sizes).unwrap();

            // Convex hull elementwise (with rounding slack).
            for k in 0..dim {
                let lo = weights.iter().map(|w| w[k]).fold(f64::INFINITY, f64::min);
                let hi = weights.iter().map(|w| w[k]).fold(f64::NEG_INFINITY, f64::max);
                let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
                assert!(avg[k] >= lo - slack && avg[k] <= hi + slack);
            }

            // fedavg(a*w + b) == a*fedavg(w) + b.
            let (a, b) = (rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0);
            let mapped: Vec<Vec<f64>> = weights
                .iter()
                .map(|w| w.iter().map(|&x| a * x + b).collect())
                .collect();
            let avg_mapped = fedavg(&mapped, &sizes).unwrap();
            for k in 0..dim {
                let expect = a * avg[k] + b;
                assert!((avg_mapped[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }

            // Permutation invariance at 1e-12.
            let mut perm: Vec<usize> = (0..clients).collect();
            perm.reverse();
            let pw: Vec<Vec<f64>> = perm.iter().map(|&i| weights[i].clone()).collect();
            let ps: Vec<usize> = perm.iter().map(|&i| sizes[i]).collect();
            let avg_perm = fedavg(&pw, &ps).unwrap();
            for k in 0..dim {
                assert!((avg_perm[k] - avg[k]).abs() <= 1e-12 * (1.0 + avg[k].abs()));
            }
        }
    }

    fn tiny_config(epochs: usize) -> ContrastiveConfig {
        ContrastiveConfig {
            epochs,
            batch_size: 8,
            ..ContrastiveConfig::default()
        }
    }

    #[test]
    fn one_client_equals_centralized() {
        let samples = separable_crops(3, 4, Seed(63));
        let seed = Seed(64);
        let rounds = 3usize;
        let local_epochs = 2usize;

        let centralized = train(
            &samples,
            &[],
            3,
            &tiny_config(rounds * local_epochs),
            seed,
        )
        .unwrap();

        let partitions = dirichlet_partition(
            &samples.iter().map(|(_, l)| *l).collect::<Vec<_>>(),
            1,
            1.0,
            seed,
        )
        .unwrap();
        let fed = run_rounds(
            &samples,
            &partitions,
            3,
            rounds,
            local_epochs,
            &tiny_config(local_epochs),
            seed,
        )
        .unwrap();

        assert_eq!(
            fed.network.params_flat(),
            centralized.network.params_flat()
        );
    }

    #[test]
    fn identical_clients_leave_the_mean_fixed() {
        let samples = separable_crops(3, 2, Seed(65));
        // Four clients, each holding a full copy of the same data.
        let copies = 4usize;
        let mut all = Vec::new();
        let mut partitions = Vec::new();
        for c in 0..copies {
            let base = c * samples.len();
            partitions.push(ClientPartition {
                client_id: c,
                indices: (base..base + samples.len()).collect(),
            });
            all.extend(samples.iter().cloned());
        }
        let fed = run_rounds(&all, &partitions, 3, 1, 1, &tiny_config(1), Seed(66)).unwrap();

        // Identical data + identical epoch randomness: every client computed
        // the same weights, and the mean of equals is exact.
        let mut single = EmbeddingNetwork::init(3, &mut rng_for(Seed(66), "labeler-init"));
        train_epochs(&mut single, &samples, &[], &tiny_config(1), 0, 1, Seed(66)).unwrap();
        assert_eq!(fed.network.params_flat(), single.params_flat());
    }

    #[test]
    fn timings_csv_has_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("timings.csv");
        let timings = vec![
            RoundTiming {
                round: 0,
                client: 0,
                compute_ms: 1.5,
                comm_ms: 2.0,
                wait_ms: 0.0,
            },
            RoundTiming {
                round: 0,
                client: 1,
                compute_ms: 1.0,
                comm_ms: 1.0,
                wait_ms: 1.5,
            },
        ];
        write_timings_csv(&path, &timings).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "round,client,compute_ms,comm_ms,wait_ms");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,0,"));
    }
}
