//! Low-rank adapter arithmetic: init, merge, the factored forward path, and
//! the trainable-parameter budget.
//!
//! ```sh
//! cargo run --example lora_adapters
//! ```

use graycap::lora::{
    forward_counted, init_adapter, merge, param_budget, save_adapter, WeightMatrix,
};
use graycap::rng::rng_for;
use graycap::Seed;
use rand::Rng;

fn main() -> graycap::Result<()> {
    let d = 64usize;
    let rank = 8usize;
    let mut rng = rng_for(Seed(51), "lora-example");
    let base = WeightMatrix::new(
        d,
        d,
        (0..d * d).map(|_| rng.random::<f64>() * 0.2 - 0.1).collect(),
    )?;

    let mut adapter = init_adapter(d, d, rank, Seed(52))?;
    println!("fresh adapter: A is {d}x{rank} gaussian, B is {rank}x{d} zeros");
    let merged = merge(&base, &adapter)?;
    assert_eq!(merged, base);
    println!("merging a fresh adapter leaves the base untouched (B = 0)");

    // Pretend training nudged B.
    adapter.b = WeightMatrix::new(
        rank,
        d,
        (0..rank * d).map(|_| rng.random::<f64>() * 0.1).collect(),
    )?;
    let merged = merge(&base, &adapter)?;
    let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let (y_factored, flops) = forward_counted(&base, &adapter, &x)?;
    let y_merged = merged.matvec(&x)?;
    let max_gap = y_factored
        .iter()
        .zip(&y_merged)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("factored forward vs merged matvec: max gap {max_gap:.2e}");
    println!(
        "factored forward cost: {flops} multiplies (dense d^2 = {}, plus 2dr = {})",
        d * d,
        2 * d * rank
    );

    let budget = param_budget(4096, 8);
    println!(
        "budget at d=4096, r=8: {} adapter params vs {} full ({:.4}% trainable)",
        budget.adapter_params,
        budget.full_params,
        budget.ratio * 100.0
    );

    std::fs::create_dir_all("target/examples-output")?;
    save_adapter("target/examples-output/adapter.bin", &adapter, Seed(52))?;
    println!("adapter written to target/examples-output/adapter.bin");
    Ok(())
}
