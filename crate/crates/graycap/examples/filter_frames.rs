//! Window-based sensitivity filtering on three kinds of streams: sustained
//! motion, a single noise spike, and a fully static scene. Only the first
//! should survive.
//!
//! ```sh
//! cargo run --example filter_frames
//! ```

use graycap::filter::{filter_stream, FilterConfig};
use graycap::synth::{filter_benchmark, BenchKind};
use graycap::Seed;

fn main() -> graycap::Result<()> {
    let config = FilterConfig::default();
    println!(
        "window {} | sigma {} | min significant diffs {} | activity floor {}",
        config.window_size, config.sigma, config.min_significant, config.activity_floor
    );

    for (kind, stream) in filter_benchmark(1, 1, 1, config.window_size, Seed(3)) {
        let outcome = filter_stream(&stream, &config)?;
        let window = &outcome.windows[0];
        println!(
            "\n{kind:?} stream ({} frames):",
            stream.len()
        );
        println!(
            "  first window: mean diff {:.4}, d_max {:.4}, significant diffs {}",
            window.mean_diff, window.d_max, window.decision_sum
        );
        match outcome.segments.as_slice() {
            [] => println!("  -> dropped"),
            segments => {
                for seg in segments {
                    println!("  -> retained frames [{}, {})", seg.start, seg.end);
                }
            }
        }
        let expectation = matches!(kind, BenchKind::Motion);
        assert_eq!(!outcome.segments.is_empty(), expectation);
    }
    Ok(())
}
