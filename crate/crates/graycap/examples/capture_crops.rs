//! From a retained segment to fixed-size crops: blob detection against a
//! median background, coherence filtering, and bilinear cropping.
//!
//! ```sh
//! cargo run --example capture_crops
//! ```

use graycap::capture::{
    best_boxes, blob_detect, coherence_filter, crop_track, median_background, CoherenceConfig,
};
use graycap::container::save_stream;
use graycap::synth::{gen_synthetic, SyntheticSpec};
use graycap::Seed;

fn main() -> graycap::Result<()> {
    let data = "target/examples-output/capture/dataset";
    gen_synthetic(
        &SyntheticSpec {
            clips_per_class: 1,
            seed: Seed(42),
            ..SyntheticSpec::default()
        },
        data,
    )?;
    let stream =
        graycap::container::load_stream(format!("{data}/clips/action_translating_000"))?;
    println!("loaded {} frames of {:?}", stream.len(), stream.dimensions());

    let background = median_background(&stream)?;
    let detections: graycap::Result<Vec<_>> = stream
        .frames()
        .iter()
        .map(|f| blob_detect(f, &background, 0.25))
        .collect();
    let detections = detections?;
    let hits = detections.iter().filter(|d| !d.is_empty()).count();
    println!("blob detector found something in {hits}/{} frames", stream.len());

    let (w, h) = stream.dimensions().unwrap();
    let config = CoherenceConfig::for_frame(w, h);
    let track = coherence_filter(&best_boxes(&detections, config.min_confidence), &config)?;
    println!(
        "coherence filter (eps {:.1} px): {} sub-track(s): {:?}",
        config.epsilon,
        track.sub_tracks.len(),
        track.sub_tracks
    );

    let crops = crop_track(&stream, &track, (32, 32))?;
    let out = "target/examples-output/capture/crops";
    save_stream(&crops, out)?;
    println!("wrote {} 32x32 crops to {out}", crops.len());
    Ok(())
}
