//! Cut a video into overlapping fixed-length windows and average the
//! per-window outputs back onto frames.

use affect_core::segmentation::{reassemble, split_features, SegmentationConfig};
use affect_core::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 23;
    // one feature per frame: its own index
    let features = Tensor::new((0..n).map(|i| i as f64).collect(), &[n, 1])?;
    let cfg = SegmentationConfig::new(8, 5)?;
    println!("window {} stride {} overlap {}", cfg.window, cfg.stride, cfg.overlap());

    let segments = split_features("clip", &features, &cfg)?;
    for s in &segments {
        println!(
            "segment {:>2}: frames {:>2}..{:<2} real {} padded {}",
            s.index,
            s.frame_range().start + 1,
            s.frame_range().end,
            s.real_len(),
            s.window() - s.real_len()
        );
    }

    // a stand-in model: output = 2·input, so reassembly must give 2·index
    let preds: Vec<_> = segments.iter().map(|s| (s.clone(), s.frames.scale(2.0))).collect();
    let merged = reassemble(n, &preds)?;
    let ok = merged.to_vec().iter().enumerate().all(|(i, &v)| v == 2.0 * i as f64);
    println!("reassembled {} frames, identity preserved: {ok}", merged.shape()[0]);
    Ok(())
}
