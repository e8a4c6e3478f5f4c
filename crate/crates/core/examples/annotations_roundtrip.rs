//! Write a dataset root to disk, read it back, and show how malformed
//! annotation lines are reported.

use std::path::Path;

use affect_core::data::annotations::parse_annotation;
use affect_core::data::{generate_synthetic, read_folds, write_folds, assign_folds, Dataset, SyntheticSpec};
use affect_core::labels::Task;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join(format!("affect-roundtrip-{}", std::process::id()));
    let synth = generate_synthetic(&SyntheticSpec {
        num_videos: 3,
        frames_per_video: 50,
        ..SyntheticSpec::default()
    })?;
    synth.dataset.save(&root)?;
    let ids = synth.dataset.video_ids();
    write_folds(&root.join("folds.txt"), &ids, &assign_folds(ids.len(), 3, 0)?)?;

    let back = Dataset::load(&root)?;
    for (a, b) in synth.dataset.videos.iter().zip(&back.videos) {
        let same = Task::ALL.iter().all(|&t| a.labels(t) == b.labels(t));
        // features are stored as f32
        let drift = a
            .features
            .to_vec()
            .iter()
            .zip(b.features.to_vec())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        println!("{}: {} frames, labels equal {same}, feature drift {drift:.1e}", b.video_id, b.num_frames());
    }
    println!("folds {:?}", read_folds(&root.join("folds.txt"))?);

    let text = "valence,arousal\n0.1,0.2\n-5,-5\n0.3\n";
    match parse_annotation(text, Task::Va, "bad", Path::new("bad.txt")) {
        Ok(_) => println!("unexpectedly parsed"),
        Err(e) => println!("rejected: {e}"),
    }
    std::fs::remove_dir_all(&root)?;
    Ok(())
}
