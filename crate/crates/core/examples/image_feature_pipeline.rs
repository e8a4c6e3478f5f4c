//! Render frames for a synthetic video, store them as PGM, reload them and
//! turn each frame into a feature row with an MAE encoder.

use affect_core::data::pnm::{load_images, write_pnm};
use affect_core::data::synthetic::FrameRenderer;
use affect_core::data::{generate_synthetic, SyntheticSpec};
use affect_core::mae::{extract_features, finetune_head_swap, MaeConfig, MaeModel};
use affect_core::Rng;
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = MaeConfig::default();
    let synth = generate_synthetic(&SyntheticSpec {
        num_videos: 1,
        frames_per_video: 12,
        ..SyntheticSpec::default()
    })?;
    let renderer = FrameRenderer::new(synth.spec.latent_dim, cfg.image_height, cfg.image_width, 0);
    let frames = synth.render_video(0, &renderer);

    let dir = std::env::temp_dir().join(format!("affect-frames-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    for (i, f) in frames.iter().enumerate() {
        write_pnm(&dir.join(format!("{:06}.pgm", i + 1)), f)?;
    }
    let loaded = load_images(&dir)?;
    // 8-bit quantisation bounds the round-trip error by half a grey level
    let err = frames
        .iter()
        .zip(&loaded)
        .flat_map(|(a, (_, b))| a.to_vec().into_iter().zip(b.to_vec()))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    println!("{} frames written and reloaded, max error {err:.4}", loaded.len());

    // an untrained encoder still gives a deterministic embedding per frame
    let mut rng = Rng::seed_from_u64(0);
    let classifier = finetune_head_swap(MaeModel::new(cfg, &mut rng)?, 8, 32, 0.0, &mut rng);
    let images: Vec<_> = loaded.into_iter().map(|(_, t)| t).collect();
    let features = extract_features(&classifier, &images)?;
    println!("feature matrix {:?}", features.shape());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
