//! Masked-autoencoder pre-training on synthetic images, then a head swap
//! to a frame classifier whose pooled encoder output becomes the frame
//! feature.

use affect_core::mae::{
    extract_features, finetune, finetune_head_swap, pretrain, smoothed_reduction, synthetic_images, MaeConfig,
    MaeModel, MaeTrainConfig,
};
use affect_core::Rng;
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = MaeConfig::default();
    println!(
        "{}x{} images, patch {}, {} patches, mask ratio {}",
        cfg.image_height,
        cfg.image_width,
        cfg.patch_size,
        cfg.num_patches(),
        cfg.mask_ratio
    );
    let images = synthetic_images(64, cfg.image_height, cfg.image_width, cfg.channels, 7);
    let mut rng = Rng::seed_from_u64(7);
    let model = MaeModel::new(cfg, &mut rng)?;

    let train = MaeTrainConfig {
        steps: 50,
        batch_size: 16,
        lr: 5e-4,
        weight_decay: 0.05,
        grad_clip: Some(1.0),
        seed: 7,
    };
    let losses = pretrain(&model, &images, &train)?;
    for (i, l) in losses.iter().enumerate().step_by(10) {
        println!("step {:>2}  loss {l:.5}", i + 1);
    }
    println!("smoothed reduction {:.1}%", 100.0 * smoothed_reduction(&losses, 5));

    // toy labels: bright versus dark images
    let labels: Vec<i64> = images
        .iter()
        .map(|im| (im.to_vec().iter().sum::<f64>() / im.numel() as f64 > 0.5) as i64)
        .collect();
    let classifier = finetune_head_swap(model, 2, 32, 0.1, &mut rng);
    let ft = finetune(&classifier, &images, &labels, &MaeTrainConfig { steps: 20, lr: 1e-4, ..train })?;
    println!("fine-tune loss {:.4} -> {:.4}", ft[0], ft[ft.len() - 1]);

    let features = extract_features(&classifier, &images[..4])?;
    println!("features for 4 frames: {:?}", features.shape());
    Ok(())
}
