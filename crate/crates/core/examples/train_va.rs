//! Train the TCN + transformer model for valence/arousal on a synthetic
//! dataset and score the held-out videos.

use affect_core::config::Config;
use affect_core::data::{assign_folds, generate_synthetic};
use affect_core::labels::Task;
use affect_core::temporal::TemporalModel;
use affect_core::trainer::{evaluate, split_by_fold, train_task, TrainConfig};
use affect_core::Rng;
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = Config::desk();
    // a quick run; the full desk preset uses 20 epochs
    cfg.optim.epochs = std::env::args().nth(1).map_or(Ok(4), |a| a.parse())?;
    cfg.synthetic.num_videos = 6;
    cfg.synthetic.frames_per_video = 300;

    let synth = generate_synthetic(&cfg.synthetic)?;
    let folds = assign_folds(synth.dataset.videos.len(), 3, cfg.seed)?;
    let (train_idx, val_idx) = split_by_fold(&folds, 0);
    let train = synth.dataset.sequences(Task::Va, &train_idx)?;
    let val = synth.dataset.sequences(Task::Va, &val_idx)?;
    println!("{} training videos, {} held out", train.len(), val.len());

    let input_dim = synth.dataset.feature_dim().unwrap();
    let model = TemporalModel::new(cfg.model_config(Task::Va, input_dim), &mut Rng::seed_from_u64(cfg.seed))?;
    let tc = TrainConfig::from_config(&cfg)?;
    let outcome = train_task(Task::Va, &model, &train, &val, &tc)?;
    for e in &outcome.epochs {
        println!("epoch {:>2}  loss {:.4}  val CCC {:.4}", e.epoch, e.mean_loss, e.report.primary());
    }
    println!("best epoch {}", outcome.best_epoch);

    let (report, preds) = evaluate(&model, &val, &tc)?;
    println!("held-out {}", report.to_json());
    println!("oracle {:?}", synth.oracle_scores_for(&val_idx)?);
    println!("first prediction covers {} frames", preds[0].outputs.shape()[0]);
    Ok(())
}
