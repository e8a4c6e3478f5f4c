//! Video-disjoint k-fold cross-validation across all three tasks, with the
//! generator's Bayes-optimal scores as reference rows.

use affect_core::config::Config;
use affect_core::data::{assign_folds, generate_synthetic};
use affect_core::labels::Task;
use affect_core::trainer::run_folds;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = Config::desk();
    cfg.optim.epochs = 1;
    cfg.folds = 3;
    cfg.synthetic.num_videos = 6;
    cfg.synthetic.frames_per_video = 200;

    let synth = generate_synthetic(&cfg.synthetic)?;
    let assignment = assign_folds(synth.dataset.videos.len(), cfg.folds, cfg.seed)?;
    for (v, f) in synth.dataset.video_ids().iter().zip(&assignment) {
        println!("{v} -> fold {f}");
    }
    let tasks = [Task::Va, Task::Expr, Task::Au];
    let mut table = run_folds(&synth.dataset, &tasks, &cfg, &assignment)?;
    table.add_oracle(&synth, &tasks)?;
    println!("{}", table.to_text());
    Ok(())
}
