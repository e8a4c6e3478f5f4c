mod common;

use affect_core::trainer::optim::{lr_at, AdamW, OptimConfig, ScheduleState};
use affect_core::{Rng, Tensor};
use common::{randn, AdamReference};
use rand::SeedableRng;

#[test]
fn adamw_without_decay_is_adam() {
    let cfg = OptimConfig {
        weight_decay: 0.0,
        ..OptimConfig::default()
    };
    let mut rng = Rng::seed_from_u64(11);
    let p = randn(&mut rng, &[4, 5]);
    let params = vec![("p".to_string(), p.clone())];
    let mut opt = AdamW::new(&cfg);
    let mut reference = AdamReference::new(20);
    let mut shadow = p.to_vec();
    for step in 0..50 {
        let g = randn(&mut rng, &[4, 5]).to_vec();
        p.zero_grad();
        // loss = Σ g⊙p has gradient g
        p.mul(&Tensor::new(g.clone(), &[4, 5]).unwrap()).unwrap().sum().backward().unwrap();
        let lr = 1e-2 / (1.0 + step as f64);
        opt.step(&params, lr).unwrap();
        reference.step(&mut shadow, &g, lr, cfg.beta1, cfg.beta2, cfg.eps);
        for (a, b) in p.to_vec().iter().zip(&shadow) {
            assert!((a - b).abs() < 1e-12, "step {step}: {a} vs {b}");
        }
    }
}

#[test]
fn schedule_hits_the_closed_form_points() {
    let s = ScheduleState::for_epochs(10, 5);
    let at = |step| lr_at(&ScheduleState { step, ..s }, 3e-5);
    assert_eq!(at(s.warmup_steps), 3e-5);
    assert_eq!(at(s.total_steps), 0.0);
    let mid = s.warmup_steps + (s.total_steps - s.warmup_steps) / 2;
    assert!((at(mid) - 1.5e-5).abs() < 1e-20);
    assert_eq!(at(0), 0.0);
    assert!((at(5) - 1.5e-5).abs() < 1e-20);
}

#[test]
fn first_step_moves_each_weight_by_lr() {
    let cfg = OptimConfig {
        weight_decay: 0.0,
        ..OptimConfig::default()
    };
    let p = Tensor::param(vec![1.0, -2.0, 0.5], &[3]).unwrap();
    p.mul(&Tensor::new(vec![0.3, -4.0, 1e-3], &[3]).unwrap()).unwrap().sum().backward().unwrap();
    let mut opt = AdamW::new(&cfg);
    opt.step(&[("p".into(), p.clone())], 0.1).unwrap();
    let got = p.to_vec();
    for (g, (before, want_sign)) in got.iter().zip([(1.0, 1.0), (-2.0, -1.0), (0.5, 1.0)]) {
        let delta = g - before;
        // |Δ| = lr·|g|/(|g|+eps)
        assert!((delta + 0.1 * want_sign).abs() < 1e-5 * 0.1 + 1e-6, "{delta}");
    }
}
