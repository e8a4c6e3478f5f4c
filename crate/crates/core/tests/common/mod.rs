//! Shared checks for the integration tests and the acceptance runner. Each
//! check returns its measured worst case so callers can assert or report.
#![allow(dead_code)]

use affect_core::gradcheck::{check_gradients, DEFAULT_STEP};
use affect_core::labels::Task;
use affect_core::nn::{Embedding, LayerNorm, Linear, Module, MultiHeadAttention};
use affect_core::objectives::{au_loss, ccc, ccc_tensor, expr_loss, macro_f1, va_loss};
use affect_core::segmentation::{reassemble, split, FrameSequence, SegmentationConfig};
use affect_core::temporal::{ModelConfig, TemporalModel};
use affect_core::labels::TaskLabels;
use affect_core::{Rng, Tensor};
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

pub const GRAD_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-8;
pub const SEEDS: u64 = 20;

pub fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::param(data, shape).unwrap()
}

/// Strictly positive entries, for `log` and `div`.
fn rand_pos(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    Tensor::param(data, shape).unwrap()
}

type Forward = Box<dyn Fn(&[Tensor]) -> affect_core::tensor::Result<Tensor>>;

/// Every primitive as `(name, inputs, scalar-valued forward)`. A random
/// weighting of the output makes every element's gradient distinct.
fn primitive_cases(rng: &mut Rng) -> Vec<(&'static str, Vec<Tensor>, Forward)> {
    let w = |rng: &mut Rng, shape: &[usize]| randn(rng, shape).detach();
    let mut cases: Vec<(&'static str, Vec<Tensor>, Forward)> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($input:expr),*], $out:expr, |$x:ident| $body:expr) => {{
            let weights = w(rng, &$out);
            let f: Forward = Box::new(move |$x: &[Tensor]| ($body)?.mul(&weights).map(|t| t.sum()));
            cases.push(($name, vec![$($input),*], f));
        }};
    }
    case!("add", [randn(rng, &[3, 4]), randn(rng, &[3, 4])], [3, 4], |x| x[0].add(&x[1]));
    case!("add_broadcast", [randn(rng, &[3, 4]), randn(rng, &[4])], [3, 4], |x| x[0].add(&x[1]));
    case!("sub", [randn(rng, &[3, 4]), randn(rng, &[3, 4])], [3, 4], |x| x[0].sub(&x[1]));
    case!("mul", [randn(rng, &[3, 4]), randn(rng, &[3, 4])], [3, 4], |x| x[0].mul(&x[1]));
    case!("div", [randn(rng, &[3, 4]), rand_pos(rng, &[3, 4])], [3, 4], |x| x[0].div(&x[1]));
    case!("scale_shift", [randn(rng, &[5])], [5], |x| Ok::<_, affect_core::TensorError>(x[0].scale(-1.5).add_scalar(0.3)));
    case!("square", [randn(rng, &[5])], [5], |x| Ok::<_, affect_core::TensorError>(x[0].square()));
    case!("exp", [randn(rng, &[5])], [5], |x| Ok::<_, affect_core::TensorError>(x[0].exp()));
    case!("log", [rand_pos(rng, &[5])], [5], |x| Ok::<_, affect_core::TensorError>(x[0].log()));
    case!("tanh", [randn(rng, &[5])], [5], |x| Ok::<_, affect_core::TensorError>(x[0].tanh()));
    case!("sigmoid", [randn(rng, &[5])], [5], |x| Ok::<_, affect_core::TensorError>(x[0].sigmoid()));
    case!("relu", [randn(rng, &[6])], [6], |x| Ok::<_, affect_core::TensorError>(x[0].relu()));
    case!("gelu", [randn(rng, &[6])], [6], |x| Ok::<_, affect_core::TensorError>(x[0].gelu()));
    case!("matmul", [randn(rng, &[3, 4]), randn(rng, &[4, 2])], [3, 2], |x| x[0].matmul(&x[1]));
    case!("transpose", [randn(rng, &[3, 4])], [4, 3], |x| x[0].t());
    case!("reshape", [randn(rng, &[3, 4])], [2, 6], |x| x[0].reshape(&[2, 6]));
    case!("sum", [randn(rng, &[3, 4])], [1], |x| x[0].sum().reshape(&[1]));
    case!("mean", [randn(rng, &[3, 4])], [1], |x| x[0].mean().reshape(&[1]));
    case!("sum_axis0", [randn(rng, &[3, 4])], [4], |x| x[0].sum_axis(0));
    case!("mean_axis1", [randn(rng, &[3, 4])], [3], |x| x[0].mean_axis(1));
    case!("softmax", [randn(rng, &[3, 5])], [3, 5], |x| x[0].softmax(1));
    case!("log_softmax", [randn(rng, &[3, 5])], [3, 5], |x| x[0].log_softmax(1));
    case!("layer_norm", [randn(rng, &[3, 5]), randn(rng, &[5]), randn(rng, &[5])], [3, 5], |x| {
        x[0].layer_norm(&x[1], &x[2], 1e-5)
    });
    case!("conv1d_dilated", [randn(rng, &[2, 9]), randn(rng, &[3, 2, 3]), randn(rng, &[3])], [3, 9], |x| {
        x[0].conv1d_dilated(&x[1], Some(&x[2]), 2)
    });
    case!("concat", [randn(rng, &[2, 3]), randn(rng, &[2, 2])], [2, 5], |x| Tensor::concat(&x[..2], 1));
    case!("narrow", [randn(rng, &[4, 3])], [2, 3], |x| x[0].narrow(0, 1, 2));
    case!("gather_rows", [randn(rng, &[4, 3])], [5, 3], |x| x[0].gather_rows(&[3, 0, 3, 1, 0]));
    let targets: Vec<f64> = (0..6).map(|_| rng.random_range(0..2) as f64).collect();
    case!("bce_with_logits", [randn(rng, &[2, 3])], [2, 3], |x| x[0].bce_with_logits(&targets));
    let drop_seed = rng.random::<u64>();
    case!("dropout", [randn(rng, &[4, 4])], [4, 4], |x| {
        // a fresh generator per call keeps the mask fixed across evaluations
        x[0].dropout(0.3, Some(&mut Rng::seed_from_u64(drop_seed)))
    });
    case!("reused_input", [randn(rng, &[4])], [4], |x| x[0].mul(&x[0].tanh())?.add(&x[0]));

    let lin = Linear::new(4, 3, rng);
    let (lw, lb) = (lin.weight.clone(), lin.bias.clone());
    case!("linear", [randn(rng, &[2, 4]), lw, lb], [2, 3], |x| lin.forward(&x[0]));
    let emb = Embedding::new(5, 3, rng);
    let table = emb.table.clone();
    case!("embedding", [table], [4, 3], |_x| emb.forward(&[4, 1, 1, 0]));
    let mut ln = LayerNorm::new(4);
    ln.gain = randn(rng, &[4]);
    ln.bias = randn(rng, &[4]);
    let (g, b) = (ln.gain.clone(), ln.bias.clone());
    case!("layer_norm_module", [randn(rng, &[3, 4]), g, b], [3, 4], |x| ln.forward(&x[0]));
    let attn = MultiHeadAttention::new(4, 2, rng).unwrap();
    let mut inputs = vec![randn(rng, &[5, 4])];
    inputs.extend(attn.parameters());
    let weights = w(rng, &[5, 4]);
    let f: Forward = Box::new(move |x: &[Tensor]| {
        attn.forward(&x[0], Some(&[true, true, true, false, true]))?
            .mul(&weights)
            .map(|t| t.sum())
    });
    cases.push(("attention", inputs, f));
    cases
}

/// Worst relative gradient error per primitive for one seed.
pub fn primitive_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::seed_from_u64(seed);
    primitive_cases(&mut rng)
        .into_iter()
        .map(|(name, inputs, f)| {
            let report = check_gradients(&inputs, f, DEFAULT_STEP).unwrap();
            (name, report.max_rel_error)
        })
        .collect()
}

/// Worst error over all seeds, per primitive.
pub fn primitive_worst(seeds: u64) -> Vec<(&'static str, f64)> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for seed in 0..seeds {
        for (i, (name, err)) in primitive_errors(seed).into_iter().enumerate() {
            if worst.len() <= i {
                worst.push((name, err));
            } else if err > worst[i].1 || err.is_nan() {
                worst[i].1 = err;
            }
        }
    }
    worst
}

/// A 6-frame, 8-dimensional toy model with every dropout disabled.
pub fn toy_model(task: Task, seed: u64) -> TemporalModel {
    let mut cfg = ModelConfig::desk(task, 8, 8);
    cfg.encoder.depth = 2;
    cfg.encoder.heads = 2;
    cfg.encoder.ffn_dim = 16;
    cfg.encoder.dropout = 0.0;
    cfg.tcn.dropout = 0.0;
    cfg.head_hidden = 8;
    cfg.head_dropout = 0.0;
    TemporalModel::new(cfg, &mut Rng::seed_from_u64(seed)).unwrap()
}

/// Gradient error of features → TCN → encoder → head → task loss, with
/// respect to the features and every parameter.
pub fn pipeline_error(task: Task, seed: u64) -> f64 {
    let model = toy_model(task, seed);
    let mut rng = Rng::seed_from_u64(seed ^ 0xfeed);
    let frames = 6;
    let features = randn(&mut rng, &[frames, 8]);
    let pad = vec![true, true, true, true, true, false];
    let mask = pad.clone();
    let va: Vec<[f64; 2]> = (0..frames).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let ids: Vec<i64> = (0..frames).map(|_| rng.random_range(0..8)).collect();
    let au: Vec<f64> = (0..frames * 12).map(|_| rng.random_range(0..2) as f64).collect();
    let au_mask: Vec<bool> = mask.iter().flat_map(|&m| [m; 12]).collect();
    let mut inputs = vec![features];
    inputs.extend(model.parameters());
    let f = |x: &[Tensor]| -> affect_core::tensor::Result<Tensor> {
        let out = model.forward(&x[0], &pad, None).map_err(|e| affect_core::TensorError::Unsupported(e.to_string()))?;
        let loss = match task {
            Task::Va => va_loss(&out, &va, &mask),
            Task::Expr => expr_loss(&out, &ids, &mask),
            Task::Au => au_loss(&out, &au, &au_mask),
        };
        loss.map_err(|e| affect_core::TensorError::Unsupported(e.to_string()))
    };
    check_gradients(&inputs, f, DEFAULT_STEP).unwrap().max_rel_error
}

/// conv → attention → CCC, the smallest composite touching all three.
pub fn conv_attention_ccc_error(seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let attn = MultiHeadAttention::new(4, 2, &mut rng).unwrap();
    let x = randn(&mut rng, &[3, 7]);
    let w = randn(&mut rng, &[4, 3, 3]);
    let target: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut inputs = vec![x, w];
    inputs.extend(attn.parameters());
    let f = |x: &[Tensor]| -> affect_core::tensor::Result<Tensor> {
        let g = x[0].conv1d_dilated(&x[1], None, 1)?.t()?;
        let h = attn.forward(&g, None)?;
        let col = h.narrow(1, 0, 1)?;
        ccc_tensor(&col, &target).map_err(|e| affect_core::TensorError::Unsupported(e.to_string()))
    };
    check_gradients(&inputs, f, DEFAULT_STEP).unwrap().max_rel_error
}

// ---- direct-formula oracles ----

pub fn ccc_brute(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    2.0 * (sxy / n) / (sxx / n + syy / n + (mx - my) * (mx - my))
}

pub fn expr_loss_brute(logits: &[f64], classes: usize, ids: &[i64], mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut n = 0.0;
    for (i, row) in logits.chunks(classes).enumerate() {
        if !mask[i] || ids[i] < 0 {
            continue;
        }
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        let p = row[ids[i] as usize].exp() / z;
        total -= p.ln();
        n += 1.0;
    }
    total / n
}

pub fn au_loss_brute(logits: &[f64], targets: &[f64], mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut n = 0.0;
    for i in 0..logits.len() {
        if !mask[i] {
            continue;
        }
        let s = 1.0 / (1.0 + (-logits[i]).exp());
        total -= targets[i] * s.ln() + (1.0 - targets[i]) * (1.0 - s).ln();
        n += 1.0;
    }
    total / n
}

pub fn macro_f1_brute(pred: &[usize], truth: &[usize], classes: usize) -> f64 {
    let mut sum = 0.0;
    for c in 0..classes {
        let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t == c).count() as f64;
        let pp = pred.iter().filter(|&&p| p == c).count() as f64;
        let ap = truth.iter().filter(|&&t| t == c).count() as f64;
        let precision = if pp > 0.0 { tp / pp } else { 0.0 };
        let recall = if ap > 0.0 { tp / ap } else { 0.0 };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    sum / classes as f64
}

/// Largest deviation between each metric and its oracle over `batches`
/// random batches: `(ccc, expr_loss, au_loss, macro_f1)`.
pub fn oracle_deviation(batches: u64) -> [f64; 4] {
    let mut worst = [0.0f64; 4];
    for seed in 0..batches {
        let mut rng = Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(2..40);
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst[0] = worst[0].max((ccc(&x, &y).unwrap() - ccc_brute(&x, &y)).abs());

        let classes = 8;
        let logits: Vec<f64> = (0..n * classes).map(|_| 3.0 * normal(&mut rng)).collect();
        let ids: Vec<i64> = (0..n).map(|_| rng.random_range(-1..classes as i64)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        mask[0] = true;
        let mut ids = ids;
        ids[0] = 3;
        let t = Tensor::new(logits.clone(), &[n, classes]).unwrap();
        let got = expr_loss(&t, &ids, &mask).unwrap().item();
        worst[1] = worst[1].max((got - expr_loss_brute(&logits, classes, &ids, &mask)).abs());

        let units = 12;
        let al: Vec<f64> = (0..n * units).map(|_| 4.0 * normal(&mut rng)).collect();
        let at: Vec<f64> = (0..n * units).map(|_| rng.random_range(0..2) as f64).collect();
        let mut am: Vec<bool> = (0..n * units).map(|_| rng.random_bool(0.9)).collect();
        am[0] = true;
        let t = Tensor::new(al.clone(), &[n, units]).unwrap();
        let got = au_loss(&t, &at, &am).unwrap().item();
        worst[2] = worst[2].max((got - au_loss_brute(&al, &at, &am)).abs());

        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let got = macro_f1(&pred, &truth, classes).unwrap().macro_f1;
        worst[3] = worst[3].max((got - macro_f1_brute(&pred, &truth, classes)).abs());
    }
    worst
}

/// The documented hand values, as `(label, got, expected)`.
pub fn hand_values() -> Vec<(&'static str, f64, f64)> {
    let ccc_anti = ccc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
    let ccc_shift = ccc(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
    let uniform = expr_loss(&Tensor::zeros(&[1, 8]).unwrap(), &[0], &[true]).unwrap().item();
    let half = {
        let logits = Tensor::new(vec![0.25f64.ln(), 0.25f64.ln(), 0.5f64.ln()], &[1, 3]).unwrap();
        expr_loss(&logits, &[2], &[true]).unwrap().item()
    };
    let bce0 = au_loss(&Tensor::zeros(&[1, 1]).unwrap(), &[1.0], &[true]).unwrap().item();
    let bce2 = au_loss(&Tensor::new(vec![2.0, -2.0], &[1, 2]).unwrap(), &[1.0, 0.0], &[true, true])
        .unwrap()
        .item();
    let f1 = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap().macro_f1;
    vec![
        ("ccc anti-correlated", ccc_anti, -1.0),
        ("ccc shifted", ccc_shift, 4.0 / 7.0),
        ("expr uniform 8 classes", uniform, 8f64.ln()),
        ("expr p=0.5 on true class", half, 2f64.ln()),
        ("au x=0 y=1", bce0, 2f64.ln()),
        ("au x=[2,-2] y=[1,0]", bce2, 0.1269),
        ("macro f1 hand count", f1, 0.7333),
    ]
}

/// Check the segmentation law for every `1 ≤ s ≤ w ≤ n ≤ max_n`. Returns
/// the number of configurations checked or the first violation.
pub fn segmentation_sweep(max_n: usize) -> Result<usize, String> {
    let mut checked = 0;
    for n in 1..=max_n {
        let features = Tensor::new((0..n).map(|i| i as f64).collect(), &[n, 1]).unwrap();
        let seq = FrameSequence::new("v", features, TaskLabels::Expr(vec![0; n]), vec![true; n]).unwrap();
        for w in 1..=n {
            for s in 1..=w {
                let cfg = SegmentationConfig::new(w, s).unwrap();
                let segs = split(&seq, &cfg).map_err(|e| e.to_string())?;
                let ctx = format!("n={n} w={w} s={s}");
                // nominal floor(n/s)+1 windows, minus those starting past n
                let expected: Vec<usize> = (1..=n / s + 1).map(|i| (i - 1) * s + 1).filter(|&st| st <= n).collect();
                let starts: Vec<usize> = segs.iter().map(|g| g.start).collect();
                if starts != expected {
                    return Err(format!("{ctx}: starts {starts:?}, expected {expected:?}"));
                }
                let mut covered = vec![0usize; n];
                for (i, g) in segs.iter().enumerate() {
                    if g.index != i + 1 || g.frames.shape() != [w, 1] || g.pad_mask.len() != w {
                        return Err(format!("{ctx}: segment {i} malformed"));
                    }
                    let range = g.frame_range();
                    let frames = g.frames.to_vec();
                    for (pos, real) in g.pad_mask.iter().enumerate() {
                        let frame = range.start + pos;
                        let should_be_real = frame < n;
                        if *real != should_be_real {
                            return Err(format!("{ctx}: pad mask wrong at segment {i} pos {pos}"));
                        }
                        let want = if should_be_real { frame as f64 } else { 0.0 };
                        if frames[pos] != want {
                            return Err(format!("{ctx}: frame content wrong at segment {i} pos {pos}"));
                        }
                    }
                    range.for_each(|f| covered[f] += 1);
                }
                if covered.iter().any(|&c| c == 0) {
                    return Err(format!("{ctx}: uncovered frame"));
                }
                for pair in segs.windows(2) {
                    let (a, b) = (pair[0].frame_range(), pair[1].frame_range());
                    if a.len() == w && b.len() == w && a.end - b.start != w - s {
                        return Err(format!("{ctx}: overlap {} != {}", a.end - b.start, w - s));
                    }
                }
                // constant per-segment predictions average back exactly
                let preds: Vec<_> = segs
                    .iter()
                    .map(|g| {
                        let v = g.index as f64;
                        (g.clone(), Tensor::full(&[w, 1], v).unwrap())
                    })
                    .collect();
                let out = reassemble(n, &preds).map_err(|e| e.to_string())?.to_vec();
                for f in 0..n {
                    let covering: Vec<f64> = segs
                        .iter()
                        .filter(|g| g.frame_range().contains(&f))
                        .map(|g| g.index as f64)
                        .collect();
                    let mean = covering.iter().sum::<f64>() / covering.len() as f64;
                    if (out[f] - mean).abs() > 1e-12 {
                        return Err(format!("{ctx}: reassembled frame {f} = {}, expected {mean}", out[f]));
                    }
                }
                let ones: Vec<_> = segs.iter().map(|g| (g.clone(), Tensor::full(&[w, 1], 1.0).unwrap())).collect();
                if reassemble(n, &ones).map_err(|e| e.to_string())?.to_vec() != vec![1.0; n] {
                    return Err(format!("{ctx}: constant predictions not reproduced"));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Textbook Adam, no weight decay, for comparison against AdamW(wd = 0).
pub struct AdamReference {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: i32,
}

impl AdamReference {
    pub fn new(n: usize) -> Self {
        AdamReference {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) {
        self.t += 1;
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - b1.powi(self.t));
            let vh = self.v[i] / (1.0 - b2.powi(self.t));
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}
