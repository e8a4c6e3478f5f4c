//! The three task objectives and their evaluation metrics on toy batches.

use affect_core::objectives::{au_f1, au_loss, ccc, expr_loss, macro_f1, va_loss};
use affect_core::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = [0.1, 0.4, -0.2, 0.7, 0.0];
    let close = [0.15, 0.35, -0.1, 0.6, 0.05];
    let flipped: Vec<f64> = truth.iter().map(|v| -v).collect();
    println!("CCC close {:.4}, identical {:.4}, negated {:.4}", ccc(&close, &truth)?, ccc(&truth, &truth)?, ccc(&flipped, &truth)?);

    // VA loss: mean of 1 − CCC over valence and arousal; the masked frame is ignored
    let pred = Tensor::new(vec![0.1, 0.2, 0.3, 0.1, -0.2, 0.0, 0.9, 0.9], &[4, 2])?;
    let target = [[0.1, 0.25], [0.35, 0.1], [-0.1, 0.05], [-5.0, -5.0]];
    let mask = [true, true, true, false];
    println!("VA loss {:.4}", va_loss(&pred, &target, &mask)?.item());

    // expression: cross-entropy and macro F1 over all 8 classes
    let logits = Tensor::new((0..24).map(|i| ((i * 7) % 5) as f64 * 0.3).collect(), &[3, 8])?;
    println!("Expr loss {:.4}", expr_loss(&logits, &[2, 0, 5], &[true; 3])?.item());
    let f1 = macro_f1(&[0, 1, 1, 2, 7], &[0, 1, 2, 2, 7], 8)?;
    println!("Expr macro F1 {:.4} (absent classes count as 0)", f1.macro_f1);

    // action units: binary cross-entropy and F1 at threshold 0.5
    let au_logits = [2.0, -1.0, 0.5, -3.0, 1.5, 0.2];
    let au_truth = [1.0, 0.0, 0.0, 0.0, 1.0, 1.0];
    let t = Tensor::new(au_logits.to_vec(), &[2, 3])?;
    println!("AU loss {:.4}", au_loss(&t, &au_truth, &[true; 6])?.item());
    println!("AU F1 {:.4}", au_f1(&au_logits, &au_truth, &[true; 6], 3, 0.5)?.macro_f1);
    Ok(())
}
