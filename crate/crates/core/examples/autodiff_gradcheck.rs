//! Build a small graph, backpropagate, and compare against central
//! differences.

use affect_core::gradcheck::{check_gradients, DEFAULT_STEP};
use affect_core::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::param(vec![0.3, -1.2, 0.8, 0.1, 0.5, -0.4], &[2, 3])?;
    let w = Tensor::param(vec![0.2, -0.7, 1.1, 0.4, -0.3, 0.9], &[3, 2])?;

    // f = mean(softmax(tanh(x·w)) ⊙ gelu(x·w))
    let f = |t: &[Tensor]| {
        let h = t[0].matmul(&t[1])?;
        Ok(h.tanh().softmax(1)?.mul(&h.gelu())?.mean())
    };

    let y = f(&[x.clone(), w.clone()])?;
    y.backward()?;
    println!("f = {:.6}", y.item());
    println!("df/dx = {:?}", x.grad().unwrap());
    println!("df/dw = {:?}", w.grad().unwrap());

    let report = check_gradients(&[x, w], f, DEFAULT_STEP)?;
    println!(
        "checked {} entries, worst relative error {:.2e} (input {}, element {})",
        report.checked, report.max_rel_error, report.input, report.element
    );
    Ok(())
}

