use affect_core::nn::{MultiHeadAttention, TransformerStack};
use affect_core::{Rng, Tensor};
use rand::{Rng as _, SeedableRng};

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

#[test]
fn single_real_key_forces_attention_onto_it() {
    let mut rng = Rng::seed_from_u64(2);
    let attn = MultiHeadAttention::new(6, 3, &mut rng).unwrap();
    let x = random(&mut rng, &[5, 6]);
    let mask = [true, false, false, false, false];
    let (_, weights) = attn.forward_with_weights(&x, Some(&mask)).unwrap();
    for w in &weights {
        for row in w.to_vec().chunks(5) {
            assert!((row[0] - 1.0).abs() < 1e-12);
            assert!(row[1..].iter().all(|&v| v == 0.0));
        }
    }
    // every query's context is the value of position 0
    let out = attn.forward(&x, Some(&mask)).unwrap().to_vec();
    for row in out.chunks(6) {
        for (a, b) in row.iter().zip(&out[..6]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_rows_over_valid_keys_sum_to_one() {
    let mut rng = Rng::seed_from_u64(3);
    let attn = MultiHeadAttention::new(4, 2, &mut rng).unwrap();
    let x = random(&mut rng, &[6, 4]);
    let mask = [true, true, false, true, false, true];
    let (_, weights) = attn.forward_with_weights(&x, Some(&mask)).unwrap();
    for w in weights {
        for row in w.to_vec().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert_eq!(row[2], 0.0);
            assert_eq!(row[4], 0.0);
        }
    }
}

#[test]
fn padded_tail_contents_do_not_reach_real_rows() {
    let mut rng = Rng::seed_from_u64(5);
    let stack = TransformerStack::new(8, 2, 2, 16, 0.0, &mut rng).unwrap();
    let real = 4;
    let x = random(&mut rng, &[7, 8]);
    let mask: Vec<bool> = (0..7).map(|i| i < real).collect();
    let full = stack.forward(&x, Some(&mask), None).unwrap().narrow(0, 0, real).unwrap().to_vec();
    let truncated = stack.forward(&x.narrow(0, 0, real).unwrap(), None, None).unwrap().to_vec();
    let mut shuffled = x.to_vec();
    shuffled[real * 8..].reverse();
    shuffled[real * 8..].iter_mut().for_each(|v| *v *= 7.0);
    let y = Tensor::new(shuffled, &[7, 8]).unwrap();
    let permuted = stack.forward(&y, Some(&mask), None).unwrap().narrow(0, 0, real).unwrap().to_vec();
    for ((a, b), c) in full.iter().zip(&truncated).zip(&permuted) {
        assert!((a - b).abs() < 1e-6 && (a - c).abs() < 1e-6);
    }
}
