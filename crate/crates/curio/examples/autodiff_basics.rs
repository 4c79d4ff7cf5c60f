//! Fit a tiny two-layer perceptron to a quadratic with the tape-based
//! autodiff core, then verify its gradients against finite differences
//! in 64-bit mode.
//!
//! Run with: cargo run --release --example autodiff_basics

use curio::tensor::{grad_check_multi, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store: ParamStore<f32> = ParamStore::new();
    store.register_affine("l1", 1, 16, &mut rng)?;
    store.register_affine("l2", 16, 1, &mut rng)?;

    // 64 points of y = x^2 on [-1, 1]
    let xs: Vec<f32> = (0..64).map(|i| -1.0 + 2.0 * i as f32 / 63.0).collect();
    let ys: Vec<f32> = xs.iter().map(|x| x * x).collect();

    for step in 0..400 {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.constant(Tensor::matrix(64, 1, xs.clone())?);
        let y = tape.constant(Tensor::matrix(64, 1, ys.clone())?);
        let (w1, b1) = (tape.param(&store, "l1.w")?, tape.param(&store, "l1.b")?);
        let (w2, b2) = (tape.param(&store, "l2.w")?, tape.param(&store, "l2.b")?);
        let h = tape.affine(x, w1, b1)?;
        let h = tape.tanh(h);
        let pred = tape.affine(h, w2, b2)?;
        let err = tape.sub(pred, y)?;
        let sq = tape.sum_squares(err);
        let loss = tape.scale(sq, 1.0 / 64.0);
        let grads = tape.backward(loss)?.into_param_grads(&tape);
        store.adam_step(&grads, 1e-2)?;
        if step % 100 == 0 {
            println!("step {step:3}  mse {:.6}", tape.value(loss).item());
        }
    }

    // the same shape of network, checked in f64 against central differences
    let max_rel_err = grad_check_multi(
        |tape: &mut Tape<f64>, points: &[Var]| {
            let h = tape.matmul(points[0], points[1])?;
            let h = tape.tanh(h);
            let out = tape.matmul(h, points[2])?;
            Ok(tape.sum_squares(out))
        },
        &[
            Tensor::from_fn(&[4, 8], |i| 0.1 * (i as f64).sin()),
            Tensor::from_fn(&[8, 8], |i| 0.1 * (i as f64).cos()),
            Tensor::from_fn(&[8, 2], |i| 0.05 * (i as f64 + 1.0).ln()),
        ],
    )?;
    println!("gradient check: max relative error {max_rel_err:.2e}");
    assert!(max_rel_err < 1e-4);
    Ok(())
}
