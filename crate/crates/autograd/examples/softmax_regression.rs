//! Fits a two-layer classifier to XOR-like points with plain gradient
//! descent, rebuilding the tape every step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpnformer_autograd::{Tape, Tensor};

fn main() -> rpnformer_autograd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 200;
    let mut xs = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        xs.extend([a, b]);
        ys.push(usize::from((a > 0.0) != (b > 0.0)));
    }
    let x = Tensor::new(vec![n, 2], xs)?;

    let hidden = 16;
    let mut w1 = Tensor::from_fn(vec![2, hidden], |_| rng.gen_range(-1.0..1.0));
    let mut b1 = Tensor::zeros(vec![hidden]);
    let mut w2 = Tensor::from_fn(vec![hidden, 2], |_| rng.gen_range(-0.5..0.5));
    let mut b2 = Tensor::zeros(vec![2]);

    for step in 0..=600 {
        let mut tape = Tape::<f64>::new();
        let input = tape.constant(x.clone());
        let params = [
            tape.param(w1.clone()),
            tape.param(b1.clone()),
            tape.param(w2.clone()),
            tape.param(b2.clone()),
        ];
        let h = tape.matmul(input, params[0])?;
        let h = tape.add_broadcast(h, params[1])?;
        let h = tape.relu(h);
        let logits = tape.matmul(h, params[2])?;
        let logits = tape.add_broadcast(logits, params[3])?;
        let loss = tape.cross_entropy(logits, &ys, usize::MAX)?;
        tape.backward(loss)?;

        if step % 100 == 0 {
            let predicted = tape.value(logits).argmax_rows();
            let correct = predicted.iter().zip(&ys).filter(|(p, y)| p == y).count();
            println!(
                "step {step:3}  loss {:.4}  accuracy {:.3}",
                tape.value(loss).item(),
                correct as f64 / n as f64
            );
        }
        for (value, var) in [&mut w1, &mut b1, &mut w2, &mut b2].into_iter().zip(params) {
            let grad = tape.grad(var).expect("parameters get gradients");
            for (v, g) in value.data_mut().iter_mut().zip(grad.data()) {
                *v -= 0.5 * g;
            }
        }
    }
    Ok(())
}
