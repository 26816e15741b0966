//! Central finite-difference checks for every differentiable op.
//!
//! All checks run in f64 with step 1e-4 on inputs drawn from [-1, 1].
//! Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-3);
//! the floor keeps near-zero gradient entries from dividing by noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpnformer_autograd::{Tape, Tensor, Var};

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Builds a scalar from the given leaves. Leaves are registered in order.
type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Var + 'a;

fn check(name: &str, inputs: Vec<Tensor<f64>>, build: &Build<'_>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();

    let eval = |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };

    let mut worst = 0.0f64;
    for (which, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[which].shape().to_vec()));
        for i in 0..inputs[which].len() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[i] += EPS;
            let mut minus = inputs.clone();
            minus[which].data_mut()[i] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < TOL, "{name}: worst relative error {worst:e}");
}

/// Contracts an arbitrary tensor against fixed random weights so every
/// output element influences the loss.
fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.shape(x));
    let w = tape.constant(w);
    let prod = tape.mul(x, w).unwrap();
    tape.sum(prod)
}

#[test]
fn matmul_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check(
        "matmul",
        vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 5])],
        &|t, v| {
            let c = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, c, 11)
        },
    );
}

#[test]
fn matmul_gradient_of_plain_sum_is_column_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let mut tape = Tape::new();
    let (av, bv) = (tape.param(a), tape.param(b.clone()));
    let c = tape.matmul(av, bv).unwrap();
    let s = tape.sum(c);
    tape.backward(s).unwrap();
    let grad = tape.grad(av).unwrap();
    for r in 0..3 {
        for k in 0..4 {
            let row_sum = b.row(k).iter().sum::<f64>();
            assert!((grad.data()[r * 4 + k] - row_sum).abs() < 1e-12);
        }
    }
}

#[test]
fn batch_matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check(
        "batch_matmul",
        vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 4, 5])],
        &|t, v| {
            let c = t.batch_matmul(v[0], v[1], false).unwrap();
            weighted_sum(t, c, 12)
        },
    );
    check(
        "batch_matmul transposed",
        vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 5, 4])],
        &|t, v| {
            let c = t.batch_matmul(v[0], v[1], true).unwrap();
            weighted_sum(t, c, 13)
        },
    );
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[3, 4]);
    let row = random(&mut rng, &[4]);
    check("add", vec![a.clone(), b.clone()], &|t, v| {
        let c = t.add(v[0], v[1]).unwrap();
        weighted_sum(t, c, 14)
    });
    check("add_broadcast", vec![a.clone(), row], &|t, v| {
        let c = t.add_broadcast(v[0], v[1]).unwrap();
        weighted_sum(t, c, 15)
    });
    check("mul", vec![a.clone(), b], &|t, v| {
        let c = t.mul(v[0], v[1]).unwrap();
        weighted_sum(t, c, 16)
    });
    check("scale", vec![a.clone()], &|t, v| {
        let c = t.scale(v[0], -2.5);
        weighted_sum(t, c, 17)
    });
    // keep relu inputs away from the kink
    let mut kinkless = a;
    for x in kinkless.data_mut() {
        if x.abs() < 0.05 {
            *x += 0.1;
        }
    }
    check("relu", vec![kinkless], &|t, v| {
        let c = t.relu(v[0]);
        weighted_sum(t, c, 18)
    });
}

#[test]
fn masked_softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let valid: Vec<bool> = (0..15).map(|i| i % 5 != 3 && i != 7).collect();
    check("masked_softmax", vec![random(&mut rng, &[3, 5])], &|t, v| {
        let c = t.masked_softmax(v[0], &valid).unwrap();
        weighted_sum(t, c, 19)
    });
}

#[test]
fn layer_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check(
        "layer_norm",
        vec![
            random(&mut rng, &[4, 8]),
            random(&mut rng, &[8]),
            random(&mut rng, &[8]),
        ],
        &|t, v| {
            let c = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            weighted_sum(t, c, 20)
        },
    );
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = random(&mut rng, &[5, 6]);
    check("cross_entropy", vec![logits.clone()], &|t, v| {
        t.cross_entropy(v[0], &[1, 0, 5, 3, 0], 0).unwrap()
    });

    // softmax - onehot, averaged over the counted rows
    let mut tape = Tape::new();
    let l = tape.param(logits.clone());
    let loss = tape.cross_entropy(l, &[2, 4], usize::MAX);
    assert!(loss.is_err(), "row count must match target count");
    let two = tape.param(Tensor::new([2, 6], logits.data()[..12].to_vec()).unwrap());
    let loss = tape.cross_entropy(two, &[2, 4], usize::MAX).unwrap();
    tape.backward(loss).unwrap();
    let grad = tape.grad(two).unwrap();
    let probs = rpnformer_autograd::softmax_rows(tape.value(two));
    for r in 0..2 {
        for c in 0..6 {
            let onehot = if c == [2, 4][r] { 1.0 } else { 0.0 };
            let expected = (probs.data()[r * 6 + c] - onehot) / 2.0;
            assert!((grad.data()[r * 6 + c] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn shape_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let table = random(&mut rng, &[6, 3]);
    check("embedding", vec![table], &|t, v| {
        let c = t.embedding(v[0], &[4, 0, 4, 2]).unwrap();
        weighted_sum(t, c, 21)
    });
    check(
        "concat",
        vec![random(&mut rng, &[2, 3, 2]), random(&mut rng, &[2, 1, 2])],
        &|t, v| {
            let c = t.concat(&[v[0], v[1]], 1).unwrap();
            weighted_sum(t, c, 22)
        },
    );
    check("slice", vec![random(&mut rng, &[3, 5, 2])], &|t, v| {
        let c = t.slice(v[0], 1, 1, 3).unwrap();
        weighted_sum(t, c, 23)
    });
    check("permute", vec![random(&mut rng, &[2, 3, 4, 2])], &|t, v| {
        let c = t.permute(v[0], &[0, 2, 1, 3]).unwrap();
        weighted_sum(t, c, 24)
    });
    check("transpose", vec![random(&mut rng, &[3, 4])], &|t, v| {
        let c = t.transpose(v[0]).unwrap();
        weighted_sum(t, c, 25)
    });
    check("reshape", vec![random(&mut rng, &[3, 4])], &|t, v| {
        let c = t.reshape(v[0], &[2, 6]).unwrap();
        weighted_sum(t, c, 26)
    });
    check("dropout", vec![random(&mut rng, &[4, 4])], &|t, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
        let c = t.dropout(v[0], 0.3, &mut mask_rng).unwrap();
        weighted_sum(t, c, 27)
    });
}

#[test]
fn composed_attention_block_gradient() {
    // q·kᵀ → masked softmax → ·v → layer norm → cross entropy
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let valid: Vec<bool> = (0..2 * 3 * 4).map(|i| i % 4 != 3).collect();
    check(
        "attention block",
        vec![
            random(&mut rng, &[2, 3, 4]),
            random(&mut rng, &[2, 4, 4]),
            random(&mut rng, &[2, 4, 4]),
            random(&mut rng, &[4]),
            random(&mut rng, &[4]),
        ],
        &|t, v| {
            let s = t.batch_matmul(v[0], v[1], true).unwrap();
            let s = t.scale(s, 0.5);
            let p = t.masked_softmax(s, &valid).unwrap();
            let ctx = t.batch_matmul(p, v[2], false).unwrap();
            let ctx = t.reshape(ctx, &[6, 4]).unwrap();
            let n = t.layer_norm(ctx, v[3], v[4], 1e-5).unwrap();
            t.cross_entropy(n, &[0, 1, 2, 3, 1, 2], usize::MAX).unwrap()
        },
    );
}

#[test]
fn multi_use_accumulates_sum_of_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let w = random(&mut rng, &[3, 3]);
    let c = random(&mut rng, &[3, 2]);

    // w used three times on one leaf
    let mut tape = Tape::new();
    let wv = tape.param(w.clone());
    let cv = tape.constant(c.clone());
    let sq = tape.mul(wv, wv).unwrap();
    let a = tape.sum(sq);
    let p = tape.matmul(wv, cv).unwrap();
    let b = tape.sum(p);
    let total = tape.add(a, b).unwrap();
    tape.backward(total).unwrap();
    let shared = tape.grad(wv).unwrap();

    // the same graph with one leaf per use
    let mut tape = Tape::new();
    let w1 = tape.param(w.clone());
    let w2 = tape.param(w.clone());
    let w3 = tape.param(w);
    let cv = tape.constant(c);
    let sq = tape.mul(w1, w2).unwrap();
    let a = tape.sum(sq);
    let p = tape.matmul(w3, cv).unwrap();
    let b = tape.sum(p);
    let total = tape.add(a, b).unwrap();
    tape.backward(total).unwrap();
    let parts = [w1, w2, w3].map(|v| tape.grad(v).unwrap());

    for i in 0..9 {
        let sum: f64 = parts.iter().map(|g| g.data()[i]).sum();
        assert!((shared.data()[i] - sum).abs() < 1e-12);
    }
}
