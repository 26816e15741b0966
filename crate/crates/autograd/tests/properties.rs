use proptest::prelude::*;
use rpnformer_autograd::{argmax, Tape, Tensor};

proptest! {
    #[test]
    fn masked_softmax_rows_are_distributions(
        logits in prop::collection::vec(-30.0f32..30.0, 24),
        mask_bits in prop::collection::vec(any::<bool>(), 24),
    ) {
        // guarantee one valid entry per row of 6
        let mut valid = mask_bits;
        for row in 0..4 {
            valid[row * 6 + row] = true;
        }
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new([4, 6], logits).unwrap());
        let y = tape.masked_softmax(x, &valid).unwrap();
        for (row, keep) in tape.value(y).data().chunks(6).zip(valid.chunks(6)) {
            let total: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((total - 1.0).abs() <= 1e-6);
            for (&p, &k) in row.iter().zip(keep) {
                if !k {
                    prop_assert_eq!(p, 0.0);
                }
            }
        }
    }

    #[test]
    fn softmax_matches_exp_normalize(logits in prop::collection::vec(-1.0f64..1.0, 5)) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([5], logits.clone()).unwrap());
        let y = tape.softmax(x).unwrap();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        for (p, l) in tape.value(y).data().iter().zip(&logits) {
            prop_assert!((p - l.exp() / z).abs() < 1e-6);
        }
    }

    #[test]
    fn argmax_returns_first_maximum(row in prop::collection::vec(0u8..4, 1..12)) {
        let values: Vec<f32> = row.iter().map(|&v| v as f32).collect();
        let best = argmax(&values);
        let max = values.iter().cloned().fold(f32::MIN, f32::max);
        prop_assert_eq!(values[best], max);
        prop_assert!(values[..best].iter().all(|&v| v < max));
    }
}
