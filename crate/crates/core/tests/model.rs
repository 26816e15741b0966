use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpnformer::grammar::{parse_infix, LabelKind};
use rpnformer::model::{
    count_params, decode, encode, export_attention, greedy_decode, greedy_decode_batch,
    teacher_forcing, Checkpoint, EncoderBatch, Model, ModelConfig,
};
use rpnformer::synth::{synth_expression, tokenize, ExpressionSample, WriterStyle, TOKEN_WIDTH};
use rpnformer::vocab::{tokens_from_str, Token, VOCAB_SIZE};
use rpnformer_autograd::{Tape, Tensor};

fn tiny() -> ModelConfig {
    ModelConfig {
        d_f: TOKEN_WIDTH,
        d_p: 16,
        enc_layers: 2,
        enc_heads: 2,
        dec_layers: 2,
        dec_heads: 4,
        n: 24,
        m: 12,
        vocab_size: VOCAB_SIZE,
        alpha: 1.0,
        max_pos: 24,
        label: LabelKind::Glyphs,
    }
}

fn model(config: ModelConfig, seed: u64) -> Model<f32> {
    Model::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn sample(text: &str, seed: u64) -> ExpressionSample {
    let tree = parse_infix(&tokens_from_str(text).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let style = WriterStyle::random(&mut rng);
    synth_expression(&tree, &style, 24, &mut rng).unwrap()
}

fn encoder_z(model: &Model<f32>, batch: &EncoderBatch<f32>) -> Tensor<f32> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, |_| false);
    let enc = encode(&mut tape, &p, &model.config, batch).unwrap();
    tape.value(enc.z).clone()
}

fn forced_logits(model: &Model<f32>, batch: &EncoderBatch<f32>, y_in: &[usize], len: usize) -> Tensor<f32> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, |_| false);
    let enc = encode(&mut tape, &p, &model.config, batch).unwrap();
    let out = decode(&mut tape, &p, &model.config, &enc, y_in, len).unwrap();
    tape.value(out.logits).clone()
}

fn valid_rows(z: &Tensor<f32>, mask: &[bool]) -> Vec<f32> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .flat_map(|(i, _)| z.row(i).to_vec())
        .collect()
}

#[test]
fn pad_payloads_do_not_reach_valid_positions() {
    let m = model(tiny(), 1);
    let input = tokenize(&sample("4×6=", 2), 24, None).unwrap();
    let clean = EncoderBatch::<f32>::with_len(&[&input], 24).unwrap();
    let reference = encoder_z(&m, &clean);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut noisy = clean.clone();
    let valid = input.valid_len();
    for x in &mut noisy.x.data_mut()[valid * TOKEN_WIDTH..] {
        *x = rng.gen_range(-50.0..50.0);
    }
    let z = encoder_z(&m, &noisy);
    assert_eq!(valid_rows(&reference, &clean.mask), valid_rows(&z, &noisy.mask));

    // swap two pad rows
    let mut swapped = noisy.clone();
    let (a, b) = (valid + 1, 23);
    let data = swapped.x.data_mut();
    for k in 0..TOKEN_WIDTH {
        data.swap(a * TOKEN_WIDTH + k, b * TOKEN_WIDTH + k);
    }
    let z2 = encoder_z(&m, &swapped);
    assert_eq!(valid_rows(&z, &noisy.mask), valid_rows(&z2, &swapped.mask));

    // decoder output too
    let y = vec![Token::Bos.index(), 16, 7];
    assert_eq!(forced_logits(&m, &clean, &y, 3), forced_logits(&m, &noisy, &y, 3));
}

#[test]
fn cross_attention_ignores_pad_columns() {
    let m = model(tiny(), 4);
    let a = tokenize(&sample("7=", 5), 24, None).unwrap();
    let b = tokenize(&sample("12+3.5=", 6), 24, None).unwrap();
    let batch = EncoderBatch::<f32>::new(&[&a, &b]).unwrap();
    let mut tape = Tape::new();
    let p = m.params.bind(&mut tape, |_| false);
    let enc = encode(&mut tape, &p, &m.config, &batch).unwrap();
    let y = vec![1, 19, 4, 1, 13, 14];
    let out = decode(&mut tape, &p, &m.config, &enc, &y, 3).unwrap();
    let heads = m.config.dec_heads;
    for &w in &out.cross_attn {
        let w = tape.value(w);
        for bh in 0..2 * heads {
            let bi = bh / heads;
            for r in 0..3 {
                let row = w.row(bh * 3 + r);
                for (j, &v) in row.iter().enumerate() {
                    if !batch.mask[bi * batch.len + j] {
                        assert_eq!(v, 0.0);
                    }
                }
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn decoder_is_causal() {
    let m = model(tiny(), 7);
    let input = tokenize(&sample("9-4÷2=", 8), 24, None).unwrap();
    let batch = EncoderBatch::<f32>::new(&[&input]).unwrap();
    let mut y = vec![1, 21, 6, 16, 8, 14, 4];
    let before = forced_logits(&m, &batch, &y, y.len());
    for replacement in [2, 9, 3] {
        *y.last_mut().unwrap() = replacement;
        let after = forced_logits(&m, &batch, &y, y.len());
        let v = VOCAB_SIZE;
        let prefix = (y.len() - 1) * v;
        assert_eq!(&before.data()[..prefix], &after.data()[..prefix]);
    }
    // editing position 2 leaves positions 0 and 1 alone
    y[2] = 7;
    let after = forced_logits(&m, &batch, &y, y.len());
    assert_eq!(&before.data()[..2 * VOCAB_SIZE], &after.data()[..2 * VOCAB_SIZE]);
    assert_ne!(&before.data()[2 * VOCAB_SIZE..3 * VOCAB_SIZE], &after.data()[2 * VOCAB_SIZE..3 * VOCAB_SIZE]);
}

#[test]
fn out_of_vocab_decoder_input_is_rejected() {
    let m = model(tiny(), 9);
    let input = tokenize(&sample("1=", 10), 24, None).unwrap();
    let batch = EncoderBatch::<f32>::new(&[&input]).unwrap();
    let mut tape = Tape::new();
    let p = m.params.bind(&mut tape, |_| false);
    let enc = encode(&mut tape, &p, &m.config, &batch).unwrap();
    assert!(decode(&mut tape, &p, &m.config, &enc, &[1, VOCAB_SIZE], 2).is_err());
    assert!(decode(&mut tape, &p, &m.config, &enc, &vec![1; 13], 13).is_err());
}

#[test]
fn without_positions_self_attention_is_permutation_equivariant() {
    let config = ModelConfig {
        alpha: 0.0,
        ..tiny()
    };
    let m = model(config, 11).cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x: Vec<f64> = (0..3 * TOKEN_WIDTH).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let perm = [2usize, 0, 1];
    let mut xp = vec![0.0; x.len()];
    for (dst, &src) in perm.iter().enumerate() {
        xp[dst * TOKEN_WIDTH..(dst + 1) * TOKEN_WIDTH].copy_from_slice(&x[src * TOKEN_WIDTH..(src + 1) * TOKEN_WIDTH]);
    }
    let run = |data: Vec<f64>| {
        let batch = EncoderBatch {
            x: Tensor::new([1, 3, TOKEN_WIDTH], data).unwrap(),
            mask: vec![true; 3],
            batch: 1,
            len: 3,
        };
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape, |_| false);
        let enc = encode(&mut tape, &p, &m.config, &batch).unwrap();
        tape.value(enc.z).clone()
    };
    let z = run(x);
    let zp = run(xp);
    for (dst, &src) in perm.iter().enumerate() {
        for (a, b) in zp.row(dst).iter().zip(z.row(src)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn eos_bias_stops_decoding_immediately() {
    let mut m = model(tiny(), 13);
    let at = m.params.position("dec.out.b").unwrap();
    m.params.tensors_mut()[at].data_mut()[Token::Eos.index()] = 1e4;
    let input = tokenize(&sample("3+3=", 14), 24, None).unwrap();
    let out = greedy_decode(&m, &input, false).unwrap();
    assert_eq!(out.tokens, vec![Token::Bos, Token::Eos]);
}

#[test]
fn greedy_output_is_bounded_and_never_pad() {
    for seed in 0..4 {
        let m = model(tiny(), 20 + seed);
        let inputs: Vec<_> = ["5=", "1.5×2=", "8-3+2=", "(4+4)÷2="]
            .iter()
            .enumerate()
            .map(|(i, s)| tokenize(&sample(s, seed * 10 + i as u64), 24, None).unwrap())
            .collect();
        let refs: Vec<_> = inputs.iter().collect();
        let batched = greedy_decode_batch(&m, &refs, false).unwrap();
        for (input, out) in inputs.iter().zip(&batched) {
            assert!(out.tokens.len() <= m.config.m);
            assert_eq!(out.tokens[0], Token::Bos);
            assert!(!out.tokens.contains(&Token::Pad));
            assert_eq!(out.tokens.iter().filter(|&&t| t == Token::Eos).count() <= 1, true);
            // batch decoding agrees with one-at-a-time decoding
            assert_eq!(greedy_decode(&m, input, false).unwrap().tokens, out.tokens);
        }
    }
}

#[test]
fn checkpoint_reload_is_bit_exact() {
    let m = model(tiny(), 30);
    let input = tokenize(&sample("64÷8=", 31), 24, None).unwrap();
    let batch = EncoderBatch::<f32>::new(&[&input]).unwrap();
    let labels = [vec![Token::Bos, Token::Digit(6), Token::Digit(4), Token::Divide, Token::Eos]];
    let refs: Vec<&[Token]> = labels.iter().map(Vec::as_slice).collect();
    let (y, _, len) = teacher_forcing(&refs);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.ckpt");
    Checkpoint::new(m.clone()).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().model;
    assert_eq!(forced_logits(&m, &batch, &y, len), forced_logits(&loaded, &batch, &y, len));
    assert_eq!(
        greedy_decode(&m, &input, true).unwrap(),
        greedy_decode(&loaded, &input, true).unwrap()
    );
}

#[test]
fn attention_report_shape_and_rows() {
    let m = model(tiny(), 40);
    let s = sample("25+7=", 41);
    let report = export_attention(&m, &s).unwrap();
    assert_eq!(report.layers.len(), m.config.dec_layers);
    let valid = s.strokes.len() + 2;
    assert_eq!(report.tokens_in.len(), valid);
    assert_eq!(report.tokens_in[0], "bos");
    assert_eq!(report.tokens_in[valid - 1], "eos");
    for layer in &report.layers {
        assert_eq!(layer.len(), m.config.dec_heads);
        for head in layer {
            assert_eq!(head.len(), report.tokens_out.len());
            for row in head {
                assert_eq!(row.len(), valid);
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            }
        }
    }
    let json = serde_json::to_value(&report).unwrap();
    assert!(json.get("tokens_in").is_some() && json.get("layers").is_some());
}

#[test]
fn canonical_counts() {
    let v4 = count_params(&ModelConfig::preset("v4").unwrap());
    assert_eq!(v4.encoder_layer, 99_584);
    assert_eq!(v4.encoder, 523_520);
    assert_eq!(v4.decoder_layer, 231_680);
    assert_eq!(v4.decoder, 933_910);
    assert_eq!(v4.decoder_delta, -226);
    let v10 = count_params(&ModelConfig::preset("v10").unwrap());
    assert_eq!(v10.decoder, 935_446);
    assert_eq!(v10.decoder_delta, 1_310);
    let v3 = count_params(&ModelConfig::preset("v3").unwrap());
    assert_eq!(v3.total, v4.total);
}
