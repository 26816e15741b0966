mod common;

use common::{dp_distance, eval_postfix, shunting_yard};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpnformer::grammar::{
    count_violations, generate, parse_infix, parse_rpn, to_infix, to_rpn, DigitRange, GenConfig, LabelKind,
};
use rpnformer::model::{count_params, ModelConfig};
use rpnformer::train::{cer, la, levenshtein, TrainConfig};
use rpnformer::vocab::{strip_special, Token, VOCAB_SIZE};

fn token() -> impl Strategy<Value = Token> {
    (0..VOCAB_SIZE).prop_map(|i| Token::from_index(i).unwrap())
}

fn glyph() -> impl Strategy<Value = Token> {
    (4..VOCAB_SIZE).prop_map(|i| Token::from_index(i).unwrap())
}

fn gen_config() -> impl Strategy<Value = GenConfig> {
    (1usize..5, any::<bool>(), 1usize..4, 0usize..3, any::<u64>()).prop_map(
        |(ops, brackets, int_max, dec_max, seed)| GenConfig {
            max_operators: ops,
            allow_brackets: brackets,
            integer_digits: DigitRange::new(1, int_max),
            decimal_digits: DigitRange::new(0, dec_max),
            bracket_probability: 0.4,
            seed,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rpn_labels_are_valid_and_match_shunting_yard(config in gen_config()) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tree = generate(&config, &mut rng);
        let rpn = to_rpn(&tree);
        prop_assert_eq!(count_violations(&rpn), 0);
        prop_assert_eq!(&rpn, &shunting_yard(&to_infix(&tree)));
        prop_assert_eq!(eval_postfix(&rpn), tree.evaluate().ok());
        prop_assert_eq!(&parse_infix(&to_infix(&tree)).unwrap(), &tree);
        prop_assert!(config.allow_brackets || !tree.has_brackets());
    }

    #[test]
    fn postfix_parses_back(config in gen_config()) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tree = generate(&config, &mut rng);
        let label = LabelKind::Rpn.label(&tree);
        let back = parse_rpn(&label).unwrap();
        prop_assert_eq!(&back, &tree.without_brackets());
        prop_assert_eq!(LabelKind::Rpn.label(&back), label);
        prop_assert_eq!(back.evaluate().ok(), tree.evaluate().ok());
    }

    #[test]
    fn label_kinds_agree(config in gen_config()) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tree = generate(&config, &mut rng);
        let with_eon = LabelKind::Rpn.label(&tree);
        let without: Vec<Token> = with_eon.iter().copied().filter(|&t| t != Token::Eon).collect();
        prop_assert_eq!(LabelKind::RpnNoEon.label(&tree), without);
        let glyphs = LabelKind::Glyphs.label(&tree);
        prop_assert_eq!(strip_special(&glyphs), to_infix(&tree));
    }

    #[test]
    fn levenshtein_matches_table_oracle(
        a in prop::collection::vec(token(), 0..14),
        b in prop::collection::vec(token(), 0..14),
    ) {
        let d = levenshtein(&a, &b);
        prop_assert_eq!(d, dp_distance(&strip_special(&a), &strip_special(&b)));
        prop_assert_eq!(d, levenshtein(&b, &a));
        prop_assert_eq!(la(&a, &b), la(&b, &a));
        let longest = strip_special(&a).len().max(strip_special(&b).len());
        if longest > 0 {
            prop_assert_eq!(la(&a, &b) + d as f64 / longest as f64, 1.0);
            prop_assert!((0.0..=1.0).contains(&la(&a, &b)));
        }
    }

    #[test]
    fn edit_distance_is_a_metric(
        a in prop::collection::vec(glyph(), 0..10),
        b in prop::collection::vec(glyph(), 0..10),
        c in prop::collection::vec(glyph(), 0..10),
    ) {
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        if !a.is_empty() {
            prop_assert_eq!(cer(&a, &b).unwrap(), levenshtein(&a, &b) as f64 / a.len() as f64);
        }
    }

    #[test]
    fn violations_ignore_markers(tokens in prop::collection::vec(glyph(), 0..16)) {
        let mut wrapped = vec![Token::Bos];
        wrapped.extend(&tokens);
        wrapped.push(Token::Eos);
        wrapped.push(Token::Pad);
        prop_assert_eq!(count_violations(&wrapped), count_violations(&tokens));
    }

    #[test]
    fn parameter_counts_follow_closed_form(
        enc_layers in 1usize..7,
        dec_layers in 1usize..7,
        heads in prop::sample::select(vec![1usize, 2, 4, 8, 16]),
        d_p in 1usize..300,
        m in 2usize..60,
    ) {
        let config = ModelConfig {
            d_p,
            enc_layers,
            enc_heads: heads,
            dec_layers,
            dec_heads: heads,
            n: 2 * m,
            m,
            max_pos: 200.max(2 * m),
            ..ModelConfig::preset("v1").unwrap()
        };
        let d = 128;
        let v = VOCAB_SIZE;
        let enc_layer = 4 * (d * d + d) + 2 * (2 * d) + (d * d_p + d_p) + (d_p * d + d);
        let dec_layer = 8 * (d * d + d) + 3 * (2 * d) + (d * 3 * d_p + 3 * d_p) + (3 * d_p * d + d);
        let counts = count_params(&config);
        prop_assert_eq!(counts.encoder_layer, enc_layer);
        prop_assert_eq!(counts.decoder_layer, dec_layer);
        prop_assert_eq!(counts.encoder, enc_layers * enc_layer + config.max_pos * d);
        prop_assert_eq!(counts.decoder, dec_layers * dec_layer + v * d + m * d + d * v + v);
        prop_assert_eq!(counts.total, counts.encoder + counts.decoder);
    }

    #[test]
    fn schedule_is_a_step_function(epoch in 0usize..1000) {
        let cfg = TrainConfig::default();
        prop_assert_eq!(cfg.lr_at(epoch), 8e-4 * 0.5f64.powi((epoch / 30) as i32));
        prop_assert!(cfg.lr_at(epoch + 1) <= cfg.lr_at(epoch));
    }
}

proptest! {
    #[test]
    fn violations_match_stack_simulation(tokens in prop::collection::vec(token(), 0..24)) {
        prop_assert_eq!(count_violations(&tokens), common::stack_violations(&tokens));
    }
}
