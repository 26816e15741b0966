//! Random expressions in the three label formats, with their values and the
//! stack-violation count of a few corrupted postfix sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpnformer::grammar::{count_violations, generate, parse_rpn, GenConfig, LabelKind};
use rpnformer::vocab::{render, tokens_from_str, Token};

fn spaced(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(" ")
}

fn main() -> rpnformer::Result<()> {
    let config = GenConfig {
        max_operators: 3,
        allow_brackets: true,
        ..GenConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let tree = generate(&config, &mut rng);
        let glyphs = LabelKind::Glyphs.label(&tree);
        let rpn = LabelKind::Rpn.label(&tree);
        println!("{}", render(&glyphs));
        println!("  rpn      {}", spaced(&rpn));
        println!("  no eon   {}", spaced(&LabelKind::RpnNoEon.label(&tree)));
        println!("  value    {}", tree.evaluate()?);
        assert_eq!(parse_rpn(&rpn)?.evaluate()?, tree.evaluate()?);
    }

    println!();
    for text in ["4 eon 6 eon * =", "4 eon * 6 eon =", "+ 3 eon", "4 eon 6 eon 7 eon * ="] {
        let tokens: Vec<Token> = text.split(' ').map(Token::parse).collect::<rpnformer::Result<_>>()?;
        println!("{text:24} violations {}", count_violations(&tokens));
    }
    let infix = tokens_from_str("7.4*(3.8+9)=")?;
    println!("{:24} violations {} (infix is not postfix)", render(&infix), count_violations(&infix));
    Ok(())
}
