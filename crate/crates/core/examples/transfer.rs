//! Reuses the encoder of a glyph model for postfix output: first with the
//! encoder frozen, then fine-tuning everything. Expects the output of
//! `train_and_evaluate`.
//!
//!     cargo run --example transfer -- /tmp/rpn-run

use std::path::PathBuf;

use rpnformer::grammar::GenConfig;
use rpnformer::model::{Checkpoint, ModelConfig};
use rpnformer::synth::{make_dataset, DatasetConfig, Split};
use rpnformer::train::{evaluate, prepare, train, EncoderMode, Example, TrainConfig};

fn main() -> rpnformer::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("rpn-run"));
    let source = Checkpoint::load(&dir.join("model.ckpt"))?;
    let config = ModelConfig::preset("v10")?;
    let dataset = make_dataset(&DatasetConfig {
        count: 2000,
        gen: GenConfig::default(),
        n: config.n,
        seed: 2,
        label: config.label,
        writers: None,
    })?;
    let examples = prepare(dataset.split(Split::Test), &config)?;
    let test: Vec<&Example> = examples.iter().collect();

    let mut from = source;
    for mode in [EncoderMode::Frozen, EncoderMode::FineTune] {
        let cfg = TrainConfig {
            max_epochs: 8,
            encoder_mode: mode,
            ..TrainConfig::default()
        };
        let outcome = train(&dataset, &config, &cfg, Some(&from), |r| {
            println!("{mode:?} epoch {}  val LA {:.3}", r.epoch, r.val_la)
        })?;
        let report = evaluate(&outcome.best.model, &test, 128)?;
        let rar = report.rar.expect("postfix labels");
        println!(
            "{mode:?}: test LA {:.4}, CER {:.4}, violation-free share in [{:.3}, {:.3}]",
            report.la, report.cer, rar.lower, rar.upper
        );
        from = outcome.best;
    }
    Ok(())
}
