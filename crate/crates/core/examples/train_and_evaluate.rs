//! Generates a corpus, trains the smallest preset for a few epochs, scores
//! the test split and saves everything for the `ablation`, `attention` and
//! `transfer` examples. About five minutes on one core.
//!
//!     cargo run --example train_and_evaluate -- /tmp/rpn-run

use std::fs;
use std::path::PathBuf;

use rpnformer::grammar::GenConfig;
use rpnformer::model::ModelConfig;
use rpnformer::synth::{make_dataset, DatasetConfig, Split};
use rpnformer::train::{evaluate, prepare, train, Example, TrainConfig};

fn main() -> rpnformer::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("rpn-run"));
    let config = ModelConfig::preset("v1")?;
    let dataset = make_dataset(&DatasetConfig {
        count: 8000,
        gen: GenConfig::default(),
        n: config.n,
        seed: 1,
        label: config.label,
        writers: None,
    })?;
    dataset.save(&dir.join("data"))?;
    println!("samples per split: {:?}", dataset.counts());

    let cfg = TrainConfig {
        max_epochs: 20,
        patience: Some(4),
        val_limit: Some(400),
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &config, &cfg, None, |r| {
        println!(
            "epoch {:2}  train xel {:.4}  val xel {:.4}  val LA {:.3}",
            r.epoch, r.train_xel, r.val_xel, r.val_la
        )
    })?;
    outcome.best.save(&dir.join("model.ckpt"))?;

    let examples = prepare(dataset.split(Split::Test), &config)?;
    let refs: Vec<&Example> = examples.iter().collect();
    let report = evaluate(&outcome.best.model, &refs, 128)?;
    println!(
        "test ({} samples, unseen writers): LA {:.4}  CER {:.4}  XEL {:.4}  exact {:.3}",
        report.samples, report.la, report.cer, report.xel, report.exact
    );
    fs::write(dir.join("confusion.csv"), report.confusion_csv())?;
    for r in report.records.iter().filter(|r| r.ld > 0).take(5) {
        println!("  miss: {} -> {}", r.target, r.prediction);
    }
    println!("checkpoint, data and confusion.csv in {}", dir.display());
    Ok(())
}
