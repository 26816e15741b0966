//! Trains the smallest preset until it reproduces 64 training samples.
//! Takes about a minute on one core.

use std::time::Instant;

use rpnformer::grammar::GenConfig;
use rpnformer::model::ModelConfig;
use rpnformer::synth::{make_dataset, DatasetConfig, Split};
use rpnformer::train::{evaluate, prepare, train, Example, TrainConfig};

fn main() -> rpnformer::Result<()> {
    let config = ModelConfig::preset("v1")?;
    let mut dataset = make_dataset(&DatasetConfig {
        count: 64,
        gen: GenConfig::default(),
        n: config.n,
        seed: 7,
        label: config.label,
        writers: Some(5),
    })?;
    for sample in &mut dataset.samples {
        sample.split = Split::Train;
    }
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 300,
        patience: Some(20),
        select_on: Split::Train,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train(&dataset, &config, &cfg, None, |r| {
        if r.epoch % 5 == 0 {
            println!(
                "epoch {:3}  lr {:.1e}  train xel {:.4}  LA {:.3}  {:.0}s",
                r.epoch,
                r.lr,
                r.train_xel,
                r.val_la,
                start.elapsed().as_secs_f64()
            );
        }
    })?;

    let examples = prepare(dataset.split(Split::Train), &config)?;
    let refs: Vec<&Example> = examples.iter().collect();
    let report = evaluate(&outcome.best.model, &refs, 64)?;
    println!(
        "best epoch {}: LA {:.4}, exact {:.3}, CER {:.4}",
        outcome.best_epoch, report.la, report.exact, report.cer
    );
    for record in report.records.iter().take(4) {
        println!("  {:28} -> {}", record.target, record.prediction);
    }
    Ok(())
}
