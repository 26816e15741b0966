//! Removes the `=` glyph from every test sample and checks whether the
//! model still writes it. Expects the output of `train_and_evaluate`.
//!
//!     cargo run --example ablation -- /tmp/rpn-run [equals|operator|closing_bracket]

use std::path::PathBuf;

use rpnformer::model::Checkpoint;
use rpnformer::synth::{Dataset, Split};
use rpnformer::train::{ablate_and_score, AblationTarget};

fn main() -> rpnformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("rpn-run"));
    let target: AblationTarget = args.next().as_deref().unwrap_or("equals").parse()?;
    let model = Checkpoint::load(&dir.join("model.ckpt"))?.model;
    let dataset = Dataset::load(&dir.join("data"))?;
    let samples: Vec<_> = dataset.split(Split::Test).collect();

    let report = ablate_and_score(&model, &samples, target, 128)?;
    println!(
        "{:?}: {} evaluated, {} skipped, restored {:.3}, valid {:.3}, LD {:.3} (vs full label {:.3})",
        report.target,
        report.evaluated,
        report.skipped,
        report.restored_fraction,
        report.valid_fraction,
        report.mean_ld,
        report.mean_ld_full
    );
    for row in report.rows.iter().take(5) {
        println!("  {:20} -> {}", row.input, row.prediction);
    }
    Ok(())
}
