//! Generates a small corpus, writes it to a directory and reads it back.
//!
//!     cargo run --example synth_dataset -- /tmp/rpn-data

use std::path::PathBuf;

use rpnformer::grammar::{GenConfig, LabelKind};
use rpnformer::synth::{make_dataset, tokenize, Dataset, DatasetConfig};

fn main() -> rpnformer::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("rpn-data"));
    let config = DatasetConfig {
        count: 200,
        gen: GenConfig::default(),
        n: 24,
        seed: 7,
        label: LabelKind::Rpn,
        writers: None,
    };
    let dataset = make_dataset(&config)?;
    let manifest = dataset.save(&dir)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);

    let back = Dataset::load(&dir)?;
    assert_eq!(back.samples.len(), dataset.samples.len());

    for sample in back.samples.iter().take(3) {
        let input = tokenize(sample, config.n, None)?;
        println!(
            "{:14} writer {:2} {:?}  {} strokes, {} points, label {}",
            sample.ascii,
            sample.writer_id,
            sample.split,
            input.stroke_count(),
            sample.strokes.iter().map(|s| s.points.len()).sum::<usize>(),
            LabelKind::Rpn.label(&sample.tree()?).len()
        );
    }
    println!("written to {}", dir.display());
    Ok(())
}
