//! Prints which input stroke each decoder step attends to most, per head,
//! and writes the full maps as JSON. Expects the output of
//! `train_and_evaluate`.
//!
//!     cargo run --example attention -- /tmp/rpn-run [index]

use std::fs;
use std::path::PathBuf;

use rpnformer::model::{export_attention, Checkpoint};
use rpnformer::synth::{Dataset, Split};
use rpnformer_autograd::argmax;

fn main() -> rpnformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("rpn-run"));
    let index: usize = args.next().map(|s| s.parse().expect("index")).unwrap_or(0);
    let model = Checkpoint::load(&dir.join("model.ckpt"))?.model;
    let dataset = Dataset::load(&dir.join("data"))?;
    let sample = dataset
        .split(Split::Test)
        .nth(index)
        .ok_or(rpnformer::Error::Empty("test split"))?;

    let report = export_attention(&model, sample)?;
    println!("input  {}", report.tokens_in.join(" "));
    println!("output {}", report.tokens_out.join(" "));
    for (l, layer) in report.layers.iter().enumerate() {
        for (h, head) in layer.iter().enumerate() {
            let focus: Vec<&str> = head.iter().map(|row| report.tokens_in[argmax(row)].as_str()).collect();
            println!("layer {} head {}: {}", l + 1, h + 1, focus.join(" "));
        }
    }
    let path = dir.join(format!("attention-{index}.json"));
    fs::write(&path, serde_json::to_string(&report)?)?;
    println!("maps in {}", path.display());
    Ok(())
}
