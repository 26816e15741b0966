//! Parameter counts for every preset.

use rpnformer::model::{count_params, ModelConfig};

fn main() -> rpnformer::Result<()> {
    println!("{:6} {:>10} {:>10} {:>10} {:>7}", "preset", "encoder", "decoder", "total", "delta");
    for name in ModelConfig::PRESETS {
        let c = count_params(&ModelConfig::preset(name)?);
        println!(
            "{name:6} {:>10} {:>10} {:>10} {:>+7}",
            c.encoder, c.decoder, c.total, c.decoder_delta
        );
    }
    Ok(())
}
