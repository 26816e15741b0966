//! Draws "4*6=" with the synthesizer, scales it to screen pixels and sends
//! it through the HTTP router without opening a socket. Pass a checkpoint
//! (e.g. from the core `train_and_evaluate` example); otherwise an
//! untrained model answers.
//!
//!     cargo run -p rpnformer-service --example recognize_in_process -- model.ckpt

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::Request;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpnformer::grammar::parse_infix;
use rpnformer::model::{Checkpoint, Model, ModelConfig};
use rpnformer::synth::{synth_expression, WriterStyle};
use rpnformer::vocab::tokens_from_str;
use rpnformer_service::server::router;
use serde_json::json;
use tower::ServiceExt;

#[tokio::main(flavor = "current_thread")]
async fn main() -> anyhow::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => Checkpoint::load(path.as_ref())?.model,
        None => Model::init(ModelConfig::preset("v1")?, &mut ChaCha8Rng::seed_from_u64(0))?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tree = parse_infix(&tokens_from_str("4*6=")?)?;
    let style = WriterStyle::random(&mut rng);
    let sample = synth_expression(&tree, &style, model.config.n, &mut rng)?;
    // pixels on a 800px wide canvas, milliseconds
    let strokes: Vec<Vec<[f64; 3]>> = sample
        .strokes
        .iter()
        .map(|s| s.points.iter().map(|p| [80.0 + 640.0 * p.x, 60.0 + 640.0 * p.y, 1e3 * p.t]).collect())
        .collect();

    let request = Request::post("/recognize")
        .header("content-type", "application/json")
        .body(Body::from(json!({ "strokes": strokes }).to_string()))?;
    let response = router(Arc::new(model)).oneshot(request).await?;
    println!("{}", response.status());
    let bytes = to_bytes(response.into_body(), usize::MAX).await?;
    let reply: serde_json::Value = serde_json::from_slice(&bytes)?;
    println!("strokes    {}", sample.strokes.len());
    println!("tokens     {}", reply["tokens"]);
    println!("ascii      {}", reply["ascii"]);
    println!("violations {}", reply["violations"]);
    println!("value      {}", reply["value"]);
    println!("ms         {}", reply["ms"]);
    Ok(())
}
