use std::sync::{Arc, OnceLock};

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpnformer::grammar::{count_violations, parse_infix, GenConfig, LabelKind};
use rpnformer::model::{greedy_decode, Model, ModelConfig};
use rpnformer::synth::{
    synth_expression, tokenize, Dataset, DatasetConfig, ExpressionSample, Split, WriterStyle,
    TOKEN_WIDTH,
};
use rpnformer::train::{train, TrainConfig};
use rpnformer::vocab::{tokens_from_str, Token, VOCAB_SIZE};
use rpnformer_service::recognize::RecognizeResponse;
use rpnformer_service::server::router;
use serde_json::{json, Value};
use tower::ServiceExt;

const EXPRESSIONS: [&str; 4] = ["4*6=", "7+2=", "9-5=", "8/3="];

fn tiny() -> ModelConfig {
    ModelConfig {
        d_f: TOKEN_WIDTH,
        d_p: 32,
        enc_layers: 1,
        enc_heads: 2,
        dec_layers: 1,
        dec_heads: 2,
        n: 24,
        m: 12,
        vocab_size: VOCAB_SIZE,
        alpha: 1.0,
        max_pos: 24,
        label: LabelKind::Glyphs,
    }
}

fn draw(text: &str, seed: u64) -> ExpressionSample {
    let tree = parse_infix(&tokens_from_str(text).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let style = WriterStyle::random(&mut rng);
    synth_expression(&tree, &style, 24, &mut rng).unwrap()
}

/// A small model that tells the four expressions apart.
fn trained() -> Arc<Model> {
    static MODEL: OnceLock<Arc<Model>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let mut samples = Vec::new();
            for seed in 0..160u64 {
                let mut s = draw(EXPRESSIONS[seed as usize % 4], seed);
                s.split = if seed < 128 { Split::Train } else { Split::Val };
                samples.push(s);
            }
            let dataset = Dataset {
                config: DatasetConfig {
                    count: samples.len(),
                    gen: GenConfig::default(),
                    n: 24,
                    seed: 0,
                    label: LabelKind::Glyphs,
                    writers: None,
                },
                samples,
            };
            let cfg = TrainConfig {
                max_epochs: 120,
                batch_size: 8,
                patience: Some(20),
                seed: 1,
                ..TrainConfig::default()
            };
            let out = train(&dataset, &tiny(), &cfg, None, |_| {}).unwrap();
            Arc::new(out.best.model)
        })
        .clone()
}

fn untrained() -> Arc<Model> {
    Arc::new(Model::init(tiny(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap())
}

/// Device pixels and milliseconds, as a browser would send them.
fn device_body(sample: &ExpressionSample) -> Value {
    let strokes: Vec<Vec<[f64; 3]>> = sample
        .strokes
        .iter()
        .map(|s| {
            s.points
                .iter()
                .map(|p| [40.0 + 600.0 * p.x, 25.0 + 600.0 * p.y, 1e3 * p.t + 17.0])
                .collect()
        })
        .collect();
    json!({ "strokes": strokes })
}

async fn call(model: Arc<Model>, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let response = router(model).oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = to_bytes(response.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn post(model: Arc<Model>, body: &Value) -> (StatusCode, Value) {
    call(model, "POST", "/recognize", Some(body.to_string())).await
}

#[tokio::test]
async fn empty_stroke_list_is_rejected() {
    let (status, body) = post(untrained(), &json!({ "strokes": [] })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "strokes");
}

#[tokio::test]
async fn malformed_bodies_name_the_field() {
    let cases = [
        (r#"{"strokes":[[[0,0,0],[1,1]]]}"#, "strokes[0][1]"),
        (r#"{"strokes":[[[0,0,0]]]}"#, "strokes[0]"),
        (r#"{"strokes":[[[0,0,0],[1,1,1]]],"extra":1}"#, "extra"),
        (r#"{"points":[]}"#, "points"),
        ("{}", "."),
        ("not json", "."),
    ];
    for (body, field) in cases {
        let (status, reply) = call(untrained(), "POST", "/recognize", Some(body.into())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(reply["field"], field, "{body}: {reply}");
        assert!(reply["error"].as_str().is_some_and(|e| !e.is_empty()));
    }
}

#[tokio::test]
async fn stroke_overflow_is_unprocessable() {
    let stroke = json!([[0, 0, 0], [5, 5, 10]]);
    let strokes: Vec<Value> = (0..23).map(|_| stroke.clone()).collect();
    let (status, body) = post(untrained(), &json!({ "strokes": strokes })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("budget of 22"));
}

#[tokio::test]
async fn model_and_health() {
    let (status, body) = call(untrained(), "GET", "/healthz", None).await;
    assert_eq!((status, body["status"].as_str()), (StatusCode::OK, Some("ok")));
    let (status, body) = call(untrained(), "GET", "/model", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["config"]["n"], 24);
    assert_eq!(body["vocab"].as_array().unwrap().len(), VOCAB_SIZE);
    assert_eq!(body["vocab"][3]["token"], "eon");
}

#[tokio::test]
async fn synthetic_expression_round_trips() {
    let model = trained();
    // writer seeds past the training range
    for seed in 1000..1008u64 {
        let text = EXPRESSIONS[seed as usize % 4];
        let sample = draw(text, seed);
        let (status, body) = post(model.clone(), &device_body(&sample)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let reply: RecognizeResponse = serde_json::from_value(body).unwrap();

        // device scaling must not change what the model sees
        let input = tokenize(&sample, 24, None).unwrap();
        let direct = greedy_decode(&model, &input, false).unwrap();
        let direct: Vec<&str> = direct.tokens[1..].iter().map(|t| t.as_str()).collect();
        assert_eq!(reply.tokens, direct);

        let tail: Vec<&str> = reply.tokens.iter().rev().take(2).map(String::as_str).collect();
        assert_eq!(tail, ["eos", "="], "{text}: {:?}", reply.tokens);
        assert_eq!(reply.ascii, text);
        let value = parse_infix(&tokens_from_str(text).unwrap()).unwrap().evaluate().unwrap();
        assert_eq!(reply.value, Some(value.to_string()));
        assert_eq!(reply.attention.tokens_out, reply.tokens);
        assert_eq!(reply.attention.tokens_in.len(), sample.strokes.len() + 2);
    }
}

#[tokio::test]
async fn identical_requests_get_identical_answers() {
    let body = device_body(&draw("4*6=", 77));
    let (_, mut a) = post(untrained(), &body).await;
    let (_, mut b) = post(untrained(), &body).await;
    assert!(a["ms"].as_f64().unwrap() >= 0.0);
    a["ms"] = json!(0);
    b["ms"] = json!(0);
    assert_eq!(a, b);
}

#[tokio::test]
async fn violations_agree_with_the_offline_count() {
    let model = untrained();
    for seed in 0..6 {
        let (status, body) = post(model.clone(), &device_body(&draw(EXPRESSIONS[seed % 4], seed as u64))).await;
        assert_eq!(status, StatusCode::OK);
        let reply: RecognizeResponse = serde_json::from_value(body).unwrap();
        let tokens: Vec<Token> = reply.tokens.iter().map(|t| Token::parse(t).unwrap()).collect();
        assert_eq!(reply.violations, count_violations(&tokens));
    }
}
