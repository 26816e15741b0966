use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rpnformer::model::{count_params, Model};
use rpnformer::vocab;
use serde_json::json;

use crate::recognize::{recognize, RecognizeError, RecognizeRequest};

/// Routes over one shared, read-only model.
pub fn router(model: Arc<Model>) -> Router {
    Router::new()
        .route("/recognize", post(recognize_handler))
        .route("/model", get(model_handler))
        .route("/healthz", get(|| async { Json(json!({ "status": "ok" })) }))
        .with_state(model)
}

pub async fn serve(model: Model, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(model))).await
}

fn error(status: StatusCode, body: serde_json::Value) -> Response {
    (status, Json(body)).into_response()
}

async fn recognize_handler(State(model): State<Arc<Model>>, body: Bytes) -> Response {
    let de = &mut serde_json::Deserializer::from_slice(&body);
    let request: RecognizeRequest = match serde_path_to_error::deserialize(de) {
        Ok(r) => r,
        Err(e) => {
            let field = e.path().to_string();
            return error(
                StatusCode::BAD_REQUEST,
                json!({ "error": e.inner().to_string(), "field": field }),
            );
        }
    };
    // decoding is CPU bound, keep it off the reactor
    let result = tokio::task::spawn_blocking(move || recognize(&model, &request)).await;
    match result {
        Ok(Ok(response)) => Json(response).into_response(),
        Ok(Err(RecognizeError::Invalid { field, message })) => error(
            StatusCode::BAD_REQUEST,
            json!({ "error": message, "field": field }),
        ),
        Ok(Err(e @ RecognizeError::Overflow { .. })) => error(
            StatusCode::UNPROCESSABLE_ENTITY,
            json!({ "error": e.to_string(), "field": "strokes" }),
        ),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() })),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e.to_string() })),
    }
}

async fn model_handler(State(model): State<Arc<Model>>) -> Json<serde_json::Value> {
    let vocab: Vec<_> = vocab::table()
        .into_iter()
        .map(|(index, token)| json!({ "index": index, "token": token }))
        .collect();
    Json(json!({
        "config": model.config,
        "params": count_params(&model.config),
        "vocab": vocab,
    }))
}
