use rpnformer_autograd::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("division by zero")]
    DivisionByZero,
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("{strokes} strokes exceed the budget of {budget}")]
    StrokeBudget { strokes: usize, budget: usize },
    #[error("label of {len} tokens exceeds the decoder length {max}")]
    LabelBudget { len: usize, max: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("no glyph matches {0}")]
    MissingGlyph(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    Diverged { epoch: usize, step: usize, loss: f32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
