//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! Just enough machinery for an encoder-decoder Transformer and its
//! cross-entropy training: batched matmuls, masked softmax, layer norm,
//! embeddings and the usual shape plumbing. Everything runs on one thread
//! over row-major buffers; matrix products go through `matrixmultiply`.

mod error;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use scalar::{Scalar, Strides};
pub use tape::{Tape, Var};
pub use tensor::{argmax, Tensor};

/// Row-wise softmax of a plain tensor along its last axis.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let width = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}
