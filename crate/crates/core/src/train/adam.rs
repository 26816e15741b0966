use rpnformer_autograd::Tensor;

use crate::model::AdamState;

/// Adam with bias correction. Only parameters flagged trainable move.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(shapes: &[Tensor<f32>], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || shapes.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        Self {
            beta1,
            beta2,
            eps,
            state: AdamState {
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    /// One update. `grads[i]` is `None` for parameters that are frozen or
    /// received no gradient; those keep their value and moments.
    pub fn step(&mut self, params: &mut [Tensor<f32>], grads: &[Option<Tensor<f32>>], lr: f64) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (lr / c1) as f32;
        let inv_c2 = (1.0 / c2) as f32;
        let eps = self.eps as f32;
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let m = self.state.m[i].data_mut();
            let v = self.state.v[i].data_mut();
            let p = params[i].data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(grad.data()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
    }
}
