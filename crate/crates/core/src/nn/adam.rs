use crate::tensor::{Real, Tensor, TensorError};

/// Adam optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>], lr: f64) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(&p.shape)).collect(),
            v: params.iter().map(|p| Tensor::zeros(&p.shape)).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr,
        }
    }

    /// One bias-corrected descent step on `params`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<(), TensorError> {
        let shape_err = |a: &Tensor<T>, b: &Tensor<T>| TensorError::ShapeMismatch {
            op: "adam_step",
            shapes: vec![a.shape.clone(), b.shape.clone()],
        };
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                shapes: vec![vec![params.len()], vec![grads.len()], vec![self.m.len()]],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(shape_err(p, g));
            }
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
        let step_size = T::from_f64(self.lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2);
        let eps = T::from_f64(self.epsilon);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = b1t * m.data[k] + one_b1 * gk;
                v.data[k] = b2t * v.data[k] + one_b2 * gk * gk;
                p.data[k] = p.data[k] - step_size * m.data[k] / ((v.data[k] * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data.iter()).map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data.iter_mut() {
                *x = *x * s;
            }
        }
    }
    norm
}
