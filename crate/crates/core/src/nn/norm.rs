use super::{NnError, ParamId, ParamStore, Session};
use crate::tensor::{Real, Tensor, Var};

/// Per-row layer normalization with learned gain and bias.
pub fn layer_norm<T: Real>(s: &mut Session<'_, T>, x: Var, gain: Var, bias: Var, epsilon: f64) -> Result<Var, NnError> {
    let t = &mut s.tape;
    let mu = t.mean_axis(x, 1)?;
    let centered = t.sub(x, mu)?;
    let sq = t.mul(centered, centered)?;
    let var = t.mean_axis(sq, 1)?;
    let shifted = t.affine(var, T::one(), T::from_f64(epsilon));
    let sd = t.sqrt(shifted);
    let normed = t.div(centered, sd)?;
    let scaled = t.mul(normed, gain)?;
    Ok(t.add(scaled, bias)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub epsilon: f64,
}

impl LayerNormParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        LayerNormParams {
            gain: store.filled(&format!("{name}.gain"), 1, width, 1.0),
            bias: store.zeros(&format!("{name}.bias"), 1, width),
            epsilon: 1e-5,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, NnError> {
        let (g, b) = (s.p(self.gain), s.p(self.bias));
        layer_norm(s, x, g, b, self.epsilon)
    }
}

/// Batch renormalization statistics and learned affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRenormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub gain: ParamId,
    pub bias: ParamId,
}

/// New running statistics produced by a training-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RenormUpdate<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchRenormState<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        BatchRenormState {
            running_mean: vec![T::zero(); width],
            running_var: vec![T::one(); width],
            momentum: 0.99,
            epsilon: 1e-5,
            gain: store.filled(&format!("{name}.gain"), 1, width, 1.0),
            bias: store.zeros(&format!("{name}.bias"), 1, width),
        }
    }

    pub fn apply(&mut self, update: RenormUpdate<T>) {
        self.running_mean = update.running_mean;
        self.running_var = update.running_var;
    }
}

/// Clip bounds `(r_max, d_max)` ramped linearly from `(1, 0)` to `(3, 5)`
/// over `warmup` steps.
pub fn renorm_clips(step: u64, warmup: u64) -> (f64, f64) {
    let t = if warmup == 0 { 1.0 } else { (step as f64 / warmup as f64).min(1.0) };
    (1.0 + 2.0 * t, 5.0 * t)
}

/// Normalizes the columns of `x` (`batch x width`).
///
/// In training mode the batch statistics are used, corrected by the
/// gradient-free factors `r` and `d`, and the updated running statistics are
/// returned. In inference mode the running statistics are used.
pub fn batch_renorm<T: Real>(
    s: &mut Session<'_, T>,
    x: Var,
    state: &BatchRenormState<T>,
    training: bool,
    r_max: f64,
    d_max: f64,
) -> Result<(Var, Option<RenormUpdate<T>>), NnError> {
    let (gain, bias) = (s.p(state.gain), s.p(state.bias));
    let width = state.running_mean.len();
    let eps = state.epsilon;
    let run_sd: Vec<f64> = state.running_var.iter().map(|v| (v.as_f64() + eps).sqrt()).collect();
    let t = &mut s.tape;
    let (y, update) = if training {
        let mu = t.mean_axis(x, 0)?;
        let centered = t.sub(x, mu)?;
        let sq = t.mul(centered, centered)?;
        let var = t.mean_axis(sq, 0)?;
        let shifted = t.affine(var, T::one(), T::from_f64(eps));
        let sd = t.sqrt(shifted);
        let xhat = t.div(centered, sd)?;
        let (mu_v, var_v, sd_v) = (t.value(mu).to_f64(), t.value(var).to_f64(), t.value(sd).to_f64());
        let r: Vec<f64> = (0..width).map(|j| (sd_v[j] / run_sd[j]).clamp(1.0 / r_max, r_max)).collect();
        let d: Vec<f64> =
            (0..width).map(|j| ((mu_v[j] - state.running_mean[j].as_f64()) / run_sd[j]).clamp(-d_max, d_max)).collect();
        let rv = t.constant(Tensor::from_f64(&[1, width], &r));
        let dv = t.constant(Tensor::from_f64(&[1, width], &d));
        let scaled = t.mul(xhat, rv)?;
        let y = t.add(scaled, dv)?;
        let m = state.momentum;
        let update = RenormUpdate {
            running_mean: (0..width)
                .map(|j| T::from_f64(m * state.running_mean[j].as_f64() + (1.0 - m) * mu_v[j]))
                .collect(),
            running_var: (0..width)
                .map(|j| T::from_f64(m * state.running_var[j].as_f64() + (1.0 - m) * var_v[j]))
                .collect(),
        };
        (y, Some(update))
    } else {
        let mean = Tensor::from_f64(&[1, width], &state.running_mean.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
        let mean = t.constant(mean);
        let sd = t.constant(Tensor::from_f64(&[1, width], &run_sd));
        let centered = t.sub(x, mean)?;
        (t.div(centered, sd)?, None)
    };
    let scaled = t.mul(y, gain)?;
    Ok((t.add(scaled, bias)?, update))
}
