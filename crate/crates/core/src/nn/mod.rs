//! Recurrent cells, attention, pooling, normalization and the Adam optimizer,
//! all built on [`crate::tensor::Tape`].
//!
//! Activations are row-major batches: one row per example.

mod adam;
mod attention;
mod norm;
mod rnn;
mod suite;

use std::collections::BTreeMap;

use rand::Rng as _;
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{finite_difference_check_at, GradCheckReport, Real, Tape, Tensor, TensorError, Var};

pub use adam::{clip_global_norm, AdamState};
pub use attention::{attention, gated_pool, AttentionKeys, AttentionParams, PoolGateParams};
pub use norm::{batch_renorm, layer_norm, renorm_clips, BatchRenormState, LayerNormParams, RenormUpdate};
pub use rnn::{
    bigru_encode, gru_sequence, gru_sequence_stacked, gru_step, lstm_step, lstm_step_projected, BiGruOutput, GruParams,
    LstmParams,
};
pub use suite::block_grad_checks;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("attention over zero keys")]
    EmptyKeys,
}

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: BTreeMap::new() }
    }

    /// Registers `tensor` under `name`; panics on a duplicate name.
    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// `rows x cols` matrix drawn from uniform(-1/sqrt(rows), 1/sqrt(rows)).
    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
        let bound = 1.0 / (rows.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::from_f64(rng.gen_range(-bound..=bound))).collect();
        self.add(name, Tensor::matrix(rows, cols, data))
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[rows, cols]))
    }

    pub fn filled(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.add(name, Tensor::filled(&[rows, cols], T::from_f64(value)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// A tape plus lazily bound parameters for one forward/backward pass.
pub struct Session<'s, T> {
    pub tape: Tape<T>,
    store: &'s ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'s, T: Real> Session<'s, T> {
    /// Parameters are differentiable leaves.
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Session { tape: Tape::new(), store, bound: vec![None; store.len()], trainable: true }
    }

    /// Parameters are constants; only explicit `tape.param` leaves get gradients.
    pub fn frozen(store: &'s ParamStore<T>) -> Self {
        Session { trainable: false, ..Session::new(store) }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// The tape variable for parameter `id`.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = if self.trainable { self.tape.param(value) } else { self.tape.constant(value) };
        self.bound[id.0] = Some(v);
        v
    }

    /// Affine map `x W + b`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var, TensorError> {
        let (w, b) = (self.p(w), self.p(b));
        let xw = self.tape.matmul(x, w)?;
        self.tape.add(xw, b)
    }

    /// Gradients of `root` for every parameter, zero where unused.
    pub fn param_grads(&self, root: Var) -> Result<Vec<Tensor<T>>, TensorError> {
        let mut g = self.tape.backward(root)?;
        Ok(self
            .bound
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Some(v) => g.take(*v),
                None => Tensor::zeros(&self.store.get(ParamId(i)).shape),
            })
            .collect())
    }
}

/// Dense layer `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        Linear {
            w: store.uniform(&format!("{name}.w"), input, output, rng),
            b: store.zeros(&format!("{name}.b"), 1, output),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var, TensorError> {
        s.linear(x, self.w, self.b)
    }
}

/// Finite-difference check of every parameter gradient of `f`.
pub fn grad_check_params<F>(store: &ParamStore<f64>, f: F, tolerance: f64) -> GradCheckReport
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var, NnError>,
{
    let coords: Vec<(usize, usize)> =
        store.tensors().iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |k| (i, k))).collect();
    grad_check_params_at(store, f, &coords, tolerance)
}

/// Finite-difference check of the parameter coordinates `(param, index)`.
pub fn grad_check_params_at<F, E>(
    store: &ParamStore<f64>,
    f: F,
    coords: &[(usize, usize)],
    tolerance: f64,
) -> GradCheckReport
where
    F: Fn(&mut Session<'_, f64>) -> Result<Var, E>,
    E: std::fmt::Display + From<TensorError>,
{
    let analytic = {
        let mut s = Session::new(store);
        match f(&mut s).and_then(|root| Ok(s.param_grads(root)?)) {
            Ok(g) => g,
            Err(e) => return GradCheckReport::failed(e),
        }
    };
    let mut work = store.clone();
    finite_difference_check_at(
        store.tensors(),
        &analytic,
        coords,
        |values| {
            work.tensors_mut().clone_from_slice(values);
            let mut s = Session::frozen(&work);
            let root = f(&mut s)?;
            let v = s.tape.value(root);
            if v.len() != 1 {
                return Err(E::from(TensorError::NonScalarRoot(v.shape.clone())));
            }
            Ok(v.data[0])
        },
        tolerance,
    )
}

#[cfg(test)]
mod tests;
