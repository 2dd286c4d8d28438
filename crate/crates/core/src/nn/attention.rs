use super::{NnError, ParamId, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::{Real, TensorError, Var};

/// Additive attention: `e_i = tanh(q W_a + k_i U_a) v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub w_a: ParamId,
    pub u_a: ParamId,
    pub v: ParamId,
}

impl AttentionParams {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        query: usize,
        key: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        AttentionParams {
            w_a: store.uniform(&format!("{name}.w_a"), query, hidden, rng),
            u_a: store.uniform(&format!("{name}.u_a"), key, hidden, rng),
            v: store.uniform(&format!("{name}.v"), hidden, 1, rng),
        }
    }
}

/// Keys with their projection `k U_a` cached, grouped into segments
/// (one segment per query row).
#[derive(Debug, Clone)]
pub struct AttentionKeys {
    pub keys: Var,
    proj: Var,
    segment: Vec<usize>,
    segments: usize,
}

impl AttentionKeys {
    /// `segment[i]` names the query row that key row `i` belongs to.
    pub fn new<T: Real>(
        s: &mut Session<'_, T>,
        p: &AttentionParams,
        keys: Var,
        segment: Vec<usize>,
        segments: usize,
    ) -> Result<Self, NnError> {
        if s.tape.dims(keys).0 == 0 {
            return Err(NnError::EmptyKeys);
        }
        let u = s.p(p.u_a);
        let proj = s.tape.matmul(keys, u)?;
        Ok(AttentionKeys { keys, proj, segment, segments })
    }

    /// Attention weights (`keys x 1`) and contexts (`segments x key`) for
    /// queries `q` (`segments x query`).
    pub fn attend<T: Real>(&self, s: &mut Session<'_, T>, p: &AttentionParams, q: Var) -> Result<(Var, Var), NnError> {
        let (w, v) = (s.p(p.w_a), s.p(p.v));
        let t = &mut s.tape;
        if t.dims(q).0 != self.segments {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                shapes: vec![t.shape(q).to_vec(), vec![self.segments]],
            }
            .into());
        }
        let qw = t.matmul(q, w)?;
        let spread = t.gather_rows(qw, &self.segment)?;
        let pre = t.add(spread, self.proj)?;
        let act = t.tanh(pre);
        let e = t.matmul(act, v)?;
        let alpha = t.segment_softmax(e, &self.segment, self.segments)?;
        let weighted = t.mul(self.keys, alpha)?;
        let context = t.segment_sum(weighted, &self.segment, self.segments)?;
        Ok((alpha, context))
    }
}

/// Context vector for a single query row over `keys` (`n x key`).
pub fn attention<T: Real>(s: &mut Session<'_, T>, p: &AttentionParams, q: Var, keys: Var) -> Result<Var, NnError> {
    let n = s.tape.dims(keys).0;
    let k = AttentionKeys::new(s, p, keys, vec![0; n], 1)?;
    Ok(k.attend(s, p, q)?.1)
}

/// Gate `sigmoid([a_k, mean] W + b)` for pooling representations of one atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGateParams {
    pub w: ParamId,
    pub b: ParamId,
    pub width: usize,
}

impl PoolGateParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize, rng: &mut Rng) -> Self {
        PoolGateParams {
            w: store.uniform(&format!("{name}.w"), 2 * width, width, rng),
            b: store.zeros(&format!("{name}.b"), 1, width),
            width,
        }
    }
}

/// `(1/k) sum_k a_k * sigmoid([a_k, mean_k a_k] W + b)`, row by row.
///
/// Each of the `k` inputs holds one representation per atom (`atoms x width`),
/// rows aligned across inputs.
pub fn gated_pool<T: Real>(s: &mut Session<'_, T>, p: &PoolGateParams, reps: &[Var]) -> Result<Var, NnError> {
    if reps.is_empty() {
        return Err(TensorError::ShapeMismatch { op: "gated_pool", shapes: vec![] }.into());
    }
    let k = T::from_f64(reps.len() as f64);
    let mut total = reps[0];
    for &r in &reps[1..] {
        total = s.tape.add(total, r)?;
    }
    let mean = s.tape.scale(total, T::one() / k);
    let mut pooled = None;
    for &a in reps {
        let joined = s.tape.concat(&[a, mean], 1)?;
        let pre = s.linear(joined, p.w, p.b)?;
        let gate = s.tape.sigmoid(pre);
        let gated = s.tape.mul(a, gate)?;
        pooled = Some(match pooled {
            None => gated,
            Some(acc) => s.tape.add(acc, gated)?,
        });
    }
    Ok(s.tape.scale(pooled.expect("nonempty"), T::one() / k))
}
