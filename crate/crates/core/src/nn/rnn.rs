use super::{NnError, ParamId, ParamStore, Session};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor, Var};

/// GRU weights with the reset and update gates fused column-wise:
/// `w_rz = [W_r | W_z]`, `u_rz = [U_r | U_z]`, `b_rz = [b_r | b_z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w_rz: ParamId,
    pub w: ParamId,
    pub u_rz: ParamId,
    pub u: ParamId,
    pub b_rz: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        GruParams {
            w_rz: store.uniform(&format!("{name}.w_rz"), input, 2 * hidden, rng),
            w: store.uniform(&format!("{name}.w"), input, hidden, rng),
            u_rz: store.uniform(&format!("{name}.u_rz"), hidden, 2 * hidden, rng),
            u: store.uniform(&format!("{name}.u"), hidden, hidden, rng),
            b_rz: store.zeros(&format!("{name}.b_rz"), 1, 2 * hidden),
            b_h: store.zeros(&format!("{name}.b_h"), 1, hidden),
            input,
            hidden,
        }
    }
}

/// One step given precomputed input projections `xrz = x W_rz + b_rz` and
/// `xh = x W + b_h`.
fn gru_step_projected<T: Real>(
    s: &mut Session<'_, T>,
    p: &GruParams,
    xrz: Var,
    xh: Var,
    h: Var,
) -> Result<Var, NnError> {
    let (u_rz, u) = (s.p(p.u_rz), s.p(p.u));
    let t = &mut s.tape;
    let hu = t.matmul(h, u_rz)?;
    let pre = t.add(xrz, hu)?;
    let gates = t.sigmoid(pre);
    let r = t.slice_cols(gates, 0, p.hidden)?;
    let z = t.slice_cols(gates, p.hidden, 2 * p.hidden)?;
    let rh = t.mul(r, h)?;
    let rhu = t.matmul(rh, u)?;
    let pre_h = t.add(xh, rhu)?;
    let cand = t.tanh(pre_h);
    // (1 - z) h + z cand
    let diff = t.sub(cand, h)?;
    let step = t.mul(z, diff)?;
    Ok(t.add(h, step)?)
}

pub fn gru_step<T: Real>(s: &mut Session<'_, T>, p: &GruParams, x: Var, h: Var) -> Result<Var, NnError> {
    let xrz = s.linear(x, p.w_rz, p.b_rz)?;
    let xh = s.linear(x, p.w, p.b_h)?;
    gru_step_projected(s, p, xrz, xh, h)
}

/// Runs a GRU over `xs` (each `batch x input`) starting from `h0`.
///
/// Where `masks[t]` (a `batch x 1` column of 0/1) is zero the state is
/// carried through unchanged. With `reverse` the steps run right to left.
/// Returns the state after each position, in positional order.
pub fn gru_sequence<T: Real>(
    s: &mut Session<'_, T>,
    p: &GruParams,
    xs: &[Var],
    masks: Option<&[Var]>,
    h0: Var,
    reverse: bool,
) -> Result<Vec<Var>, NnError> {
    if xs.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let stacked = if xs.len() == 1 { xs[0] } else { s.tape.concat(xs, 0)? };
    gru_sequence_stacked(s, p, stacked, xs.len(), masks, h0, reverse)
}

/// [`gru_sequence`] over inputs stacked time-major: rows
/// `t * batch .. (t + 1) * batch` hold step `t`.
pub fn gru_sequence_stacked<T: Real>(
    s: &mut Session<'_, T>,
    p: &GruParams,
    stacked: Var,
    steps: usize,
    masks: Option<&[Var]>,
    h0: Var,
    reverse: bool,
) -> Result<Vec<Var>, NnError> {
    if steps == 0 {
        return Err(NnError::EmptySequence);
    }
    let batch = s.tape.dims(stacked).0 / steps;
    let xrz_all = s.linear(stacked, p.w_rz, p.b_rz)?;
    let xh_all = s.linear(stacked, p.w, p.b_h)?;
    let mut out = vec![h0; steps];
    let mut h = h0;
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let xrz = s.tape.slice_rows(xrz_all, t * batch, (t + 1) * batch)?;
        let xh = s.tape.slice_rows(xh_all, t * batch, (t + 1) * batch)?;
        let next = gru_step_projected(s, p, xrz, xh, h)?;
        h = match masks {
            Some(m) => {
                let d = s.tape.sub(next, h)?;
                let md = s.tape.mul(m[t], d)?;
                s.tape.add(h, md)?
            }
            None => next,
        };
        out[t] = h;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BiGruOutput {
    /// `[forward | backward]` state at each position.
    pub states: Vec<Var>,
    pub final_forward: Var,
    pub final_backward: Var,
}

/// Bidirectional GRU from zero initial states.
pub fn bigru_encode<T: Real>(
    s: &mut Session<'_, T>,
    fwd: &GruParams,
    bwd: &GruParams,
    xs: &[Var],
    masks: Option<&[Var]>,
) -> Result<BiGruOutput, NnError> {
    if xs.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let batch = s.tape.dims(xs[0]).0;
    let h0f = s.tape.constant(Tensor::zeros(&[batch, fwd.hidden]));
    let h0b = s.tape.constant(Tensor::zeros(&[batch, bwd.hidden]));
    let f = gru_sequence(s, fwd, xs, masks, h0f, false)?;
    let b = gru_sequence(s, bwd, xs, masks, h0b, true)?;
    let states = f.iter().zip(&b).map(|(&x, &y)| s.tape.concat(&[x, y], 1)).collect::<Result<Vec<_>, _>>()?;
    Ok(BiGruOutput { states, final_forward: f[f.len() - 1], final_backward: b[0] })
}

/// LSTM weights with gates fused column-wise in the order forget, input,
/// output, cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Forget-gate bias starts at 1.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let w = store.uniform(&format!("{name}.w"), input, 4 * hidden, rng);
        let u = store.uniform(&format!("{name}.u"), hidden, 4 * hidden, rng);
        let mut bias = vec![T::zero(); 4 * hidden];
        bias[..hidden].fill(T::one());
        let b = store.add(&format!("{name}.b"), Tensor::matrix(1, 4 * hidden, bias));
        LstmParams { w, u, b, input, hidden }
    }
}

/// Returns `(h_t, c_t)`.
pub fn lstm_step<T: Real>(
    s: &mut Session<'_, T>,
    p: &LstmParams,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), NnError> {
    let xw = s.linear(x, p.w, p.b)?;
    lstm_step_projected(s, p, xw, h, c)
}

/// One LSTM step given the precomputed input projection `xw = x W + b`.
pub fn lstm_step_projected<T: Real>(
    s: &mut Session<'_, T>,
    p: &LstmParams,
    xw: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), NnError> {
    let u = s.p(p.u);
    let t = &mut s.tape;
    let hu = t.matmul(h, u)?;
    let pre = t.add(xw, hu)?;
    let n = p.hidden;
    let gates_pre = t.slice_cols(pre, 0, 3 * n)?;
    let gates = t.sigmoid(gates_pre);
    let f = t.slice_cols(gates, 0, n)?;
    let i = t.slice_cols(gates, n, 2 * n)?;
    let o = t.slice_cols(gates, 2 * n, 3 * n)?;
    let cell_pre = t.slice_cols(pre, 3 * n, 4 * n)?;
    let cand = t.tanh(cell_pre);
    let keep = t.mul(f, c)?;
    let write = t.mul(i, cand)?;
    let c_next = t.add(keep, write)?;
    let squashed = t.tanh(c_next);
    let h_next = t.mul(o, squashed)?;
    Ok((h_next, c_next))
}
