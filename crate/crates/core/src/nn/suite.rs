//! Gradient checks of the building blocks.

use rand::Rng as _;

use super::*;
use crate::rng::seeded;

pub(crate) fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = seeded(seed, 9);
    for t in store.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
}

fn sum_head(s: &mut Session<'_, f64>, v: Var) -> Result<Var, NnError> {
    Ok(s.tape.sum(v))
}

/// Finite-difference checks (tolerance 1e-5) of every block on random
/// parameters drawn from `seed`.
pub fn block_grad_checks(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut store = ParamStore::new();
    let mut rng = seeded(seed, 0);
    let gru = GruParams::new(&mut store, "g", 3, 4, &mut rng);
    let bwd = GruParams::new(&mut store, "gb", 3, 4, &mut rng);
    let lstm = LstmParams::new(&mut store, "l", 3, 2, &mut rng);
    let att = AttentionParams::new(&mut store, "a", 4, 3, 5, &mut rng);
    let pool = PoolGateParams::new(&mut store, "p", 3, &mut rng);
    let lnp = LayerNormParams::new(&mut store, "ln", 3);
    let bn = BatchRenormState::new(&mut store, "bn", 3);
    let x_id = store.uniform("x", 4, 3, &mut rng);
    randomize(&mut store, seed);
    let tol = 1e-5;
    let checks: Vec<(&str, Box<dyn Fn(&mut Session<'_, f64>) -> Result<Var, NnError>>)> = vec![
        (
            "gru",
            Box::new(|s| {
                let x = s.p(x_id);
                let h = s.tape.constant(Tensor::filled(&[4, 4], 0.3));
                let y = gru_step(s, &gru, x, h)?;
                sum_head(s, y)
            }),
        ),
        (
            "bigru",
            Box::new(|s| {
                let x = s.p(x_id);
                let xs: Vec<Var> = (0..4).map(|i| s.tape.slice_rows(x, i, i + 1)).collect::<Result<_, _>>()?;
                let out = bigru_encode(s, &gru, &bwd, &xs, None)?;
                let all = s.tape.concat(&out.states, 0)?;
                let tail = s.tape.tanh(all);
                sum_head(s, tail)
            }),
        ),
        (
            "lstm",
            Box::new(|s| {
                let x = s.p(x_id);
                let h = s.tape.constant(Tensor::filled(&[4, 2], -0.2));
                let c = s.tape.constant(Tensor::filled(&[4, 2], 0.5));
                let (h, c) = lstm_step(s, &lstm, x, h, c)?;
                let both = s.tape.concat(&[h, c], 1)?;
                sum_head(s, both)
            }),
        ),
        (
            "attention",
            Box::new(|s| {
                let x = s.p(x_id);
                let q = s.tape.constant(Tensor::from_f64(&[1, 4], &[0.2, -0.1, 0.5, 0.9]));
                let c = attention(s, &att, q, x)?;
                let sq = s.tape.mul(c, c)?;
                sum_head(s, sq)
            }),
        ),
        (
            "gated_pool",
            Box::new(|s| {
                let x = s.p(x_id);
                let reps: Vec<Var> = (0..3).map(|k| s.tape.slice_rows(x, k, k + 2)).collect::<Result<_, _>>()?;
                let y = gated_pool(s, &pool, &reps)?;
                sum_head(s, y)
            }),
        ),
        (
            "layer_norm",
            Box::new(|s| {
                let x = s.p(x_id);
                let y = lnp.forward(s, x)?;
                let w = s.tape.constant(Tensor::from_f64(&[1, 3], &[0.3, -1.2, 0.8]));
                let yw = s.tape.mul(y, w)?;
                let sq = s.tape.mul(yw, y)?;
                sum_head(s, sq)
            }),
        ),
        (
            "batch_renorm",
            Box::new(|s| {
                let x = s.p(x_id);
                let (y, _) = batch_renorm(s, x, &bn, true, 1.0, 0.0)?;
                let w = s.tape.constant(Tensor::from_f64(&[4, 1], &[0.3, -1.2, 0.8, 0.1]));
                let yw = s.tape.mul(y, w)?;
                let sq = s.tape.mul(yw, y)?;
                sum_head(s, sq)
            }),
        ),
    ];
    checks.iter().map(|(name, f)| (*name, grad_check_params(&store, f, tol))).collect()
}
