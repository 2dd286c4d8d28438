use proptest::prelude::*;
use rand::Rng as _;

use super::suite::randomize;
use super::*;
use crate::rng::seeded;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row(s: &mut Session<'_, f64>, v: &[f64]) -> Var {
    s.tape.constant(Tensor::row(v.to_vec()))
}

fn values(s: &Session<'_, f64>, v: Var) -> Vec<f64> {
    s.tape.value(v).data.clone()
}

fn random_vec(rng: &mut crate::rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn zero_all(store: &mut ParamStore<f64>) {
    for t in store.tensors_mut() {
        t.data.fill(0.0);
    }
}

/// Row vector times matrix, by loops.
fn vecmat(x: &[f64], m: &Tensor<f64>) -> Vec<f64> {
    let (r, c) = m.dims();
    assert_eq!(r, x.len());
    (0..c).map(|j| (0..r).map(|i| x[i] * m.at(i, j)).sum()).collect()
}

fn gru_oracle(store: &ParamStore<f64>, p: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = p.hidden;
    let xrz = vecmat(x, store.get(p.w_rz));
    let hrz = vecmat(h, store.get(p.u_rz));
    let brz = &store.get(p.b_rz).data;
    let r: Vec<f64> = (0..n).map(|j| sigmoid(xrz[j] + hrz[j] + brz[j])).collect();
    let z: Vec<f64> = (0..n).map(|j| sigmoid(xrz[n + j] + hrz[n + j] + brz[n + j])).collect();
    let rh: Vec<f64> = (0..n).map(|j| r[j] * h[j]).collect();
    let xw = vecmat(x, store.get(p.w));
    let rhu = vecmat(&rh, store.get(p.u));
    let bh = &store.get(p.b_h).data;
    (0..n).map(|j| (1.0 - z[j]) * h[j] + z[j] * (xw[j] + rhu[j] + bh[j]).tanh()).collect()
}

#[test]
fn gru_with_zero_params_halves_state() {
    let mut store = ParamStore::new();
    let p = GruParams::new(&mut store, "g", 3, 2, &mut seeded(0, 0));
    zero_all(&mut store);
    let mut s = Session::new(&store);
    let x = row(&mut s, &[0.3, -1.0, 2.0]);
    let h = row(&mut s, &[1.0, 0.0]);
    let out = gru_step(&mut s, &p, x, h).unwrap();
    assert_eq!(values(&s, out), vec![0.5, 0.0]);
}

#[test]
fn gru_closed_update_gate_copies_state() {
    let mut store = ParamStore::new();
    let p = GruParams::new(&mut store, "g", 3, 2, &mut seeded(1, 0));
    store.get_mut(p.b_rz).data[2..].fill(-50.0);
    let mut s = Session::new(&store);
    let x = row(&mut s, &[0.3, -1.0, 2.0]);
    let h = row(&mut s, &[0.7, -0.2]);
    let out = gru_step(&mut s, &p, x, h).unwrap();
    for (a, b) in values(&s, out).iter().zip([0.7, -0.2]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gru_matches_scalar_oracle() {
    let mut rng = seeded(0, 0);
    let mut store = ParamStore::new();
    let p = GruParams::new(&mut store, "g", 4, 3, &mut rng);
    for t in store.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    let (x, h) = (random_vec(&mut rng, 4), random_vec(&mut rng, 3));
    let mut s = Session::new(&store);
    let (xv, hv) = (row(&mut s, &x), row(&mut s, &h));
    let out = gru_step(&mut s, &p, xv, hv).unwrap();
    for (a, b) in values(&s, out).iter().zip(gru_oracle(&store, &p, &x, &h)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn gru_shape_mismatch() {
    let mut store = ParamStore::new();
    let p = GruParams::new(&mut store, "g", 3, 2, &mut seeded(0, 0));
    let mut s = Session::new(&store);
    let x = row(&mut s, &[0.0; 4]);
    let h = row(&mut s, &[0.0; 2]);
    assert!(matches!(gru_step(&mut s, &p, x, h), Err(NnError::Tensor(TensorError::ShapeMismatch { .. }))));
}

fn tied_bigru() -> (ParamStore<f64>, GruParams, GruParams) {
    let mut store = ParamStore::new();
    let mut rng = seeded(2, 0);
    let f = GruParams::new(&mut store, "f", 2, 3, &mut rng);
    let b = GruParams::new(&mut store, "b", 2, 3, &mut rng);
    for (src, dst) in [(f.w_rz, b.w_rz), (f.w, b.w), (f.u_rz, b.u_rz), (f.u, b.u)] {
        let t = store.get(src).clone();
        *store.get_mut(dst) = t;
    }
    (store, f, b)
}

#[test]
fn bigru_symmetry_and_edge_cases() {
    let (store, f, b) = tied_bigru();
    let mut s = Session::new(&store);
    assert_eq!(bigru_encode(&mut s, &f, &b, &[], None).unwrap_err(), NnError::EmptySequence);

    let one = [row(&mut s, &[0.4, -0.9])];
    let out = bigru_encode(&mut s, &f, &b, &one, None).unwrap();
    let v = values(&s, out.states[0]);
    assert_eq!(v[..3], v[3..]);

    let seq = [[0.1, 0.2], [-0.5, 0.3], [0.9, -0.1], [-0.5, 0.3], [0.1, 0.2]];
    let xs: Vec<Var> = seq.iter().map(|x| row(&mut s, x)).collect();
    let out = bigru_encode(&mut s, &f, &b, &xs, None).unwrap();
    for i in 0..seq.len() {
        let a = values(&s, out.states[i]);
        let r = values(&s, out.states[seq.len() - 1 - i]);
        assert_eq!(a[..3], r[3..]);
    }
    assert_eq!(values(&s, out.final_forward), values(&s, out.final_backward));
}

#[test]
fn bigru_zero_params_outputs_zero() {
    let (mut store, f, b) = tied_bigru();
    zero_all(&mut store);
    let mut s = Session::new(&store);
    let xs: Vec<Var> = (0..4).map(|i| row(&mut s, &[i as f64, 1.0])).collect();
    let out = bigru_encode(&mut s, &f, &b, &xs, None).unwrap();
    for v in out.states {
        assert!(values(&s, v).iter().all(|&x| x == 0.0));
    }
}

#[test]
fn masked_positions_carry_state() {
    let (store, f, b) = tied_bigru();
    let mut s = Session::new(&store);
    // batch of two: second sequence has length 1
    let xs = [
        s.tape.constant(Tensor::matrix(2, 2, vec![0.1, 0.2, 0.7, -0.3])),
        s.tape.constant(Tensor::matrix(2, 2, vec![-0.4, 0.5, 9.0, 9.0])),
    ];
    let masks =
        [s.tape.constant(Tensor::matrix(2, 1, vec![1.0, 1.0])), s.tape.constant(Tensor::matrix(2, 1, vec![1.0, 0.0]))];
    let out = bigru_encode(&mut s, &f, &b, &xs, Some(&masks)).unwrap();
    let single = [row(&mut s, &[0.7, -0.3])];
    let alone = bigru_encode(&mut s, &f, &b, &single, None).unwrap();
    let batched = values(&s, out.states[0]);
    assert_eq!(batched[6..], values(&s, alone.states[0])[..]);
    assert_eq!(values(&s, out.final_forward)[3..], values(&s, alone.final_forward)[..]);
    assert_eq!(values(&s, out.final_backward)[3..], values(&s, alone.final_backward)[..]);
}

#[test]
fn lstm_examples() {
    let mut store = ParamStore::new();
    let p = LstmParams::new(&mut store, "l", 2, 1, &mut seeded(0, 0));
    assert_eq!(store.get(p.b).data, vec![1.0, 0.0, 0.0, 0.0]);
    zero_all(&mut store);
    let mut s = Session::new(&store);
    let x = row(&mut s, &[0.5, -0.5]);
    let h = row(&mut s, &[0.0]);
    let c = row(&mut s, &[2.0]);
    let (h1, c1) = lstm_step(&mut s, &p, x, h, c).unwrap();
    assert_eq!(values(&s, c1), vec![1.0]);
    assert!((values(&s, h1)[0] - 0.5 * 1f64.tanh()).abs() < 1e-15);
    assert!((values(&s, h1)[0] - 0.3808).abs() < 1e-4);

    let mut held = store.clone();
    held.get_mut(p.b).data[0] = 50.0;
    held.get_mut(p.b).data[1] = -50.0;
    let mut s = Session::new(&held);
    let x = row(&mut s, &[0.5, -0.5]);
    let h = row(&mut s, &[0.3]);
    let c = row(&mut s, &[2.0]);
    let (_, c1) = lstm_step(&mut s, &p, x, h, c).unwrap();
    assert!((values(&s, c1)[0] - 2.0).abs() < 1e-12);
}

#[test]
fn lstm_matches_scalar_oracle() {
    let mut rng = seeded(0, 0);
    let mut store = ParamStore::new();
    let p = LstmParams::new(&mut store, "l", 3, 2, &mut rng);
    for t in store.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    let (x, h, c) = (random_vec(&mut rng, 3), random_vec(&mut rng, 2), random_vec(&mut rng, 2));
    let xw = vecmat(&x, store.get(p.w));
    let hu = vecmat(&h, store.get(p.u));
    let b = &store.get(p.b).data;
    let pre = |k: usize| xw[k] + hu[k] + b[k];
    let n = 2;
    let mut ho = vec![];
    let mut co = vec![];
    for j in 0..n {
        let (f, i, o) = (sigmoid(pre(j)), sigmoid(pre(n + j)), sigmoid(pre(2 * n + j)));
        let cj = f * c[j] + i * pre(3 * n + j).tanh();
        co.push(cj);
        ho.push(o * cj.tanh());
    }
    let mut s = Session::new(&store);
    let (xv, hv, cv) = (row(&mut s, &x), row(&mut s, &h), row(&mut s, &c));
    let (h1, c1) = lstm_step(&mut s, &p, xv, hv, cv).unwrap();
    for (a, b) in values(&s, h1).iter().chain(&values(&s, c1)).zip(ho.iter().chain(&co)) {
        assert!((a - b).abs() < 1e-6);
    }
}

fn attention_store(seed: u64) -> (ParamStore<f64>, AttentionParams) {
    let mut store = ParamStore::new();
    let p = AttentionParams::new(&mut store, "a", 3, 2, 4, &mut seeded(seed, 0));
    (store, p)
}

#[test]
fn attention_examples() {
    let (mut store, p) = attention_store(0);
    let mut s = Session::new(&store);
    let q = row(&mut s, &[0.1, 0.2, 0.3]);
    let key = row(&mut s, &[0.7, -0.4]);
    let c = attention(&mut s, &p, q, key).unwrap();
    assert_eq!(values(&s, c), vec![0.7, -0.4]);
    let empty = s.tape.constant(Tensor::zeros(&[0, 2]));
    assert_eq!(attention(&mut s, &p, q, empty).unwrap_err(), NnError::EmptyKeys);

    store.get_mut(p.v).data.fill(0.0);
    let mut s = Session::new(&store);
    let q = row(&mut s, &[0.1, 0.2, 0.3]);
    let keys = s.tape.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, -4.0, 0.5, 0.5]));
    let c = attention(&mut s, &p, q, keys).unwrap();
    let want = [1.5, -0.5];
    for (a, b) in values(&s, c).iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_matches_direct_formula() {
    let (store, p) = attention_store(0);
    let mut rng = seeded(0, 3);
    let q = random_vec(&mut rng, 3);
    let keys: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 2)).collect();
    let qw = vecmat(&q, store.get(p.w_a));
    let v = &store.get(p.v).data;
    let e: Vec<f64> = keys
        .iter()
        .map(|k| {
            let ku = vecmat(k, store.get(p.u_a));
            (0..4).map(|j| (qw[j] + ku[j]).tanh() * v[j]).sum()
        })
        .collect();
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = e.iter().map(|x| (x - m).exp()).sum();
    let want: Vec<f64> = (0..2).map(|j| keys.iter().zip(&e).map(|(k, x)| (x - m).exp() / z * k[j]).sum()).collect();
    let mut s = Session::new(&store);
    let qv = row(&mut s, &q);
    let kv = s.tape.constant(Tensor::matrix(4, 2, keys.concat()));
    let c = attention(&mut s, &p, qv, kv).unwrap();
    for (a, b) in values(&s, c).iter().zip(want) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn batched_attention_keeps_segments_apart() {
    let (store, p) = attention_store(4);
    let mut s = Session::new(&store);
    let keys = s.tape.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, -4.0, 0.5, 0.5]));
    let ak = AttentionKeys::new(&mut s, &p, keys, vec![0, 1, 1], 2).unwrap();
    let q = s.tape.constant(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.3, 0.0, 0.9]));
    let (alpha, ctx) = ak.attend(&mut s, &p, q).unwrap();
    let a = values(&s, alpha);
    assert_eq!(a[0], 1.0);
    assert!((a[1] + a[2] - 1.0).abs() < 1e-12);
    assert_eq!(values(&s, ctx)[..2], [1.0, 2.0]);
}

fn pool_oracle(store: &ParamStore<f64>, p: &PoolGateParams, reps: &[Vec<f64>]) -> Vec<f64> {
    let w = p.width;
    let k = reps.len() as f64;
    let mean: Vec<f64> = (0..w).map(|j| reps.iter().map(|a| a[j]).sum::<f64>() / k).collect();
    let b = &store.get(p.b).data;
    let mut out = vec![0.0; w];
    for a in reps {
        let joined = [a.clone(), mean.clone()].concat();
        let pre = vecmat(&joined, store.get(p.w));
        for j in 0..w {
            out[j] += a[j] * sigmoid(pre[j] + b[j]) / k;
        }
    }
    out
}

#[test]
fn gated_pool_examples() {
    let mut store = ParamStore::new();
    let p = PoolGateParams::new(&mut store, "p", 2, &mut seeded(0, 0));
    let reps = [vec![1.0, -2.0], vec![3.0, 0.5], vec![-0.5, 1.0]];
    let run = |store: &ParamStore<f64>, reps: &[Vec<f64>]| {
        let mut s = Session::new(store);
        let vars: Vec<Var> = reps.iter().map(|r| row(&mut s, r)).collect();
        let out = gated_pool(&mut s, &p, &vars).unwrap();
        values(&s, out)
    };
    let got = run(&store, &reps);
    for (a, b) in got.iter().zip(pool_oracle(&store, &p, &reps)) {
        assert!((a - b).abs() < 1e-6);
    }
    let permuted = [reps[2].clone(), reps[0].clone(), reps[1].clone()];
    for (a, b) in got.iter().zip(run(&store, &permuted)) {
        assert!((a - b).abs() < 1e-12);
    }

    let mut zero = store.clone();
    zero_all(&mut zero);
    let got = run(&zero, &reps);
    assert!((got[0] - 0.5 * 3.5 / 3.0).abs() < 1e-12 && (got[1] - 0.5 * -0.5 / 3.0).abs() < 1e-12);

    let mut open = zero.clone();
    open.get_mut(p.b).data.fill(50.0);
    let got = run(&open, &reps[..1]);
    assert!((got[0] - 1.0).abs() < 1e-12 && (got[1] + 2.0).abs() < 1e-12);

    let mut s = Session::new(&store);
    assert!(gated_pool(&mut s, &p, &[]).is_err());
}

fn ln(x: &[f64], eps: f64) -> Vec<f64> {
    let store = ParamStore::<f64>::new();
    let mut s = Session::new(&store);
    let xv = row(&mut s, x);
    let g = row(&mut s, &vec![1.0; x.len()]);
    let b = row(&mut s, &vec![0.0; x.len()]);
    let y = layer_norm(&mut s, xv, g, b, eps).unwrap();
    values(&s, y)
}

#[test]
fn layer_norm_examples() {
    assert!(ln(&[3.0; 5], 1e-5).iter().all(|&v| v == 0.0));
    let y = ln(&[1.0, -1.0], 1e-14);
    assert!((y[0] - 1.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
    let mut rng = seeded(5, 0);
    let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let y = ln(&x, 1e-5);
    let mean = y.iter().sum::<f64>() / 16.0;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
    assert!(mean.abs() < 1e-6);
    assert!((1.0 - 1e-3..=1.0).contains(&var), "{var}");
}

fn renorm_run(
    store: &ParamStore<f64>,
    state: &BatchRenormState<f64>,
    x: Tensor<f64>,
    training: bool,
    clips: (f64, f64),
) -> (Vec<f64>, Option<RenormUpdate<f64>>) {
    let mut s = Session::new(store);
    let xv = s.tape.constant(x);
    let (y, u) = batch_renorm(&mut s, xv, state, training, clips.0, clips.1).unwrap();
    (values(&s, y), u)
}

#[test]
fn batch_renorm_examples() {
    let mut store = ParamStore::new();
    let mut state = BatchRenormState::new(&mut store, "bn", 2);
    state.running_mean = vec![5.0, -5.0];
    state.running_var = vec![9.0, 0.1];
    let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 5.0, 8.0, -1.0]);
    // plain batch norm when clips collapse
    let (y, _) = renorm_run(&store, &state, x.clone(), true, (1.0, 0.0));
    for j in 0..2 {
        let col: Vec<f64> = (0..3).map(|i| x.at(i, j)).collect();
        let m = col.iter().sum::<f64>() / 3.0;
        let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 3.0;
        for i in 0..3 {
            assert!((y[i * 2 + j] - (col[i] - m) / (v + 1e-5).sqrt()).abs() < 1e-12);
        }
    }
    let (y, _) = renorm_run(&store, &state, Tensor::matrix(1, 2, vec![4.0, 7.0]), true, (1.0, 0.0));
    assert_eq!(y, vec![0.0, 0.0]);
    let (y, _) = renorm_run(&store, &state, Tensor::matrix(1, 2, vec![8.0, -5.0]), false, (1.0, 0.0));
    assert!((y[0] - 3.0 / (9.0f64 + 1e-5).sqrt()).abs() < 1e-12 && y[1] == 0.0);

    // running statistics follow the momentum recursion
    let mut fresh = BatchRenormState::new(&mut ParamStore::new(), "bn", 1);
    fresh.gain = state.gain;
    fresh.bias = state.bias;
    let batches = [vec![1.0, 3.0], vec![2.0, 6.0, 7.0]];
    let (mut rm, mut rv) = (0.0, 1.0);
    for b in batches {
        let n = b.len() as f64;
        let m = b.iter().sum::<f64>() / n;
        let v = b.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        rm = 0.99 * rm + 0.01 * m;
        rv = 0.99 * rv + 0.01 * v;
        let mut one = ParamStore::new();
        let mut st = BatchRenormState::new(&mut one, "bn", 1);
        st.running_mean = fresh.running_mean.clone();
        st.running_var = fresh.running_var.clone();
        let (_, u) = renorm_run(&one, &st, Tensor::matrix(b.len(), 1, b), true, renorm_clips(0, 10));
        fresh.apply(u.unwrap());
    }
    assert!((fresh.running_mean[0] - rm).abs() < 1e-12);
    assert!((fresh.running_var[0] - rv).abs() < 1e-12);
    assert_eq!(renorm_clips(0, 100), (1.0, 0.0));
    assert_eq!(renorm_clips(50, 100), (2.0, 2.5));
    assert_eq!(renorm_clips(500, 100), (3.0, 5.0));
}

#[test]
fn adam_examples() {
    let mut p: Vec<Tensor<f64>> = vec![Tensor::row(vec![1.0, -2.0])];
    let mut adam = AdamState::new(&p, 0.01);
    adam.step(&mut p, &[Tensor::row(vec![0.3, -7.0])]).unwrap();
    assert!((p[0].data[0] - 0.99).abs() < 1e-6);
    assert!((p[0].data[1] + 1.99).abs() < 1e-6);
    let m0 = adam.m[0].clone();
    let before = p[0].clone();
    adam.lr = 0.0;
    adam.step(&mut p, &[Tensor::row(vec![0.0, 0.0])]).unwrap();
    assert_eq!(p[0], before);
    assert!((adam.m[0].data[0] - 0.9 * m0.data[0]).abs() < 1e-15);
    assert!(adam.step(&mut p, &[Tensor::row(vec![0.0])]).is_err());

    let mut x: Vec<Tensor<f64>> = vec![Tensor::scalar(1.0)];
    let mut adam = AdamState::new(&x, 0.1);
    for _ in 0..100 {
        let g = Tensor::scalar(2.0 * x[0].data[0]);
        adam.step(&mut x, &[g]).unwrap();
    }
    assert!(x[0].data[0].abs() < 0.05, "{}", x[0].data[0]);
}

#[test]
fn global_norm_clip() {
    let mut g: Vec<Tensor<f64>> = vec![Tensor::row(vec![3.0]), Tensor::row(vec![4.0])];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0].data[0] - 0.6).abs() < 1e-12);
}

#[test]
fn blocks_pass_grad_check() {
    for seed in 0..5 {
        for (name, r) in block_grad_checks(seed) {
            assert!(r.passed && r.error.is_none(), "{name} seed {seed}: {r:?}");
        }
    }
}

proptest! {
    #[test]
    fn gru_state_stays_bounded(seed in 0u64..1000, h in prop::collection::vec(-1.0f64..=1.0, 3), x in prop::collection::vec(-5.0f64..5.0, 2)) {
        let mut store = ParamStore::new();
        let p = GruParams::new(&mut store, "g", 2, 3, &mut seeded(seed, 0));
        randomize(&mut store, seed);
        let mut s = Session::new(&store);
        let (xv, hv) = (row(&mut s, &x), row(&mut s, &h));
        let out = gru_step(&mut s, &p, xv, hv).unwrap();
        prop_assert!(values(&s, out).iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn attention_stays_in_hull(seed in 0u64..1000, n in 1usize..6) {
        let (mut store, p) = attention_store(seed);
        randomize(&mut store, seed);
        let mut rng = seeded(seed, 1);
        let keys: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut s = Session::new(&store);
        let kv = s.tape.constant(Tensor::matrix(n, 2, keys.clone()));
        let q = row(&mut s, &[0.5, -0.5, 1.0]);
        let ak = AttentionKeys::new(&mut s, &p, kv, vec![0; n], 1).unwrap();
        let (alpha, c) = ak.attend(&mut s, &p, q).unwrap();
        let a = values(&s, alpha);
        prop_assert!(a.iter().all(|&x| x >= 0.0));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let c = values(&s, c);
        for j in 0..2 {
            let col = (0..n).map(|i| keys[i * 2 + j]);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            prop_assert!(c[j] >= lo - 1e-9 && c[j] <= hi + 1e-9);
        }
    }
}
