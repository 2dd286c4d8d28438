use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::rng::seeded;

type Op = fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = seeded(seed, 7);
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(lo..hi)).collect() }
}

/// Reduces `v` to a scalar through fixed random weights so every output
/// element contributes a distinct gradient.
fn weighted_sum(t: &mut Tape<f64>, v: Var) -> Result<Var, TensorError> {
    let shape = t.shape(v).to_vec();
    let w = t.constant(random(&shape, 99, -1.0, 1.0));
    let p = t.mul(v, w)?;
    Ok(t.sum(p))
}

#[test]
fn shapes() {
    let t = Tensor::<f64>::zeros(&[3]);
    assert_eq!(t.dims(), (1, 3));
    assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    let m = Tensor::<f32>::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m.at(1, 0), 3.0);
    assert_eq!(m.cast::<f64>().data, vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn activations_at_zero() {
    let mut t = Tape::<f64>::new();
    let z = t.constant(Tensor::scalar(0.0));
    let s = t.sigmoid(z);
    let h = t.tanh(z);
    assert_eq!(t.value(s).item(), 0.5);
    assert_eq!(t.value(h).item(), 0.0);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::row(vec![3.0; 4]));
    let s = t.softmax(x);
    assert!(t.value(s).data.iter().all(|&p| (p - 0.25).abs() < 1e-15));
}

#[test]
fn matmul_matches_triple_loop() {
    let a = random(&[2, 3], 1, -2.0, 2.0);
    let b = random(&[3, 4], 2, -2.0, 2.0);
    let mut t = Tape::new();
    let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
    let c = t.matmul(va, vb).unwrap();
    assert_eq!(t.shape(c), &[2, 4]);
    for i in 0..2 {
        for j in 0..4 {
            let mut s = 0.0;
            for k in 0..3 {
                s += a.at(i, k) * b.at(k, j);
            }
            assert!((t.value(c).at(i, j) - s).abs() < 1e-12);
        }
    }
    let bad = t.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(t.matmul(va, bad), Err(TensorError::ShapeMismatch { op: "matmul", .. })));
}

#[test]
fn sum_gradient_is_ones() {
    let mut t = Tape::<f64>::new();
    let x = t.param(Tensor::from_f64(&[3], &[0.3, -1.0, 2.0]));
    let s = t.sum(x);
    assert_eq!(t.backward(s).unwrap().get(x).data, vec![1.0; 3]);
}

#[test]
fn square_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.param(Tensor::from_f64(&[2], &[1.0, 2.0]));
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq);
    assert_eq!(t.backward(s).unwrap().get(x).data, vec![2.0, 4.0]);
}

#[test]
fn unused_leaf_gets_zero_and_root_must_be_scalar() {
    let mut t = Tape::<f64>::new();
    let x = t.param(Tensor::row(vec![1.0, 2.0]));
    let y = t.param(Tensor::row(vec![5.0]));
    assert_eq!(t.backward(x).unwrap_err(), TensorError::NonScalarRoot(vec![1, 2]));
    let s = t.sum(x);
    assert_eq!(t.backward(s).unwrap().get(y).data, vec![0.0]);
}

#[test]
fn five_op_composite() {
    let f: Op = |t, v| {
        let a = t.matmul(v[0], v[1])?;
        let b = t.tanh(a);
        let c = t.mul(b, v[2])?;
        let d = t.exp(c);
        let e = t.log_softmax(d);
        weighted_sum(t, e)
    };
    for seed in 0..5 {
        let inputs = [
            random(&[3, 4], seed, -1.0, 1.0),
            random(&[4, 2], seed + 10, -1.0, 1.0),
            random(&[1, 2], seed + 20, -1.0, 1.0),
        ];
        let r = grad_check(f, &inputs, 1e-6);
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 12 + 8 + 2);
    }
}

#[test]
fn sum_of_sigmoid_passes() {
    let r = grad_check(
        |t, v| {
            let s = t.sigmoid(v[0]);
            Ok(t.sum(s))
        },
        &[random(&[5], 3, -3.0, 3.0)],
        1e-6,
    );
    assert!(r.passed && r.checked == 5, "{r:?}");
}

#[test]
fn hard_tanh_kink_guard() {
    let f = |t: &mut Tape<f64>, v: &[Var]| {
        let lo = Tensor::filled(&[1, 1], -1.0);
        let hi = Tensor::filled(&[1, 1], 1.0);
        let h = t.hard_tanh(v[0], &lo, &hi)?;
        Ok(t.sum(h))
    };
    let interior = grad_check(f, &[Tensor::row(vec![0.3, -0.5, 2.0])], 1e-6);
    assert!(interior.passed && interior.checked == 3 && interior.kinks_skipped == 0, "{interior:?}");
    let kink = grad_check(f, &[Tensor::row(vec![1.0, -1.0 + 1e-5, 0.0])], 1e-6);
    assert!(kink.passed, "{kink:?}");
    assert_eq!(kink.kinks_skipped, 2);
    // the boundary takes the inside value
    let mut t = Tape::new();
    let x = t.param(Tensor::row(vec![1.0, -1.0]));
    let y = f(&mut t, &[x]).unwrap();
    assert_eq!(t.backward(y).unwrap().get(x).data, vec![1.0, 1.0]);
}

#[test]
fn constant_function_has_zero_gradient() {
    let f = |t: &mut Tape<f64>, _: &[Var]| Ok(t.scalar(4.2));
    let r = grad_check(f, &[random(&[3], 4, -1.0, 1.0)], 1e-6);
    assert!(r.passed && r.max_rel_error == 0.0, "{r:?}");
    let mut t = Tape::new();
    let x = t.param(Tensor::zeros(&[3]));
    let c = f(&mut t, &[x]).unwrap();
    assert_eq!(t.backward(c).unwrap().get(x).data, vec![0.0; 3]);
}

#[test]
fn shape_errors() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[3, 2]));
    assert!(t.add(a, b).is_err());
    assert!(t.concat(&[a, b], 0).is_err());
    assert!(t.slice_rows(a, 1, 3).is_err());
    assert!(t.pick(a, &[0]).is_err());
    assert!(matches!(t.gather_rows(a, &[2]), Err(TensorError::IndexOutOfRange { .. })));
    let col = t.constant(Tensor::zeros(&[2, 1]));
    let sum = t.add(a, col).unwrap();
    assert_eq!(t.shape(sum), &[2, 3]);
}

fn op_cases() -> Vec<(&'static str, Op, Vec<[usize; 2]>, (f64, f64))> {
    let any = (-2.0, 2.0);
    let pos = (0.2, 3.0);
    vec![
        (
            "sigmoid",
            |t, v| {
                let y = t.sigmoid(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "tanh",
            |t, v| {
                let y = t.tanh(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "relu",
            |t, v| {
                let y = t.relu(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "exp",
            |t, v| {
                let y = t.exp(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "log",
            |t, v| {
                let y = t.log(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            pos,
        ),
        (
            "sqrt",
            |t, v| {
                let y = t.sqrt(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            pos,
        ),
        (
            "sin",
            |t, v| {
                let y = t.sin(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "cos",
            |t, v| {
                let y = t.cos(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "add",
            |t, v| {
                let y = t.add(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![[3, 4], [1, 4]],
            any,
        ),
        (
            "sub",
            |t, v| {
                let y = t.sub(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![[3, 4], [3, 1]],
            any,
        ),
        (
            "mul",
            |t, v| {
                let y = t.mul(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![[3, 4], [3, 4]],
            any,
        ),
        (
            "div",
            |t, v| {
                let y = t.div(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![[3, 4], [1, 4]],
            pos,
        ),
        (
            "maximum",
            |t, v| {
                let y = t.maximum(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![[3, 4], [3, 4]],
            any,
        ),
        (
            "affine",
            |t, v| {
                let y = t.affine(v[0], -1.5, 0.25);
                weighted_sum(t, y)
            },
            vec![[2, 3]],
            any,
        ),
        (
            "matmul",
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![[3, 4], [4, 5]],
            any,
        ),
        (
            "transpose",
            |t, v| {
                let y = t.transpose(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "reshape",
            |t, v| {
                let y = t.reshape(v[0], &[4, 3])?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "concat0",
            |t, v| {
                let y = t.concat(&[v[0], v[1]], 0)?;
                weighted_sum(t, y)
            },
            vec![[3, 4], [2, 4]],
            any,
        ),
        (
            "concat1",
            |t, v| {
                let y = t.concat(&[v[0], v[1]], 1)?;
                weighted_sum(t, y)
            },
            vec![[3, 4], [3, 2]],
            any,
        ),
        (
            "slice_rows",
            |t, v| {
                let y = t.slice_rows(v[0], 1, 3)?;
                weighted_sum(t, y)
            },
            vec![[4, 3]],
            any,
        ),
        (
            "slice_cols",
            |t, v| {
                let y = t.slice_cols(v[0], 1, 3)?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "sum",
            |t, v| {
                let y = t.sum(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "sum0",
            |t, v| {
                let y = t.sum_axis(v[0], 0)?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "sum1",
            |t, v| {
                let y = t.sum_axis(v[0], 1)?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "mean",
            |t, v| {
                let y = t.mean(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "mean0",
            |t, v| {
                let y = t.mean_axis(v[0], 0)?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "mean1",
            |t, v| {
                let y = t.mean_axis(v[0], 1)?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "max0",
            |t, v| {
                let y = t.max_axis(v[0], 0)?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "max1",
            |t, v| {
                let y = t.max_axis(v[0], 1)?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "softmax",
            |t, v| {
                let y = t.softmax(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "log_softmax",
            |t, v| {
                let y = t.log_softmax(v[0]);
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "hard_tanh",
            |t, v| {
                let lo = Tensor::row(vec![-1.0, -0.5, -2.0, 0.0]);
                let hi = Tensor::row(vec![1.0, 0.5, 2.0, 1.0]);
                let y = t.hard_tanh(v[0], &lo, &hi)?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "gather_rows",
            |t, v| {
                let y = t.gather_rows(v[0], &[2, 0, 2, 1])?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "pick",
            |t, v| {
                let y = t.pick(v[0], &[3, 0, 1])?;
                weighted_sum(t, y)
            },
            vec![[3, 4]],
            any,
        ),
        (
            "segment_sum",
            |t, v| {
                let y = t.segment_sum(v[0], &[0, 1, 0, 1, 1], 2)?;
                weighted_sum(t, y)
            },
            vec![[5, 3]],
            any,
        ),
        (
            "segment_softmax",
            |t, v| {
                let y = t.segment_softmax(v[0], &[0, 1, 0, 1, 1], 2)?;
                weighted_sum(t, y)
            },
            vec![[5, 2]],
            any,
        ),
    ]
}

#[test]
fn every_op_passes_grad_check() {
    for (name, f, shapes, (lo, hi)) in op_cases() {
        for seed in 0..10u64 {
            let inputs: Vec<Tensor<f64>> =
                shapes.iter().enumerate().map(|(k, s)| random(s, seed * 31 + k as u64, lo, hi)).collect();
            let r = grad_check(f, &inputs, 1e-6);
            assert!(r.passed && r.error.is_none(), "{name} seed {seed}: {r:?}");
            assert!(r.checked > 0, "{name}");
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut t = Tape::<f32>::new();
        let a = t.param(random(&[8, 16], 5, -1.0, 1.0).cast());
        let b = t.param(random(&[16, 8], 6, -1.0, 1.0).cast());
        let c = t.matmul(a, b).unwrap();
        let d = t.softmax(c);
        let s = t.sum(d);
        let g = t.backward(s).unwrap();
        (t.value(c).data.clone(), g.get(a).data)
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..12), 1..5)) {
        for row in rows {
            let mut t = Tape::<f64>::new();
            let x = t.constant(Tensor::row(row));
            let s = t.softmax(x);
            let total: f64 = t.value(s).data.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }
}
