use rand::Rng as _;

use super::*;
use crate::tensor::finite_difference_check;
use crate::vae::{ModelConfig, ModelVocab};

fn model_with(cfg: ModelConfig, seed: u64) -> Model<f64> {
    let vocab = ModelVocab::from_smiles(["c1ccncc1O", "CC(=O)N", "C1CC1Cl"]).unwrap();
    Model::new(cfg, vocab, seed).unwrap()
}

fn zero_params(model: &mut Model<f64>, prefix: &str) {
    let ids: Vec<_> = model.store.iter().filter(|(_, n, _)| n.starts_with(prefix)).map(|(id, _, _)| id).collect();
    for id in ids {
        model.store.get_mut(id).data.fill(0.0);
    }
}

/// One-layer model with zero prior nets and head 0 equal to `w . z`.
fn linear_head_model(w: &[f64]) -> Model<f64> {
    let mut cfg = ModelConfig::micro();
    cfg.ablations.no_posterior_hierarchy = true;
    cfg.grammar_mask_decoding = true;
    let mut m = model_with(cfg, 3);
    zero_params(&mut m, "prior.");
    zero_params(&mut m, "head.mw.");
    let id = m.store.id("head.mw.w").unwrap();
    m.store.get_mut(id).data.copy_from_slice(w);
    m
}

#[test]
fn angle_examples() {
    assert_eq!(angles_to_point(&[0.0], 2), vec![1.0, 0.0]);
    let p = angles_to_point(&[std::f64::consts::FRAC_PI_2; 2], 3);
    let r = 2f64.sqrt();
    assert!(p[0].abs() < 1e-15 && p[1].abs() < 1e-15 && (p[2] - r).abs() < 1e-15, "{p:?}");
    assert_eq!(point_to_angles(&[2.0, 0.0, 0.0, 0.0]), vec![0.0; 3]);
    assert_eq!(point_to_angles(&[0.0, 0.0, 0.0]), vec![0.0; 2]);
}

#[test]
fn angles_round_trip() {
    let mut rng = seeded(1, 0);
    for _ in 0..1000 {
        let n = rng.gen_range(2..12);
        let theta: Vec<f64> = (0..n - 1)
            .map(|j| {
                if j == n - 2 {
                    rng.gen_range(0.0..std::f64::consts::TAU)
                } else {
                    rng.gen_range(0.0..std::f64::consts::PI)
                }
            })
            .collect();
        let back = point_to_angles(&angles_to_point(&theta, n));
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9, "{theta:?} {back:?}");
        }
    }
}

proptest::proptest! {
    #[test]
    fn points_lie_on_the_sphere(theta in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
        let n = theta.len() + 1;
        let norm = angles_to_point(&theta, n).iter().map(|x| x * x).sum::<f64>().sqrt();
        proptest::prop_assert!((norm - radius(n)).abs() < 1e-9);
    }
}

#[test]
fn objective_with_linear_head_and_no_regularizer() {
    let w = [0.5, -1.0, 0.25, 2.0, 0.0, 1.5, -0.75, 1.0];
    let m = linear_head_model(&w);
    let theta = vec![0.3, 1.2, 2.0, 0.1, 2.9, 1.7, 4.0];
    let eps = angles_to_point(&theta, 8);
    let cfg = OptConfig { lambda: 0.0, ..OptConfig::default() };
    let mut s = Session::frozen(&m.store);
    let t = s.tape.constant(Tensor::row(theta.clone()));
    let obj = whitened_objective(&m, &mut s, &[t], &cfg).unwrap();
    let want: f64 = w.iter().zip(&eps).map(|(a, b)| a * b).sum();
    assert!((s.tape.value(obj.value).item() - want).abs() < 1e-12);
    for (a, b) in s.tape.value(obj.z).to_f64().iter().zip(&eps) {
        assert!((a - b).abs() < 1e-14);
    }
    let heads = m.predict_property(&eps).unwrap();
    assert!((s.tape.value(obj.value).item() - heads[0]).abs() < 1e-12);
}

#[test]
fn objective_gradients_match_finite_differences() {
    let mut rng = seeded(2, 0);
    for case in 0..20u64 {
        let mut mc = ModelConfig::micro();
        mc.hierarchy_layers = 2 + (case % 2) as usize;
        let m = model_with(mc, case);
        let cfg = OptConfig {
            lambda: [0.0, 0.1, 0.01, 1.0][case as usize % 4],
            radius_constraint: case % 3 != 0,
            prior_includes_first_layer: case % 2 == 0,
            head: case as usize % 3,
            ..OptConfig::default()
        };
        let inputs: Vec<Tensor<f64>> = m
            .latent_widths()
            .iter()
            .map(|&n| {
                let k = if cfg.radius_constraint { n - 1 } else { n };
                Tensor::row((0..k).map(|_| rng.gen_range(0.2..2.8)).collect())
            })
            .collect();
        let analytic = {
            let mut s = Session::frozen(&m.store);
            let vars: Vec<Var> = inputs.iter().map(|t| s.tape.param(t.clone())).collect();
            let obj = whitened_objective(&m, &mut s, &vars, &cfg).unwrap();
            let mut g = s.tape.backward(obj.value).unwrap();
            vars.iter().map(|v| g.take(*v)).collect::<Vec<_>>()
        };
        let report = finite_difference_check(
            &inputs,
            &analytic,
            |x| -> Result<f64, OptError> {
                let mut s = Session::frozen(&m.store);
                let vars: Vec<Var> = x.iter().map(|t| s.tape.constant(t.clone())).collect();
                let obj = whitened_objective(&m, &mut s, &vars, &cfg)?;
                Ok(s.tape.value(obj.value).item())
            },
            1e-4,
        );
        assert!(report.passed, "case {case}: {report:?}");
    }
}

#[test]
fn zero_steps_returns_the_initialization() {
    let m = linear_head_model(&[1.0; 8]);
    let cfg = OptConfig { steps: 0, ..OptConfig::default() };
    let t = optimize_one(&m, 4, &cfg).unwrap();
    assert_eq!(t.points.len(), 1);
    assert_eq!(t.points[0].step, 0);
    let init = initial_whitened(&m.latent_widths(), 4);
    for (a, b) in t.whitened[0].iter().zip(&init[0]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(matches!(optimize_one(&m, 4, &OptConfig { head: 9, ..cfg }), Err(OptError::Config(_))));
}

#[test]
fn linear_head_reaches_the_sphere_optimum() {
    let w = [0.5, -1.0, 0.25, 2.0, 0.0, 1.5, -0.75, 1.0];
    let m = linear_head_model(&w);
    let cfg = OptConfig { lambda: 0.0, learning_rate: 0.01, steps: 2000, eval_every: 2000, ..OptConfig::default() };
    let t = optimize_one(&m, 5, &cfg).unwrap();
    let optimum = radius(8) * w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let last = t.points.last().unwrap();
    assert!((last.predicted - optimum).abs() < 0.01 * optimum, "{} vs {optimum}", last.predicted);
    let sq: f64 = t.whitened[0].iter().map(|x| x * x).sum();
    assert!((sq - 7.0).abs() < 7e-9);
}

#[test]
fn sphere_constraint_holds_at_every_recorded_point() {
    let mut mc = ModelConfig::micro();
    mc.grammar_mask_decoding = true;
    let mut m = model_with(mc, 6);
    zero_params(&mut m, "prior.");
    let cfg = OptConfig { steps: 60, eval_every: 10, learning_rate: 0.1, ..OptConfig::default() };
    let t = optimize_one(&m, 1, &cfg).unwrap();
    assert_eq!(t.points.len(), 7);
    // Zero prior nets make z equal to the whitened vector.
    for p in &t.points {
        for layer in p.z.chunks(4) {
            let sq: f64 = layer.iter().map(|x| x * x).sum();
            assert!((sq - 3.0).abs() < 3e-9, "{sq}");
        }
    }
}

#[test]
fn protocol_examples() {
    let m = linear_head_model(&[1.0; 8]);
    let cfg = OptConfig { steps: 10, eval_every: 5, ..OptConfig::default() };
    let oracle = |g: &MolecularGraph| g.molecular_weight();
    let empty = optimize_protocol(&m, &cfg, 0, 0, oracle, |_, _| {}).unwrap();
    assert_eq!(empty, ProtocolReport::default());
    let a = optimize_protocol(&m, &cfg, 4, 10, oracle, |_, _| {}).unwrap();
    let b = optimize_protocol(&m, &cfg, 4, 10, oracle, |_, _| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len() + a.no_valid_decode, 4);
    assert!(a.top3.len() <= 3 && a.top3.windows(2).all(|w| w[0] >= w[1]));
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("seed,steps,predicted,true,smiles\n"));
}

#[test]
fn slice_examples() {
    let m = linear_head_model(&[1.0; 8]);
    let center = vec![0.1; 8];
    let mut du = vec![0.0; 8];
    du[0] = 1.0;
    let mut dv = vec![0.0; 8];
    dv[1] = 1.0;
    let oracle = |g: &MolecularGraph| g.molecular_weight();
    let one = GridSpec { steps_u: 1, steps_v: 1, extent_u: 2.0, extent_v: 2.0 };
    let rows = latent_slice(&m, &center, &du, &dv, one, oracle).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].u, rows[0].v), (0.0, 0.0));
    assert_eq!(rows[0].smiles, m.decode(&center).unwrap());
    let grid = GridSpec { steps_u: 3, steps_v: 2, extent_u: 2.0, extent_v: 1.0 };
    assert!(latent_slice(&m, &center, &du, &dv, grid, oracle).unwrap().len() <= 6);
    let twice: Vec<f64> = du.iter().map(|x| 2.0 * x).collect();
    assert!(matches!(latent_slice(&m, &center, &du, &twice, grid, oracle), Err(OptError::DependentDirections)));
}

#[test]
fn annulus_examples() {
    let a = annulus_check(128, 10_000, 3);
    assert!(a.fraction_within >= 0.99, "{a:?}");
    assert!((a.mean_norm - 128f64.sqrt()).abs() < 0.1);
    assert_eq!(a, annulus_check(128, 10_000, 3));
    let low = annulus_check(2, 1000, 3);
    assert!(low.mean_norm > 0.5 && low.mean_norm < 2.5);
}
