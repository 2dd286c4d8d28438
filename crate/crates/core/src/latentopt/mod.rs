//! Property optimization in the whitened latent space, latent slices and
//! the Gaussian annulus check.

mod sphere;

use std::collections::HashSet;
use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::MolecularGraph;
use crate::nn::{AdamState, Session};
use crate::rng::seeded;
use crate::smiles::parse;
use crate::tensor::{Real, Tensor, TensorError, Var};
use crate::vae::{Model, VaeError};

pub use sphere::{angles_to_point, angles_to_point_tape, point_to_angles, radius};

#[derive(Debug, Error)]
pub enum OptError {
    #[error("trajectory {seed} never decoded to a valid molecule")]
    NoValidDecode { seed: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("slice directions are linearly dependent")]
    DependentDirections,
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<crate::nn::NnError> for OptError {
    fn from(e: crate::nn::NnError) -> Self {
        OptError::Vae(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptConfig {
    pub learning_rate: f64,
    /// Weight of the log-prior term.
    pub lambda: f64,
    pub steps: usize,
    /// Index into the model's heads.
    pub head: usize,
    pub maximize: bool,
    /// Optimize angles on each layer's sphere; otherwise the raw whitened
    /// vector.
    pub radius_constraint: bool,
    /// Include the first layer's log-density in the prior term.
    pub prior_includes_first_layer: bool,
    /// Steps between decodes.
    pub eval_every: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            learning_rate: 0.01,
            lambda: 0.01,
            steps: 500,
            head: 0,
            maximize: true,
            radius_constraint: true,
            prior_includes_first_layer: true,
            eval_every: 25,
        }
    }
}

impl OptConfig {
    pub fn validate(&self, latent_widths: &[usize], heads: usize) -> Result<(), OptError> {
        if self.head >= heads {
            return Err(OptError::Config(format!("head {} out of range ({heads} heads)", self.head)));
        }
        if self.eval_every == 0 {
            return Err(OptError::Config("eval_every must be at least 1".into()));
        }
        if self.radius_constraint && latent_widths.iter().any(|&n| n < 2) {
            return Err(OptError::Config("sphere constraint needs layers of width >= 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(OptError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Objective value and latent vector from whitened per-layer parameters.
pub struct Objective {
    pub value: Var,
    pub z: Var,
}

/// `head(z) + lambda * sum_i log N(z_i; mu_i, sigma_i)` where `z` is the
/// prior reparametrization of the whitened vectors. `params[i]` holds layer
/// `i`'s angles (`1 x (n_i - 1)`) under the sphere constraint, otherwise its
/// raw whitened vector (`1 x n_i`).
pub fn whitened_objective<T: Real>(
    model: &Model<T>,
    s: &mut Session<'_, T>,
    params: &[Var],
    cfg: &OptConfig,
) -> Result<Objective, OptError> {
    let widths = model.latent_widths();
    let mut z: Vec<Var> = Vec::with_capacity(widths.len());
    let mut log_prior: Option<Var> = None;
    let half_log_2pi = T::from_f64(0.5 * (2.0 * std::f64::consts::PI).ln());
    for (i, (&n, &p)) in widths.iter().zip(params).enumerate() {
        let eps = if cfg.radius_constraint { angles_to_point_tape(&mut s.tape, p, n)? } else { p };
        let (zi, lp) = if i == 0 {
            let sq = s.tape.mul(eps, eps)?;
            let lp = s.tape.affine(sq, T::from_f64(-0.5), -half_log_2pi);
            (eps, lp)
        } else {
            let (mu, lv) = model.prior_params(s, i, &z)?;
            let half = s.tape.scale(lv, T::from_f64(0.5));
            let sd = s.tape.exp(half);
            let noise = s.tape.mul(sd, eps)?;
            let zi = s.tape.add(mu, noise)?;
            // log N(z; mu, sd) = -eps^2 / 2 - logvar / 2 - log(2 pi) / 2
            let sq = s.tape.mul(eps, eps)?;
            let a = s.tape.affine(sq, T::from_f64(-0.5), -half_log_2pi);
            (zi, s.tape.sub(a, half)?)
        };
        z.push(zi);
        if i > 0 || cfg.prior_includes_first_layer {
            let total = s.tape.sum(lp);
            log_prior = Some(match log_prior {
                None => total,
                Some(acc) => s.tape.add(acc, total)?,
            });
        }
    }
    let z = s.tape.concat(&z, 1)?;
    let heads = model.head_values(s, z)?;
    let mut value = heads[cfg.head];
    if let Some(lp) = log_prior {
        if cfg.lambda != 0.0 {
            let weighted = s.tape.scale(lp, T::from_f64(cfg.lambda));
            value = s.tape.add(value, weighted)?;
        }
    }
    let value = s.tape.sum(value);
    Ok(Objective { value, z })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub z: Vec<f64>,
    pub predicted: f64,
    /// Decoded string when it parses.
    pub smiles: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub points: Vec<TrajectoryPoint>,
    /// Per-layer whitened vectors at the end of the run.
    pub whitened: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Last recorded point with a valid decoding.
    pub fn accepted(&self) -> Option<&TrajectoryPoint> {
        self.points.iter().rev().find(|p| p.smiles.is_some())
    }
}

/// Initial whitened vectors: a standard-normal draw per layer, rescaled to
/// the layer's sphere.
pub fn initial_whitened(widths: &[usize], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed, 8);
    widths
        .iter()
        .map(|&n| {
            let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let r = if n >= 2 { radius(n) } else { 1.0 };
            v.iter().map(|x| x * r / norm).collect()
        })
        .collect()
}

fn evaluate<T: Real>(model: &Model<T>, params: &[Tensor<T>], cfg: &OptConfig) -> Result<(f64, Vec<f64>), OptError> {
    let mut s = Session::frozen(&model.store);
    let vars: Vec<Var> = params.iter().map(|p| s.tape.constant(p.clone())).collect();
    let obj = whitened_objective(model, &mut s, &vars, cfg)?;
    let heads = model.head_values(&mut s, obj.z)?;
    Ok((s.tape.value(heads[cfg.head]).item().as_f64(), s.tape.value(obj.z).to_f64()))
}

fn decode_valid<T: Real>(model: &Model<T>, z: &[f64]) -> Result<Option<String>, OptError> {
    match model.decode(z) {
        Ok(s) => Ok(parse(&s).is_ok().then_some(s)),
        Err(VaeError::MaxLengthExceeded) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Adam ascent (or descent) of the whitened objective from a prior draw,
/// decoding every `eval_every` steps and at the end. Fails when no recorded
/// point decodes to a valid molecule.
pub fn optimize_one<T: Real>(model: &Model<T>, seed: u64, cfg: &OptConfig) -> Result<Trajectory, OptError> {
    let widths = model.latent_widths();
    cfg.validate(&widths, model.config.heads.len())?;
    let init = initial_whitened(&widths, seed);
    let mut params: Vec<Tensor<T>> = init
        .iter()
        .map(|e| {
            let v = if cfg.radius_constraint { point_to_angles(e) } else { e.clone() };
            Tensor::from_f64(&[1, v.len()], &v)
        })
        .collect();
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let sign = if cfg.maximize { -1.0 } else { 1.0 };
    let mut points = Vec::new();
    for step in 0..=cfg.steps {
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let (predicted, z) = evaluate(model, &params, cfg)?;
            let smiles = decode_valid(model, &z)?;
            points.push(TrajectoryPoint { step, z, predicted, smiles });
        }
        if step == cfg.steps {
            break;
        }
        let grads = {
            let mut s = Session::frozen(&model.store);
            let vars: Vec<Var> = params.iter().map(|p| s.tape.param(p.clone())).collect();
            let obj = whitened_objective(model, &mut s, &vars, cfg)?;
            let loss = s.tape.scale(obj.value, T::from_f64(sign));
            let mut g = s.tape.backward(loss)?;
            vars.iter().map(|v| g.take(*v)).collect::<Vec<_>>()
        };
        adam.step(&mut params, &grads)?;
    }
    let whitened = params
        .iter()
        .zip(&widths)
        .map(|(p, &n)| if cfg.radius_constraint { angles_to_point(&p.to_f64(), n) } else { p.to_f64() })
        .collect();
    let t = Trajectory { seed, points, whitened };
    if t.accepted().is_none() {
        return Err(OptError::NoValidDecode { seed });
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRow {
    pub seed: u64,
    pub steps: usize,
    pub predicted: f64,
    pub true_value: f64,
    pub smiles: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolReport {
    /// One row per trajectory with a valid decoding, in seed order.
    pub rows: Vec<ProtocolRow>,
    /// Trajectories that never decoded to a valid molecule.
    pub no_valid_decode: usize,
    /// Best three true values among the 100 best-predicted rows.
    pub top3: Vec<f64>,
}

pub const PROTOCOL_HEADER: &str = "seed,steps,predicted,true,smiles";

impl ProtocolReport {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{PROTOCOL_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.seed, r.steps, r.predicted, r.true_value, r.smiles)?;
        }
        Ok(())
    }
}

/// Optimizes `n` prior draws (seeds `seed .. seed + n`), keeps the last valid
/// decoding of each, ranks by predicted value and scores the true property
/// of the best 100 with `oracle`.
pub fn optimize_protocol<T: Real>(
    model: &Model<T>,
    cfg: &OptConfig,
    n: usize,
    seed: u64,
    oracle: impl Fn(&MolecularGraph) -> f64,
    mut on_trajectory: impl FnMut(usize, &Trajectory),
) -> Result<ProtocolReport, OptError> {
    let mut report = ProtocolReport::default();
    for i in 0..n {
        let t = match optimize_one(model, seed + i as u64, cfg) {
            Ok(t) => t,
            Err(OptError::NoValidDecode { .. }) => {
                report.no_valid_decode += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        on_trajectory(i, &t);
        match t.accepted() {
            Some(p) => {
                let smiles = p.smiles.clone().expect("accepted points decode");
                let graph = parse(&smiles).map_err(VaeError::Parse)?.graph;
                report.rows.push(ProtocolRow {
                    seed: t.seed,
                    steps: p.step,
                    predicted: p.predicted,
                    true_value: oracle(&graph),
                    smiles,
                });
            }
            None => report.no_valid_decode += 1,
        }
    }
    let better = |a: f64, b: f64| if cfg.maximize { b.total_cmp(&a) } else { a.total_cmp(&b) };
    let mut ranked: Vec<&ProtocolRow> = report.rows.iter().collect();
    ranked.sort_by(|a, b| better(a.predicted, b.predicted).then(a.seed.cmp(&b.seed)));
    let mut best: Vec<f64> = ranked.iter().take(100).map(|r| r.true_value).collect();
    best.sort_by(|a, b| better(*a, *b));
    best.truncate(3);
    report.top3 = best;
    Ok(report)
}

/// Grid of `steps` points per axis spanning `[-extent, extent]`; one step
/// is the center only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub steps_u: usize,
    pub steps_v: usize,
    pub extent_u: f64,
    pub extent_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceRow {
    pub u: f64,
    pub v: f64,
    pub smiles: String,
    pub predicted: Vec<f64>,
    pub true_value: f64,
}

pub const SLICE_HEADER: &str = "u,v,smiles,predicted,true";

fn axis(steps: usize, extent: f64) -> Vec<f64> {
    if steps <= 1 {
        return vec![0.0];
    }
    (0..steps).map(|i| -extent + 2.0 * extent * i as f64 / (steps - 1) as f64).collect()
}

/// Decodes `center + u du + v dv` over the grid; points that do not decode
/// to a valid molecule are omitted. `predicted` holds every head.
pub fn latent_slice<T: Real>(
    model: &Model<T>,
    center: &[f64],
    du: &[f64],
    dv: &[f64],
    grid: GridSpec,
    oracle: impl Fn(&MolecularGraph) -> f64,
) -> Result<Vec<SliceRow>, OptError> {
    let n = center.len();
    if du.len() != n || dv.len() != n {
        return Err(OptError::Config("direction widths must match the latent width".into()));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (uu, vv, uv) = (dot(du, du), dot(dv, dv), dot(du, dv));
    if uu * vv - uv * uv <= 1e-12 * uu.max(vv).max(1e-300).powi(2) {
        return Err(OptError::DependentDirections);
    }
    let mut rows = Vec::new();
    for &v in &axis(grid.steps_v, grid.extent_v) {
        for &u in &axis(grid.steps_u, grid.extent_u) {
            let z: Vec<f64> = (0..n).map(|k| center[k] + u * du[k] + v * dv[k]).collect();
            if let Some(smiles) = decode_valid(model, &z)? {
                let graph = parse(&smiles).map_err(VaeError::Parse)?.graph;
                rows.push(SliceRow {
                    u,
                    v,
                    predicted: model.predict_property(&z)?,
                    true_value: oracle(&graph),
                    smiles,
                });
            }
        }
    }
    Ok(rows)
}

/// Writes slice rows with the prediction of head `head`.
pub fn write_slice_csv(rows: &[SliceRow], head: usize, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{SLICE_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.u, r.v, r.smiles, r.predicted[head], r.true_value)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusStats {
    pub mean_norm: f64,
    /// Fraction of norms within `[sqrt(n) - 3, sqrt(n) + 3]`.
    pub fraction_within: f64,
}

/// Norm statistics of `samples` standard-normal `n`-vectors.
pub fn annulus_check(n: usize, samples: usize, seed: u64) -> AnnulusStats {
    let mut rng = seeded(seed, 9);
    let root = (n as f64).sqrt();
    let mut total = 0.0;
    let mut within = 0usize;
    for _ in 0..samples {
        let norm = (0..n).map(|_| StandardNormal.sample(&mut rng)).map(|x: f64| x * x).sum::<f64>().sqrt();
        total += norm;
        if (norm - root).abs() <= 3.0 {
            within += 1;
        }
    }
    let m = samples.max(1) as f64;
    AnnulusStats { mean_norm: total / m, fraction_within: within as f64 / m }
}

/// Canonical forms of a corpus, for novelty checks.
pub fn canonical_set<'a>(smiles: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    smiles.into_iter().filter_map(|s| crate::smiles::canonicalize(s).ok()).collect()
}

#[cfg(test)]
mod tests;
