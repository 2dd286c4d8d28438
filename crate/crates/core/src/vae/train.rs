//! Loss assembly and the minibatch training loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::HeadKind;
use super::data::{prepare_example, DecoderBatch, EncoderBatch, Example, ModelVocab};
use super::model::{Hierarchy, Model, RenormMode, TargetStats};
use super::VaeError;
use crate::molgraph::MolecularGraph;
use crate::nn::{clip_global_norm, renorm_clips, AdamState, RenormUpdate, Session};
use crate::rng::{seeded, Rng};
use crate::smiles::{parse, CorpusRecord};
use crate::tensor::{Real, Tensor, Var};

/// KL weight, ramped linearly from 0 to 1 over `steps`.
pub fn anneal_weight(step: u64, steps: u64) -> f64 {
    if steps == 0 {
        1.0
    } else {
        (step as f64 / steps as f64).min(1.0)
    }
}

/// One standard-normal `rows x width` draw per latent layer.
pub fn draw_noise<T: Real>(widths: &[usize], rows: usize, rng: &mut Rng) -> Vec<Tensor<T>> {
    widths
        .iter()
        .map(|&n| {
            let data = (0..rows * n).map(|_| T::from_f64(StandardNormal.sample(rng))).collect();
            Tensor::matrix(rows, n, data)
        })
        .collect()
}

/// Loss components in nats per molecule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub loss: f64,
    pub recon: f64,
    /// Unweighted KL.
    pub kl: f64,
    /// Anneal weight times the KL scale.
    pub kl_weight: f64,
    pub sup: f64,
}

/// Tape handles of one batch forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub loss: Var,
    pub recon: Var,
    pub kl: Var,
    pub weighted_kl: Var,
    pub sup: Option<Var>,
    pub hierarchy: Hierarchy,
    pub z: Var,
    pub updates: Vec<RenormUpdate<T>>,
    pub kl_weight: f64,
}

impl<T: Real> Forward<T> {
    pub fn parts(&self, s: &Session<'_, T>) -> LossParts {
        let v = |x: Var| s.tape.value(x).item().as_f64();
        LossParts {
            loss: v(self.loss),
            recon: v(self.recon),
            kl: v(self.kl),
            kl_weight: self.kl_weight,
            sup: self.sup.map_or(0.0, v),
        }
    }
}

impl<T: Real> Model<T> {
    /// Standardizes linear-head targets; logistic targets pass through.
    pub fn scaled_targets(&self, raw: &[Option<f64>]) -> Vec<Option<f64>> {
        self.config
            .heads
            .iter()
            .zip(&self.target_stats)
            .map(|(h, st)| {
                let y = raw.get(h.column).copied().flatten()?;
                Some(match h.kind {
                    HeadKind::Linear => (y - st.mean) / st.std,
                    HeadKind::Logistic => y,
                })
            })
            .collect()
    }

    /// `recon + anneal * scale * kl + sup` over a batch, averaged per molecule.
    pub fn forward_batch(
        &self,
        s: &mut Session<'_, T>,
        examples: &[&Example],
        noise: Option<&[Tensor<T>]>,
        mode: RenormMode,
        anneal: f64,
    ) -> Result<Forward<T>, VaeError> {
        let enc = self.encode(s, &EncoderBatch::new(examples))?;
        let (hierarchy, updates) = self.posterior(s, &enc, noise, mode)?;
        let z = s.tape.concat(&hierarchy.z, 1)?;
        let recon = self.decode_nll(s, z, &DecoderBatch::new(examples))?;
        let kl = self.kl(s, &hierarchy)?;
        let kl_weight = anneal * self.config.kl_scale();
        let weighted_kl = s.tape.scale(kl, T::from_f64(kl_weight));
        let heads = self.head_outputs(s, z, false)?;
        let targets: Vec<Vec<Option<f64>>> = examples.iter().map(|e| self.scaled_targets(&e.targets)).collect();
        let sup = self.supervised_loss(s, &heads, &targets)?;
        let mut loss = s.tape.add(recon, weighted_kl)?;
        if let Some(sup) = sup {
            loss = s.tape.add(loss, sup)?;
        }
        Ok(Forward { loss, recon, kl, weighted_kl, sup, hierarchy, z, updates, kl_weight })
    }

    /// Strings for one molecule under the configured ablations.
    pub fn example(&self, graph: &MolecularGraph, seed: u64, targets: Vec<Option<f64>>) -> Result<Example, VaeError> {
        let (k_enc, k_dec) = self.config.strings_per_side();
        let same = self.config.ablations.one_smiles_encdec_same;
        prepare_example(&self.vocab, graph, k_enc, k_dec, same, seed, targets)
    }

    /// Single-molecule evidence bound with running renormalization statistics
    /// and noise drawn from `seed`.
    pub fn elbo(&self, graph: &MolecularGraph, targets: Vec<Option<f64>>, seed: u64) -> Result<LossParts, VaeError> {
        let ex = self.example(graph, seed, targets)?;
        let noise = draw_noise::<T>(&self.latent_widths(), 1, &mut seeded(seed, 4));
        let mut s = Session::frozen(&self.store);
        let anneal = anneal_weight(self.step, self.config.kl_anneal_steps);
        let f = self.forward_batch(&mut s, &[&ex], Some(&noise), RenormMode::Inference, anneal)?;
        Ok(f.parts(&s))
    }

    /// Folds a batch of latent samples into the clamp bounds.
    pub fn observe_latents(&mut self, z: &Tensor<T>) {
        let width = self.z_max_abs.len();
        for row in z.data.chunks(width) {
            for (m, v) in self.z_max_abs.iter_mut().zip(row) {
                *m = m.max(v.as_f64().abs());
            }
        }
        for (b, m) in self.clamp.iter_mut().zip(&self.z_max_abs) {
            // Held at the model's precision so checkpoints restore it exactly.
            *b = T::from_f64(self.config.clamp_factor * m).as_f64();
        }
    }
}

/// Sets mean and standard deviation of every linear head over the labeled
/// part of `corpus`.
pub fn fit_target_stats<T: Real>(model: &mut Model<T>, corpus: &[TrainItem]) {
    for (h, st) in model.config.heads.iter().zip(model.target_stats.iter_mut()) {
        if h.kind != HeadKind::Linear {
            continue;
        }
        let ys: Vec<f64> = corpus.iter().filter_map(|c| c.targets.get(h.column).copied().flatten()).collect();
        if ys.is_empty() {
            *st = TargetStats::default();
            continue;
        }
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
        *st = TargetStats { mean, std: if var > 0.0 { var.sqrt() } else { 1.0 } };
    }
}

#[derive(Debug, Clone)]
pub struct TrainItem {
    pub smiles: String,
    pub graph: MolecularGraph,
    /// Property columns; `None` where unlabeled.
    pub targets: Vec<Option<f64>>,
}

impl TrainItem {
    pub fn from_record(record: &CorpusRecord) -> Result<Self, VaeError> {
        let graph = parse(&record.smiles).map_err(VaeError::Parse)?.graph;
        Ok(TrainItem { smiles: record.smiles.clone(), graph, targets: record.properties.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    /// Steps over which the renormalization clips open up.
    pub renorm_warmup: u64,
    /// Global gradient-norm cap.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_decay: 0.97,
            renorm_warmup: 1000,
            clip_norm: Some(10.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub sup: f64,
    pub lr: f64,
    pub anneal: f64,
}

pub const METRICS_HEADER: &str = "step,loss,recon,kl,sup,lr,anneal";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{},{},{}", self.step, self.loss, self.recon, self.kl, self.sup, self.lr, self.anneal)
    }
}

pub fn write_metrics(rows: &[MetricsRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv())?;
    }
    Ok(())
}

/// Per-molecule, per-epoch string seed.
fn string_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((epoch as u64) << 32 | index as u64)
}

/// Minibatch Adam on the mean per-molecule loss. Strings are redrawn every
/// epoch. `on_step` sees every metrics row as it is produced.
pub fn train<T: Real>(
    model: &mut Model<T>,
    corpus: &[TrainItem],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&MetricsRow),
) -> Result<Vec<MetricsRow>, VaeError> {
    if corpus.is_empty() {
        return Err(VaeError::CorpusEmpty);
    }
    fit_target_stats(model, corpus);
    let mut adam = AdamState::new(model.store.tensors(), cfg.learning_rate);
    let mut order_rng = seeded(cfg.seed, 6);
    let mut noise_rng = seeded(cfg.seed, 5);
    let widths = model.latent_widths();
    let batch_size = cfg.batch_size.max(1);
    let mut rows = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(batch_size) {
            let examples = chunk
                .iter()
                .map(|&i| model.example(&corpus[i].graph, string_seed(cfg.seed, epoch, i), corpus[i].targets.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Example> = examples.iter().collect();
            let noise = draw_noise::<T>(&widths, refs.len(), &mut noise_rng);
            let (r_max, d_max) = renorm_clips(model.step, cfg.renorm_warmup);
            let anneal = anneal_weight(model.step, model.config.kl_anneal_steps);
            let (parts, mut grads, updates, z) = {
                let mut s = Session::new(&model.store);
                let f =
                    model.forward_batch(&mut s, &refs, Some(&noise), RenormMode::Training { r_max, d_max }, anneal)?;
                let grads = s.param_grads(f.loss)?;
                (f.parts(&s), grads, f.updates, s.tape.value(f.z).clone())
            };
            let finite = parts.loss.is_finite() && grads.iter().all(|g| g.data.iter().all(|x| x.is_finite()));
            if !finite {
                return Err(VaeError::NonFiniteLoss(model.step));
            }
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            adam.step(model.store.tensors_mut(), &grads)?;
            for (state, u) in model.renorm.iter_mut().zip(updates) {
                state.apply(u);
            }
            model.observe_latents(&z);
            let row = MetricsRow {
                step: model.step,
                loss: parts.loss,
                recon: parts.recon,
                kl: parts.kl,
                sup: parts.sup,
                lr: adam.lr,
                anneal,
            };
            on_step(&row);
            rows.push(row);
            model.step += 1;
        }
        adam.lr *= cfg.lr_decay;
    }
    Ok(rows)
}

/// Builds a model vocabulary covering `corpus`.
pub fn corpus_vocab(corpus: &[TrainItem]) -> Result<ModelVocab, VaeError> {
    ModelVocab::from_smiles(corpus.iter().map(|c| c.smiles.as_str()))
}
