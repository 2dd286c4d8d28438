use super::config::{HeadKind, ModelConfig};
use super::data::{DecoderBatch, EncoderBatch, ModelVocab};
use super::VaeError;
use crate::nn::{
    batch_renorm, gated_pool, gru_sequence_stacked, lstm_step_projected, AttentionKeys, AttentionParams,
    BatchRenormState, GruParams, LayerNormParams, Linear, LstmParams, ParamId, ParamStore, PoolGateParams,
    RenormUpdate, Session,
};
use crate::rng::seeded;
use crate::tensor::{Real, Tensor, Var};

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub pool: PoolGateParams,
    pub norm: LayerNormParams,
    pub gru: GruParams,
}

#[derive(Debug, Clone)]
pub struct PosteriorLayer {
    /// Query network over earlier latents (absent for the first layer).
    pub query: Option<(Linear, Linear)>,
    pub attention: Option<AttentionParams>,
    pub out: Linear,
}

/// Parameter handles of every block.
#[derive(Debug, Clone)]
pub struct Layout {
    pub enc_embed: ParamId,
    pub enc_fwd: GruParams,
    pub enc_bwd: GruParams,
    pub enc_proj: Linear,
    pub enc_layers: Vec<EncoderLayer>,
    pub head_z: GruParams,
    pub head_keys: GruParams,
    pub key_pool: PoolGateParams,
    pub posterior: Vec<PosteriorLayer>,
    /// Prior network per layer (absent for the standard-normal first layer).
    pub prior: Vec<Option<(Linear, Linear)>>,
    pub dec_embed: ParamId,
    pub dec_init: (Linear, Linear),
    pub dec_latent: Linear,
    pub dec_lstm: LstmParams,
    pub dec_out: Linear,
    pub heads: Vec<Linear>,
}

/// Whether batch renormalization uses batch statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RenormMode {
    Training { r_max: f64, d_max: f64 },
    Inference,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Max-pooled final states, one row per molecule.
    pub states: Var,
    /// Pooled atom keys, one row per atom.
    pub keys: Var,
    pub atom_molecule: Vec<usize>,
    pub molecules: usize,
    /// Stacked per-position states before the final heads.
    pub positions: Var,
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub z: Vec<Var>,
    pub mu_q: Vec<Var>,
    pub logvar_q: Vec<Var>,
    /// `None` marks the standard-normal first layer.
    pub mu_p: Vec<Option<Var>>,
    pub logvar_p: Vec<Option<Var>>,
}

/// Standardization of a linear head's target.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for TargetStats {
    fn default() -> Self {
        TargetStats { mean: 0.0, std: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub vocab: ModelVocab,
    pub store: ParamStore<T>,
    pub layout: Layout,
    pub renorm: Vec<BatchRenormState<T>>,
    /// Running max |z| per latent dimension.
    pub z_max_abs: Vec<f64>,
    /// Hard-tanh bound per latent dimension used by the heads at inference.
    pub clamp: Vec<f64>,
    pub target_stats: Vec<TargetStats>,
    pub step: u64,
}

fn mlp<T: Real>(s: &mut Session<'_, T>, net: &(Linear, Linear), x: Var) -> Result<Var, VaeError> {
    let h = net.0.forward(s, x)?;
    let a = s.tape.relu(h);
    Ok(net.1.forward(s, a)?)
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, vocab: ModelVocab, seed: u64) -> Result<Self, VaeError> {
        config.validate().map_err(VaeError::Config)?;
        let mut rng = seeded(seed, 2);
        let rng = &mut rng;
        let mut st = ParamStore::new();
        let (v, e, h) = (vocab.len(), config.embed_width, config.gru_hidden);
        let enc_embed = st.uniform("enc.embed", v, e, rng);
        let enc_fwd = GruParams::new(&mut st, "enc.fwd", e, h, rng);
        let enc_bwd = GruParams::new(&mut st, "enc.bwd", e, h, rng);
        let enc_proj = Linear::new(&mut st, "enc.proj", 2 * h, h, rng);
        let enc_layers = (0..config.encoder_depth)
            .map(|i| EncoderLayer {
                pool: PoolGateParams::new(&mut st, &format!("enc.{i}.pool"), h, rng),
                norm: LayerNormParams::new(&mut st, &format!("enc.{i}.norm"), h),
                gru: GruParams::new(&mut st, &format!("enc.{i}.gru"), h + e, h, rng),
            })
            .collect();
        let head_z = GruParams::new(&mut st, "enc.head_z", h, h, rng);
        let head_keys = GruParams::new(&mut st, "enc.head_keys", h, h, rng);
        let key_pool = PoolGateParams::new(&mut st, "enc.key_pool", h, rng);
        let widths = config.latent_layout();
        let q = config.query_hidden;
        let mut posterior = Vec::new();
        let mut prior = Vec::new();
        let mut renorm = Vec::new();
        let mut prefix = 0;
        for (i, &n) in widths.iter().enumerate() {
            let (query, attention, pr) = if i == 0 {
                (None, None, None)
            } else {
                (
                    Some((
                        Linear::new(&mut st, &format!("post.{i}.q1"), prefix, q, rng),
                        Linear::new(&mut st, &format!("post.{i}.q2"), q, q, rng),
                    )),
                    Some(AttentionParams::new(&mut st, &format!("post.{i}.att"), q, h, q, rng)),
                    Some((
                        Linear::new(&mut st, &format!("prior.{i}.h"), prefix, q, rng),
                        Linear::new(&mut st, &format!("prior.{i}.out"), q, 2 * n, rng),
                    )),
                )
            };
            renorm.push(BatchRenormState::new(&mut st, &format!("post.{i}.renorm"), h));
            let out = Linear::new(&mut st, &format!("post.{i}.out"), h, 2 * n, rng);
            posterior.push(PosteriorLayer { query, attention, out });
            prior.push(pr);
            prefix += n;
        }
        let ztot = prefix;
        let (d, zi) = (config.decoder_hidden, config.decoder_latent_input);
        let dec_embed = st.uniform("dec.embed", v, e, rng);
        let dec_init = (Linear::new(&mut st, "dec.init1", ztot, d, rng), Linear::new(&mut st, "dec.init2", d, d, rng));
        let dec_latent = Linear::new(&mut st, "dec.latent", ztot, zi, rng);
        let dec_lstm = LstmParams::new(&mut st, "dec.lstm", e + zi, d, rng);
        let dec_out = Linear::new(&mut st, "dec.out", d, v, rng);
        let heads =
            config.heads.iter().map(|hs| Linear::new(&mut st, &format!("head.{}", hs.name), ztot, 1, rng)).collect();
        let layout = Layout {
            enc_embed,
            enc_fwd,
            enc_bwd,
            enc_proj,
            enc_layers,
            head_z,
            head_keys,
            key_pool,
            posterior,
            prior,
            dec_embed,
            dec_init,
            dec_latent,
            dec_lstm,
            dec_out,
            heads,
        };
        let target_stats = vec![TargetStats::default(); config.heads.len()];
        Ok(Model {
            clamp: vec![config.clamp_factor; ztot],
            z_max_abs: vec![0.0; ztot],
            config,
            vocab,
            store: st,
            layout,
            renorm,
            target_stats,
            step: 0,
        })
    }

    pub fn latent_total(&self) -> usize {
        self.clamp.len()
    }

    pub fn latent_widths(&self) -> Vec<usize> {
        self.config.latent_layout()
    }

    /// The same model with every tensor converted to `U`.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
            renorm: self
                .renorm
                .iter()
                .map(|r| BatchRenormState {
                    running_mean: r.running_mean.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    running_var: r.running_var.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    momentum: r.momentum,
                    epsilon: r.epsilon,
                    gain: r.gain,
                    bias: r.bias,
                })
                .collect(),
            z_max_abs: self.z_max_abs.clone(),
            clamp: self.clamp.clone(),
            target_stats: self.target_stats.clone(),
            step: self.step,
        }
    }

    fn masks(&self, s: &mut Session<'_, T>, mask: &[f64], steps: usize, rows: usize) -> Vec<Var> {
        (0..steps).map(|t| s.tape.constant(Tensor::from_f64(&[rows, 1], &mask[t * rows..(t + 1) * rows]))).collect()
    }

    /// Runs the multi-string encoder over a batch.
    pub fn encode(&self, s: &mut Session<'_, T>, b: &EncoderBatch) -> Result<EncoderOutput, VaeError> {
        let l = &self.layout;
        let (steps, rows, h) = (b.steps, b.strings, self.config.gru_hidden);
        let masks = self.masks(s, &b.mask, steps, rows);
        let h0 = s.tape.constant(Tensor::zeros(&[rows, h]));
        let embed = s.p(l.enc_embed);
        let x = s.tape.gather_rows(embed, &b.ids)?;
        let f = gru_sequence_stacked(s, &l.enc_fwd, x, steps, Some(&masks), h0, false)?;
        let r = gru_sequence_stacked(s, &l.enc_bwd, x, steps, Some(&masks), h0, true)?;
        let f = s.tape.concat(&f, 0)?;
        let r = s.tape.concat(&r, 0)?;
        let both = s.tape.concat(&[f, r], 1)?;
        let mut hs = l.enc_proj.forward(s, both)?;
        for layer in &l.enc_layers {
            let merged = if self.config.ablations.no_atom_pooling {
                hs
            } else {
                let pooled = self.pool_atoms(s, &layer.pool, hs, b)?;
                let ext = s.tape.concat(&[hs, pooled], 0)?;
                s.tape.gather_rows(ext, &b.writeback)?
            };
            let normed = layer.norm.forward(s, merged)?;
            let input = s.tape.concat(&[normed, x], 1)?;
            let out = gru_sequence_stacked(s, &layer.gru, input, steps, Some(&masks), h0, false)?;
            hs = s.tape.concat(&out, 0)?;
        }
        let zs = gru_sequence_stacked(s, &l.head_z, hs, steps, Some(&masks), h0, false)?;
        let last = zs[steps - 1];
        let mut states = None;
        for j in 0..b.k {
            let idx: Vec<usize> = (0..b.molecules).map(|m| m * b.k + j).collect();
            let g = s.tape.gather_rows(last, &idx)?;
            states = Some(match states {
                None => g,
                Some(acc) => s.tape.maximum(acc, g)?,
            });
        }
        let ks = gru_sequence_stacked(s, &l.head_keys, hs, steps, Some(&masks), h0, false)?;
        let ks = s.tape.concat(&ks, 0)?;
        let keys = self.pool_atoms(s, &l.key_pool, ks, b)?;
        Ok(EncoderOutput {
            states: states.expect("at least one string"),
            keys,
            atom_molecule: b.atom_molecule.clone(),
            molecules: b.molecules,
            positions: hs,
        })
    }

    /// Gated pool of each atom's rows across the strings of its molecule.
    fn pool_atoms(
        &self,
        s: &mut Session<'_, T>,
        p: &PoolGateParams,
        stacked: Var,
        b: &EncoderBatch,
    ) -> Result<Var, VaeError> {
        let reps = b.atom_rows.iter().map(|rows| s.tape.gather_rows(stacked, rows)).collect::<Result<Vec<_>, _>>()?;
        Ok(gated_pool(s, p, &reps)?)
    }

    /// Prior mean and log-variance of layer `i >= 1` given earlier latents.
    pub fn prior_params(&self, s: &mut Session<'_, T>, i: usize, prefix: &[Var]) -> Result<(Var, Var), VaeError> {
        let n = self.latent_widths()[i];
        let net = self.layout.prior[i].as_ref().expect("prior network for layers after the first");
        let x = s.tape.concat(prefix, 1)?;
        let out = mlp(s, net, x)?;
        Ok((s.tape.slice_cols(out, 0, n)?, s.tape.slice_cols(out, n, 2 * n)?))
    }

    /// `mu + exp(logvar / 2) * eps`; `eps = None` returns `mu`.
    fn reparam(s: &mut Session<'_, T>, mu: Var, logvar: Var, eps: Option<&Tensor<T>>) -> Result<Var, VaeError> {
        let Some(eps) = eps else { return Ok(mu) };
        let half = s.tape.scale(logvar, T::from_f64(0.5));
        let sd = s.tape.exp(half);
        let e = s.tape.constant(eps.clone());
        let noise = s.tape.mul(sd, e)?;
        Ok(s.tape.add(mu, noise)?)
    }

    /// Samples the posterior hierarchy; `noise = None` takes every layer's mean.
    pub fn posterior(
        &self,
        s: &mut Session<'_, T>,
        enc: &EncoderOutput,
        noise: Option<&[Tensor<T>]>,
        mode: RenormMode,
    ) -> Result<(Hierarchy, Vec<RenormUpdate<T>>), VaeError> {
        let widths = self.latent_widths();
        let mut h = Hierarchy { z: vec![], mu_q: vec![], logvar_q: vec![], mu_p: vec![], logvar_p: vec![] };
        let mut updates = Vec::new();
        for (i, &n) in widths.iter().enumerate() {
            let layer = &self.layout.posterior[i];
            let input = if i == 0 {
                h.mu_p.push(None);
                h.logvar_p.push(None);
                enc.states
            } else {
                let (mp, lp) = self.prior_params(s, i, &h.z)?;
                h.mu_p.push(Some(mp));
                h.logvar_p.push(Some(lp));
                let prefix = s.tape.concat(&h.z, 1)?;
                let query = mlp(s, layer.query.as_ref().expect("query network"), prefix)?;
                let att = layer.attention.as_ref().expect("attention");
                let keys = AttentionKeys::new(s, att, enc.keys, enc.atom_molecule.clone(), enc.molecules)?;
                keys.attend(s, att, query)?.1
            };
            let (training, r_max, d_max) = match mode {
                RenormMode::Training { r_max, d_max } => (true, r_max, d_max),
                RenormMode::Inference => (false, 1.0, 0.0),
            };
            let (normed, update) = batch_renorm(s, input, &self.renorm[i], training, r_max, d_max)?;
            updates.extend(update);
            let out = layer.out.forward(s, normed)?;
            let mu = s.tape.slice_cols(out, 0, n)?;
            let lv = s.tape.slice_cols(out, n, 2 * n)?;
            let z = Self::reparam(s, mu, lv, noise.map(|e| &e[i]))?;
            h.mu_q.push(mu);
            h.logvar_q.push(lv);
            h.z.push(z);
        }
        Ok((h, updates))
    }

    /// Draws every layer from the prior: `z_1 = eps_1`,
    /// `z_i = mu_i(z_<i) + exp(logvar_i / 2) eps_i`.
    pub fn sample_prior(&self, s: &mut Session<'_, T>, noise: &[Tensor<T>]) -> Result<Vec<Var>, VaeError> {
        let mut z = vec![s.tape.constant(noise[0].clone())];
        for (i, eps) in noise.iter().enumerate().skip(1) {
            let (mu, lv) = self.prior_params(s, i, &z)?;
            z.push(Self::reparam(s, mu, lv, Some(eps))?);
        }
        Ok(z)
    }

    /// Analytic KL from posterior to prior, summed over layers and averaged
    /// over the batch.
    pub fn kl(&self, s: &mut Session<'_, T>, h: &Hierarchy) -> Result<Var, VaeError> {
        let batch = s.tape.dims(h.z[0]).0;
        let mut total = None;
        for i in 0..h.z.len() {
            let (mq, lq) = (h.mu_q[i], h.logvar_q[i]);
            let t = &mut s.tape;
            let vq = t.exp(lq);
            let term = match (h.mu_p[i], h.logvar_p[i]) {
                (Some(mp), Some(lp)) => {
                    let d = t.sub(mq, mp)?;
                    let d2 = t.mul(d, d)?;
                    let num = t.add(vq, d2)?;
                    let vp = t.exp(lp);
                    let ratio = t.div(num, vp)?;
                    let logs = t.sub(lp, lq)?;
                    let sum = t.add(logs, ratio)?;
                    t.affine(sum, T::from_f64(0.5), T::from_f64(-0.5))
                }
                _ => {
                    let m2 = t.mul(mq, mq)?;
                    let a = t.add(vq, m2)?;
                    let b = t.sub(a, lq)?;
                    t.affine(b, T::from_f64(0.5), T::from_f64(-0.5))
                }
            };
            let layer = t.sum(term);
            total = Some(match total {
                None => layer,
                Some(acc) => t.add(acc, layer)?,
            });
        }
        Ok(s.tape.scale(total.expect("one layer"), T::one() / T::from_f64(batch as f64)))
    }

    /// Teacher-forced negative log-likelihood: per molecule, the mean over
    /// its target strings of the summed token cross-entropy; averaged over
    /// molecules.
    pub fn decode_nll(&self, s: &mut Session<'_, T>, z: Var, b: &DecoderBatch) -> Result<Var, VaeError> {
        if b.strings == 0 || b.steps == 0 {
            return Err(VaeError::EmptyTargets);
        }
        let l = &self.layout;
        let (d, e) = (self.config.decoder_hidden, self.config.embed_width);
        let zin = l.dec_latent.forward(s, z)?;
        let c0 = mlp(s, &l.dec_init, z)?;
        let zin = s.tape.gather_rows(zin, &b.string_molecule)?;
        let mut c = s.tape.gather_rows(c0, &b.string_molecule)?;
        let w = s.p(l.dec_lstm.w);
        let bias = s.p(l.dec_lstm.b);
        let w_e = s.tape.slice_rows(w, 0, e)?;
        let w_z = s.tape.slice_rows(w, e, e + self.config.decoder_latent_input)?;
        let zw = s.tape.matmul(zin, w_z)?;
        let zproj = s.tape.add(zw, bias)?;
        let embed = s.p(l.dec_embed);
        let x = s.tape.gather_rows(embed, &b.inputs)?;
        let xproj = s.tape.matmul(x, w_e)?;
        let mut h = s.tape.constant(Tensor::zeros(&[b.strings, d]));
        let mut hs = Vec::with_capacity(b.steps);
        for t in 0..b.steps {
            let xt = s.tape.slice_rows(xproj, t * b.strings, (t + 1) * b.strings)?;
            let xw = s.tape.add(xt, zproj)?;
            (h, c) = lstm_step_projected(s, &l.dec_lstm, xw, h, c)?;
            hs.push(h);
        }
        let all = s.tape.concat(&hs, 0)?;
        let logits = l.dec_out.forward(s, all)?;
        let logp = s.tape.log_softmax(logits);
        let picked = s.tape.pick(logp, &b.targets)?;
        let scale = 1.0 / (b.k * b.molecules) as f64;
        let weights: Vec<f64> = b.mask.iter().map(|m| -m * scale).collect();
        let wv = s.tape.constant(Tensor::from_f64(&[weights.len(), 1], &weights));
        let weighted = s.tape.mul(picked, wv)?;
        Ok(s.tape.sum(weighted))
    }

    /// Raw head outputs (standardized prediction or logit), one column per
    /// molecule row, optionally reading the clamped latent.
    pub fn head_outputs(&self, s: &mut Session<'_, T>, z: Var, clamp: bool) -> Result<Vec<Var>, VaeError> {
        let input = if clamp {
            let lo = Tensor::from_f64(&[1, self.clamp.len()], &self.clamp.iter().map(|b| -b).collect::<Vec<_>>());
            let hi = Tensor::from_f64(&[1, self.clamp.len()], &self.clamp);
            s.tape.hard_tanh(z, &lo, &hi)?
        } else {
            z
        };
        self.layout.heads.iter().map(|h| Ok(h.forward(s, input)?)).collect()
    }

    /// Head values on the property scale: linear heads de-standardized,
    /// logistic heads passed through the sigmoid.
    pub fn head_values(&self, s: &mut Session<'_, T>, z: Var) -> Result<Vec<Var>, VaeError> {
        let raw = self.head_outputs(s, z, true)?;
        Ok(raw
            .into_iter()
            .zip(&self.config.heads)
            .zip(&self.target_stats)
            .map(|((r, spec), st)| match spec.kind {
                HeadKind::Linear => s.tape.affine(r, T::from_f64(st.std), T::from_f64(st.mean)),
                HeadKind::Logistic => s.tape.sigmoid(r),
            })
            .collect())
    }

    /// Supervised loss averaged over the batch; `targets[m][h]` is `None`
    /// for unlabeled entries.
    pub fn supervised_loss(
        &self,
        s: &mut Session<'_, T>,
        outputs: &[Var],
        targets: &[Vec<Option<f64>>],
    ) -> Result<Option<Var>, VaeError> {
        let batch = targets.len() as f64;
        let mut total = None;
        for (h, (&out, spec)) in outputs.iter().zip(&self.config.heads).enumerate() {
            let labels: Vec<(usize, f64)> =
                targets.iter().enumerate().filter_map(|(m, t)| t.get(h).copied().flatten().map(|y| (m, y))).collect();
            if labels.is_empty() {
                continue;
            }
            let rows: Vec<usize> = labels.iter().map(|l| l.0).collect();
            let picked = s.tape.gather_rows(out, &rows)?;
            let loss = match spec.kind {
                HeadKind::Linear => {
                    let y: Vec<f64> = labels.iter().map(|l| l.1).collect();
                    let yv = s.tape.constant(Tensor::from_f64(&[y.len(), 1], &y));
                    let d = s.tape.sub(picked, yv)?;
                    let sq = s.tape.mul(d, d)?;
                    s.tape.sum(sq)
                }
                HeadKind::Logistic => {
                    // -(y log sigmoid(l) + (1 - y) log sigmoid(-l))
                    let zeros = s.tape.constant(Tensor::zeros(&[rows.len(), 1]));
                    let pair = s.tape.concat(&[zeros, picked], 1)?;
                    let ls = s.tape.log_softmax(pair);
                    let w: Vec<f64> = labels.iter().flat_map(|l| [-(1.0 - l.1), -l.1]).collect();
                    let wv = s.tape.constant(Tensor::from_f64(&[rows.len(), 2], &w));
                    let p = s.tape.mul(ls, wv)?;
                    s.tape.sum(p)
                }
            };
            total = Some(match total {
                None => loss,
                Some(acc) => s.tape.add(acc, loss)?,
            });
        }
        Ok(total.map(|t| s.tape.scale(t, T::one() / T::from_f64(batch))))
    }
}
