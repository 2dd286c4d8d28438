//! Beam search decoding and inference-time helpers.

use std::cmp::Ordering;
use std::collections::HashSet;

use super::data::ModelVocab;
use super::model::{Model, RenormMode};
use super::train::draw_noise;
use super::VaeError;
use crate::grammar::{initial_state, PdaState};
use crate::molgraph::MolecularGraph;
use crate::nn::{lstm_step_projected, Session};
use crate::rng::seeded;
use crate::smiles::{canonicalize, parse, BOS, EOS, PAD};
use crate::tensor::{Real, Tensor};

/// An autoregressive model stepped over a batch of beam rows.
pub trait StepModel {
    type State: Clone;

    /// Log-probabilities over the vocabulary after feeding `tokens[i]` to
    /// `states[i]`, with the successor states.
    fn step(&self, states: &[Self::State], tokens: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Self::State>), VaeError>;
}

/// Masked decoding checks that a string can still be finished once the room
/// left falls within this many tokens of its shortest completion; a single
/// token lengthens the completion by less than this.
const COMPLETION_MARGIN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamOptions {
    pub width: usize,
    /// Cap on emitted tokens, eos included.
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Local ids ending with eos.
    pub ids: Vec<usize>,
    pub log_prob: f64,
}

#[derive(Clone)]
struct Hyp<S> {
    ids: Vec<usize>,
    score: f64,
    state: S,
    pda: Option<PdaState>,
}

/// Higher score first, then the lexicographically smaller sequence.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Beam search over summed token log-probabilities, without length
/// normalization. Pad and bos are never emitted. With `grammar`, each step's
/// distribution is renormalized over the tokens that keep the string
/// completable to a valid SMILES.
pub fn beam_search<M: StepModel>(
    model: &M,
    init: M::State,
    opts: BeamOptions,
    grammar: Option<&ModelVocab>,
) -> Result<Decoded, VaeError> {
    let width = opts.width.max(1);
    let mut live = vec![Hyp { ids: Vec::new(), score: 0.0, state: init, pda: grammar.map(|_| initial_state()) }];
    let mut finished: Vec<Decoded> = Vec::new();
    for _ in 0..opts.max_len {
        let states: Vec<M::State> = live.iter().map(|h| h.state.clone()).collect();
        let tokens: Vec<usize> = live.iter().map(|h| h.ids.last().copied().unwrap_or(BOS as usize)).collect();
        let (logps, next) = model.step(&states, &tokens)?;
        // (hyp, token, score, successor pda)
        let mut cands: Vec<(usize, usize, f64, Option<PdaState>)> = Vec::new();
        for (i, (h, lp)) in live.iter().zip(&logps).enumerate() {
            let allowed: Vec<(usize, Option<PdaState>)> = match (&h.pda, grammar) {
                (Some(pda), Some(v)) => {
                    // Near the cap, keep only tokens that still leave room to finish.
                    let room = opts.max_len - h.ids.len() - 1;
                    let near_cap = room < pda.completion_len() + COMPLETION_MARGIN;
                    (0..lp.len())
                        .filter(|&t| t != PAD as usize && t != BOS as usize)
                        .filter_map(|t| pda.step(v.global(t)).map(|p| (t, p)))
                        .filter(|(t, p)| !near_cap || *t == EOS as usize || p.completion_len() <= room)
                        .map(|(t, p)| (t, Some(p)))
                        .collect()
                }
                _ => (0..lp.len()).filter(|&t| t != PAD as usize && t != BOS as usize).map(|t| (t, None)).collect(),
            };
            if allowed.is_empty() {
                continue;
            }
            let norm = if grammar.is_some() {
                let m = allowed.iter().map(|a| lp[a.0]).fold(f64::NEG_INFINITY, f64::max);
                m + allowed.iter().map(|a| (lp[a.0] - m).exp()).sum::<f64>().ln()
            } else {
                0.0
            };
            for (t, pda) in allowed {
                cands.push((i, t, h.score + lp[t] - norm, pda));
            }
        }
        let seq = |c: &(usize, usize, f64, Option<PdaState>)| {
            let mut s = live[c.0].ids.clone();
            s.push(c.1);
            s
        };
        let mut keyed: Vec<(Vec<usize>, (usize, usize, f64, Option<PdaState>))> =
            cands.into_iter().map(|c| (seq(&c), c)).collect();
        keyed.sort_by(|a, b| rank((a.1 .2, &a.0), (b.1 .2, &b.0)));
        keyed.truncate(width);
        let mut next_live = Vec::new();
        for (ids, (i, t, score, pda)) in keyed {
            if t == EOS as usize {
                finished.push(Decoded { ids, log_prob: score });
            } else {
                next_live.push(Hyp { ids, score, state: next[i].clone(), pda });
            }
        }
        live = next_live;
        let best_done = finished.iter().map(|d| d.log_prob).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || best_done >= best_live {
            break;
        }
    }
    finished
        .into_iter()
        .min_by(|a, b| rank((a.log_prob, &a.ids), (b.log_prob, &b.ids)))
        .ok_or(VaeError::MaxLengthExceeded)
}

/// Decoder LSTM state of one beam row.
#[derive(Debug, Clone)]
pub struct LstmBeamState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

/// Steps the decoder for one fixed latent vector.
pub struct LatentDecoder<'m, T> {
    model: &'m Model<T>,
    /// Latent contribution to the gate pre-activations, bias included.
    zproj: Vec<T>,
    pub init: LstmBeamState<T>,
}

impl<'m, T: Real> LatentDecoder<'m, T> {
    pub fn new(model: &'m Model<T>, z: &[f64]) -> Result<Self, VaeError> {
        let l = &model.layout;
        let e = model.config.embed_width;
        let mut s = Session::frozen(&model.store);
        let zv = s.tape.constant(Tensor::from_f64(&[1, z.len()], z));
        let zin = l.dec_latent.forward(&mut s, zv)?;
        let h1 = l.dec_init.0.forward(&mut s, zv)?;
        let a1 = s.tape.relu(h1);
        let c0 = l.dec_init.1.forward(&mut s, a1)?;
        let w = s.p(l.dec_lstm.w);
        let b = s.p(l.dec_lstm.b);
        let wz = s.tape.slice_rows(w, e, e + model.config.decoder_latent_input)?;
        let zw = s.tape.matmul(zin, wz)?;
        let zproj = s.tape.add(zw, b)?;
        Ok(LatentDecoder {
            model,
            zproj: s.tape.value(zproj).data.clone(),
            init: LstmBeamState { h: vec![T::zero(); model.config.decoder_hidden], c: s.tape.value(c0).data.clone() },
        })
    }
}

impl<T: Real> StepModel for LatentDecoder<'_, T> {
    type State = LstmBeamState<T>;

    fn step(&self, states: &[Self::State], tokens: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Self::State>), VaeError> {
        let m = self.model;
        let l = &m.layout;
        let (rows, d, e) = (states.len(), m.config.decoder_hidden, m.config.embed_width);
        let mut s = Session::frozen(&m.store);
        let embed = s.p(l.dec_embed);
        let x = s.tape.gather_rows(embed, tokens)?;
        let w = s.p(l.dec_lstm.w);
        let we = s.tape.slice_rows(w, 0, e)?;
        let xw = s.tape.matmul(x, we)?;
        let zp = s.tape.constant(Tensor::matrix(1, self.zproj.len(), self.zproj.clone()));
        let xw = s.tape.add(xw, zp)?;
        let h = s.tape.constant(Tensor::matrix(rows, d, states.iter().flat_map(|st| st.h.iter().copied()).collect()));
        let c = s.tape.constant(Tensor::matrix(rows, d, states.iter().flat_map(|st| st.c.iter().copied()).collect()));
        let (h, c) = lstm_step_projected(&mut s, &l.dec_lstm, xw, h, c)?;
        let logits = l.dec_out.forward(&mut s, h)?;
        let lp = s.tape.log_softmax(logits);
        let lp = s.tape.value(lp);
        let (hv, cv) = (s.tape.value(h), s.tape.value(c));
        let logps = (0..rows).map(|r| lp.row_slice(r).iter().map(|x| x.as_f64()).collect()).collect();
        let next =
            (0..rows).map(|r| LstmBeamState { h: hv.row_slice(r).to_vec(), c: cv.row_slice(r).to_vec() }).collect();
        Ok((logps, next))
    }
}

/// Validity, uniqueness and novelty of decoded prior samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleReport {
    pub strings: Vec<String>,
    /// Fraction that parse.
    pub validity: f64,
    /// Distinct canonical molecules over valid samples.
    pub uniqueness: f64,
    /// Valid samples whose canonical form is absent from the corpus.
    pub novelty: f64,
}

impl<T: Real> Model<T> {
    /// Beam-decodes one latent vector to a SMILES string.
    pub fn beam_decode(&self, z: &[f64], width: usize, grammar_mask: bool) -> Result<String, VaeError> {
        let dec = LatentDecoder::new(self, z)?;
        let opts = BeamOptions { width, max_len: self.config.max_decode_len };
        let init = dec.init.clone();
        let out = beam_search(&dec, init, opts, grammar_mask.then_some(&self.vocab))?;
        Ok(self.vocab.decode(&out.ids))
    }

    /// Beam decoding with the configured width and masking.
    pub fn decode(&self, z: &[f64]) -> Result<String, VaeError> {
        self.beam_decode(z, self.config.beam_width, self.config.grammar_mask_decoding)
    }

    /// Posterior means at every layer, concatenated. Strings are drawn with
    /// a fixed seed.
    pub fn map_encode(&self, graph: &MolecularGraph) -> Result<Vec<f64>, VaeError> {
        let ex = self.example(graph, 0, Vec::new())?;
        let mut s = Session::frozen(&self.store);
        let enc = self.encode(&mut s, &super::data::EncoderBatch::new(&[&ex]))?;
        let (h, _) = self.posterior(&mut s, &enc, None, RenormMode::Inference)?;
        let z = s.tape.concat(&h.z, 1)?;
        Ok(s.tape.value(z).to_f64())
    }

    /// Head values for latent `z` through the clamp.
    pub fn predict_property(&self, z: &[f64]) -> Result<Vec<f64>, VaeError> {
        let mut s = Session::frozen(&self.store);
        let zv = s.tape.constant(Tensor::from_f64(&[1, z.len()], z));
        let heads = self.head_values(&mut s, zv)?;
        Ok(heads.into_iter().map(|h| s.tape.value(h).item().as_f64()).collect())
    }

    /// Draws `n` latent vectors from the prior.
    pub fn sample_prior_latents(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, VaeError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let noise = draw_noise::<T>(&self.latent_widths(), n, &mut seeded(seed, 7));
        let mut s = Session::frozen(&self.store);
        let layers = self.sample_prior(&mut s, &noise)?;
        let z = s.tape.concat(&layers, 1)?;
        let z = s.tape.value(z);
        Ok((0..n).map(|r| z.row_slice(r).iter().map(|x| x.as_f64()).collect()).collect())
    }

    /// Decodes `n` prior samples. Samples whose beams all hit the length cap
    /// count as invalid and decode to the empty string.
    pub fn sample_prior_and_decode(
        &self,
        n: usize,
        seed: u64,
        corpus_canonical: &HashSet<String>,
    ) -> Result<SampleReport, VaeError> {
        let mut strings = Vec::with_capacity(n);
        for z in self.sample_prior_latents(n, seed)? {
            match self.decode(&z) {
                Ok(s) => strings.push(s),
                Err(VaeError::MaxLengthExceeded) => strings.push(String::new()),
                Err(e) => return Err(e),
            }
        }
        Ok(sample_report(strings, corpus_canonical))
    }
}

/// Validity, uniqueness and novelty statistics of `strings`.
pub fn sample_report(strings: Vec<String>, corpus_canonical: &HashSet<String>) -> SampleReport {
    if strings.is_empty() {
        return SampleReport::default();
    }
    let canon: Vec<String> =
        strings.iter().filter(|s| !s.is_empty() && parse(s).is_ok()).filter_map(|s| canonicalize(s).ok()).collect();
    let valid = canon.len();
    let distinct: HashSet<&String> = canon.iter().collect();
    let novel = canon.iter().filter(|c| !corpus_canonical.contains(*c)).count();
    let frac = |k: usize, of: usize| if of == 0 { 0.0 } else { k as f64 / of as f64 };
    SampleReport {
        validity: frac(valid, strings.len()),
        uniqueness: frac(distinct.len(), valid),
        novelty: frac(novel, valid),
        strings,
    }
}
