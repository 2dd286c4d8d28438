//! Finite-difference checks of the whole model.

use rand::Rng as _;

use super::*;
use crate::grammar::corpus_labels;
use crate::nn::{block_grad_checks, grad_check_params_at, Session};
use crate::rng::seeded;
use crate::smiles::parse;
use crate::tensor::GradCheckReport;

/// Molecules of the end-to-end check.
pub const CHECK_SMILES: [&str; 3] = ["c1ccncc1O", "CC(=O)N", "C1CC1Cl"];

/// Checks the training loss of a micro model in double precision at
/// `probes` random parameter coordinates (tolerance 1e-4).
pub fn end_to_end_grad_check(seed: u64, probes: usize) -> Result<GradCheckReport, VaeError> {
    let vocab = ModelVocab::from_smiles(CHECK_SMILES)?;
    let mut model = Model::<f64>::new(ModelConfig::micro(), vocab, seed)?;
    model.target_stats[0] = TargetStats { mean: 80.0, std: 20.0 };
    let examples = CHECK_SMILES
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let g = parse(s).map_err(VaeError::Parse)?.graph;
            model.example(&g, i as u64, corpus_labels(&g))
        })
        .collect::<Result<Vec<_>, VaeError>>()?;
    let refs: Vec<&Example> = examples.iter().collect();
    let noise = draw_noise::<f64>(&model.latent_widths(), refs.len(), &mut seeded(seed, 4));
    let mode = RenormMode::Training { r_max: 1.0, d_max: 0.0 };
    let f = |s: &mut Session<'_, f64>| -> Result<_, VaeError> {
        Ok(model.forward_batch(s, &refs, Some(&noise), mode, 0.7)?.loss)
    };
    let mut rng = seeded(seed, 11);
    let tensors = model.store.tensors();
    let coords: Vec<(usize, usize)> = (0..probes)
        .map(|_| {
            let p = rng.gen_range(0..tensors.len());
            (p, rng.gen_range(0..tensors[p].len()))
        })
        .collect();
    Ok(grad_check_params_at(&model.store, f, &coords, 1e-4))
}

/// Block checks for five seeds followed by the end-to-end check.
pub fn grad_check_suite() -> Vec<(String, GradCheckReport)> {
    let mut out = Vec::new();
    for seed in 0..5 {
        for (name, r) in block_grad_checks(seed) {
            out.push((format!("{name}/seed{seed}"), r));
        }
    }
    let e2e = end_to_end_grad_check(0, 100).unwrap_or_else(GradCheckReport::failed);
    out.push(("end_to_end".to_string(), e2e));
    out
}
