//! Labeled corpora of grammar-sampled molecules.

use std::collections::HashSet;

use rand::Rng;

use super::sample_valid_with;
use crate::molgraph::MolecularGraph;
use crate::rng::seeded;
use crate::smiles::{parse, vocabulary, write_canonical, CorpusRecord, SymbolClass, SymbolId};

/// Property columns written by [`generate_corpus`].
pub const CORPUS_COLUMNS: [&str; 3] = ["mw", "rings", "aromatic"];

/// Symbol weights biased towards small organic molecules: mostly carbon,
/// some N/O/halogens, short ring numbers and no bracket atoms. After an
/// aromatic atom the weights favour further aromatic atoms, so aromatic
/// symbols come in runs that ring numbers can close.
#[derive(Debug, Clone)]
pub struct DrugLikeWeights {
    after_aromatic: Vec<f64>,
    otherwise: Vec<f64>,
}

impl Default for DrugLikeWeights {
    fn default() -> Self {
        let vocab = vocabulary();
        let table = |entries: &[(&str, f64)]| {
            let mut w = vec![0.0; vocab.len()];
            for &(text, weight) in entries {
                w[vocab.id(text).expect("vocabulary symbol") as usize] = weight;
            }
            w
        };
        DrugLikeWeights {
            after_aromatic: table(&[
                ("<eos>", 1.0),
                ("c", 14.0),
                ("n", 2.0),
                ("o", 0.2),
                ("s", 0.2),
                ("C", 0.8),
                ("N", 0.3),
                ("O", 0.4),
                ("F", 0.2),
                ("Cl", 0.2),
                ("(", 1.0),
                (")", 1.0),
                ("1", 2.5),
                ("2", 0.8),
            ]),
            otherwise: table(&[
                ("<eos>", 1.0),
                ("C", 14.0),
                ("c", 2.0),
                ("n", 0.2),
                ("N", 2.0),
                ("O", 3.0),
                ("S", 0.4),
                ("F", 0.5),
                ("Cl", 0.4),
                ("Br", 0.1),
                ("=", 1.5),
                ("#", 0.15),
                ("(", 2.5),
                (")", 4.0),
                ("1", 1.5),
                ("2", 0.4),
            ]),
        }
    }
}

impl DrugLikeWeights {
    pub fn weight(&self, prev: Option<SymbolId>, id: SymbolId) -> f64 {
        let aromatic = prev.is_some_and(|p| matches!(vocabulary().class(p), SymbolClass::Aromatic(_)));
        let table = if aromatic { &self.after_aromatic } else { &self.otherwise };
        table[id as usize]
    }
}

/// `[molecular weight (rounded to 1e-3), ring count, has aromatic ring (0/1)]`.
pub fn corpus_labels(g: &MolecularGraph) -> Vec<Option<f64>> {
    let mw = (g.molecular_weight() * 1000.0).round() / 1000.0;
    vec![Some(mw), Some(g.ring_count() as f64), Some(f64::from(u8::from(g.has_aromatic_ring())))]
}

/// Draws `n` distinct molecules (by canonical form) of 6 to 30 atoms with
/// [`DrugLikeWeights`], written as canonical SMILES with
/// [`corpus_labels`]. Molecules in `exclude` (canonical SMILES) are skipped.
pub fn generate_corpus(n: usize, max_len: usize, seed: u64, exclude: &HashSet<String>) -> Vec<CorpusRecord> {
    let weights = DrugLikeWeights::default();
    let mut rng = seeded(seed, 10);
    let mut seen = exclude.clone();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = sample_valid_with(rng.gen(), max_len, |prev, id| weights.weight(prev, id));
        let Ok(parsed) = parse(&s) else { continue };
        let g = parsed.graph;
        if !(6..=30).contains(&g.atom_count()) {
            continue;
        }
        let Ok(canonical) = write_canonical(&g) else { continue };
        if !seen.insert(canonical.clone()) {
            continue;
        }
        out.push(CorpusRecord { smiles: canonical, properties: corpus_labels(&g) });
    }
    out
}
