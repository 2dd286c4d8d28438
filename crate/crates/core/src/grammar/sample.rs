//! Masked random generation of valid SMILES.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{initial_state, PdaState};
use crate::rng::seeded;
use crate::smiles::vocab::{vocabulary, SymbolId, EOS};

/// Samples one string by drawing among allowed symbols, weighted by
/// `weights` (per vocabulary id) or uniformly.
///
/// A symbol is only drawn when the deterministic completion after it still
/// fits in `max_len` symbols, so generation closes open rings and branches
/// as the length budget runs out. Zero-weight symbols are used only when no
/// positively weighted symbol fits.
pub fn sample_valid(seed: u64, max_len: usize, weights: Option<&[f64]>) -> String {
    sample_valid_with(seed, max_len, |_, id| weights.map_or(1.0, |w| w[id as usize]))
}

/// As [`sample_valid`], with a weight that also sees the previous symbol.
pub fn sample_valid_with(seed: u64, max_len: usize, weight: impl Fn(Option<SymbolId>, SymbolId) -> f64) -> String {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut rng = seeded(seed, 1);
    let mut state = initial_state();
    let mut out: Vec<SymbolId> = Vec::new();
    while !state.is_done() {
        let prev = out.last().copied();
        let (id, next) = draw(&state, max_len - out.len(), |id| weight(prev, id), &mut rng);
        if id != EOS {
            out.push(id);
        }
        state = next;
    }
    vocabulary().detokenize(&out)
}

fn draw<R: Rng>(
    state: &PdaState,
    budget: usize,
    weight: impl Fn(SymbolId) -> f64,
    rng: &mut R,
) -> (SymbolId, PdaState) {
    let allowed: Vec<SymbolId> = state.valid_next_tokens().ids().collect();
    let fits = |id: SymbolId| -> Option<PdaState> {
        let next = state.step(id)?;
        // symbols used by this draw plus the completion, eos excluded
        let need = if id == EOS { 0 } else { next.completion_len() };
        (need <= budget).then_some(next)
    };
    for positive in [true, false] {
        let mut pool: Vec<SymbolId> = allowed.iter().copied().filter(|&id| (weight(id) > 0.0) == positive).collect();
        while !pool.is_empty() {
            let k = if positive {
                let w: Vec<f64> = pool.iter().map(|&id| weight(id)).collect();
                WeightedIndex::new(&w).expect("positive weights").sample(rng)
            } else {
                rng.gen_range(0..pool.len())
            };
            let id = pool.swap_remove(k);
            if let Some(next) = fits(id) {
                return (id, next);
            }
        }
    }
    unreachable!("the completion's first symbol always fits")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::{parse, symbolize};

    #[test]
    fn samples_parse_and_respect_length() {
        for seed in 0..200 {
            let s = sample_valid(seed, 30, None);
            assert!(parse(&s).is_ok(), "{s}");
            assert!(symbolize(&s).unwrap().len() <= 30, "{s}");
        }
    }

    #[test]
    fn length_one_gives_single_atoms() {
        for seed in 0..50 {
            let s = sample_valid(seed, 1, None);
            assert_eq!(parse(&s).unwrap().graph.atom_count(), 1, "{s}");
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(sample_valid(9, 60, None), sample_valid(9, 60, None));
    }
}
