//! Model vocabulary, per-molecule string sets and padded batches.

use std::collections::{BTreeSet, HashMap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::VaeError;
use crate::molgraph::{canonical_form, canonical_ranking, MolecularGraph};
use crate::rng::seeded;
use crate::smiles::{enumerate_random, parse, tokenize, vocabulary, AtomAlignment, SymbolId, BOS, EOS, PAD};

/// Symbols always present in a model vocabulary besides those seen in the
/// corpus, so grammar-masked decoding can always finish a string.
const STRUCTURAL: [&str; 16] = ["C", "(", ")", "=", "#", "1", "2", "3", "4", "5", "6", "7", "8", "9", "-", "O"];

/// The subset of the global symbol vocabulary a model reads and writes.
///
/// Local ids 0, 1, 2 are pad, bos and eos, as in the global vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct ModelVocab {
    symbols: Vec<SymbolId>,
    index: HashMap<SymbolId, usize>,
}

impl From<Vec<String>> for ModelVocab {
    fn from(texts: Vec<String>) -> Self {
        let v = vocabulary();
        ModelVocab::from_ids(texts.iter().map(|t| v.id(t).unwrap_or(PAD)).collect())
    }
}

impl From<ModelVocab> for Vec<String> {
    fn from(m: ModelVocab) -> Self {
        m.texts()
    }
}

impl ModelVocab {
    fn from_ids(symbols: Vec<SymbolId>) -> Self {
        let index = symbols.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        ModelVocab { symbols, index }
    }

    /// Specials, the structural set, and every symbol of `smiles`.
    pub fn from_smiles<'a>(smiles: impl IntoIterator<Item = &'a str>) -> Result<Self, VaeError> {
        let v = vocabulary();
        let mut seen = BTreeSet::new();
        for t in STRUCTURAL {
            seen.insert(v.id(t).expect("structural symbol"));
        }
        for s in smiles {
            let stream = tokenize(s).map_err(|e| VaeError::Parse(e.into()))?;
            seen.extend(stream.vocabulary_ids.iter().copied());
        }
        // Rewriting a string may flip the handedness mark of a chiral atom.
        let mirrored: Vec<SymbolId> = seen
            .iter()
            .filter_map(|&id| {
                let t = v.text(id);
                let m = if t.contains("@@") { t.replace("@@", "@") } else { t.replace('@', "@@") };
                (m != t).then(|| v.id(&m)).flatten()
            })
            .collect();
        seen.extend(mirrored);
        let mut symbols = vec![PAD, BOS, EOS];
        symbols.extend(seen.into_iter().filter(|id| ![PAD, BOS, EOS].contains(id)));
        Ok(ModelVocab::from_ids(symbols))
    }

    /// Every global symbol.
    pub fn full() -> Self {
        ModelVocab::from_ids((0..vocabulary().len() as SymbolId).collect())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn local(&self, id: SymbolId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn global(&self, local: usize) -> SymbolId {
        self.symbols[local]
    }

    pub fn texts(&self) -> Vec<String> {
        let v = vocabulary();
        self.symbols.iter().map(|&s| v.text(s).to_string()).collect()
    }

    /// Local ids of `smiles`, ending with eos.
    pub fn encode(&self, smiles: &str) -> Result<Vec<usize>, VaeError> {
        let stream = tokenize(smiles).map_err(|e| VaeError::Parse(e.into()))?;
        self.map_ids(&stream.vocabulary_ids)
    }

    fn map_ids(&self, ids: &[SymbolId]) -> Result<Vec<usize>, VaeError> {
        ids.iter()
            .map(|&id| self.local(id).ok_or_else(|| VaeError::UnknownSymbol(vocabulary().text(id).to_string())))
            .collect()
    }

    /// SMILES text of local ids, stopping at eos.
    pub fn decode(&self, ids: &[usize]) -> String {
        let global: Vec<SymbolId> = ids.iter().take_while(|&&i| i != EOS as usize).map(|&i| self.global(i)).collect();
        vocabulary().detokenize(&global)
    }
}

/// One encoder string: local ids (ending with eos) and, for each graph atom,
/// the position of its element symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedString {
    pub ids: Vec<usize>,
    pub atom_positions: Vec<usize>,
}

impl EncodedString {
    pub fn new(vocab: &ModelVocab, smiles: &str, alignment: &AtomAlignment, atoms: usize) -> Result<Self, VaeError> {
        let stream = tokenize(smiles).map_err(|e| VaeError::Parse(e.into()))?;
        let ids = vocab.map_ids(&stream.vocabulary_ids)?;
        if alignment.len() != atoms || stream.atom_symbol_positions.len() != atoms {
            return Err(VaeError::AlignmentMissing);
        }
        let mut atom_positions = vec![usize::MAX; atoms];
        for (k, &a) in alignment.graph_atoms.iter().enumerate() {
            if a >= atoms || atom_positions[a] != usize::MAX {
                return Err(VaeError::AlignmentMissing);
            }
            atom_positions[a] = stream.atom_symbol_positions[k];
        }
        Ok(EncodedString { ids, atom_positions })
    }
}

/// Encoder and decoder strings of one molecule plus its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub atoms: usize,
    pub encoder: Vec<EncodedString>,
    pub decoder: Vec<Vec<usize>>,
    /// Per head; standardized for linear heads.
    pub targets: Vec<Option<f64>>,
}

/// Draws encoder and decoder strings for `graph`.
///
/// The two sides are disjoint when the molecule has enough distinct strings;
/// otherwise the shortfall is filled by drawing with replacement. With
/// `same`, the decoder reuses the encoder strings.
pub fn prepare_example(
    vocab: &ModelVocab,
    graph: &MolecularGraph,
    k_enc: usize,
    k_dec: usize,
    same: bool,
    seed: u64,
    targets: Vec<Option<f64>>,
) -> Result<Example, VaeError> {
    let want = if same { k_enc } else { k_enc + k_dec };
    let pool = enumerate_random(graph, seed, want).map_err(|e| VaeError::Parse(e.into()))?;
    let mut rng = seeded(seed, 3);
    let n = pool.len();
    let mut pick = |i: usize| if i < n { i } else { rng.gen_range(0..n) };
    let enc_idx: Vec<usize> = (0..k_enc).map(&mut pick).collect();
    let dec_idx: Vec<usize> = if same { enc_idx.clone() } else { (k_enc..k_enc + k_dec).map(&mut pick).collect() };
    let atoms = graph.atom_count();
    let encoder =
        enc_idx.iter().map(|&i| EncodedString::new(vocab, &pool[i].0, &pool[i].1, atoms)).collect::<Result<_, _>>()?;
    let decoder = dec_idx.iter().map(|&i| vocab.encode(&pool[i].0)).collect::<Result<_, _>>()?;
    Ok(Example { atoms, encoder, decoder, targets })
}

/// An example from explicit strings of one molecule. Atom positions are
/// expressed in the canonical atom order shared by all strings.
pub fn example_from_strings(
    vocab: &ModelVocab,
    encoder: &[&str],
    decoder: &[&str],
    targets: Vec<Option<f64>>,
) -> Result<Example, VaeError> {
    let first = encoder.first().or(decoder.first()).ok_or(VaeError::EmptyTargets)?;
    let reference = canonical_form(&parse(first).map_err(VaeError::Parse)?.graph);
    let atoms = reference.atom_count();
    let mut enc = Vec::with_capacity(encoder.len());
    for s in encoder.iter().chain(decoder) {
        let p = parse(s).map_err(VaeError::Parse)?;
        let labeling = canonical_ranking(&p.graph);
        if canonical_form(&p.graph) != reference {
            return Err(VaeError::MoleculeMismatch);
        }
        if enc.len() < encoder.len() {
            enc.push(EncodedString::new(vocab, s, &p.alignment.relabeled(&labeling.rank), atoms)?);
        }
    }
    let dec = decoder.iter().map(|s| vocab.encode(s)).collect::<Result<_, _>>()?;
    Ok(Example { atoms, encoder: enc, decoder: dec, targets })
}

/// Time-major padded encoder inputs for a batch of molecules that all carry
/// `k` strings. String `s` belongs to molecule `s / k`; stacked row
/// `t * strings + s` holds position `t` of string `s`.
#[derive(Debug, Clone)]
pub struct EncoderBatch {
    pub molecules: usize,
    pub k: usize,
    pub strings: usize,
    pub steps: usize,
    /// `steps` rows of `strings` ids each, flattened.
    pub ids: Vec<usize>,
    /// 1 where a position is inside its string.
    pub mask: Vec<f64>,
    /// For each of the `k` strings: stacked row of every atom, batch order.
    pub atom_rows: Vec<Vec<usize>>,
    /// Molecule of every atom.
    pub atom_molecule: Vec<usize>,
    /// Gather map that replaces atom rows of the stacked states by pooled
    /// rows appended after them.
    pub writeback: Vec<usize>,
}

impl EncoderBatch {
    pub fn new(examples: &[&Example]) -> Self {
        let molecules = examples.len();
        let k = examples.first().map_or(1, |e| e.encoder.len());
        assert!(examples.iter().all(|e| e.encoder.len() == k), "uniform string count");
        let strings = molecules * k;
        let steps = examples.iter().flat_map(|e| e.encoder.iter().map(|s| s.ids.len())).max().unwrap_or(0);
        let mut ids = vec![PAD as usize; steps * strings];
        let mut mask = vec![0.0; steps * strings];
        let mut atom_rows = vec![Vec::new(); k];
        let mut atom_molecule = Vec::new();
        let mut writeback: Vec<usize> = (0..steps * strings).collect();
        let total_rows = steps * strings;
        // Strings are laid out in id order so the batch does not depend on
        // the order they were listed in.
        let sorted: Vec<Vec<&EncodedString>> = examples
            .iter()
            .map(|e| {
                let mut v: Vec<&EncodedString> = e.encoder.iter().collect();
                v.sort_by(|a, b| a.ids.cmp(&b.ids).then_with(|| a.atom_positions.cmp(&b.atom_positions)));
                v
            })
            .collect();
        for (m, e) in examples.iter().enumerate() {
            for (j, enc) in sorted[m].iter().enumerate() {
                let s = m * k + j;
                for (t, &id) in enc.ids.iter().enumerate() {
                    ids[t * strings + s] = id;
                    mask[t * strings + s] = 1.0;
                }
            }
            for a in 0..e.atoms {
                let n = atom_molecule.len();
                atom_molecule.push(m);
                for (j, enc) in sorted[m].iter().enumerate() {
                    let row = enc.atom_positions[a] * strings + m * k + j;
                    atom_rows[j].push(row);
                    writeback[row] = total_rows + n;
                }
            }
        }
        EncoderBatch { molecules, k, strings, steps, ids, mask, atom_rows, atom_molecule, writeback }
    }

    pub fn atoms(&self) -> usize {
        self.atom_molecule.len()
    }
}

/// Teacher-forced decoder inputs: bos then the string, predicting the string
/// then eos. Row `t * strings + s` as in [`EncoderBatch`].
#[derive(Debug, Clone)]
pub struct DecoderBatch {
    pub molecules: usize,
    pub k: usize,
    pub strings: usize,
    pub steps: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub mask: Vec<f64>,
    pub string_molecule: Vec<usize>,
}

impl DecoderBatch {
    pub fn new(examples: &[&Example]) -> Self {
        let seqs: Vec<Vec<&Vec<usize>>> = examples.iter().map(|e| e.decoder.iter().collect()).collect();
        Self::from_targets(&seqs)
    }

    /// `targets[m]` lists molecule `m`'s target strings (local ids ending
    /// with eos); every molecule must list the same number.
    pub fn from_targets(targets: &[Vec<&Vec<usize>>]) -> Self {
        let molecules = targets.len();
        let k = targets.first().map_or(1, Vec::len);
        assert!(targets.iter().all(|t| t.len() == k), "uniform string count");
        let strings = molecules * k;
        let steps = targets.iter().flatten().map(|t| t.len()).max().unwrap_or(0);
        let mut inputs = vec![PAD as usize; steps * strings];
        let mut tgt = vec![PAD as usize; steps * strings];
        let mut mask = vec![0.0; steps * strings];
        let mut string_molecule = Vec::with_capacity(strings);
        for (m, ts) in targets.iter().enumerate() {
            for (j, t) in ts.iter().enumerate() {
                let s = m * k + j;
                string_molecule.push(m);
                for (p, &id) in t.iter().enumerate() {
                    let row = p * strings + s;
                    inputs[row] = if p == 0 { BOS as usize } else { t[p - 1] };
                    tgt[row] = id;
                    mask[row] = 1.0;
                }
            }
        }
        DecoderBatch { molecules, k, strings, steps, inputs, targets: tgt, mask, string_molecule }
    }
}
