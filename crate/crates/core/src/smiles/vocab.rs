//! The fixed symbol vocabulary shared by the tokenizer, the pushdown automaton
//! and the model.
//!
//! Bracket atoms and `%NN` ring numbers expand to several symbols, so one
//! lexical token may map to more than one vocabulary id. Symbols that play
//! different grammatical roles (`-` as bond or charge, `:` as bond or atom
//! class, `H` as element or hydrogen count) share one id; context decides.

use std::collections::HashMap;
use std::sync::LazyLock;

use crate::molgraph::{BondOrder, Element};

pub type SymbolId = u16;

pub const PAD: SymbolId = 0;
pub const BOS: SymbolId = 1;
pub const EOS: SymbolId = 2;

/// Grammatical class of a vocabulary symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolClass {
    Pad,
    Bos,
    Eos,
    /// Capitalized element symbol; organic-subset members double as bare atoms.
    Element(Element),
    /// Lowercase aromatic symbol (`c`, `se`, ...).
    Aromatic(Element),
    Bond(BondOrder),
    Digit(u8),
    Percent,
    BranchOpen,
    BranchClose,
    BracketOpen,
    BracketClose,
    Plus,
    Chiral,
}

pub struct Vocabulary {
    texts: Vec<String>,
    classes: Vec<SymbolClass>,
    index: HashMap<String, SymbolId>,
}

static VOCAB: LazyLock<Vocabulary> = LazyLock::new(Vocabulary::build);

/// The process-wide vocabulary.
pub fn vocabulary() -> &'static Vocabulary {
    &VOCAB
}

/// Organic subset atoms that may appear outside brackets.
pub const ALIPHATIC_ORGANIC: [&str; 10] = ["B", "C", "N", "O", "S", "P", "F", "Cl", "Br", "I"];
pub const AROMATIC_ORGANIC: [&str; 6] = ["b", "c", "n", "o", "s", "p"];
/// Lowercase symbols allowed inside brackets.
pub const AROMATIC_BRACKET: [&str; 7] = ["c", "n", "o", "p", "s", "se", "as"];

impl Vocabulary {
    fn build() -> Vocabulary {
        let mut entries: Vec<(String, SymbolClass)> = vec![
            ("<pad>".into(), SymbolClass::Pad),
            ("<bos>".into(), SymbolClass::Bos),
            ("<eos>".into(), SymbolClass::Eos),
        ];
        for s in ALIPHATIC_ORGANIC {
            entries.push((s.into(), SymbolClass::Element(Element::from_symbol(s).expect("organic element"))));
        }
        for s in ["b", "c", "n", "o", "s", "p", "se", "as"] {
            let upper = aromatic_to_element(s).expect("aromatic symbol");
            entries.push((s.into(), SymbolClass::Aromatic(upper)));
        }
        for c in ['-', '=', '#', '$', ':', '/', '\\'] {
            entries.push((c.to_string(), SymbolClass::Bond(BondOrder::from_symbol(c).expect("bond"))));
        }
        for d in 0..10u8 {
            entries.push((d.to_string(), SymbolClass::Digit(d)));
        }
        entries.push(("%".into(), SymbolClass::Percent));
        entries.push(("(".into(), SymbolClass::BranchOpen));
        entries.push((")".into(), SymbolClass::BranchClose));
        entries.push(("[".into(), SymbolClass::BracketOpen));
        entries.push(("]".into(), SymbolClass::BracketClose));
        entries.push(("+".into(), SymbolClass::Plus));
        for e in Element::all() {
            if !ALIPHATIC_ORGANIC.contains(&e.symbol()) {
                entries.push((e.symbol().to_string(), SymbolClass::Element(e)));
            }
        }
        for chiral in chiral_symbols() {
            entries.push((chiral, SymbolClass::Chiral));
        }
        let index = entries.iter().enumerate().map(|(i, (t, _))| (t.clone(), i as SymbolId)).collect();
        let (texts, classes) = entries.into_iter().unzip();
        Vocabulary { texts, classes, index }
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn id(&self, text: &str) -> Option<SymbolId> {
        self.index.get(text).copied()
    }

    pub fn text(&self, id: SymbolId) -> &str {
        &self.texts[id as usize]
    }

    pub fn class(&self, id: SymbolId) -> SymbolClass {
        self.classes[id as usize]
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    /// Concatenates symbol texts, skipping special symbols.
    pub fn detokenize(&self, ids: &[SymbolId]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(self.class(id), SymbolClass::Pad | SymbolClass::Bos | SymbolClass::Eos))
            .map(|&id| self.text(id))
            .collect()
    }
}

/// Element of a lowercase aromatic symbol.
pub fn aromatic_to_element(s: &str) -> Option<Element> {
    match s {
        "b" => Some(Element::B),
        "c" => Some(Element::C),
        "n" => Some(Element::N),
        "o" => Some(Element::O),
        "s" => Some(Element::S),
        "p" => Some(Element::P),
        "se" => Some(Element::SE),
        "as" => Some(Element::AS),
        _ => None,
    }
}

/// All chirality tokens, each a single symbol.
pub fn chiral_symbols() -> Vec<String> {
    let mut out: Vec<String> =
        ["@", "@@", "@TH1", "@TH2", "@AL1", "@AL2", "@SP1", "@SP2", "@SP3"].iter().map(|s| s.to_string()).collect();
    out.extend((1..=30).map(|i| format!("@TB{i}")));
    out.extend((1..=30).map(|i| format!("@OH{i}")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_and_lookup() {
        let v = vocabulary();
        assert_eq!(v.text(PAD), "<pad>");
        assert_eq!(v.text(EOS), "<eos>");
        assert_eq!(v.class(v.id("Cl").unwrap()), SymbolClass::Element(Element::CL));
        assert_eq!(v.class(v.id("se").unwrap()), SymbolClass::Aromatic(Element::SE));
        assert_eq!(v.class(v.id("@OH30").unwrap()), SymbolClass::Chiral);
        // 3 specials + 98 elements + 8 aromatic + 7 bonds + 10 digits + 6 punctuation + 69 chiral
        assert_eq!(v.len(), 3 + 98 + 8 + 7 + 10 + 6 + 69);
    }
}
