//! Lexical tokenizer for SMILES strings.

use std::ops::Range;

use thiserror::Error;

use super::vocab::{self, vocabulary, SymbolId};
use crate::molgraph::{Atom, Element};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("unknown character {ch:?} at position {position}")]
    UnknownCharacter { position: usize, ch: char },
    #[error("unterminated bracket atom starting at position {0}")]
    UnterminatedBracket(usize),
    #[error("malformed bracket atom at position {position}: {reason}")]
    BadBracket { position: usize, reason: &'static str },
    #[error("'%' at position {0} must be followed by two digits")]
    BadRingNumber(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    OrganicAtom,
    AromaticAtom,
    BracketAtom,
    Bond,
    RingDigit,
    BranchOpen,
    BranchClose,
    Eos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Character offset of the first character.
    pub position: usize,
}

impl Token {
    pub fn is_atom(&self) -> bool {
        matches!(self.kind, TokenKind::OrganicAtom | TokenKind::AromaticAtom | TokenKind::BracketAtom)
    }

    /// Ring number of a `RingDigit` token.
    pub fn ring_number(&self) -> Option<usize> {
        if self.kind != TokenKind::RingDigit {
            return None;
        }
        self.text.trim_start_matches('%').parse().ok()
    }
}

/// Tokens of one SMILES string plus their expansion into vocabulary symbols.
///
/// `vocabulary_ids` has one entry per vocabulary symbol; `spans[i]` is the
/// range of `vocabulary_ids` covering `tokens[i]`. The trailing `Eos` token
/// maps to the single `<eos>` symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub vocabulary_ids: Vec<SymbolId>,
    pub spans: Vec<Range<usize>>,
    /// Symbol index holding each atom token's element symbol, in atom order.
    pub atom_symbol_positions: Vec<usize>,
}

impl TokenStream {
    /// Concatenated token texts (excluding eos); reproduces the input.
    pub fn text(&self) -> String {
        self.tokens.iter().filter(|t| t.kind != TokenKind::Eos).map(|t| t.text.as_str()).collect()
    }

    /// Token indices of atom tokens in order of appearance.
    pub fn atom_token_indices(&self) -> Vec<usize> {
        self.tokens.iter().enumerate().filter(|(_, t)| t.is_atom()).map(|(i, _)| i).collect()
    }
}

/// Fields of a bracket atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BracketAtom {
    pub isotope: Option<u16>,
    pub symbol: String,
    pub aromatic: bool,
    pub element: Element,
    pub chirality: Option<String>,
    pub hcount: u8,
    pub charge: i8,
    pub class: Option<u16>,
    /// Interior symbol texts, in order, excluding the brackets.
    pub symbols: Vec<String>,
}

impl BracketAtom {
    pub fn to_atom(&self) -> Atom {
        Atom {
            element: self.element,
            aromatic: self.aromatic,
            isotope: self.isotope,
            charge: self.charge,
            explicit_h: Some(self.hcount),
            chirality: self.chirality.clone(),
            atom_class: self.class,
        }
    }
}

/// Parses the interior of a bracket atom (text between `[` and `]`).
/// `offset` is the character position of the interior, used in errors.
pub fn parse_bracket_interior(interior: &str, offset: usize) -> Result<BracketAtom, TokenizeError> {
    let chars: Vec<char> = interior.chars().collect();
    let mut i = 0;
    let bad = |i: usize, reason| TokenizeError::BadBracket { position: offset + i, reason };
    let mut symbols = Vec::new();

    let start = i;
    while i < chars.len() && chars[i].is_ascii_digit() {
        symbols.push(chars[i].to_string());
        i += 1;
    }
    if i - start > 3 {
        return Err(bad(start, "isotope has more than three digits"));
    }
    let isotope = (i > start).then(|| chars[start..i].iter().collect::<String>().parse().unwrap());

    // Element symbol: two-letter forms first, then one letter.
    let rest: String = chars[i..].iter().collect();
    let (symbol, element, aromatic) = {
        let two: String = rest.chars().take(2).collect();
        let one: String = rest.chars().take(1).collect();
        if two.chars().count() == 2 && two.chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
            if let Some(e) = Element::from_symbol(&two) {
                (two, e, false)
            } else if let Some(e) = Element::from_symbol(&one) {
                (one, e, false)
            } else {
                return Err(bad(i, "unknown element symbol"));
            }
        } else if let Some(e) =
            vocab::AROMATIC_BRACKET.contains(&two.as_str()).then(|| vocab::aromatic_to_element(&two)).flatten()
        {
            (two, e, true)
        } else if let Some(e) = Element::from_symbol(&one) {
            (one, e, false)
        } else if let Some(e) =
            vocab::AROMATIC_BRACKET.contains(&one.as_str()).then(|| vocab::aromatic_to_element(&one)).flatten()
        {
            (one, e, true)
        } else {
            return Err(bad(i, "missing element symbol"));
        }
    };
    i += symbol.chars().count();
    symbols.push(symbol.clone());

    let mut chirality = None;
    if i < chars.len() && chars[i] == '@' {
        let begin = i;
        i += 1;
        if i < chars.len() && chars[i] == '@' {
            i += 1;
        } else if let Some(max) = chars.get(i..i + 2).and_then(|c| match (c[0], c[1]) {
            ('T', 'H') | ('A', 'L') => Some(2),
            ('S', 'P') => Some(3),
            ('T', 'B') | ('O', 'H') => Some(30),
            _ => None,
        }) {
            i += 2;
            let num_start = i;
            while i < chars.len() && chars[i].is_ascii_digit() && i - num_start < 2 {
                i += 1;
            }
            let num: usize = chars[num_start..i]
                .iter()
                .collect::<String>()
                .parse()
                .map_err(|_| bad(num_start, "chirality needs a number"))?;
            if num == 0 || num > max || chars[num_start] == '0' {
                return Err(bad(num_start, "chirality number out of range"));
            }
        }
        let text: String = chars[begin..i].iter().collect();
        symbols.push(text.clone());
        chirality = Some(text);
    }

    let mut hcount = 0;
    if i < chars.len() && chars[i] == 'H' {
        symbols.push("H".into());
        i += 1;
        hcount = 1;
        if i < chars.len() && chars[i].is_ascii_digit() {
            hcount = chars[i].to_digit(10).unwrap() as u8;
            symbols.push(chars[i].to_string());
            i += 1;
        }
    }

    let mut charge = 0i8;
    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
        let sign = if chars[i] == '+' { 1 } else { -1 };
        symbols.push(chars[i].to_string());
        i += 1;
        charge = sign;
        if i < chars.len() && chars[i].is_ascii_digit() {
            charge = sign * chars[i].to_digit(10).unwrap() as i8;
            symbols.push(chars[i].to_string());
            i += 1;
        }
    }

    let mut class = None;
    if i < chars.len() && chars[i] == ':' {
        symbols.push(":".into());
        i += 1;
        let begin = i;
        while i < chars.len() && chars[i].is_ascii_digit() && i - begin < 3 {
            symbols.push(chars[i].to_string());
            i += 1;
        }
        if i == begin {
            return Err(bad(i, "atom class needs a number"));
        }
        class = Some(chars[begin..i].iter().collect::<String>().parse().unwrap());
    }

    if i != chars.len() {
        return Err(bad(i, "unexpected character"));
    }
    Ok(BracketAtom { isotope, symbol, aromatic, element, chirality, hcount, charge, class, symbols })
}

/// Splits a SMILES string into lexical tokens (maximal munch; `Cl` and `Br`
/// before `C` and `B`; bracket atoms and `%NN` ring numbers as single tokens).
pub fn tokenize(s: &str) -> Result<TokenStream, TokenizeError> {
    let chars: Vec<char> = s.chars().collect();
    let vocab = vocabulary();
    let mut tokens = Vec::new();
    let mut ids = Vec::new();
    let mut spans = Vec::new();
    let mut atom_positions = Vec::new();
    let mut i = 0;
    let id = |t: &str| vocab.id(t).expect("symbol in vocabulary");
    while i < chars.len() {
        let c = chars[i];
        let begin_ids = ids.len();
        let (kind, len) = match c {
            'C' if chars.get(i + 1) == Some(&'l') => (TokenKind::OrganicAtom, 2),
            'B' if chars.get(i + 1) == Some(&'r') => (TokenKind::OrganicAtom, 2),
            'B' | 'C' | 'N' | 'O' | 'S' | 'P' | 'F' | 'I' => (TokenKind::OrganicAtom, 1),
            'b' | 'c' | 'n' | 'o' | 's' | 'p' => (TokenKind::AromaticAtom, 1),
            '-' | '=' | '#' | '$' | ':' | '/' | '\\' => (TokenKind::Bond, 1),
            '0'..='9' => (TokenKind::RingDigit, 1),
            '%' => {
                if chars.get(i + 1).is_some_and(|c| c.is_ascii_digit())
                    && chars.get(i + 2).is_some_and(|c| c.is_ascii_digit())
                {
                    (TokenKind::RingDigit, 3)
                } else {
                    return Err(TokenizeError::BadRingNumber(i));
                }
            }
            '(' => (TokenKind::BranchOpen, 1),
            ')' => (TokenKind::BranchClose, 1),
            '[' => {
                let close = chars[i + 1..]
                    .iter()
                    .position(|&c| c == ']' || c == '[')
                    .filter(|&p| chars[i + 1 + p] == ']')
                    .ok_or(TokenizeError::UnterminatedBracket(i))?;
                (TokenKind::BracketAtom, close + 2)
            }
            other => return Err(TokenizeError::UnknownCharacter { position: i, ch: other }),
        };
        let text: String = chars[i..i + len].iter().collect();
        match kind {
            TokenKind::BracketAtom => {
                let interior: String = chars[i + 1..i + len - 1].iter().collect();
                let bracket = parse_bracket_interior(&interior, i + 1)?;
                ids.push(id("["));
                let iso_len = interior.chars().take_while(|c| c.is_ascii_digit()).count();
                for sym in &bracket.symbols {
                    ids.push(id(sym));
                }
                atom_positions.push(begin_ids + 1 + iso_len);
                ids.push(id("]"));
            }
            TokenKind::RingDigit if len == 3 => {
                ids.push(id("%"));
                ids.push(id(&chars[i + 1].to_string()));
                ids.push(id(&chars[i + 2].to_string()));
            }
            TokenKind::OrganicAtom | TokenKind::AromaticAtom => {
                atom_positions.push(begin_ids);
                ids.push(id(&text));
            }
            _ => ids.push(id(&text)),
        }
        spans.push(begin_ids..ids.len());
        tokens.push(Token { kind, text, position: i });
        i += len;
    }
    spans.push(ids.len()..ids.len() + 1);
    ids.push(vocab::EOS);
    tokens.push(Token { kind: TokenKind::Eos, text: String::new(), position: chars.len() });
    Ok(TokenStream { tokens, vocabulary_ids: ids, spans, atom_symbol_positions: atom_positions })
}

/// Expands a string into vocabulary symbols (without the trailing eos).
pub fn symbolize(s: &str) -> Result<Vec<SymbolId>, TokenizeError> {
    let mut ids = tokenize(s)?.vocabulary_ids;
    ids.pop();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_string_tokens() {
        let ts = tokenize("c1c(Cl)cnc1").unwrap();
        let texts: Vec<&str> = ts.tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["c", "1", "c", "(", "Cl", ")", "c", "n", "c", "1", ""]);
        assert_eq!(ts.tokens.last().unwrap().kind, TokenKind::Eos);
        assert_eq!(ts.text(), "c1c(Cl)cnc1");
    }

    #[test]
    fn single_carbon() {
        let ts = tokenize("C").unwrap();
        assert_eq!(ts.tokens.len(), 2);
        assert_eq!(ts.tokens[0].kind, TokenKind::OrganicAtom);
        assert_eq!(ts.vocabulary_ids.len(), 2);
    }

    #[test]
    fn unterminated_bracket() {
        assert_eq!(tokenize("C[").unwrap_err(), TokenizeError::UnterminatedBracket(1));
        assert!(matches!(tokenize("C&").unwrap_err(), TokenizeError::UnknownCharacter { position: 1, .. }));
    }

    #[test]
    fn bracket_expansion() {
        let ts = tokenize("[13CH4]").unwrap();
        let v = vocabulary();
        let syms: Vec<&str> = ts.vocabulary_ids.iter().map(|&i| v.text(i)).collect();
        assert_eq!(syms, ["[", "1", "3", "C", "H", "4", "]", "<eos>"]);
        assert_eq!(ts.atom_symbol_positions, vec![3]);
        let b = parse_bracket_interior("13CH4", 1).unwrap();
        assert_eq!((b.isotope, b.hcount, b.charge), (Some(13), 4, 0));
    }

    #[test]
    fn bracket_fields() {
        let b = parse_bracket_interior("nH+", 0).unwrap();
        assert!(b.aromatic);
        assert_eq!((b.hcount, b.charge), (1, 1));
        let b = parse_bracket_interior("C@@H", 0).unwrap();
        assert_eq!(b.chirality.as_deref(), Some("@@"));
        let b = parse_bracket_interior("Fe@OH12-2:7", 0).unwrap();
        assert_eq!(b.symbols, ["Fe", "@OH12", "-", "2", ":", "7"]);
        assert_eq!((b.charge, b.class), (-2, Some(7)));
        assert!(parse_bracket_interior("Xx", 0).is_err());
        assert!(parse_bracket_interior("C@TH3", 0).is_err());
        assert!(parse_bracket_interior("1234C", 0).is_err());
        assert!(parse_bracket_interior("C:", 0).is_err());
        assert_eq!(parse_bracket_interior("C@H2", 0).unwrap().hcount, 2);
        let b = parse_bracket_interior("se", 0).unwrap();
        assert_eq!(b.element, Element::SE);
    }

    #[test]
    fn percent_ring_numbers() {
        let ts = tokenize("C%12CC%12").unwrap();
        assert_eq!(ts.tokens[1].ring_number(), Some(12));
        assert_eq!(ts.spans[1].len(), 3);
        assert_eq!(tokenize("C%1").unwrap_err(), TokenizeError::BadRingNumber(1));
    }
}
