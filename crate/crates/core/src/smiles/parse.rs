//! Recursive-descent parser from tokens to a molecular graph.
//!
//! ```text
//! chain          -> branched_atom rest_of_chain
//! rest_of_chain  -> (bond? branched_atom)*
//! branched_atom  -> atom ringbond* branch*
//! ringbond       -> bond? digit
//! branch         -> '(' bond? chain ')'
//! ```

use thiserror::Error;

use super::token::{parse_bracket_interior, tokenize, Token, TokenKind, TokenStream, TokenizeError};
use super::vocab;
use crate::molgraph::{Atom, Bond, BondOrder, Element, GraphError, MolecularGraph};

pub const RING_SLOTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("syntax error at position {position}: expected {}", expected.join(" or "))]
    SyntaxError { position: usize, expected: Vec<&'static str> },
    #[error("ring {0} is never closed")]
    UnclosedRing(usize),
    #[error("ring {0} has different bond labels at its two ends")]
    RingBondMismatch(usize),
    #[error("valence exceeded at atom {0}")]
    ValenceExceeded(usize),
    #[error("graph is disconnected")]
    DisconnectedGraph,
    #[error("invalid graph: {0}")]
    Graph(GraphError),
    #[error(transparent)]
    Write(#[from] super::write::WriteError),
}

impl ParseError {
    /// Short machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::Tokenize(TokenizeError::UnknownCharacter { .. }) => "UnknownCharacter",
            ParseError::Tokenize(TokenizeError::UnterminatedBracket(_)) => "UnterminatedBracket",
            ParseError::Tokenize(_) => "TokenizeError",
            ParseError::SyntaxError { .. } => "SyntaxError",
            ParseError::UnclosedRing(_) => "UnclosedRing",
            ParseError::RingBondMismatch(_) => "RingBondMismatch",
            ParseError::ValenceExceeded(_) => "ValenceExceeded",
            ParseError::DisconnectedGraph => "DisconnectedGraph",
            ParseError::Graph(_) => "InvalidGraph",
            ParseError::Write(_) => "RingDigitsExhausted",
        }
    }
}

impl From<GraphError> for ParseError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::ValenceExceeded(i) => ParseError::ValenceExceeded(i),
            GraphError::Disconnected => ParseError::DisconnectedGraph,
            other => ParseError::Graph(other),
        }
    }
}

/// Map from atom tokens of a string to atoms of a graph.
///
/// Entry `k` describes the `k`-th atom token in the string: it sits at
/// `token_indices[k]` in the token stream and denotes graph atom
/// `graph_atoms[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomAlignment {
    pub token_indices: Vec<usize>,
    pub graph_atoms: Vec<usize>,
}

impl AtomAlignment {
    pub fn len(&self) -> usize {
        self.graph_atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph_atoms.is_empty()
    }

    /// Graph atom denoted by the token at `token_index`, if it is an atom token.
    pub fn atom_for_token(&self, token_index: usize) -> Option<usize> {
        self.token_indices.iter().position(|&t| t == token_index).map(|k| self.graph_atoms[k])
    }

    /// Composes with a relabeling of graph atoms (`map[old] = new`).
    pub fn relabeled(&self, map: &[usize]) -> AtomAlignment {
        AtomAlignment {
            token_indices: self.token_indices.clone(),
            graph_atoms: self.graph_atoms.iter().map(|&a| map[a]).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseResult {
    pub graph: MolecularGraph,
    pub alignment: AtomAlignment,
    pub stream: TokenStream,
}

pub fn parse(s: &str) -> Result<ParseResult, ParseError> {
    let stream = tokenize(s)?;
    let mut p = Parser {
        tokens: &stream.tokens,
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        rings: vec![None; RING_SLOTS],
        atom_tokens: Vec::new(),
    };
    p.chain()?;
    p.expect_end()?;
    if let Some(slot) = p.rings.iter().position(Option::is_some) {
        return Err(ParseError::UnclosedRing(slot));
    }
    let graph = MolecularGraph::new(p.atoms, p.bonds)?;
    let alignment = AtomAlignment { graph_atoms: (0..p.atom_tokens.len()).collect(), token_indices: p.atom_tokens };
    Ok(ParseResult { graph, alignment, stream })
}

#[derive(Debug, Clone, Copy)]
struct OpenRing {
    atom: usize,
    label: Option<BondOrder>,
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    rings: Vec<Option<OpenRing>>,
    atom_tokens: Vec<usize>,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn syntax(&self, expected: &[&'static str]) -> ParseError {
        ParseError::SyntaxError { position: self.peek().position, expected: expected.to_vec() }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        match self.peek().kind {
            TokenKind::Eos => Ok(()),
            _ => Err(self.syntax(&["bond", "atom", "end of string"])),
        }
    }

    fn chain(&mut self) -> Result<(), ParseError> {
        let first = self.branched_atom(None)?;
        self.rest_of_chain(first)
    }

    fn rest_of_chain(&mut self, mut prev: usize) -> Result<(), ParseError> {
        loop {
            let bond = self.optional_bond();
            if self.peek().is_atom() {
                prev = self.branched_atom(Some((prev, bond)))?;
            } else if bond.is_some() {
                return Err(self.syntax(&["atom"]));
            } else {
                return Ok(());
            }
        }
    }

    fn optional_bond(&mut self) -> Option<BondOrder> {
        let t = self.peek();
        if t.kind == TokenKind::Bond {
            let order = BondOrder::from_symbol(t.text.chars().next().expect("bond text"));
            self.pos += 1;
            order
        } else {
            None
        }
    }

    fn branched_atom(&mut self, from: Option<(usize, Option<BondOrder>)>) -> Result<usize, ParseError> {
        let idx = self.atom()?;
        if let Some((prev, label)) = from {
            let order = label.unwrap_or_else(|| self.default_order(prev, idx));
            self.bonds.push(Bond::new(prev, idx, order));
        }
        // ringbond*
        loop {
            let save = self.pos;
            let label = self.optional_bond();
            let t = self.peek();
            if t.kind != TokenKind::RingDigit {
                self.pos = save;
                break;
            }
            let slot = t.ring_number().expect("ring digit");
            self.pos += 1;
            match self.rings[slot].take() {
                None => self.rings[slot] = Some(OpenRing { atom: idx, label }),
                Some(open) => {
                    if open.label != label {
                        return Err(ParseError::RingBondMismatch(slot));
                    }
                    let order = label.unwrap_or_else(|| self.default_order(open.atom, idx));
                    self.bonds.push(Bond::new(open.atom, idx, order));
                }
            }
        }
        // branch*
        while self.peek().kind == TokenKind::BranchOpen {
            self.pos += 1;
            let label = self.optional_bond();
            if !self.peek().is_atom() {
                return Err(self.syntax(&["atom"]));
            }
            let first = self.branched_atom(Some((idx, label)))?;
            self.rest_of_chain(first)?;
            if self.peek().kind != TokenKind::BranchClose {
                return Err(self.syntax(&["bond", "atom", "ring digit", "(", ")"]));
            }
            self.pos += 1;
        }
        Ok(idx)
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn atom(&mut self) -> Result<usize, ParseError> {
        let t = self.peek();
        let atom = match t.kind {
            TokenKind::OrganicAtom => Atom::new(Element::from_symbol(&t.text).expect("organic symbol")),
            TokenKind::AromaticAtom => Atom::aromatic(vocab::aromatic_to_element(&t.text).expect("aromatic symbol")),
            TokenKind::BracketAtom => {
                let interior = &t.text[1..t.text.len() - 1];
                parse_bracket_interior(interior, t.position + 1)?.to_atom()
            }
            _ => return Err(self.syntax(&["atom"])),
        };
        self.atom_tokens.push(self.pos);
        self.pos += 1;
        self.atoms.push(atom);
        Ok(self.atoms.len() - 1)
    }
}
