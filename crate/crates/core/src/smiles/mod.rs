//! SMILES tokenizer, parser, writer, random enumeration and corpus files.

mod corpus;
mod parse;
mod token;
pub mod vocab;
mod write;

pub use corpus::{read_corpus, write_corpus, CorpusError, CorpusRecord};
pub use parse::{parse, AtomAlignment, ParseError, ParseResult, RING_SLOTS};
pub use token::{
    parse_bracket_interior, symbolize, tokenize, BracketAtom, Token, TokenKind, TokenStream, TokenizeError,
};
pub use vocab::{vocabulary, SymbolClass, SymbolId, Vocabulary, BOS, EOS, PAD};
pub use write::{
    canonicalize, edit_similarity, enumerate_random, random_smiles, same_molecule, write_canonical, write_with_order,
    WriteError,
};
