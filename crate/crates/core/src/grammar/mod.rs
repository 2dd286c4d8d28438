//! Pushdown automaton over the symbol vocabulary that yields exactly the legal
//! next symbols of a SMILES prefix.
//!
//! Besides the context-free structure (branches, bracket atoms, ring
//! numbers) the automaton tracks the ring-bond memory and the valence budget
//! of every atom that can still receive bonds. A symbol is allowed only when
//! the prefix it produces can still be completed to a string the parser
//! accepts, so masked sampling never dead-ends.

mod corpus;
mod sample;

use std::fmt;

use thiserror::Error;

use crate::molgraph::{Atom, BondOrder, Element, ValenceTable};
use crate::smiles::vocab::{self, vocabulary, SymbolClass, SymbolId, EOS};
use crate::smiles::RING_SLOTS;

pub use corpus::{corpus_labels, generate_corpus, DrugLikeWeights, CORPUS_COLUMNS};
pub use sample::{sample_valid, sample_valid_with};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PdaError {
    #[error("illegal token {token:?} in state {state}")]
    IllegalToken { state: String, token: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Ring bonds may still follow the current atom.
    Ring,
    /// A branch has closed; only branches, chain bonds or the end follow.
    Branch,
}

/// Position inside a bracket atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BracketPhase {
    /// Number of isotope digits read so far; no symbol yet.
    Isotope(u8),
    Symbol,
    Chiral,
    Hydrogen,
    HydrogenCount,
    Sign,
    Charge,
    /// Number of class digits read after `:`.
    Class(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BracketState {
    pub phase: BracketPhase,
    pub element: Option<(Element, bool)>,
    pub hcount: u8,
    /// Valence of the bond into this atom.
    pub incoming: u32,
    pub parent: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    /// Expecting the first atom.
    Start,
    /// After `(`: a bond or an atom.
    BranchStart,
    /// After a bond symbol. `ring_ok` allows a ring number next;
    /// `branch_start` means the bond opened a branch.
    AfterBond {
        bond: BondOrder,
        ring_ok: bool,
        branch_start: bool,
    },
    /// An atom (and possibly its ring bonds or branches) is complete.
    Atom {
        phase: Phase,
    },
    /// Inside a `%NN` ring number.
    Percent {
        label: Option<BondOrder>,
        first: Option<u8>,
    },
    Bracket(BracketState),
    /// End of string consumed.
    Done,
}

/// Valence bookkeeping for an atom that may still receive bonds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomRecord {
    pub element: Element,
    pub aromatic: bool,
    pub used: u32,
    /// Maximum total bond order; `None` when unbounded.
    pub bound: Option<u32>,
    pub id: u32,
    pub parent: Option<u32>,
    /// Atoms joined to this one by ring closures made at this atom.
    pub ring_partners: Vec<u32>,
}

impl AtomRecord {
    pub fn remaining(&self) -> Option<u32> {
        self.bound.map(|b| b - self.used)
    }

    pub fn can_afford(&self, v: u32) -> bool {
        self.remaining().is_none_or(|r| r >= v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    /// `(`; bracket atoms are tracked in the control state instead.
    Branch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub open: FrameKind,
    /// Budget record of the atom the branch hangs from.
    pub record: AtomRecord,
}

/// One ring-bond slot; present while the ring is open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingSlot {
    pub label: Option<BondOrder>,
    pub opener: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdaState {
    pub control: Control,
    pub stack: Vec<Frame>,
    pub rings: [Option<RingSlot>; RING_SLOTS],
    pub open_ring_count: usize,
    pub current: Option<AtomRecord>,
    atoms: u32,
}

/// Allowed flag per vocabulary id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    pub allowed: Vec<bool>,
}

impl TokenMask {
    pub fn allows(&self, id: SymbolId) -> bool {
        self.allowed[id as usize]
    }

    pub fn ids(&self) -> impl Iterator<Item = SymbolId> + '_ {
        self.allowed.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i as SymbolId)
    }

    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }
}

pub fn initial_state() -> PdaState {
    PdaState {
        control: Control::Start,
        stack: Vec::new(),
        rings: [None; RING_SLOTS],
        open_ring_count: 0,
        current: None,
        atoms: 0,
    }
}

/// Where the bond into a new atom comes from.
#[derive(Clone, Copy)]
enum Source {
    Current,
    TopFrame,
}

impl fmt::Display for PdaState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}, depth {}, open rings {}", self.control, self.stack.len(), self.open_ring_count)?;
        if let Some(c) = &self.current {
            write!(f, ", atom {} used {} of {:?}", c.element, c.used, c.bound)?;
        }
        Ok(())
    }
}

impl PdaState {
    pub fn is_done(&self) -> bool {
        self.control == Control::Done
    }

    /// Number of atoms started so far.
    pub fn atom_count(&self) -> u32 {
        self.atoms
    }

    pub fn advance(&self, id: SymbolId) -> Result<PdaState, PdaError> {
        self.step(id)
            .ok_or_else(|| PdaError::IllegalToken { state: self.to_string(), token: vocabulary().text(id).to_string() })
    }

    /// As [`advance`](Self::advance), without building an error.
    pub fn step(&self, id: SymbolId) -> Option<PdaState> {
        if id == EOS {
            self.can_end().then(|| PdaState { control: Control::Done, ..self.clone() })
        } else {
            self.transition(id).filter(PdaState::completable)
        }
    }

    pub fn valid_next_tokens(&self) -> TokenMask {
        let n = vocabulary().len();
        let allowed = (0..n as SymbolId).map(|id| self.step(id).is_some()).collect();
        TokenMask { allowed }
    }

    fn can_end(&self) -> bool {
        matches!(self.control, Control::Atom { .. }) && self.stack.is_empty() && self.open_ring_count == 0
    }

    /// Transition ignoring completability; `None` when the symbol does not fit.
    fn transition(&self, id: SymbolId) -> Option<PdaState> {
        let v = vocabulary();
        let class = v.class(id);
        let text = v.text(id);
        let organic = match class {
            SymbolClass::Element(e) if vocab::ALIPHATIC_ORGANIC.contains(&text) => Some((e, false)),
            SymbolClass::Aromatic(e) if vocab::AROMATIC_ORGANIC.contains(&text) => Some((e, true)),
            _ => None,
        };
        match self.control {
            Control::Done => None,
            Control::Start => match (class, organic) {
                (_, Some((e, arom))) => self.organic_atom(e, arom, None),
                (SymbolClass::BracketOpen, _) => self.open_bracket(None),
                _ => None,
            },
            Control::BranchStart => match (class, organic) {
                (_, Some((e, arom))) => self.organic_atom(e, arom, Some((Source::TopFrame, 1))),
                (SymbolClass::BracketOpen, _) => self.open_bracket(Some((Source::TopFrame, 1))),
                (SymbolClass::Bond(b), _) => {
                    self.with_control(Control::AfterBond { bond: b, ring_ok: false, branch_start: true })
                }
                _ => None,
            },
            Control::AfterBond { bond, ring_ok, branch_start } => {
                let src = if branch_start { Source::TopFrame } else { Source::Current };
                match (class, organic) {
                    (_, Some((e, arom))) => self.organic_atom(e, arom, Some((src, bond.valence()))),
                    (SymbolClass::BracketOpen, _) => self.open_bracket(Some((src, bond.valence()))),
                    (SymbolClass::Digit(d), _) if ring_ok => self.ring_bond(d as usize, Some(bond)),
                    (SymbolClass::Percent, _) if ring_ok => {
                        self.with_control(Control::Percent { label: Some(bond), first: None })
                    }
                    _ => None,
                }
            }
            Control::Atom { phase } => match (class, organic) {
                (_, Some((e, arom))) => self.organic_atom(e, arom, Some((Source::Current, 1))),
                (SymbolClass::BracketOpen, _) => self.open_bracket(Some((Source::Current, 1))),
                (SymbolClass::Bond(b), _) => self.with_control(Control::AfterBond {
                    bond: b,
                    ring_ok: phase == Phase::Ring,
                    branch_start: false,
                }),
                (SymbolClass::Digit(d), _) if phase == Phase::Ring => self.ring_bond(d as usize, None),
                (SymbolClass::Percent, _) if phase == Phase::Ring => {
                    self.with_control(Control::Percent { label: None, first: None })
                }
                (SymbolClass::BranchOpen, _) => {
                    let cur = self.current.as_ref()?;
                    if !cur.can_afford(1) {
                        return None;
                    }
                    let mut next = self.clone();
                    next.stack.push(Frame { open: FrameKind::Branch, record: cur.clone() });
                    next.control = Control::BranchStart;
                    Some(next)
                }
                (SymbolClass::BranchClose, _) => {
                    let mut next = self.clone();
                    let frame = next.stack.pop()?;
                    next.current = Some(frame.record);
                    next.control = Control::Atom { phase: Phase::Branch };
                    Some(next)
                }
                _ => None,
            },
            Control::Percent { label, first } => match (class, first) {
                (SymbolClass::Digit(d), None) => self.with_control(Control::Percent { label, first: Some(d) }),
                (SymbolClass::Digit(d), Some(a)) => self.ring_bond(10 * a as usize + d as usize, label),
                _ => None,
            },
            Control::Bracket(b) => self.bracket_symbol(b, class, text),
        }
    }

    fn with_control(&self, control: Control) -> Option<PdaState> {
        Some(PdaState { control, ..self.clone() })
    }

    /// Charges the source atom for a bond of valence `v` and returns the
    /// parent id of the new atom.
    fn attach(&mut self, from: Option<(Source, u32)>) -> Option<(Option<u32>, u32)> {
        let Some((src, v)) = from else {
            return Some((None, 0));
        };
        let rec = match src {
            Source::Current => self.current.as_mut()?,
            Source::TopFrame => &mut self.stack.last_mut()?.record,
        };
        if !rec.can_afford(v) {
            return None;
        }
        rec.used += v;
        Some((Some(rec.id), v))
    }

    fn new_atom(
        &mut self,
        element: Element,
        aromatic: bool,
        bound: Option<u32>,
        incoming: u32,
        parent: Option<u32>,
    ) -> Option<()> {
        if bound.is_some_and(|b| b < incoming) {
            return None;
        }
        self.current = Some(AtomRecord {
            element,
            aromatic,
            used: incoming,
            bound,
            id: self.atoms,
            parent,
            ring_partners: Vec::new(),
        });
        self.atoms += 1;
        self.control = Control::Atom { phase: Phase::Ring };
        Some(())
    }

    fn organic_atom(&self, element: Element, aromatic: bool, from: Option<(Source, u32)>) -> Option<PdaState> {
        let mut next = self.clone();
        let (parent, incoming) = next.attach(from)?;
        let atom = if aromatic { Atom::aromatic(element) } else { Atom::new(element) };
        next.new_atom(element, aromatic, ValenceTable::bound(&atom), incoming, parent)?;
        Some(next)
    }

    fn open_bracket(&self, from: Option<(Source, u32)>) -> Option<PdaState> {
        let mut next = self.clone();
        let (parent, incoming) = next.attach(from)?;
        next.control = Control::Bracket(BracketState {
            phase: BracketPhase::Isotope(0),
            element: None,
            hcount: 0,
            incoming,
            parent,
        });
        Some(next)
    }

    fn ring_bond(&self, slot: usize, label: Option<BondOrder>) -> Option<PdaState> {
        let mut next = self.clone();
        let v = label.map_or(1, BondOrder::valence);
        let cur = next.current.as_mut()?;
        if !cur.can_afford(v) {
            return None;
        }
        match next.rings[slot] {
            None => {
                next.rings[slot] = Some(RingSlot { label, opener: cur.id });
                next.open_ring_count += 1;
            }
            Some(ring) => {
                if ring.label != label
                    || ring.opener == cur.id
                    || Some(ring.opener) == cur.parent
                    || cur.ring_partners.contains(&ring.opener)
                {
                    return None;
                }
                cur.ring_partners.push(ring.opener);
                next.rings[slot] = None;
                next.open_ring_count -= 1;
            }
        }
        cur.used += v;
        next.control = Control::Atom { phase: Phase::Ring };
        Some(next)
    }

    fn bracket_symbol(&self, mut b: BracketState, class: SymbolClass, text: &str) -> Option<PdaState> {
        use BracketPhase::*;
        let after_symbol = matches!(b.phase, Symbol | Chiral | Hydrogen | HydrogenCount | Sign | Charge);
        match (b.phase, class) {
            (Isotope(n), SymbolClass::Digit(_)) if n < 3 => b.phase = Isotope(n + 1),
            (Isotope(_), SymbolClass::Element(e)) => {
                b.element = Some((e, false));
                b.phase = Symbol;
            }
            (Isotope(_), SymbolClass::Aromatic(e)) if vocab::AROMATIC_BRACKET.contains(&text) => {
                b.element = Some((e, true));
                b.phase = Symbol;
            }
            (Symbol, SymbolClass::Chiral) => b.phase = Chiral,
            (Symbol | Chiral, SymbolClass::Element(Element::H)) => {
                b.hcount = 1;
                b.phase = Hydrogen;
            }
            (Hydrogen, SymbolClass::Digit(d)) => {
                b.hcount = d;
                b.phase = HydrogenCount;
            }
            (Symbol | Chiral | Hydrogen | HydrogenCount, SymbolClass::Plus | SymbolClass::Bond(BondOrder::Single)) => {
                b.phase = Sign
            }
            (Sign, SymbolClass::Digit(_)) => b.phase = Charge,
            (_, SymbolClass::Bond(BondOrder::Aromatic)) if after_symbol => b.phase = Class(0),
            (Class(n), SymbolClass::Digit(_)) if n < 3 => b.phase = Class(n + 1),
            (Class(n), SymbolClass::BracketClose) if n >= 1 => return self.close_bracket(b),
            (_, SymbolClass::BracketClose) if after_symbol => return self.close_bracket(b),
            _ => return None,
        }
        self.with_control(Control::Bracket(b))
    }

    fn close_bracket(&self, b: BracketState) -> Option<PdaState> {
        let (element, aromatic) = b.element?;
        let mut next = self.clone();
        let bound = bracket_bound(element, aromatic, b.hcount);
        next.new_atom(element, aromatic, bound, b.incoming, b.parent)?;
        Some(next)
    }

    /// Whether some continuation reaches an accepted string.
    fn completable(&self) -> bool {
        match self.control {
            Control::Done | Control::Start => true,
            Control::BranchStart => self.stack.last().is_some_and(|f| f.record.can_afford(1)),
            Control::AfterBond { bond, branch_start, .. } => {
                let rec = if branch_start { self.stack.last().map(|f| &f.record) } else { self.current.as_ref() };
                rec.is_some_and(|r| r.can_afford(bond.valence()))
            }
            Control::Atom { .. } => self.atom_completable(self.current.as_ref().and_then(AtomRecord::remaining)),
            // One digit deeper either completes the number or recurses here.
            Control::Percent { .. } => (0..10u8).any(|d| self.transition(digit_id(d)).is_some_and(|s| s.completable())),
            Control::Bracket(b) => {
                let Some((element, aromatic)) = b.element else {
                    return true;
                };
                let best_h = match b.phase {
                    BracketPhase::Symbol | BracketPhase::Chiral | BracketPhase::Hydrogen => 0,
                    _ => b.hcount,
                };
                match bracket_bound(element, aromatic, best_h) {
                    None => true,
                    Some(bound) => bound >= b.incoming && self.atom_completable(Some(bound - b.incoming)),
                }
            }
        }
    }

    /// Completability of an atom state whose atom has `remaining` capacity
    /// (`None` = unbounded): an atom with spare capacity can always grow an
    /// unbounded neighbor that closes every open ring.
    fn atom_completable(&self, remaining: Option<u32>) -> bool {
        remaining.is_none_or(|r| r >= 1)
            || self.open_ring_count == 0
            || self.stack.iter().any(|f| f.record.can_afford(1))
    }

    /// Runs `ids` from this state; `None` if any symbol is illegal.
    pub fn run(&self, ids: &[SymbolId]) -> Option<PdaState> {
        let mut s = self.clone();
        for &id in ids {
            s = s.step(id)?;
        }
        Some(s)
    }

    /// A deterministic completion of the current prefix, ending with eos.
    ///
    /// Closes rings at the current atom where possible, grows new atoms when
    /// rings remain open, then closes branches and ends. Each step is a
    /// function of the state alone, so the completion of any intermediate
    /// state is a suffix of this one.
    pub fn completion(&self) -> Vec<SymbolId> {
        let mut out = Vec::new();
        let mut s = self.clone();
        while !s.is_done() {
            let id = s.completion_step();
            s = match s.advance(id) {
                Ok(next) => next,
                Err(e) => panic!(
                    "completion step {} illegal after {:?}: {e}",
                    vocabulary().text(id),
                    vocabulary().detokenize(&out)
                ),
            };
            out.push(id);
            assert!(
                out.len() < 100_000,
                "completion does not terminate from {self}: {}",
                vocabulary().detokenize(&out[..60])
            );
        }
        out
    }

    pub fn completion_len(&self) -> usize {
        self.completion().len()
    }

    fn completion_step(&self) -> SymbolId {
        let v = vocabulary();
        let id = |t: &str| v.id(t).expect("vocabulary symbol");
        let allowed = |x: SymbolId| self.step(x).is_some();
        let grow = || {
            let small_rings = self.rings.iter().flatten().all(|r| r.label.map_or(1, BondOrder::valence) <= 2);
            if small_rings && allowed(id("C")) {
                id("C")
            } else {
                id("[")
            }
        };
        match self.control {
            Control::Done => unreachable!("no completion after eos"),
            Control::Start | Control::BranchStart => grow(),
            Control::AfterBond { bond, ring_ok, .. } => {
                if ring_ok {
                    for (slot, ring) in self.open_rings() {
                        if ring.label == Some(bond) {
                            let seq = ring_number_symbols(slot);
                            if self.run(&seq).is_some() {
                                return seq[0];
                            }
                        }
                    }
                }
                grow()
            }
            Control::Atom { phase } => {
                if self.open_ring_count == 0 {
                    return if self.stack.is_empty() { EOS } else { id(")") };
                }
                if phase == Phase::Ring {
                    for (slot, ring) in self.open_rings() {
                        let mut seq = ring.label.map(|b| vec![id(&b.symbol().to_string())]).unwrap_or_default();
                        seq.extend(ring_number_symbols(slot));
                        if self.run(&seq).is_some() {
                            return seq[0];
                        }
                    }
                }
                if self.current.as_ref().is_some_and(|c| c.can_afford(1)) {
                    grow()
                } else {
                    id(")")
                }
            }
            Control::Percent { label, first } => {
                let closes = |a: u8, d: u8| {
                    let slot = 10 * a as usize + d as usize;
                    self.rings[slot].is_some_and(|r| r.label == label)
                        && match first {
                            None => self.run(&[digit_id(a), digit_id(d)]).is_some(),
                            Some(_) => allowed(digit_id(d)),
                        }
                };
                let choice = match first {
                    None => (0..10u8).find(|&a| (0..10).any(|d| closes(a, d))),
                    Some(a) => (0..10u8).find(|&d| closes(a, d)),
                };
                digit_id(
                    choice.or_else(|| (0..10u8).find(|&d| allowed(digit_id(d)))).expect("percent state is completable"),
                )
            }
            Control::Bracket(b) => {
                if b.element.is_none() {
                    return id("Na");
                }
                if allowed(id("]")) {
                    return id("]");
                }
                (0..10u8)
                    .map(digit_id)
                    .find(|&d| allowed(d))
                    .or_else(|| (0..v.len() as SymbolId).find(|&x| allowed(x)))
                    .expect("bracket state is completable")
            }
        }
    }

    /// Open ring slots in ascending order.
    pub fn open_rings(&self) -> impl Iterator<Item = (usize, RingSlot)> + '_ {
        self.rings.iter().enumerate().filter_map(|(i, r)| r.map(|r| (i, r)))
    }
}

fn bracket_bound(element: Element, aromatic: bool, hcount: u8) -> Option<u32> {
    let atom = Atom { aromatic, explicit_h: Some(hcount), ..Atom::new(element) };
    ValenceTable::bound(&atom)
}

fn digit_id(d: u8) -> SymbolId {
    vocabulary().id(&d.to_string()).expect("digit symbol")
}

/// Symbols spelling ring number `slot` (`7` or `%`,`1`,`2`).
pub fn ring_number_symbols(slot: usize) -> Vec<SymbolId> {
    if slot < 10 {
        vec![digit_id(slot as u8)]
    } else {
        let pct = vocabulary().id("%").expect("percent symbol");
        vec![pct, digit_id((slot / 10) as u8), digit_id((slot % 10) as u8)]
    }
}

/// Whether the automaton accepts the symbol sequence followed by eos.
pub fn accepts_symbols(ids: &[SymbolId]) -> bool {
    initial_state().run(ids).is_some_and(|s| s.step(EOS).is_some())
}

/// Whether the automaton accepts the symbols of `s`; strings that do not
/// tokenize are rejected.
pub fn accepts_str(s: &str) -> bool {
    crate::smiles::symbolize(s).is_ok_and(|ids| accepts_symbols(&ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::symbolize;

    fn state_after(s: &str) -> PdaState {
        initial_state().run(&symbolize(s).unwrap()).unwrap()
    }

    fn sym(t: &str) -> SymbolId {
        vocabulary().id(t).unwrap()
    }

    #[test]
    fn initial_mask() {
        let m = initial_state().valid_next_tokens();
        assert!(m.allows(sym("C")));
        assert!(m.allows(sym("[")));
        assert!(!m.allows(sym(")")));
        assert!(!m.allows(EOS));
        assert!(!m.allows(sym("se")));
    }

    #[test]
    fn carbon_budget() {
        let s = state_after("C");
        let c = s.current.as_ref().unwrap();
        assert_eq!((c.element, c.used, c.bound), (Element::C, 0, Some(4)));
    }

    #[test]
    fn ring_parity() {
        let s = state_after("C1CC");
        assert_eq!(s.open_ring_count, 1);
        assert!(!s.valid_next_tokens().allows(EOS));
        let closed = s.advance(sym("1")).unwrap();
        assert_eq!(closed.open_ring_count, 0);
        assert!(closed.valid_next_tokens().allows(EOS));
    }

    #[test]
    fn empty_branch_is_illegal() {
        let s = state_after("C(");
        assert!(matches!(s.advance(sym(")")), Err(PdaError::IllegalToken { .. })));
    }

    #[test]
    fn oxygen_budget() {
        let s = state_after("O=");
        assert!(s.valid_next_tokens().allows(sym("O")));
        let m = state_after("O=O").valid_next_tokens();
        assert!(!m.allows(sym("=")));
        assert_eq!(m.ids().collect::<Vec<_>>(), vec![EOS]);
    }

    #[test]
    fn saturated_root() {
        let m = state_after("C(C)(C)(C)").valid_next_tokens();
        assert!(m.allows(sym("(")));
        let m = state_after("C(C)(C)(C)(C)").valid_next_tokens();
        for t in ["(", "C", "=", "-", "1", "[", "%"] {
            assert!(!m.allows(sym(t)), "{t}");
        }
        assert!(m.allows(EOS));
    }

    #[test]
    fn dead_ends_are_masked() {
        // F cannot carry the chain bond needed to close ring 1.
        assert!(!state_after("C1").valid_next_tokens().allows(sym("F")));
        assert!(state_after("C1C").valid_next_tokens().allows(sym("F")) == false);
        assert!(state_after("C1CC").valid_next_tokens().allows(sym("1")));
        // ring closure to the parent would duplicate the chain bond
        assert!(!state_after("C1C").valid_next_tokens().allows(sym("1")));
        // label must match
        let m = state_after("C=1CC").valid_next_tokens();
        assert!(!m.allows(sym("1")));
        assert!(state_after("C=1CC=").valid_next_tokens().allows(sym("1")));
    }

    #[test]
    fn bracket_subautomaton() {
        assert!(accepts_str("[13CH4]"));
        assert!(accepts_str("[Fe@OH12-2:7]"));
        assert!(accepts_str("[nH]1cccc1"));
        assert!(!accepts_str("[C:]"));
        assert!(!accepts_str("[CH5]C"));
        assert!(accepts_str("[CH5]"));
        assert!(!accepts_str("[b]"));
        assert!(accepts_str("[se]1cccc1"));
    }

    #[test]
    fn percent_rings() {
        assert!(accepts_str("C%12CC%12"));
        assert!(!accepts_str("C%12CC%13"));
        assert!(accepts_str("C1CC%01"));
        assert!(accepts_str("C1CC2CC12"));
        assert!(!accepts_str("C1CO2CC12"));
    }

    #[test]
    fn completion_closes_everything() {
        let prefixes = [
            "C",
            "C 1",
            "C ( C 1",
            "C # 1",
            "[ Na ] $ 1",
            "C 1 C C ( C 2",
            "C % 2 3",
            "[ 1 3 C",
            "O =",
            "c 1 c c",
            "C ( = O",
        ];
        for prefix in prefixes {
            let mut ids: Vec<SymbolId> = prefix.split(' ').map(sym).collect();
            let s = initial_state().run(&ids).unwrap();
            let tail = s.completion();
            assert_eq!(*tail.last().unwrap(), EOS);
            ids.extend(&tail[..tail.len() - 1]);
            let text = vocabulary().detokenize(&ids);
            assert!(crate::smiles::parse(&text).is_ok(), "{prefix} -> {text}");
        }
    }
}
