//! Molecular graph model: atoms, bonds, valence bookkeeping and exact scalar
//! properties.
//!
//! A [`MolecularGraph`] is the molecule itself, independent of any SMILES
//! serialization. Construction through [`MolecularGraph::new`] enforces
//! connectivity, the single-bond-per-pair rule and the valence bounds of
//! [`ValenceTable`].

mod canon;
pub mod elements;

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

pub use canon::{canonical_form, canonical_ranking, CanonicalLabeling};
pub use elements::Element;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph has no atoms")]
    Empty,
    #[error("bond {bond} references atom {atom} which does not exist")]
    IndexOutOfRange { bond: usize, atom: usize },
    #[error("bond {0} connects an atom to itself")]
    SelfLoop(usize),
    #[error("more than one bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("valence exceeded at atom {0}")]
    ValenceExceeded(usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("element {element} at atom {atom} cannot be aromatic")]
    InvalidAromatic { atom: usize, element: Element },
}

/// One atom of a molecule, carrying everything a SMILES atom token can say.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub isotope: Option<u16>,
    pub charge: i8,
    /// Hydrogen count from a bracket atom; `Some(0)` for bracket atoms without `H`.
    pub explicit_h: Option<u8>,
    pub chirality: Option<String>,
    pub atom_class: Option<u16>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom { element, aromatic: false, isotope: None, charge: 0, explicit_h: None, chirality: None, atom_class: None }
    }

    pub fn aromatic(element: Element) -> Self {
        Atom { aromatic: true, ..Atom::new(element) }
    }

    pub fn is_bracket(&self) -> bool {
        self.explicit_h.is_some()
    }
}

/// Bond label. `Up`/`Down` are directional and read from the first endpoint
/// of the owning [`Bond`] to the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Quadruple,
    Aromatic,
    Up,
    Down,
}

impl BondOrder {
    /// Contribution to the valence of each endpoint. Aromatic bonds count 1.
    pub fn valence(self) -> u32 {
        match self {
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Quadruple => 4,
            _ => 1,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Triple => '#',
            BondOrder::Quadruple => '$',
            BondOrder::Aromatic => ':',
            BondOrder::Up => '/',
            BondOrder::Down => '\\',
        }
    }

    pub fn from_symbol(c: char) -> Option<BondOrder> {
        Some(match c {
            '-' => BondOrder::Single,
            '=' => BondOrder::Double,
            '#' => BondOrder::Triple,
            '$' => BondOrder::Quadruple,
            ':' => BondOrder::Aromatic,
            '/' => BondOrder::Up,
            '\\' => BondOrder::Down,
            _ => return None,
        })
    }

    /// The same bond read in the opposite direction.
    pub fn reversed(self) -> BondOrder {
        match self {
            BondOrder::Up => BondOrder::Down,
            BondOrder::Down => BondOrder::Up,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder) -> Self {
        Bond { a, b, order }
    }

    pub fn other(&self, atom: usize) -> usize {
        if atom == self.a {
            self.b
        } else {
            self.a
        }
    }

    /// Bond label as seen walking from `from` to the other endpoint.
    pub fn order_from(&self, from: usize) -> BondOrder {
        if from == self.a {
            self.order
        } else {
            self.order.reversed()
        }
    }
}

/// Allowed valences per element. Elements without an entry are unbounded.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValenceTable;

impl ValenceTable {
    pub fn allowed(element: Element) -> Option<&'static [u32]> {
        Some(match element {
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3, 5],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::CL | Element::BR | Element::I => &[1],
            _ => return None,
        })
    }

    /// Largest total bond order the atom may carry; `None` when unbounded.
    ///
    /// Aromatic atoms use their lowest allowed valence and bracket hydrogens
    /// consume part of the budget.
    pub fn bound(atom: &Atom) -> Option<u32> {
        let allowed = Self::allowed(atom.element)?;
        let base = if atom.aromatic { allowed[0] } else { *allowed.last().expect("non-empty valence list") };
        Some(base.saturating_sub(atom.explicit_h.unwrap_or(0) as u32))
    }
}

/// Implicit hydrogen count for an atom with the given total bond order.
///
/// Bracket atoms return their explicit count. Organic atoms fill up to the
/// smallest allowed valence that fits, clamping to 0 when none does.
/// Aromatic atoms use their lowest valence less one for the ring system.
pub fn implicit_hydrogens(atom: &Atom, bond_order_sum: u32) -> u32 {
    if let Some(h) = atom.explicit_h {
        return h as u32;
    }
    let Some(allowed) = ValenceTable::allowed(atom.element) else {
        return 0;
    };
    if atom.aromatic {
        // One valence unit goes to the aromatic system.
        return allowed[0].saturating_sub(bond_order_sum + 1);
    }
    allowed.iter().find(|&&v| v >= bond_order_sum).map(|v| v - bond_order_sum).unwrap_or(0)
}

/// A connected, valence-valid molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolecularGraph {
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        let graph = Self::new_unchecked_valence(atoms, bonds)?;
        for i in 0..graph.atoms.len() {
            if let Some(bound) = ValenceTable::bound(&graph.atoms[i]) {
                if graph.bond_order_sum(i) > bound {
                    return Err(GraphError::ValenceExceeded(i));
                }
            }
        }
        Ok(graph)
    }

    /// Structural checks only (indices, duplicates, aromatic elements, connectivity).
    fn new_unchecked_valence(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        if atoms.is_empty() {
            return Err(GraphError::Empty);
        }
        for (i, atom) in atoms.iter().enumerate() {
            if atom.aromatic && !atom.element.can_be_aromatic() {
                return Err(GraphError::InvalidAromatic { atom: i, element: atom.element });
            }
        }
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (idx, bond) in bonds.iter().enumerate() {
            for atom in [bond.a, bond.b] {
                if atom >= atoms.len() {
                    return Err(GraphError::IndexOutOfRange { bond: idx, atom });
                }
            }
            if bond.a == bond.b {
                return Err(GraphError::SelfLoop(idx));
            }
            if adjacency[bond.a].iter().any(|&(n, _)| n == bond.b) {
                return Err(GraphError::DuplicateBond(bond.a.min(bond.b), bond.a.max(bond.b)));
            }
            adjacency[bond.a].push((bond.b, idx));
            adjacency[bond.b].push((bond.a, idx));
        }
        let graph = MolecularGraph { atoms, bonds, adjacency };
        if graph.distances_from(0).iter().any(Option::is_none) {
            return Err(GraphError::Disconnected);
        }
        Ok(graph)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// `(neighbor, bond index)` pairs of an atom.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a].iter().find(|&&(n, _)| n == b).map(|&(_, idx)| &self.bonds[idx])
    }

    pub fn bond_order_sum(&self, atom: usize) -> u32 {
        self.adjacency[atom].iter().map(|&(_, idx)| self.bonds[idx].order.valence()).sum()
    }

    pub fn hydrogen_count(&self, atom: usize) -> u32 {
        implicit_hydrogens(&self.atoms[atom], self.bond_order_sum(atom))
    }

    /// Sum of atomic masses plus implicit and explicit hydrogens.
    pub fn molecular_weight(&self) -> f64 {
        (0..self.atoms.len())
            .map(|i| {
                let atom = &self.atoms[i];
                let heavy = match atom.isotope {
                    Some(a) => elements::isotope_mass(atom.element, a),
                    None => atom.element.mass(),
                };
                heavy + elements::HYDROGEN_MASS * self.hydrogen_count(i) as f64
            })
            .sum()
    }

    /// BFS distances in bonds; `None` for unreachable atoms.
    pub fn distances_from(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.atoms.len()];
        let mut queue = VecDeque::from([start]);
        dist[start] = Some(0);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued atoms have a distance");
            for &(v, _) in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Maximum eccentricity over all atoms.
    pub fn diameter(&self) -> usize {
        (0..self.atoms.len())
            .map(|i| self.distances_from(i).into_iter().flatten().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Cycle rank: bonds − atoms + 1.
    pub fn ring_count(&self) -> usize {
        self.bonds.len() + 1 - self.atoms.len()
    }

    /// Whether a bond lies on a cycle (is not a bridge).
    pub fn bond_in_ring(&self, bond: usize) -> bool {
        let Bond { a, b, .. } = self.bonds[bond];
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![a];
        seen[a] = true;
        while let Some(u) = stack.pop() {
            for &(v, idx) in &self.adjacency[u] {
                if idx == bond || seen[v] {
                    continue;
                }
                if v == b {
                    return true;
                }
                seen[v] = true;
                stack.push(v);
            }
        }
        false
    }

    /// True when some ring bond joins two aromatic atoms.
    pub fn has_aromatic_ring(&self) -> bool {
        (0..self.bonds.len()).any(|i| {
            let bond = &self.bonds[i];
            self.atoms[bond.a].aromatic && self.atoms[bond.b].aromatic && self.bond_in_ring(i)
        })
    }

    /// Relabels atoms so that old atom `perm[k]` becomes atom `k`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let atoms = perm.iter().map(|&old| self.atoms[old].clone()).collect();
        let bonds = self.bonds.iter().map(|b| Bond::new(inverse[b.a], inverse[b.b], b.order)).collect();
        MolecularGraph::new_unchecked_valence(atoms, bonds).expect("permutation preserves validity")
    }
}

impl fmt::Display for MolecularGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MolecularGraph({} atoms, {} bonds)", self.atoms.len(), self.bonds.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn carbons(n: usize) -> Vec<Atom> {
        vec![Atom::new(Element::C); n]
    }

    #[test]
    fn single_atom_graph() {
        let g = MolecularGraph::new(carbons(1), vec![]).unwrap();
        assert_eq!(g.diameter(), 0);
        assert_eq!(g.ring_count(), 0);
        assert!((g.molecular_weight() - 16.043).abs() < 1e-3);
    }

    #[test]
    fn duplicate_bond_rejected() {
        let err = MolecularGraph::new(
            carbons(2),
            vec![Bond::new(0, 1, BondOrder::Triple), Bond::new(0, 1, BondOrder::Single)],
        )
        .unwrap_err();
        assert_eq!(err, GraphError::DuplicateBond(0, 1));
    }

    #[test]
    fn oxygen_triple_bond_exceeds_valence() {
        let err =
            MolecularGraph::new(vec![Atom::new(Element::O); 2], vec![Bond::new(0, 1, BondOrder::Triple)]).unwrap_err();
        assert!(matches!(err, GraphError::ValenceExceeded(_)));
    }

    #[test]
    fn disconnected_rejected() {
        let err = MolecularGraph::new(carbons(2), vec![]).unwrap_err();
        assert_eq!(err, GraphError::Disconnected);
    }

    #[test]
    fn implicit_hydrogen_rules() {
        assert_eq!(implicit_hydrogens(&Atom::new(Element::C), 0), 4);
        assert_eq!(implicit_hydrogens(&Atom::new(Element::O), 2), 0);
        assert_eq!(implicit_hydrogens(&Atom::new(Element::N), 4), 1);
        assert_eq!(implicit_hydrogens(&Atom::new(Element::N), 6), 0);
        let bracket = Atom { explicit_h: Some(0), ..Atom::new(Element::C) };
        assert_eq!(implicit_hydrogens(&bracket, 0), 0);
        assert_eq!(implicit_hydrogens(&Atom::aromatic(Element::C), 2), 1);
        assert_eq!(implicit_hydrogens(&Atom::aromatic(Element::N), 2), 0);
        assert_eq!(implicit_hydrogens(&Atom::new(Element::NA), 0), 0);
    }

    #[test]
    fn ring_count_and_bridges() {
        let g = MolecularGraph::new(
            carbons(4),
            vec![
                Bond::new(0, 1, BondOrder::Single),
                Bond::new(1, 2, BondOrder::Single),
                Bond::new(2, 0, BondOrder::Single),
                Bond::new(2, 3, BondOrder::Single),
            ],
        )
        .unwrap();
        assert_eq!(g.ring_count(), 1);
        assert!(g.bond_in_ring(0));
        assert!(!g.bond_in_ring(3));
        assert_eq!(g.diameter(), 2);
    }
}
