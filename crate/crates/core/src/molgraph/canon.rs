//! Canonical atom ranking by iterative neighborhood refinement.
//!
//! Atoms start from an invariant key (element, charge, isotope, aromaticity,
//! degree and the remaining atom labels) and are refined by the sorted ranks
//! of their neighbors until the partition is stable. Remaining ties are broken
//! by individualizing an atom of the first tied cell and refining again. All
//! choices inside a tied cell are explored and the labeling with the smallest
//! certificate wins, so the result does not depend on input atom order.
//! Automorphisms discovered on the way prune equivalent branches.

use super::{Bond, BondOrder, MolecularGraph};

/// A canonical atom order: `order[rank]` is the atom holding that rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalLabeling {
    pub order: Vec<usize>,
    pub rank: Vec<usize>,
}

/// Canonical permutation of atom indices, see module docs.
pub fn canonical_ranking(g: &MolecularGraph) -> CanonicalLabeling {
    let n = g.atom_count();
    let keys = atom_keys(g);
    let mut initial: Vec<usize> = vec![0; n];
    let mut sorted: Vec<&AtomKey> = keys.iter().collect();
    sorted.sort();
    for i in 0..n {
        initial[i] = sorted.partition_point(|k| *k < &keys[i]);
    }
    let mut search =
        Search { graph: g, keys: &keys, best: None, first: None, generators: Vec::new(), first_path: Vec::new() };
    let colors = refine(g, initial);
    search.descend(colors, 0, true, 0);
    let (_, order) = search.best.expect("search reaches at least one leaf");
    let mut rank = vec![0; n];
    for (r, &atom) in order.iter().enumerate() {
        rank[atom] = r;
    }
    CanonicalLabeling { order, rank }
}

/// The graph relabeled into canonical order with bonds sorted and oriented
/// from the lower index; isomorphic graphs give equal values.
pub fn canonical_form(g: &MolecularGraph) -> MolecularGraph {
    let labeling = canonical_ranking(g);
    let p = g.permuted(&labeling.order);
    let mut bonds: Vec<Bond> = p
        .bonds()
        .iter()
        .map(|b| {
            let (lo, hi) = (b.a.min(b.b), b.a.max(b.b));
            Bond::new(lo, hi, b.order_from(lo))
        })
        .collect();
    bonds.sort_by_key(|b| (b.a, b.b));
    MolecularGraph::new_unchecked_valence(p.atoms().to_vec(), bonds).expect("relabeling keeps the graph valid")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct AtomKey {
    element: u8,
    charge: i8,
    isotope: u16,
    aromatic: bool,
    degree: usize,
    hydrogens: u32,
    explicit_h: Option<u8>,
    chirality: Option<String>,
    class: Option<u16>,
}

fn atom_keys(g: &MolecularGraph) -> Vec<AtomKey> {
    g.atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| AtomKey {
            element: a.element.atomic_number(),
            charge: a.charge,
            isotope: a.isotope.unwrap_or(0),
            aromatic: a.aromatic,
            degree: g.degree(i),
            hydrogens: g.hydrogen_count(i),
            explicit_h: a.explicit_h,
            chirality: a.chirality.clone(),
            class: a.atom_class,
        })
        .collect()
}

fn bond_code(order: BondOrder) -> u8 {
    order as u8
}

/// Refines rank-style colors (tied atoms share the smallest rank of their
/// cell) until the number of cells stops growing.
fn refine(g: &MolecularGraph, mut colors: Vec<usize>) -> Vec<usize> {
    let n = colors.len();
    let mut cells = count_cells(&colors);
    loop {
        let signatures: Vec<(usize, Vec<(usize, u8)>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<(usize, u8)> =
                    g.neighbors(i).iter().map(|&(j, b)| (colors[j], bond_code(g.bonds()[b].order_from(i)))).collect();
                nb.sort_unstable();
                (colors[i], nb)
            })
            .collect();
        let mut sorted: Vec<&(usize, Vec<(usize, u8)>)> = signatures.iter().collect();
        sorted.sort();
        let next: Vec<usize> = (0..n).map(|i| sorted.partition_point(|s| *s < &signatures[i])).collect();
        let next_cells = count_cells(&next);
        colors = next;
        if next_cells == cells {
            return colors;
        }
        cells = next_cells;
    }
}

fn count_cells(colors: &[usize]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

type Certificate = (Vec<AtomKey>, Vec<(usize, usize, u8)>);

struct Search<'a> {
    graph: &'a MolecularGraph,
    keys: &'a [AtomKey],
    best: Option<(Certificate, Vec<usize>)>,
    first: Option<(Certificate, Vec<usize>)>,
    generators: Vec<Vec<usize>>,
    first_path: Vec<usize>,
}

impl Search<'_> {
    fn certificate(&self, order: &[usize]) -> Certificate {
        let n = order.len();
        let mut label = vec![0; n];
        for (pos, &atom) in order.iter().enumerate() {
            label[atom] = pos;
        }
        let atoms = order.iter().map(|&a| self.keys[a].clone()).collect();
        let mut edges: Vec<(usize, usize, u8)> = self
            .graph
            .bonds()
            .iter()
            .map(|b| {
                let (from, to) = if label[b.a] < label[b.b] { (b.a, b.b) } else { (b.b, b.a) };
                (label[from], label[to], bond_code(b.order_from(from)))
            })
            .collect();
        edges.sort_unstable();
        (atoms, edges)
    }

    /// Explores the search tree below a refined partition. Returns the level
    /// to backtrack to when an automorphism made the current subtree redundant.
    fn descend(&mut self, colors: Vec<usize>, level: usize, on_first: bool, diverge: usize) -> Option<usize> {
        let n = colors.len();
        let target = {
            let mut counts = vec![0usize; n];
            for &c in &colors {
                counts[c] += 1;
            }
            (0..n).find(|&c| counts[c] > 1)
        };
        let Some(cell_color) = target else {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| colors[i]);
            return self.leaf(order, diverge);
        };
        let cell: Vec<usize> = (0..n).filter(|&i| colors[i] == cell_color).collect();
        let mut explored: Vec<usize> = Vec::new();
        for &v in &cell {
            if on_first && !explored.is_empty() && self.same_orbit(level, &explored, v) {
                continue;
            }
            let child_first = on_first && explored.is_empty();
            if child_first {
                self.first_path.push(v);
            }
            explored.push(v);
            let mut child = colors.clone();
            for &u in &cell {
                if u != v {
                    child[u] = cell_color + 1;
                }
            }
            let child = refine(self.graph, child);
            let next_diverge = if child_first { level + 1 } else { diverge };
            if let Some(back) = self.descend(child, level + 1, child_first, next_diverge) {
                if back < level {
                    return Some(back);
                }
            }
        }
        None
    }

    fn leaf(&mut self, order: Vec<usize>, diverge: usize) -> Option<usize> {
        let cert = self.certificate(&order);
        let Some((first_cert, first_order)) = &self.first else {
            self.first = Some((cert.clone(), order.clone()));
            self.best = Some((cert, order));
            return None;
        };
        if &cert == first_cert {
            let mut gamma = vec![0; order.len()];
            for (p, &a) in first_order.iter().enumerate() {
                gamma[a] = order[p];
            }
            self.generators.push(gamma);
            return Some(diverge);
        }
        let (best_cert, best_order) = self.best.as_ref().expect("best set with first");
        if &cert == best_cert {
            let mut gamma = vec![0; order.len()];
            for (p, &a) in best_order.iter().enumerate() {
                gamma[a] = order[p];
            }
            self.generators.push(gamma);
        } else if &cert < best_cert {
            self.best = Some((cert, order));
        }
        None
    }

    /// Whether `v` shares an orbit with an explored vertex under the known
    /// automorphisms that fix the first `level` vertices of the first path.
    fn same_orbit(&self, level: usize, explored: &[usize], v: usize) -> bool {
        let n = self.graph.atom_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            let mut c = x;
            while parent[c] != r {
                let next = parent[c];
                parent[c] = r;
                c = next;
            }
            r
        }
        let prefix = &self.first_path[..level.min(self.first_path.len())];
        for gamma in &self.generators {
            if prefix.iter().any(|&p| gamma[p] != p) {
                continue;
            }
            for (x, &y) in gamma.iter().enumerate() {
                let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
                if rx != ry {
                    parent[rx] = ry;
                }
            }
        }
        let rv = find(&mut parent, v);
        explored.iter().any(|&e| find(&mut parent, e) == rv)
    }
}
