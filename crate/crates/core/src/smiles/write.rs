//! SMILES writer: canonical serialization and randomized enumeration.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use super::parse::{parse, AtomAlignment, ParseError, RING_SLOTS};
use super::token::tokenize;
use super::vocab::{ALIPHATIC_ORGANIC, AROMATIC_ORGANIC};
use crate::molgraph::{canonical_ranking, Atom, BondOrder, MolecularGraph};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WriteError {
    #[error("more than {RING_SLOTS} ring closures open at once")]
    RingDigitsExhausted,
}

/// Total tries spent looking for distinct strings in [`enumerate_random`].
pub const ENUMERATION_TRIES: usize = 10_000;
/// Consecutive repeats after which the distinct space is treated as exhausted.
pub const ENUMERATION_PATIENCE: usize = 500;

/// Serializes `g` by depth-first traversal from `root`, visiting the
/// neighbors of each atom in the order given by `neighbor_order`.
///
/// Returns the string and the graph atom written at each atom position.
pub fn write_with_order(
    g: &MolecularGraph,
    root: usize,
    neighbor_order: &[Vec<usize>],
) -> Result<(String, Vec<usize>), WriteError> {
    let n = g.atom_count();
    // Pass 1: classify tree and ring edges.
    let mut visited = vec![false; n];
    let mut parent_bond: Vec<Option<usize>> = vec![None; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut ring_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut bond_used = vec![false; g.bonds().len()];
    let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
    visited[root] = true;
    while let Some(&mut (v, ref mut next)) = stack.last_mut() {
        if *next == neighbor_order[v].len() {
            stack.pop();
            continue;
        }
        let u = neighbor_order[v][*next];
        *next += 1;
        let bond =
            g.neighbors(v).iter().find(|&&(w, _)| w == u).map(|&(_, b)| b).expect("neighbor order lists neighbors");
        if bond_used[bond] {
            continue;
        }
        bond_used[bond] = true;
        if visited[u] {
            ring_edges[v].push(bond);
            ring_edges[u].push(bond);
        } else {
            visited[u] = true;
            parent_bond[u] = Some(bond);
            children[v].push(u);
            stack.push((u, 0));
        }
    }

    // Pass 2: emit in pre-order.
    let mut out = String::new();
    let mut order = Vec::with_capacity(n);
    let mut emitted = vec![false; n];
    let mut ring_digit: Vec<Option<usize>> = vec![None; g.bonds().len()];
    let mut free = [true; RING_SLOTS];
    enum Step {
        Atom(usize),
        Text(&'static str),
    }
    let mut work = vec![Step::Atom(root)];
    while let Some(step) = work.pop() {
        let v = match step {
            Step::Text(t) => {
                out.push_str(t);
                continue;
            }
            Step::Atom(v) => v,
        };
        if let Some(b) = parent_bond[v] {
            let bond = &g.bonds()[b];
            let from = bond.other(v);
            push_bond_label(&mut out, g, from, v, bond.order_from(from));
        }
        write_atom(&mut out, &g.atoms()[v]);
        emitted[v] = true;
        order.push(v);
        // Closures first so their digits are free for the openings.
        let (closing, opening): (Vec<usize>, Vec<usize>) =
            ring_edges[v].iter().partition(|&&b| emitted[g.bonds()[b].other(v)]);
        for b in closing {
            let digit = ring_digit[b].expect("closure follows opening");
            let bond = &g.bonds()[b];
            let opener = bond.other(v);
            push_bond_label(&mut out, g, opener, v, bond.order_from(opener));
            push_digit(&mut out, digit);
            free[digit] = true;
        }
        for b in opening {
            let digit = (1..RING_SLOTS).chain([0]).find(|&d| free[d]).ok_or(WriteError::RingDigitsExhausted)?;
            free[digit] = false;
            ring_digit[b] = Some(digit);
            push_bond_label(&mut out, g, v, g.bonds()[b].other(v), g.bonds()[b].order_from(v));
            push_digit(&mut out, digit);
        }
        let kids = &children[v];
        if let Some((&last, rest)) = kids.split_last() {
            work.push(Step::Atom(last));
            for &c in rest.iter().rev() {
                work.push(Step::Text(")"));
                work.push(Step::Atom(c));
                work.push(Step::Text("("));
            }
        }
    }
    Ok((out, order))
}

fn push_bond_label(out: &mut String, g: &MolecularGraph, from: usize, to: usize, order: BondOrder) {
    let both_aromatic = g.atoms()[from].aromatic && g.atoms()[to].aromatic;
    let default = if both_aromatic { BondOrder::Aromatic } else { BondOrder::Single };
    if order != default {
        out.push(order.symbol());
    }
}

fn push_digit(out: &mut String, digit: usize) {
    if digit < 10 {
        out.push(char::from(b'0' + digit as u8));
    } else {
        out.push_str(&format!("%{digit:02}"));
    }
}

fn write_atom(out: &mut String, a: &Atom) {
    let symbol = a.element.symbol();
    let lower = symbol.to_lowercase();
    let plain = a.explicit_h.is_none()
        && a.isotope.is_none()
        && a.charge == 0
        && a.chirality.is_none()
        && a.atom_class.is_none();
    if plain {
        if a.aromatic && AROMATIC_ORGANIC.contains(&lower.as_str()) {
            out.push_str(&lower);
            return;
        }
        if !a.aromatic && ALIPHATIC_ORGANIC.contains(&symbol) {
            out.push_str(symbol);
            return;
        }
    }
    out.push('[');
    if let Some(iso) = a.isotope {
        out.push_str(&iso.to_string());
    }
    out.push_str(if a.aromatic { &lower } else { symbol });
    if let Some(c) = &a.chirality {
        out.push_str(c);
    }
    match a.explicit_h.unwrap_or(0) {
        0 => {}
        1 => out.push('H'),
        h => out.push_str(&format!("H{h}")),
    }
    match a.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("-{}", -c)),
    }
    if let Some(class) = a.atom_class {
        out.push_str(&format!(":{class}"));
    }
    out.push(']');
}

/// Deterministic SMILES rooted at canonical rank 0 with neighbors visited in
/// canonical-rank order; isomorphic graphs give identical strings.
pub fn write_canonical(g: &MolecularGraph) -> Result<String, WriteError> {
    let labeling = canonical_ranking(g);
    let neighbor_order: Vec<Vec<usize>> = (0..g.atom_count())
        .map(|v| {
            let mut nb: Vec<usize> = g.neighbors(v).iter().map(|&(u, _)| u).collect();
            nb.sort_by_key(|&u| labeling.rank[u]);
            nb
        })
        .collect();
    Ok(write_with_order(g, labeling.order[0], &neighbor_order)?.0)
}

/// Canonical string of a SMILES input.
pub fn canonicalize(s: &str) -> Result<String, ParseError> {
    let g = parse(s)?.graph;
    Ok(write_canonical(&g)?)
}

/// Whether two strings denote the same molecule.
pub fn same_molecule(s1: &str, s2: &str) -> Result<bool, ParseError> {
    Ok(canonicalize(s1)? == canonicalize(s2)?)
}

/// One random depth-first serialization: random root, shuffled neighbor order.
pub fn random_smiles<R: Rng>(g: &MolecularGraph, rng: &mut R) -> Result<(String, AtomAlignment), WriteError> {
    let root = rng.gen_range(0..g.atom_count());
    let neighbor_order: Vec<Vec<usize>> = (0..g.atom_count())
        .map(|v| {
            let mut nb: Vec<usize> = g.neighbors(v).iter().map(|&(u, _)| u).collect();
            nb.shuffle(rng);
            nb
        })
        .collect();
    let (s, order) = write_with_order(g, root, &neighbor_order)?;
    let stream = tokenize(&s).expect("writer output tokenizes");
    Ok((s, AtomAlignment { token_indices: stream.atom_token_indices(), graph_atoms: order }))
}

/// `k` random SMILES of `g` with atom alignments to `g`, preferring distinct
/// strings. Deterministic in `seed`.
pub fn enumerate_random(g: &MolecularGraph, seed: u64, k: usize) -> Result<Vec<(String, AtomAlignment)>, WriteError> {
    let mut rng = seeded(seed, 0);
    let mut out = Vec::with_capacity(k);
    let mut seen = HashSet::new();
    let mut tries = 0;
    let mut misses = 0;
    while out.len() < k && tries < ENUMERATION_TRIES && misses < ENUMERATION_PATIENCE {
        tries += 1;
        let (s, a) = random_smiles(g, &mut rng)?;
        if seen.insert(s.clone()) {
            out.push((s, a));
            misses = 0;
        } else {
            misses += 1;
        }
    }
    while out.len() < k {
        out.push(random_smiles(g, &mut rng)?);
    }
    Ok(out)
}

/// `1 - levenshtein(a, b) / max(|a|, |b|)` over characters.
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut diag = row[0];
        row[0] = i;
        for j in 1..=b.len() {
            let above = row[j];
            row[j] = (above + 1).min(row[j - 1] + 1).min(diag + usize::from(a[i - 1] != b[j - 1]));
            diag = above;
        }
    }
    1.0 - row[b.len()] as f64 / longest as f64
}
