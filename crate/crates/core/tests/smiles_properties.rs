use std::collections::{HashSet, VecDeque};
use std::path::Path;

use allsmiles::grammar::{sample_valid_with, DrugLikeWeights};
use allsmiles::molgraph::MolecularGraph;
use allsmiles::rng::seeded;
use allsmiles::smiles::{canonicalize, enumerate_random, parse, read_corpus, write_canonical};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn bundled_corpus() -> Vec<MolecularGraph> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus500.tsv");
    let text = std::fs::read_to_string(path).unwrap();
    read_corpus(&text).unwrap().iter().map(|r| parse(&r.smiles).unwrap().graph).collect()
}

fn drug_like(seed: u64) -> String {
    let w = DrugLikeWeights::default();
    sample_valid_with(seed, 40, |prev, id| w.weight(prev, id))
}

fn sampled(seed: u64) -> MolecularGraph {
    parse(&drug_like(seed)).unwrap().graph
}

/// Diameter by breadth-first search written against the bond list only.
fn bfs_diameter(g: &MolecularGraph) -> usize {
    let n = g.atom_count();
    let mut adj = vec![Vec::new(); n];
    for b in g.bonds() {
        adj[b.a].push(b.b);
        adj[b.b].push(b.a);
    }
    let mut best = 0;
    for s in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        best = best.max(dist.into_iter().filter(|&d| d != usize::MAX).max().unwrap_or(0));
    }
    best
}

#[test]
fn diameter_matches_bfs_on_the_corpus() {
    for g in bundled_corpus() {
        assert_eq!(g.diameter(), bfs_diameter(&g));
    }
}

#[test]
fn enumeration_diversity_over_the_corpus() {
    let graphs: Vec<_> = bundled_corpus().into_iter().filter(|g| g.atom_count() >= 5).collect();
    let diverse = graphs
        .iter()
        .filter(|g| {
            let strings: HashSet<String> = enumerate_random(g, 17, 10).unwrap().into_iter().map(|(s, _)| s).collect();
            strings.len() >= 2
        })
        .count();
    assert!(diverse as f64 >= 0.99 * graphs.len() as f64, "{diverse} of {}", graphs.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_form_ignores_atom_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let g = sampled(seed);
        let mut perm: Vec<usize> = (0..g.atom_count()).collect();
        perm.shuffle(&mut seeded(shuffle, 0));
        prop_assert_eq!(write_canonical(&g).unwrap(), write_canonical(&g.permuted(&perm)).unwrap());
    }

    #[test]
    fn diameter_matches_bfs(seed in any::<u64>()) {
        let g = sampled(seed);
        prop_assert_eq!(g.diameter(), bfs_diameter(&g));
    }

    #[test]
    fn methyl_adds_ch2_mass(seed in any::<u64>()) {
        let s = drug_like(seed);
        let g = parse(&s).unwrap().graph;
        let first = &g.atoms()[0];
        prop_assume!(!first.is_bracket() && !first.aromatic && g.hydrogen_count(0) >= 1);
        let longer = parse(&format!("C{s}")).unwrap().graph;
        prop_assert!((longer.molecular_weight() - g.molecular_weight() - 14.027).abs() < 1e-9);
    }

    #[test]
    fn enumerations_round_trip(seed in any::<u64>(), k in 0u64..1000) {
        let g = sampled(seed);
        let reference = write_canonical(&g).unwrap();
        for (s, _) in enumerate_random(&g, k, 20).unwrap() {
            prop_assert_eq!(&canonicalize(&s).unwrap(), &reference);
        }
    }
}
