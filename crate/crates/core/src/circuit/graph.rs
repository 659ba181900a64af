use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    /// Sorted, 0-based variable indices.
    pub scope: Vec<usize>,
    pub depth: usize,
    /// Indices into the same repetition; always larger than this region's.
    pub children: Vec<usize>,
}

impl Region {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// R independent random binary partition trees; region 0 of each is the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGraph {
    pub num_variables: usize,
    pub depth: usize,
    pub repetitions: Vec<Vec<Region>>,
}

/// Splits every region into two random halves (sizes differ by at most one)
/// down to `depth`. Single-variable regions stop early as leaves. A
/// one-variable problem gets a root with a single leaf child so that the
/// class heads always sit on an einsum.
pub fn build_region_graph(num_variables: usize, depth: usize, repetitions: usize, seed: u64) -> Result<RegionGraph> {
    if num_variables == 0 || depth == 0 || repetitions == 0 {
        return Err(Error::param("region graph needs num_variables, depth and repetitions >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reps = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let mut regions = vec![Region { scope: (0..num_variables).collect(), depth: 0, children: vec![] }];
        if num_variables == 1 {
            regions[0].children.push(1);
            regions.push(Region { scope: vec![0], depth: 1, children: vec![] });
            reps.push(regions);
            continue;
        }
        let mut queue = VecDeque::from([0usize]);
        while let Some(idx) = queue.pop_front() {
            let (scope, d) = (regions[idx].scope.clone(), regions[idx].depth);
            if d == depth || scope.len() == 1 {
                continue;
            }
            let mut shuffled = scope;
            shuffled.shuffle(&mut rng);
            let (left, right) = shuffled.split_at(shuffled.len() / 2);
            for half in [left, right] {
                let mut s = half.to_vec();
                s.sort_unstable();
                regions.push(Region { scope: s, depth: d + 1, children: vec![] });
                let child = regions.len() - 1;
                regions[idx].children.push(child);
                queue.push_back(child);
            }
        }
        reps.push(regions);
    }
    let graph = RegionGraph { num_variables, depth, repetitions: reps };
    graph.validate()?;
    Ok(graph)
}

impl RegionGraph {
    pub fn num_repetitions(&self) -> usize {
        self.repetitions.len()
    }

    /// Structural checks: children partition their parent, leaves cover every
    /// variable once, nothing deeper than `depth`.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::data(format!("region graph: {msg}")));
        if self.repetitions.is_empty() {
            return bad("no repetitions".into());
        }
        for (r, regions) in self.repetitions.iter().enumerate() {
            if regions.is_empty() || regions[0].scope != (0..self.num_variables).collect::<Vec<_>>() {
                return bad(format!("repetition {r} root does not cover all variables"));
            }
            if regions[0].is_leaf() {
                return bad(format!("repetition {r} root has no children"));
            }
            let mut covered = vec![0usize; self.num_variables];
            for (i, region) in regions.iter().enumerate() {
                if region.depth > self.depth || region.children.len() > 2 {
                    return bad(format!("repetition {r} region {i} malformed"));
                }
                if region.is_leaf() {
                    for &v in &region.scope {
                        covered[v] += 1;
                    }
                    continue;
                }
                let mut union: Vec<usize> = Vec::new();
                for &c in &region.children {
                    if c <= i || c >= regions.len() || regions[c].depth != region.depth + 1 {
                        return bad(format!("repetition {r} region {i} has a bad child index"));
                    }
                    union.extend(&regions[c].scope);
                }
                union.sort_unstable();
                if union != region.scope {
                    return bad(format!("repetition {r} region {i} children do not partition it"));
                }
            }
            if covered.iter().any(|&c| c != 1) {
                return bad(format!("repetition {r} leaves do not partition the variables"));
            }
        }
        Ok(())
    }

    pub fn leaves(&self, rep: usize) -> impl Iterator<Item = &Region> {
        self.repetitions[rep].iter().filter(|r| r.is_leaf())
    }

    /// Leaf regions that stopped splitting above the full depth.
    pub fn early_stopped(&self, rep: usize) -> usize {
        self.leaves(rep).filter(|r| r.depth < self.depth).count()
    }

    pub fn internal_count(&self, rep: usize) -> usize {
        self.repetitions[rep].iter().filter(|r| !r.is_leaf()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sa_graph_has_sixteen_leaves() {
        let g = build_region_graph(29, 4, 10, 7).unwrap();
        for r in 0..10 {
            let leaves: Vec<_> = g.leaves(r).collect();
            assert_eq!(leaves.len(), 16);
            assert!(leaves.iter().all(|l| l.depth == 4));
            let mut all: Vec<usize> = leaves.iter().flat_map(|l| l.scope.clone()).collect();
            all.sort_unstable();
            assert_eq!(all, (0..29).collect::<Vec<_>>());
            assert_eq!(g.internal_count(r), 15);
            assert_eq!(g.early_stopped(r), 0);
        }
    }

    #[test]
    fn two_variables_split_once() {
        let g = build_region_graph(2, 1, 1, 0).unwrap();
        let rep = &g.repetitions[0];
        assert_eq!(rep.len(), 3);
        assert_eq!(rep[1].scope.len(), 1);
        assert_eq!(rep[2].scope.len(), 1);
        assert_ne!(rep[1].scope, rep[2].scope);
    }

    #[test]
    fn singletons_stop_early() {
        let g = build_region_graph(3, 4, 1, 0).unwrap();
        assert_eq!(g.leaves(0).count(), 3);
        assert!(g.early_stopped(0) > 0);
        let one = build_region_graph(1, 3, 2, 0).unwrap();
        assert_eq!(one.repetitions[0].len(), 2);
    }

    #[test]
    fn seed_determines_structure() {
        let a = build_region_graph(116, 6, 10, 3).unwrap();
        assert_eq!(a, build_region_graph(116, 6, 10, 3).unwrap());
        assert_ne!(a, build_region_graph(116, 6, 10, 4).unwrap());
        assert_ne!(a.repetitions[0], a.repetitions[1]);
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(build_region_graph(0, 2, 1, 0).is_err());
        assert!(build_region_graph(4, 0, 1, 0).is_err());
        assert!(build_region_graph(4, 2, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn siblings_are_disjoint_and_balanced(n in 1usize..80, depth in 1usize..7, seed in any::<u64>()) {
            let g = build_region_graph(n, depth, 2, seed).unwrap();
            g.validate().unwrap();
            for rep in &g.repetitions {
                for region in rep.iter().filter(|r| r.children.len() == 2) {
                    let (a, b) = (&rep[region.children[0]].scope, &rep[region.children[1]].scope);
                    prop_assert!(a.iter().all(|v| !b.contains(v)));
                    prop_assert!(a.len().abs_diff(b.len()) <= 1);
                }
            }
        }
    }
}
