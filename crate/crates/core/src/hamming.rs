//! Radius queries over 64-bit hashes under Hamming distance.
//!
//! Two interchangeable back ends: a brute-force scan and a BK-tree. Both
//! return the same matches in the same (insertion index) order.

use crate::raster::hamming;

/// Corpora larger than this use the BK-tree under [`ScanStrategy::Auto`].
pub const AUTO_TREE_THRESHOLD: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanStrategy {
    #[default]
    Auto,
    BruteForce,
    BkTree,
}

#[derive(Debug)]
pub enum HammingIndex {
    Brute(Vec<u64>),
    Tree(BkTree),
}

impl HammingIndex {
    pub fn build(hashes: &[u64], strategy: ScanStrategy) -> Self {
        let tree = match strategy {
            ScanStrategy::Auto => hashes.len() > AUTO_TREE_THRESHOLD,
            ScanStrategy::BruteForce => false,
            ScanStrategy::BkTree => true,
        };
        if tree {
            HammingIndex::Tree(BkTree::new(hashes))
        } else {
            HammingIndex::Brute(hashes.to_vec())
        }
    }

    /// Indices (into the build slice) within `radius` of `query`, ascending,
    /// paired with their distance.
    pub fn within(&self, query: u64, radius: u32) -> Vec<(usize, u32)> {
        let mut out = match self {
            HammingIndex::Brute(hashes) => hashes
                .iter()
                .enumerate()
                .filter_map(|(i, &h)| {
                    let d = hamming(h, query);
                    (d <= radius).then_some((i, d))
                })
                .collect(),
            HammingIndex::Tree(tree) => tree.within(query, radius),
        };
        out.sort_unstable();
        out
    }
}

#[derive(Debug)]
struct Node {
    hash: u64,
    /// Items with exactly this hash.
    items: Vec<usize>,
    /// Children keyed by distance to `hash` (0 never occurs).
    children: Vec<(u32, usize)>,
}

#[derive(Debug, Default)]
pub struct BkTree {
    nodes: Vec<Node>,
}

impl BkTree {
    pub fn new(hashes: &[u64]) -> Self {
        let mut tree = BkTree::default();
        for (i, &h) in hashes.iter().enumerate() {
            tree.insert(h, i);
        }
        tree
    }

    fn insert(&mut self, hash: u64, item: usize) {
        if self.nodes.is_empty() {
            self.nodes.push(Node { hash, items: vec![item], children: Vec::new() });
            return;
        }
        let mut cur = 0;
        loop {
            let d = hamming(self.nodes[cur].hash, hash);
            if d == 0 {
                self.nodes[cur].items.push(item);
                return;
            }
            match self.nodes[cur].children.iter().find(|(cd, _)| *cd == d) {
                Some(&(_, child)) => cur = child,
                None => {
                    let idx = self.nodes.len();
                    self.nodes.push(Node { hash, items: vec![item], children: Vec::new() });
                    self.nodes[cur].children.push((d, idx));
                    return;
                }
            }
        }
    }

    pub fn within(&self, query: u64, radius: u32) -> Vec<(usize, u32)> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let d = hamming(node.hash, query);
            if d <= radius {
                out.extend(node.items.iter().map(|&i| (i, d)));
            }
            let lo = d.saturating_sub(radius);
            let hi = d + radius;
            stack.extend(node.children.iter().filter(|(cd, _)| *cd >= lo && *cd <= hi).map(|&(_, c)| c));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tree_matches_brute_force(
            hashes in prop::collection::vec(any::<u64>(), 0..200),
            flips in prop::collection::vec((0usize..200, 0u32..64), 0..100),
            query in any::<u64>(),
            radius in 0u32..20,
        ) {
            // Plant near neighbours so small radii have something to find.
            let mut hashes = hashes;
            for (i, bit) in flips {
                if let Some(&h) = hashes.get(i) {
                    hashes.push(h ^ (1u64 << bit));
                }
            }
            let brute = HammingIndex::build(&hashes, ScanStrategy::BruteForce);
            let tree = HammingIndex::build(&hashes, ScanStrategy::BkTree);
            for q in [query, hashes.first().copied().unwrap_or(0)] {
                prop_assert_eq!(brute.within(q, radius), tree.within(q, radius));
            }
        }
    }

    #[test]
    fn duplicate_hashes_all_returned() {
        let idx = HammingIndex::build(&[5, 5, 5, 7], ScanStrategy::BkTree);
        assert_eq!(idx.within(5, 0), vec![(0, 0), (1, 0), (2, 0)]);
        assert_eq!(idx.within(5, 1), vec![(0, 0), (1, 0), (2, 0), (3, 1)]);
    }
}
