//! Comparison schemes: a consistent-hashing ring with virtual nodes and
//! uniform straw buckets. Both hash with the crate's [`prng`](crate::prng)
//! mixer.

use std::collections::HashSet;

use crate::cluster_map::NodeId;
use crate::error::{Error, Result};
use crate::prng::{mix_round, seed_from};

/// Salt for hashing datum ids onto the ring.
const RING_DATUM_SALT: u64 = 0;

/// Ring position of virtual point `index` of `node`.
#[inline]
pub fn ring_point_hash(node: NodeId, index: u32) -> u64 {
    mix_round(seed_from(node.0, index as u64).0)
}

#[inline]
pub fn ring_datum_hash(datum_id: u64) -> u64 {
    seed_from(datum_id, RING_DATUM_SALT).0
}

/// Straw drawn by `node` for `datum_id`.
#[inline]
pub fn straw_hash(datum_id: u64, node: NodeId) -> u64 {
    seed_from(datum_id, node.0).0
}

fn ensure_distinct(nodes: &[NodeId]) -> Result<()> {
    let mut seen = HashSet::with_capacity(nodes.len());
    for &n in nodes {
        if !seen.insert(n) {
            return Err(Error::DuplicateNode(n));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashRing {
    points: Vec<(u64, NodeId)>,
    vnodes: u32,
}

impl HashRing {
    pub fn build(nodes: &[NodeId], vnodes: u32) -> Result<HashRing> {
        if vnodes == 0 {
            return Err(Error::InvalidArgument("need at least one virtual node".into()));
        }
        ensure_distinct(nodes)?;
        let mut points: Vec<(u64, NodeId)> = nodes
            .iter()
            .flat_map(|&n| (0..vnodes).map(move |i| (ring_point_hash(n, i), n)))
            .collect();
        points.sort_unstable();
        Ok(HashRing { points, vnodes })
    }

    pub fn vnodes(&self) -> u32 {
        self.vnodes
    }

    pub fn points(&self) -> &[(u64, NodeId)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Owner of the first point at or after `hash`, wrapping past the top.
    pub fn owner_of_hash(&self, hash: u64) -> Result<(NodeId, u32)> {
        if self.points.is_empty() {
            return Err(Error::EmptyMap);
        }
        // lower bound, counting probes
        let (mut lo, mut hi) = (0usize, self.points.len());
        let mut probes = 0;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            probes += 1;
            if self.points[mid].0 < hash {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let index = if lo == self.points.len() { 0 } else { lo };
        Ok((self.points[index].1, probes))
    }

    pub fn lookup(&self, datum_id: u64) -> Result<NodeId> {
        self.owner_of_hash(ring_datum_hash(datum_id)).map(|(n, _)| n)
    }

    /// Owner and binary-search probe depth.
    pub fn lookup_counted(&self, datum_id: u64) -> Result<(NodeId, u32)> {
        self.owner_of_hash(ring_datum_hash(datum_id))
    }
}

pub fn ring_build(nodes: &[NodeId], vnodes: u32) -> Result<HashRing> {
    HashRing::build(nodes, vnodes)
}

pub fn ring_lookup(ring: &HashRing, datum_id: u64) -> Result<NodeId> {
    ring.lookup(datum_id)
}

/// Candidate with the largest straw; equal straws go to the smaller id.
pub fn select_max_straw(straws: impl IntoIterator<Item = (NodeId, u64)>) -> Option<NodeId> {
    let mut best: Option<(NodeId, u64)> = None;
    for (node, straw) in straws {
        best = match best {
            Some((b, s)) if s > straw || (s == straw && b < node) => Some((b, s)),
            _ => Some((node, straw)),
        };
    }
    best.map(|(n, _)| n)
}

/// Candidates ordered by descending straw (ties by ascending id), first `k`.
pub fn select_top_straws(
    straws: impl IntoIterator<Item = (NodeId, u64)>,
    k: usize,
) -> Vec<NodeId> {
    let mut all: Vec<(NodeId, u64)> = straws.into_iter().collect();
    all.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    all.into_iter().take(k).map(|(n, _)| n).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrawSet {
    nodes: Vec<NodeId>,
}

impl StrawSet {
    pub fn new(nodes: &[NodeId]) -> Result<StrawSet> {
        ensure_distinct(nodes)?;
        Ok(StrawSet {
            nodes: nodes.to_vec(),
        })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn straws(&self, datum_id: u64) -> impl Iterator<Item = (NodeId, u64)> + '_ {
        self.nodes.iter().map(move |&n| (n, straw_hash(datum_id, n)))
    }

    pub fn lookup(&self, datum_id: u64) -> Result<NodeId> {
        select_max_straw(self.straws(datum_id)).ok_or(Error::EmptyMap)
    }

    /// Winner and the number of straws compared.
    pub fn lookup_counted(&self, datum_id: u64) -> Result<(NodeId, u32)> {
        Ok((self.lookup(datum_id)?, self.nodes.len() as u32))
    }

    pub fn lookup_k(&self, datum_id: u64, k: usize) -> Result<Vec<NodeId>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyMap);
        }
        if k > self.nodes.len() {
            return Err(Error::InsufficientNodes {
                requested: k,
                available: self.nodes.len(),
            });
        }
        Ok(select_top_straws(self.straws(datum_id), k))
    }
}

pub fn straw_lookup(set: &StrawSet, datum_id: u64) -> Result<NodeId> {
    set.lookup(datum_id)
}

pub fn straw_lookup_k(set: &StrawSet, datum_id: u64, k: usize) -> Result<Vec<NodeId>> {
    set.lookup_k(datum_id, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::{Generator, Seed};

    const NODES: [NodeId; 4] = [NodeId(0xA), NodeId(0xB), NodeId(0xC), NodeId(0xD)];

    fn row(values: [u64; 4]) -> Vec<(NodeId, u64)> {
        NODES.iter().copied().zip(values).collect()
    }

    fn ids(n: u64) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    #[test]
    fn straw_rows_pick_largest() {
        assert_eq!(select_max_straw(row([1, 5, 123, 23])), Some(NodeId(0xC)));
        assert_eq!(select_max_straw(row([99, 44, 32, 56])), Some(NodeId(0xA)));
        assert_eq!(select_max_straw(row([75, 35, 76, 65])), Some(NodeId(0xC)));
        assert_eq!(select_max_straw(row([41, 97, 15, 19])), Some(NodeId(0xB)));
        assert_eq!(select_max_straw(row([11, 23, 45, 68])), Some(NodeId(0xD)));
        assert_eq!(select_max_straw(row([121, 127, 112, 111])), Some(NodeId(0xB)));
        assert_eq!(
            select_top_straws(row([1, 5, 123, 23]), 2),
            vec![NodeId(0xC), NodeId(0xD)]
        );
    }

    #[test]
    fn straw_ties_prefer_smaller_id() {
        assert_eq!(select_max_straw(row([7, 9, 9, 1])), Some(NodeId(0xB)));
        assert_eq!(
            select_top_straws(row([7, 9, 9, 1]), 3),
            vec![NodeId(0xB), NodeId(0xC), NodeId(0xA)]
        );
    }

    #[test]
    fn straw_single_and_empty() {
        let one = StrawSet::new(&[NodeId(5)]).unwrap();
        assert_eq!(one.lookup(123).unwrap(), NodeId(5));
        let none = StrawSet::new(&[]).unwrap();
        assert_eq!(none.lookup(1), Err(Error::EmptyMap));
        assert_eq!(
            StrawSet::new(&[NodeId(1), NodeId(1)]),
            Err(Error::DuplicateNode(NodeId(1)))
        );
    }

    #[test]
    fn straw_k_matches_sort_oracle() {
        let set = StrawSet::new(&ids(64)).unwrap();
        for id in 0..500u64 {
            let mut all: Vec<(u64, NodeId)> =
                ids(64).into_iter().map(|n| (straw_hash(id, n), n)).collect();
            all.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let k = (id % 64 + 1) as usize;
            let expect: Vec<NodeId> = all.iter().take(k).map(|&(_, n)| n).collect();
            assert_eq!(set.lookup_k(id, k).unwrap(), expect);
            assert_eq!(set.lookup(id).unwrap(), expect[0]);
        }
        let full = set.lookup_k(9, 64).unwrap();
        let mut sorted = full.clone();
        sorted.sort();
        assert_eq!(sorted, ids(64));
        assert!(matches!(set.lookup_k(1, 65), Err(Error::InsufficientNodes { .. })));
    }

    #[test]
    fn ring_cardinality_and_order() {
        let one = HashRing::build(&[NodeId(1)], 1).unwrap();
        assert_eq!(one.len(), 1);
        let ring = HashRing::build(&ids(3), 100).unwrap();
        assert_eq!(ring.len(), 300);
        assert!(ring.points().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(ring, HashRing::build(&ids(3), 100).unwrap());
        assert!(HashRing::build(&ids(3), 0).is_err());
        assert!(HashRing::build(&[NodeId(2), NodeId(2)], 3).is_err());
    }

    #[test]
    fn ring_single_node_and_empty() {
        let ring = HashRing::build(&[NodeId(8)], 10).unwrap();
        for id in 0..100 {
            assert_eq!(ring.lookup(id).unwrap(), NodeId(8));
        }
        let empty = HashRing::build(&[], 10).unwrap();
        assert_eq!(empty.lookup(1), Err(Error::EmptyMap));
    }

    #[test]
    fn ring_wraps_past_largest_point() {
        let ring = HashRing::build(&ids(5), 4).unwrap();
        let (top, _) = *ring.points().last().unwrap();
        let first_owner = ring.points()[0].1;
        if top < u64::MAX {
            assert_eq!(ring.owner_of_hash(top + 1).unwrap().0, first_owner);
        }
        assert_eq!(ring.owner_of_hash(u64::MAX).unwrap().0, {
            if top == u64::MAX { ring.points().last().unwrap().1 } else { first_owner }
        });
        assert_eq!(ring.owner_of_hash(0).unwrap().0, first_owner);
    }

    #[test]
    fn ring_matches_linear_scan() {
        let mut g = Generator::new(Seed(3));
        for (n, v) in [(1u64, 1u32), (7, 13), (10, 100)] {
            let ring = HashRing::build(&ids(n), v).unwrap();
            for _ in 0..10_000 {
                let id = g.next_integer();
                let h = ring_datum_hash(id);
                let expect = ring
                    .points()
                    .iter()
                    .find(|&&(p, _)| p >= h)
                    .unwrap_or(&ring.points()[0])
                    .1;
                let (got, probes) = ring.lookup_counted(id).unwrap();
                assert_eq!(got, expect);
                let bound = (ring.len() as f64).log2().ceil() as u32 + 1;
                assert!(probes <= bound);
            }
        }
    }
}
