//! The number line: nodes, their capacity-sized segments, and the map file.
//!
//! A [`ClusterMap`] is an immutable snapshot. Adding or removing a node yields a
//! new map with the next epoch; segments that survive an operation keep their
//! number, length and owner.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest segment number accepted from a map file.
pub const MAX_SEGMENT_NUMBER: u64 = (1 << 26) - 1;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for NodeId {
    fn from(id: u64) -> Self {
        NodeId(id)
    }
}

/// Half-open interval `[number, number + length)` owned by one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub number: u64,
    pub length: f64,
    pub owner: NodeId,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.number as f64 + self.length
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.number as f64 && r < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub capacity: f64,
}

impl NodeSpec {
    pub fn new(id: impl Into<NodeId>, capacity: f64) -> Self {
        NodeSpec {
            id: id.into(),
            capacity,
        }
    }
}

/// Accounting model for the node table of a placement scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryModel {
    /// 4-byte node id + 4-byte segment length per node.
    Asura,
    /// 4-byte node id + 4-byte hash per virtual node.
    ConsistentHashing { vnodes: u64 },
}

/// Table bytes for `node_count` nodes under `model`.
pub fn memory_account(node_count: usize, model: MemoryModel) -> u64 {
    let n = node_count as u64;
    match model {
        MemoryModel::Asura => 8 * n,
        MemoryModel::ConsistentHashing { vnodes } => 8 * n * vnodes,
    }
}

fn check_positive(x: f64, err: fn(f64) -> Error) -> Result<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(err(x))
    }
}

/// Splits a capacity into whole unit segments plus one remainder segment.
pub fn segments_for_capacity(capacity: f64, unit: f64) -> Result<Vec<f64>> {
    let capacity = check_positive(capacity, Error::InvalidCapacity)?;
    let unit = check_positive(unit, Error::InvalidUnit)?;
    let ratio = capacity / unit;
    let whole = ratio.floor();
    let remainder = ratio - whole;
    let mut lengths = vec![1.0; whole as usize];
    if remainder > 0.0 {
        lengths.push(remainder);
    }
    Ok(lengths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    unit: f64,
    epoch: u64,
    nodes: BTreeMap<NodeId, f64>,
    // Indexed by segment number; `None` is a hole. No trailing holes.
    slots: Vec<Option<(f64, NodeId)>>,
}

impl ClusterMap {
    pub fn new(unit: f64) -> Result<Self> {
        Ok(ClusterMap {
            unit: check_positive(unit, Error::InvalidUnit)?,
            epoch: 0,
            nodes: BTreeMap::new(),
            slots: Vec::new(),
        })
    }

    /// Adds `specs` in order to an empty map.
    pub fn from_specs(unit: f64, specs: impl IntoIterator<Item = NodeSpec>) -> Result<Self> {
        let mut map = ClusterMap::new(unit)?;
        for spec in specs {
            map.insert(spec)?;
        }
        Ok(map)
    }

    pub fn unit(&self) -> f64 {
        self.unit
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn segment_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn capacity_of(&self, id: NodeId) -> Option<f64> {
        self.nodes.get(&id).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeSpec> + '_ {
        self.nodes
            .iter()
            .map(|(&id, &capacity)| NodeSpec { id, capacity })
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// Segments in ascending number order.
    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.slots.iter().enumerate().filter_map(|(number, slot)| {
            slot.map(|(length, owner)| Segment {
                number: number as u64,
                length,
                owner,
            })
        })
    }

    pub fn segment(&self, number: u64) -> Option<Segment> {
        let slot = *self.slots.get(usize::try_from(number).ok()?)?;
        slot.map(|(length, owner)| Segment {
            number,
            length,
            owner,
        })
    }

    pub fn segments_of(&self, id: NodeId) -> impl Iterator<Item = Segment> + '_ {
        self.segments().filter(move |s| s.owner == id)
    }

    pub fn is_assigned(&self, number: u64) -> bool {
        self.segment(number).is_some()
    }

    /// Largest assigned segment number plus one; 0 for an empty map.
    pub fn max_segment_number_plus_1(&self) -> u64 {
        self.slots.len() as u64
    }

    /// Largest segment number plus that segment's length.
    pub fn coverage_extent(&self) -> f64 {
        match self.slots.last() {
            Some(Some((length, _))) => (self.slots.len() - 1) as f64 + length,
            _ => 0.0,
        }
    }

    pub fn total_length(&self) -> f64 {
        self.slots.iter().flatten().map(|(length, _)| length).sum()
    }

    /// Uncovered length below the coverage extent.
    pub fn hole_length(&self) -> f64 {
        self.coverage_extent() - self.total_length()
    }

    /// Sum of segment lengths owned by each node.
    pub fn node_lengths(&self) -> BTreeMap<NodeId, f64> {
        let mut out: BTreeMap<NodeId, f64> = self.nodes.keys().map(|&id| (id, 0.0)).collect();
        for (length, owner) in self.slots.iter().flatten() {
            *out.entry(*owner).or_default() += length;
        }
        out
    }

    /// Smallest non-negative integer with no segment.
    pub fn smallest_unused(&self) -> u64 {
        self.slots
            .iter()
            .position(Option::is_none)
            .unwrap_or(self.slots.len()) as u64
    }

    /// The segment hit by `r`, if any.
    #[inline]
    pub fn hit(&self, r: f64) -> Option<(u64, NodeId)> {
        if r.is_nan() || r < 0.0 {
            return None;
        }
        let number = r as u64;
        let (length, owner) = (*self.slots.get(usize::try_from(number).ok()?)?)?;
        (r < number as f64 + length).then_some((number, owner))
    }

    pub fn memory_account(&self, model: MemoryModel) -> u64 {
        memory_account(self.node_count(), model)
    }

    /// New map with `spec` added; its segments take the smallest unused numbers.
    pub fn add_node(&self, spec: NodeSpec) -> Result<ClusterMap> {
        let mut next = self.clone();
        next.insert(spec)?;
        Ok(next)
    }

    /// New map without `id`; its segment numbers become holes.
    pub fn remove_node(&self, id: NodeId) -> Result<ClusterMap> {
        if !self.nodes.contains_key(&id) {
            return Err(Error::NodeNotFound(id));
        }
        let mut next = self.clone();
        next.nodes.remove(&id);
        for slot in next.slots.iter_mut() {
            if matches!(slot, Some((_, owner)) if *owner == id) {
                *slot = None;
            }
        }
        next.trim();
        next.epoch += 1;
        Ok(next)
    }

    fn insert(&mut self, spec: NodeSpec) -> Result<()> {
        if self.nodes.contains_key(&spec.id) {
            return Err(Error::DuplicateNode(spec.id));
        }
        let lengths = segments_for_capacity(spec.capacity, self.unit)?;
        let mut cursor = 0;
        for length in lengths {
            while cursor < self.slots.len() && self.slots[cursor].is_some() {
                cursor += 1;
            }
            if cursor == self.slots.len() {
                self.slots.push(None);
            }
            self.slots[cursor] = Some((length, spec.id));
        }
        self.nodes.insert(spec.id, spec.capacity);
        self.epoch += 1;
        Ok(())
    }

    fn trim(&mut self) {
        while matches!(self.slots.last(), Some(None)) {
            self.slots.pop();
        }
    }

    /// Canonical map file text.
    pub fn to_map_file(&self) -> String {
        self.to_string()
    }

    /// Builds a map from an explicit layout, validating it the same way as a map file.
    pub fn from_parts(unit: f64, nodes: &[NodeSpec], segments: &[Segment]) -> Result<ClusterMap> {
        let mut map = ClusterMap::new(unit)?;
        for spec in nodes {
            check_positive(spec.capacity, Error::InvalidCapacity)?;
            if map.nodes.insert(spec.id, spec.capacity).is_some() {
                return Err(Error::DuplicateNode(spec.id));
            }
        }
        for seg in segments {
            if seg.number > MAX_SEGMENT_NUMBER {
                return Err(Error::InvalidArgument(format!(
                    "segment number {} exceeds {MAX_SEGMENT_NUMBER}",
                    seg.number
                )));
            }
            if !(seg.length > 0.0 && seg.length <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "segment {} length {} not in (0, 1]",
                    seg.number, seg.length
                )));
            }
            if !map.nodes.contains_key(&seg.owner) {
                return Err(Error::NodeNotFound(seg.owner));
            }
            let index = seg.number as usize;
            if index >= map.slots.len() {
                map.slots.resize(index + 1, None);
            }
            if map.slots[index].is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate segment {}",
                    seg.number
                )));
            }
            map.slots[index] = Some((seg.length, seg.owner));
        }
        let lengths = map.node_lengths();
        for (id, capacity) in &map.nodes {
            let expected = capacity / map.unit;
            let got = lengths[id];
            if got == 0.0 {
                return Err(Error::InvalidArgument(format!("node {id} owns no segment")));
            }
            if (got - expected).abs() > 1e-9 * expected.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "node {id} segments sum to {got}, capacity implies {expected}"
                )));
            }
        }
        Ok(map)
    }

    pub fn parse_map_file(text: &str) -> Result<ClusterMap> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (line_no, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))?;
        let unit = header
            .strip_prefix("asura-map v1 unit=")
            .ok_or_else(|| Error::parse(line_no, "expected `asura-map v1 unit=<real>`"))?;
        let unit: f64 = parse_field(line_no, unit, "unit")?;

        let mut nodes = Vec::new();
        let mut segments = Vec::new();
        let mut last_line = line_no;
        for (line_no, line) in lines {
            last_line = line_no;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                ["node", id, capacity] => {
                    if !segments.is_empty() {
                        return Err(Error::parse(line_no, "node line after segment lines"));
                    }
                    nodes.push(NodeSpec {
                        id: NodeId(parse_field(line_no, id, "node id")?),
                        capacity: parse_field(line_no, capacity, "capacity")?,
                    });
                }
                ["seg", number, length, owner] => segments.push(Segment {
                    number: parse_field(line_no, number, "segment number")?,
                    length: parse_field(line_no, length, "segment length")?,
                    owner: NodeId(parse_field(line_no, owner, "owner id")?),
                }),
                _ => return Err(Error::parse(line_no, format!("unrecognized line `{line}`"))),
            }
        }
        ClusterMap::from_parts(unit, &nodes, &segments).map_err(|e| match e {
            Error::Parse { .. } => e,
            other => Error::parse(last_line, other.to_string()),
        })
    }
}

fn parse_field<T: FromStr>(line: usize, s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("bad {what} `{s}`")))
}

impl fmt::Display for ClusterMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "asura-map v1 unit={}", self.unit)?;
        for (id, capacity) in &self.nodes {
            writeln!(f, "node {id} {capacity}")?;
        }
        for seg in self.segments() {
            writeln!(f, "seg {} {} {}", seg.number, seg.length, seg.owner)?;
        }
        Ok(())
    }
}

impl FromStr for ClusterMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClusterMap::parse_map_file(s)
    }
}
