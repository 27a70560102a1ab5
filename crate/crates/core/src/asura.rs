//! Datum lookup over a [`ClusterMap`] using cascaded, range-doubling random numbers.
//!
//! A datum's numbers come from a family of generators, level `i` spanning
//! `[0, 16 * 2^i)`. Lookup starts at the narrowest level covering every segment
//! and descends a level whenever the draw falls in the lower half of the current
//! range. Because each level's generator is seeded independently of how many
//! levels are in use, the numbers below any bound keep their values and order
//! when the range is widened or narrowed. That is what keeps data in place when
//! unrelated segments come and go.
//!
//! Every lookup accepts its numbers as a plain `Iterator<Item = f64>`, so tests
//! can drive it with hand-written sequences. Production lookups use
//! [`AsuraNumberSource`].

use std::collections::HashSet;

use crate::cluster_map::{ClusterMap, NodeId};
use crate::error::{Error, Result};
use crate::prng::{seed_from, Generator, Seed};

/// Range of level 0.
pub const DEFAULT_MAXIMUM_RANDOM_NUMBER: f64 = 16.0;

/// Range ratio between consecutive levels.
pub const GROWTH_RATIO: f64 = 2.0;

/// Extra range doublings tried while searching for an addition number.
pub const MAX_EXTENSION_DOUBLINGS: u32 = 40;

/// Level ranges stop at `16 * 2^59 = 2^63`.
pub const MAX_LEVELS: usize = 60;

/// Salt mixed with the datum id to seed the master generator.
const MASTER_SALT: u64 = 0;

/// `(c_max, loop_max)` for a map whose largest segment number plus one is `max_plus_1`.
pub fn cascade_shape(max_plus_1: u64) -> (f64, u32) {
    let mut c_max = DEFAULT_MAXIMUM_RANDOM_NUMBER;
    let mut loop_max = 0;
    while c_max < max_plus_1 as f64 {
        c_max *= GROWTH_RATIO;
        loop_max += 1;
    }
    (c_max, loop_max)
}

/// Per-datum cascade state.
///
/// Level seeds are the master generator's outputs in level order, so level `i`
/// sees the same seed whatever the widest level is.
#[derive(Debug, Clone)]
pub struct AsuraNumberSource {
    c_max: f64,
    loop_max: u32,
    reject_at: f64,
    master: Generator,
    levels: [Generator; MAX_LEVELS],
    used: u64,
    raw_draws: u64,
}

impl AsuraNumberSource {
    /// Source for `datum_id` on a map with the given largest segment number plus one.
    pub fn new(datum_id: u64, max_plus_1: u64) -> Result<Self> {
        if max_plus_1 == 0 {
            return Err(Error::EmptyMap);
        }
        let (c_max, loop_max) = cascade_shape(max_plus_1);
        Self::with_shape(datum_id, c_max, loop_max, max_plus_1 as f64)
    }

    /// Source with `extra` additional levels on top and no rejection bound.
    ///
    /// Its numbers below `max_plus_1` are exactly those of [`AsuraNumberSource::new`],
    /// interleaved with numbers from the wider range.
    pub fn widened(datum_id: u64, max_plus_1: u64, extra: u32) -> Result<Self> {
        if max_plus_1 == 0 {
            return Err(Error::EmptyMap);
        }
        let (c_max, loop_max) = cascade_shape(max_plus_1);
        let loop_max = loop_max + extra;
        if loop_max as usize >= MAX_LEVELS {
            return Err(Error::ExtensionLimit(extra));
        }
        let c_max = c_max * GROWTH_RATIO.powi(extra as i32);
        Self::with_shape(datum_id, c_max, loop_max, f64::INFINITY)
    }

    fn with_shape(datum_id: u64, c_max: f64, loop_max: u32, reject_at: f64) -> Result<Self> {
        if loop_max as usize >= MAX_LEVELS {
            return Err(Error::InvalidArgument(format!(
                "map needs {} cascade levels, at most {MAX_LEVELS} supported",
                loop_max + 1
            )));
        }
        Ok(AsuraNumberSource {
            c_max,
            loop_max,
            reject_at,
            master: Generator::new(seed_from(datum_id, MASTER_SALT)),
            levels: [Generator::new(Seed(0)); MAX_LEVELS],
            used: 0,
            raw_draws: 0,
        })
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn loop_max(&self) -> u32 {
        self.loop_max
    }

    /// Seed of level `level`: the master generator's `level`-th integer.
    pub fn level_seed(&self, level: u32) -> Seed {
        Seed(self.master.peek_integer(level as u64))
    }

    pub fn level_seeds(&self) -> Vec<Seed> {
        (0..=self.loop_max).map(|l| self.level_seed(l)).collect()
    }

    /// Whether level `level`'s generator has been initialized.
    pub fn level_used(&self, level: u32) -> bool {
        self.used & (1 << level) != 0
    }

    /// Uniform draws consumed so far, rejected ones included.
    pub fn raw_draws(&self) -> u64 {
        self.raw_draws
    }

    #[inline]
    fn draw(&mut self, level: u32) -> f64 {
        let bit = 1u64 << level;
        if self.used & bit == 0 {
            self.levels[level as usize] = Generator::new(self.level_seed(level));
            self.used |= bit;
        }
        self.raw_draws += 1;
        self.levels[level as usize].next_uniform()
    }

    /// Next number in `[0, max_plus_1)` (or `[0, c_max)` for a widened source).
    #[inline]
    pub fn next_asura_number(&mut self) -> f64 {
        let mut c = self.c_max;
        let mut level = self.loop_max;
        loop {
            let result = loop {
                let r = self.draw(level) * c;
                if r < self.reject_at {
                    break r;
                }
            };
            c /= GROWTH_RATIO;
            if result >= c || level == 0 {
                return result;
            }
            level -= 1;
        }
    }
}

impl Iterator for AsuraNumberSource {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        Some(self.next_asura_number())
    }
}

/// Replica selections for one datum, in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub selections: Vec<(u64, NodeId)>,
    pub epoch: u64,
}

impl Placement {
    pub fn primary(&self) -> NodeId {
        self.selections[0].1
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.selections.iter().map(|&(_, n)| n)
    }

    pub fn segments(&self) -> impl Iterator<Item = u64> + '_ {
        self.selections.iter().map(|&(s, _)| s)
    }
}

/// Numbers consumed by a lookup and which of them were selected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DrawTrace {
    pub drawn: Vec<f64>,
    /// Indices into `drawn` of the accepted selections.
    pub selected: Vec<usize>,
}

fn check_k(map: &ClusterMap, k: usize) -> Result<()> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("replica count must be at least 1".into()));
    }
    if k > map.node_count() {
        return Err(Error::InsufficientNodes {
            requested: k,
            available: map.node_count(),
        });
    }
    Ok(())
}

/// First number from `numbers` that lands inside a segment.
pub fn lookup_with(
    map: &ClusterMap,
    numbers: impl IntoIterator<Item = f64>,
) -> Result<(u64, NodeId)> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    numbers
        .into_iter()
        .find_map(|r| map.hit(r))
        .ok_or(Error::NumbersExhausted)
}

/// The data-storing segment and node of `datum_id`.
pub fn lookup(map: &ClusterMap, datum_id: u64) -> Result<(u64, NodeId)> {
    let mut source = AsuraNumberSource::new(datum_id, map.max_segment_number_plus_1())?;
    lookup_with(map, &mut source)
}

/// Like [`lookup`], also returning the raw draw count.
pub fn lookup_counted(map: &ClusterMap, datum_id: u64) -> Result<((u64, NodeId), u64)> {
    let mut source = AsuraNumberSource::new(datum_id, map.max_segment_number_plus_1())?;
    let hit = lookup_with(map, &mut source)?;
    Ok((hit, source.raw_draws()))
}

/// First `k` hits with pairwise distinct owners.
pub fn lookup_k_with(
    map: &ClusterMap,
    k: usize,
    numbers: impl IntoIterator<Item = f64>,
) -> Result<Placement> {
    check_k(map, k)?;
    let mut selections: Vec<(u64, NodeId)> = Vec::with_capacity(k);
    for r in numbers {
        if let Some((segment, node)) = map.hit(r) {
            if selections.iter().all(|&(_, n)| n != node) {
                selections.push((segment, node));
                if selections.len() == k {
                    return Ok(Placement {
                        selections,
                        epoch: map.epoch(),
                    });
                }
            }
        }
    }
    Err(Error::NumbersExhausted)
}

/// [`lookup_k_with`] that also records every number it consumed.
pub fn trace_k_with(
    map: &ClusterMap,
    k: usize,
    numbers: impl IntoIterator<Item = f64>,
) -> Result<(Placement, DrawTrace)> {
    check_k(map, k)?;
    let mut trace = DrawTrace::default();
    let mut selections: Vec<(u64, NodeId)> = Vec::with_capacity(k);
    for r in numbers {
        trace.drawn.push(r);
        if let Some((segment, node)) = map.hit(r) {
            if selections.iter().all(|&(_, n)| n != node) {
                selections.push((segment, node));
                trace.selected.push(trace.drawn.len() - 1);
                if selections.len() == k {
                    let placement = Placement {
                        selections,
                        epoch: map.epoch(),
                    };
                    return Ok((placement, trace));
                }
            }
        }
    }
    Err(Error::NumbersExhausted)
}

/// `k` distinct data-storing nodes of `datum_id`, primary first.
pub fn lookup_k(map: &ClusterMap, datum_id: u64, k: usize) -> Result<Placement> {
    let source = AsuraNumberSource::new(datum_id, map.max_segment_number_plus_1())?;
    lookup_k_with(map, k, source)
}

/// Range of a number stream requested from a [`NumberSpace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawRange {
    /// Numbers below the map's largest segment number plus one.
    Bounded,
    /// No rejection bound, with this many extra doublings on top of the map's range.
    Widened(u32),
}

/// Produces a datum's number streams for the different ranges.
pub trait NumberSpace {
    type Numbers: Iterator<Item = f64>;

    fn numbers(&self, max_plus_1: u64, range: DrawRange) -> Result<Self::Numbers>;
}

/// The production number space of one datum id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatumNumbers(pub u64);

impl NumberSpace for DatumNumbers {
    type Numbers = AsuraNumberSource;

    fn numbers(&self, max_plus_1: u64, range: DrawRange) -> Result<AsuraNumberSource> {
        match range {
            DrawRange::Bounded => AsuraNumberSource::new(self.0, max_plus_1),
            DrawRange::Widened(extra) => AsuraNumberSource::widened(self.0, max_plus_1, extra),
        }
    }
}

/// Fixed sequences, one for the bounded range and one per widening step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedNumbers {
    pub bounded: Vec<f64>,
    pub widened: Vec<Vec<f64>>,
}

impl ScriptedNumbers {
    pub fn new(bounded: impl Into<Vec<f64>>) -> Self {
        ScriptedNumbers {
            bounded: bounded.into(),
            widened: Vec::new(),
        }
    }

    pub fn with_widened(mut self, numbers: impl Into<Vec<f64>>) -> Self {
        self.widened.push(numbers.into());
        self
    }
}

impl NumberSpace for ScriptedNumbers {
    type Numbers = std::vec::IntoIter<f64>;

    fn numbers(&self, _max_plus_1: u64, range: DrawRange) -> Result<Self::Numbers> {
        match range {
            DrawRange::Bounded => Ok(self.bounded.clone().into_iter()),
            DrawRange::Widened(extra) => self
                .widened
                .get(extra as usize)
                .map(|n| n.clone().into_iter())
                .ok_or(Error::NumbersExhausted),
        }
    }
}

/// Per-datum numbers for cheap movement checks when nodes come and go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChurnMetadata {
    /// Only an added segment with this number can capture the datum.
    pub addition_number: u64,
    /// Segment numbers of the selected replicas.
    pub remove_numbers: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddCheck {
    Unaffected,
    Recheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemoveCheck {
    Unaffected,
    MustRecompute,
}

impl ChurnMetadata {
    pub fn moves_on_add(&self, added_segment: u64) -> AddCheck {
        if added_segment == self.addition_number {
            AddCheck::Recheck
        } else {
            AddCheck::Unaffected
        }
    }

    pub fn moves_on_remove(&self, removed_segments: impl IntoIterator<Item = u64>) -> RemoveCheck {
        let removed: HashSet<u64> = removed_segments.into_iter().collect();
        if self.remove_numbers.iter().any(|n| removed.contains(n)) {
            RemoveCheck::MustRecompute
        } else {
            RemoveCheck::Unaffected
        }
    }

    /// Keeps the metadata of an unaffected datum valid across a removal.
    ///
    /// A freed number below the addition number is the next one an addition will
    /// claim, and it may cover a number the datum missed in the removed segment's
    /// tail, so it becomes the addition number.
    pub fn note_removal(&mut self, removed_segments: impl IntoIterator<Item = u64>) {
        if let Some(lowest) = removed_segments.into_iter().min() {
            self.addition_number = self.addition_number.min(lowest);
        }
    }
}

pub fn moves_on_add(meta: &ChurnMetadata, added_segment: u64) -> AddCheck {
    meta.moves_on_add(added_segment)
}

pub fn moves_on_remove(
    meta: &ChurnMetadata,
    removed_segments: impl IntoIterator<Item = u64>,
) -> RemoveCheck {
    meta.moves_on_remove(removed_segments)
}

/// Floor of the smallest number before the final selection whose floor has no segment.
fn anterior_unassigned(map: &ClusterMap, trace: &DrawTrace) -> Option<u64> {
    let last = *trace.selected.last()?;
    trace.drawn[..last]
        .iter()
        .copied()
        .filter(|&r| r >= 0.0 && !map.is_assigned(r as u64))
        .min_by(f64::total_cmp)
        .map(|r| r as u64)
}

/// Addition and remove numbers of a datum placed with `k` replicas.
pub fn churn_metadata(
    map: &ClusterMap,
    k: usize,
    space: &impl NumberSpace,
) -> Result<ChurnMetadata> {
    let max_plus_1 = map.max_segment_number_plus_1();
    if max_plus_1 == 0 {
        return Err(Error::EmptyMap);
    }
    let (placement, trace) = trace_k_with(map, k, space.numbers(max_plus_1, DrawRange::Bounded)?)?;
    let remove_numbers = placement.segments().collect();
    if let Some(addition_number) = anterior_unassigned(map, &trace) {
        return Ok(ChurnMetadata {
            addition_number,
            remove_numbers,
        });
    }
    for extra in 0..=MAX_EXTENSION_DOUBLINGS {
        let numbers = match space.numbers(max_plus_1, DrawRange::Widened(extra)) {
            Ok(numbers) => numbers,
            Err(Error::ExtensionLimit(_)) => break,
            Err(e) => return Err(e),
        };
        let (_, widened) = trace_k_with(map, k, numbers)?;
        if let Some(addition_number) = anterior_unassigned(map, &widened) {
            return Ok(ChurnMetadata {
                addition_number,
                remove_numbers,
            });
        }
    }
    Err(Error::ExtensionLimit(MAX_EXTENSION_DOUBLINGS))
}

/// Expected raw draws per lookup on a line of extent `n` with hole length `h`,
/// first range `s` and growth ratio `alpha`.
pub fn expected_draws(n: f64, h: f64, s: f64, alpha: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial range {s} must be > 0")));
    }
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("growth ratio {alpha} must be > 1")));
    }
    if !(h >= 0.0 && h < n && n.is_finite()) {
        return Err(Error::DegenerateMap { extent: n, hole: h });
    }
    let mut levels = 0i32;
    let mut top = s;
    while top < n {
        top *= alpha;
        levels += 1;
    }
    let per_number = alpha / (alpha - 1.0) - 1.0 / (alpha.powi(levels) * (alpha - 1.0));
    Ok(top / (n - h) * per_number)
}

/// [`expected_draws`] for `map` with the crate's cascade parameters.
pub fn map_expected_draws(map: &ClusterMap) -> Result<f64> {
    expected_draws(
        map.coverage_extent(),
        map.hole_length().max(0.0),
        DEFAULT_MAXIMUM_RANDOM_NUMBER,
        GROWTH_RATIO,
    )
}
