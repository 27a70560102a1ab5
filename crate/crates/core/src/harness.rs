//! Desk-scale experiments comparing the three placement schemes.
//!
//! Every experiment is a pure function of its parameters and seed. Synthetic
//! datum ids are sequence numbers mixed with a per-trial salt.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::asura::{self, churn_metadata, AddCheck, ChurnMetadata, DatumNumbers, RemoveCheck};
use crate::baselines::{HashRing, StrawSet};
use crate::cluster_map::{ClusterMap, NodeId, NodeSpec};
use crate::error::{Error, Result};
use crate::prng::{hash_bytes, seed_from, Generator};

const NODE_SALT: u64 = 0x6e6f_6465;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Asura,
    Ring,
    Straw,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Asura, Algo::Ring, Algo::Straw];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Asura => "asura",
            Algo::Ring => "ring",
            Algo::Straw => "straw",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asura" => Ok(Algo::Asura),
            "ring" => Ok(Algo::Ring),
            "straw" => Ok(Algo::Straw),
            other => Err(Error::InvalidArgument(format!(
                "unknown algorithm `{other}` (expected asura, ring or straw)"
            ))),
        }
    }
}

/// One scheme built over a node set.
#[derive(Debug, Clone)]
pub enum Placer {
    Asura(ClusterMap),
    Ring(HashRing),
    Straw(StrawSet),
}

impl Placer {
    /// Ring and straw ignore capacities; each node gets `vnodes` points on the ring.
    pub fn build(algo: Algo, map: &ClusterMap, vnodes: u32) -> Result<Placer> {
        let ids: Vec<NodeId> = map.node_ids().collect();
        Ok(match algo {
            Algo::Asura => Placer::Asura(map.clone()),
            Algo::Ring => Placer::Ring(HashRing::build(&ids, vnodes)?),
            Algo::Straw => Placer::Straw(StrawSet::new(&ids)?),
        })
    }

    #[inline]
    pub fn place(&self, datum_id: u64) -> Result<NodeId> {
        match self {
            Placer::Asura(map) => asura::lookup(map, datum_id).map(|(_, n)| n),
            Placer::Ring(ring) => ring.lookup(datum_id),
            Placer::Straw(set) => set.lookup(datum_id),
        }
    }

    /// Placement plus the scheme's internal operation count: raw draws,
    /// binary-search probes or straw comparisons.
    #[inline]
    pub fn place_counted(&self, datum_id: u64) -> Result<(NodeId, u64)> {
        match self {
            Placer::Asura(map) => asura::lookup_counted(map, datum_id).map(|((_, n), d)| (n, d)),
            Placer::Ring(ring) => ring.lookup_counted(datum_id).map(|(n, p)| (n, p as u64)),
            Placer::Straw(set) => set.lookup_counted(datum_id).map(|(n, c)| (n, c as u64)),
        }
    }
}

/// Salt of trial `trial` under experiment seed `seed`.
pub fn trial_salt(seed: u64, trial: u64) -> u64 {
    seed_from(seed, trial).0
}

/// Datum id `index` of a trial's corpus.
#[inline]
pub fn synthetic_id(salt: u64, index: u64) -> u64 {
    seed_from(index, salt).0
}

pub fn synthetic_ids(salt: u64, count: u64) -> impl Iterator<Item = u64> {
    (0..count).map(move |i| synthetic_id(salt, i))
}

/// `count` distinct node ids derived from a trial salt.
pub fn trial_node_ids(salt: u64, count: usize) -> Vec<NodeId> {
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut index = 0u64;
    while out.len() < count {
        let id = NodeId(seed_from(index, salt ^ NODE_SALT).0);
        index += 1;
        if seen.insert(id) {
            out.push(id);
        }
    }
    out
}

/// Largest relative deviation from `expected`, in percent.
pub fn max_variability(counts: &[u64], expected: &[f64]) -> f64 {
    counts
        .iter()
        .zip(expected)
        .map(|(&c, &e)| (c as f64 - e).abs() / e * 100.0)
        .fold(0.0, f64::max)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityReport {
    pub algo: Algo,
    pub nodes: usize,
    pub virtual_nodes: u32,
    pub data_per_node: u64,
    pub trials: u64,
    /// Largest per-trial value.
    pub max_variability_percent: f64,
    pub mean: f64,
    pub stddev: f64,
    pub median: f64,
    pub per_trial: Vec<f64>,
}

impl UniformityReport {
    fn from_trials(
        algo: Algo,
        nodes: usize,
        virtual_nodes: u32,
        data_per_node: u64,
        per_trial: Vec<f64>,
    ) -> Self {
        let n = per_trial.len() as f64;
        let mean = per_trial.iter().sum::<f64>() / n;
        let var = per_trial.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        UniformityReport {
            algo,
            nodes,
            virtual_nodes: if algo == Algo::Ring { virtual_nodes } else { 0 },
            data_per_node,
            trials: per_trial.len() as u64,
            max_variability_percent: per_trial.iter().copied().fold(0.0, f64::max),
            mean,
            stddev: var.sqrt(),
            median: median(&per_trial),
            per_trial,
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = UniformityRow> + '_ {
        self.per_trial
            .iter()
            .enumerate()
            .map(move |(trial, &v)| UniformityRow {
                algo: self.algo,
                nodes: self.nodes,
                vnodes: self.virtual_nodes,
                data_per_node: self.data_per_node,
                trial: trial as u64,
                max_variability_percent: v,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityRow {
    pub algo: Algo,
    pub nodes: usize,
    pub vnodes: u32,
    pub data_per_node: u64,
    pub trial: u64,
    pub max_variability_percent: f64,
}

fn positive(value: u64, what: &str) -> Result<()> {
    if value == 0 {
        Err(Error::InvalidArgument(format!("{what} must be positive")))
    } else {
        Ok(())
    }
}

fn equal_map(ids: &[NodeId]) -> Result<ClusterMap> {
    ClusterMap::from_specs(1.0, ids.iter().map(|&id| NodeSpec { id, capacity: 1.0 }))
}

fn count_placements(
    placer: &Placer,
    index: &HashMap<NodeId, usize>,
    ids: impl Iterator<Item = u64>,
) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; index.len()];
    for id in ids {
        counts[index[&placer.place(id)?]] += 1;
    }
    Ok(counts)
}

/// Max variability of `nodes` equal nodes holding `data_per_node` data each on average.
pub fn run_uniformity(
    algo: Algo,
    nodes: usize,
    vnodes: u32,
    data_per_node: u64,
    trials: u64,
    seed: u64,
) -> Result<UniformityReport> {
    positive(nodes as u64, "node count")?;
    positive(vnodes as u64, "virtual node count")?;
    positive(data_per_node, "data per node")?;
    positive(trials, "trial count")?;
    let total = nodes as u64 * data_per_node;
    let expected = vec![data_per_node as f64; nodes];
    let mut per_trial = Vec::with_capacity(trials as usize);
    for trial in 0..trials {
        let salt = trial_salt(seed, trial);
        let ids = trial_node_ids(salt, nodes);
        let index: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let placer = Placer::build(algo, &equal_map(&ids)?, vnodes)?;
        let counts = count_placements(&placer, &index, synthetic_ids(salt, total))?;
        per_trial.push(max_variability(&counts, &expected));
    }
    Ok(UniformityReport::from_trials(
        algo,
        nodes,
        vnodes,
        data_per_node,
        per_trial,
    ))
}

/// In-process analog of writing string keys to `nodes` cache servers.
pub fn run_shard_sim(
    algo: Algo,
    nodes: usize,
    keys: u64,
    vnodes: u32,
    trials: u64,
    seed: u64,
) -> Result<UniformityReport> {
    positive(nodes as u64, "node count")?;
    positive(vnodes as u64, "virtual node count")?;
    positive(keys, "key count")?;
    positive(trials, "trial count")?;
    let expected = vec![keys as f64 / nodes as f64; nodes];
    let mut per_trial = Vec::with_capacity(trials as usize);
    for trial in 0..trials {
        let salt = trial_salt(seed, trial);
        let ids = trial_node_ids(salt, nodes);
        let index: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let placer = Placer::build(algo, &equal_map(&ids)?, vnodes)?;
        let mut stores: Vec<HashSet<String>> = vec![HashSet::new(); nodes];
        for i in 0..keys {
            let key = format!("key:{seed:x}:{trial}:{i}");
            let node = placer.place(hash_bytes(key.as_bytes()))?;
            stores[index[&node]].insert(key);
        }
        let counts: Vec<u64> = stores.iter().map(|s| s.len() as u64).collect();
        per_trial.push(max_variability(&counts, &expected));
    }
    Ok(UniformityReport::from_trials(
        algo,
        nodes,
        vnodes,
        keys / nodes as u64,
        per_trial,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Add,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChurnEvent {
    Add(NodeSpec),
    Remove(NodeId),
}

impl ChurnEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            ChurnEvent::Add(_) => EventKind::Add,
            ChurnEvent::Remove(_) => EventKind::Remove,
        }
    }

    pub fn node(&self) -> NodeId {
        match *self {
            ChurnEvent::Add(spec) => spec.id,
            ChurnEvent::Remove(id) => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChurnScenario {
    pub unit: f64,
    pub initial: Vec<NodeSpec>,
    pub events: Vec<ChurnEvent>,
    pub vnodes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChurnReport {
    pub algo: Algo,
    pub step: usize,
    pub event: EventKind,
    pub node: NodeId,
    pub moved_count: u64,
    pub total_count: u64,
    pub moved_fraction: f64,
    /// Moves that optimal movement forbids: onto a node other than the added
    /// one, or of data that was not on the removed one.
    pub misdirected_count: u64,
    /// Data that moved although its churn metadata said unaffected (ASURA only).
    pub metadata_false_negatives: u64,
    /// Data whose churn metadata asked for a recomputation (ASURA only).
    pub metadata_flagged: u64,
}

/// Every map state of a scenario, validating that the cluster never empties.
pub fn scenario_maps(scenario: &ChurnScenario) -> Result<Vec<ClusterMap>> {
    let mut maps = vec![ClusterMap::from_specs(scenario.unit, scenario.initial.iter().copied())?];
    if maps[0].is_empty() {
        return Err(Error::InvalidArgument("scenario starts with no nodes".into()));
    }
    for event in &scenario.events {
        let current = maps.last().unwrap();
        let next = match *event {
            ChurnEvent::Add(spec) => current.add_node(spec)?,
            ChurnEvent::Remove(id) => current.remove_node(id)?,
        };
        if next.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "removing node {} leaves the cluster empty",
                event.node()
            )));
        }
        maps.push(next);
    }
    Ok(maps)
}

/// Replays `scenario` and counts which data move at each event.
pub fn run_churn(
    algo: Algo,
    scenario: &ChurnScenario,
    ids_count: u64,
    seed: u64,
) -> Result<Vec<ChurnReport>> {
    let maps = scenario_maps(scenario)?;
    let salt = trial_salt(seed, 0);
    let ids: Vec<u64> = synthetic_ids(salt, ids_count).collect();
    let placer = Placer::build(algo, &maps[0], scenario.vnodes)?;
    let mut owners: Vec<NodeId> = ids.iter().map(|&id| placer.place(id)).collect::<Result<_>>()?;
    let mut metas: Vec<ChurnMetadata> = if algo == Algo::Asura {
        ids.iter()
            .map(|&id| churn_metadata(&maps[0], 1, &DatumNumbers(id)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut reports = Vec::with_capacity(scenario.events.len());
    for (step, event) in scenario.events.iter().enumerate() {
        let (before, after) = (&maps[step], &maps[step + 1]);
        let placer = Placer::build(algo, after, scenario.vnodes)?;
        let changed_segments: Vec<u64> = match event {
            ChurnEvent::Add(spec) => after.segments_of(spec.id).map(|s| s.number).collect(),
            ChurnEvent::Remove(id) => before.segments_of(*id).map(|s| s.number).collect(),
        };
        let mut report = ChurnReport {
            algo,
            step,
            event: event.kind(),
            node: event.node(),
            moved_count: 0,
            total_count: ids.len() as u64,
            moved_fraction: 0.0,
            misdirected_count: 0,
            metadata_false_negatives: 0,
            metadata_flagged: 0,
        };
        for (i, &id) in ids.iter().enumerate() {
            let old = owners[i];
            let new = placer.place(id)?;
            let moved = old != new;
            if moved {
                report.moved_count += 1;
                let legal = match *event {
                    ChurnEvent::Add(spec) => new == spec.id,
                    ChurnEvent::Remove(gone) => old == gone,
                };
                if !legal {
                    report.misdirected_count += 1;
                }
            }
            if let Some(meta) = metas.get_mut(i) {
                let flagged = match event {
                    ChurnEvent::Add(_) => changed_segments
                        .iter()
                        .any(|&s| meta.moves_on_add(s) == AddCheck::Recheck),
                    ChurnEvent::Remove(_) => {
                        meta.moves_on_remove(changed_segments.iter().copied())
                            == RemoveCheck::MustRecompute
                    }
                };
                if flagged {
                    report.metadata_flagged += 1;
                    *meta = churn_metadata(after, 1, &DatumNumbers(id))?;
                } else {
                    if moved {
                        report.metadata_false_negatives += 1;
                    }
                    if matches!(event, ChurnEvent::Remove(_)) {
                        meta.note_removal(changed_segments.iter().copied());
                    }
                }
            }
            owners[i] = new;
        }
        report.moved_fraction = report.moved_count as f64 / report.total_count.max(1) as f64;
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrawReport {
    pub node_count: usize,
    pub hole_count: usize,
    pub n: f64,
    pub h: f64,
    pub ids: u64,
    pub measured_mean_draws: f64,
    pub predicted: f64,
    pub relative_error: f64,
}

/// Unit segments `0..node_count` with `round(hole_fraction * node_count)` of
/// them removed; the last segment always stays so the extent is `node_count`.
pub fn holed_map(node_count: usize, hole_fraction: f64, seed: u64) -> Result<ClusterMap> {
    if node_count == 0 {
        return Err(Error::InvalidArgument("node count must be positive".into()));
    }
    if !(0.0..=0.9).contains(&hole_fraction) {
        return Err(Error::InvalidArgument(format!(
            "hole fraction {hole_fraction} outside [0, 0.9]"
        )));
    }
    let holes = ((hole_fraction * node_count as f64).round() as usize).min(node_count - 1);
    let mut map = ClusterMap::from_specs(1.0, (0..node_count as u64).map(|i| NodeSpec::new(i, 1.0)))?;
    let mut candidates: Vec<u64> = (0..node_count as u64 - 1).collect();
    let mut g = Generator::new(seed_from(seed, node_count as u64));
    for i in 0..holes {
        let j = i + (g.next_integer() % (candidates.len() - i) as u64) as usize;
        candidates.swap(i, j);
        map = map.remove_node(NodeId(candidates[i]))?;
    }
    Ok(map)
}

/// Measured mean raw draws per lookup against the analytic expectation.
pub fn run_draw_count(
    node_count: usize,
    hole_fraction: f64,
    ids_count: u64,
    seed: u64,
) -> Result<DrawReport> {
    positive(ids_count, "id count")?;
    let map = holed_map(node_count, hole_fraction, seed)?;
    let predicted = asura::map_expected_draws(&map)?;
    let salt = trial_salt(seed, node_count as u64);
    let mut draws = 0u64;
    for id in synthetic_ids(salt, ids_count) {
        draws += asura::lookup_counted(&map, id)?.1;
    }
    let measured = draws as f64 / ids_count as f64;
    Ok(DrawReport {
        node_count,
        hole_count: node_count - map.node_count(),
        n: map.coverage_extent(),
        h: map.hole_length(),
        ids: ids_count,
        measured_mean_draws: measured,
        predicted,
        relative_error: (measured - predicted).abs() / predicted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthShape {
    Constant,
    Logarithmic,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub algo: Algo,
    pub nodes: usize,
    pub vnodes: u32,
    pub lookups: u64,
    pub mean_ops: f64,
    pub max_ops: u64,
    /// Absent when timing is disabled.
    pub mean_wall_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub algo: Algo,
    pub node_counts: Vec<usize>,
    pub mean_ops: Vec<f64>,
    pub max_ops: Vec<u64>,
    pub mean_wall_ns: Vec<Option<f64>>,
    pub vnodes: u32,
    pub lookups: u64,
    pub shape: GrowthShape,
    /// R² of `ops ~ a + b N`.
    pub r2_linear: f64,
    /// R² of `ops ~ a + b ln N`.
    pub r2_log: f64,
}

impl ScalingReport {
    pub fn rows(&self) -> impl Iterator<Item = ScalingRow> + '_ {
        (0..self.node_counts.len()).map(move |i| ScalingRow {
            algo: self.algo,
            nodes: self.node_counts[i],
            vnodes: if self.algo == Algo::Ring { self.vnodes } else { 0 },
            lookups: self.lookups,
            mean_ops: self.mean_ops[i],
            max_ops: self.max_ops[i],
            mean_wall_ns: self.mean_wall_ns[i],
        })
    }
}

/// Least-squares fit of `y = a + b x`, returning `(a, b, r2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return (my, 0.0, 0.0);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (a, b, r2)
}

/// Bounded ops are constant: the log-fit rise across the range stays under a
/// quarter of the mean. Otherwise the better of the linear and log fits.
pub fn classify_growth(node_counts: &[usize], ops: &[f64]) -> (GrowthShape, f64, f64) {
    let ns: Vec<f64> = node_counts.iter().map(|&n| n as f64).collect();
    let logs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let (_, _, r2_linear) = linear_fit(&ns, ops);
    let (_, slope_log, r2_log) = linear_fit(&logs, ops);
    let mean = ops.iter().sum::<f64>() / ops.len().max(1) as f64;
    let span = logs.last().copied().unwrap_or(0.0) - logs.first().copied().unwrap_or(0.0);
    let shape = if ops.len() < 2 || (slope_log * span).abs() < 0.25 * mean {
        GrowthShape::Constant
    } else if r2_linear >= r2_log {
        GrowthShape::Linear
    } else {
        GrowthShape::Logarithmic
    };
    (shape, r2_linear, r2_log)
}

/// Per-lookup cost at each node count (equal nodes, no holes).
pub fn run_scaling(
    algo: Algo,
    node_counts: &[usize],
    vnodes: u32,
    lookups_per_point: u64,
    seed: u64,
    timing: bool,
) -> Result<ScalingReport> {
    positive(lookups_per_point, "lookups per point")?;
    positive(vnodes as u64, "virtual node count")?;
    if node_counts.is_empty() || node_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "node counts must be non-empty and strictly ascending".into(),
        ));
    }
    let mut mean_ops = Vec::new();
    let mut max_ops = Vec::new();
    let mut wall = Vec::new();
    for &nodes in node_counts {
        positive(nodes as u64, "node count")?;
        let salt = trial_salt(seed, nodes as u64);
        let ids: Vec<NodeId> = (0..nodes as u64).map(NodeId).collect();
        let placer = Placer::build(algo, &equal_map(&ids)?, vnodes)?;
        let corpus: Vec<u64> = synthetic_ids(salt, lookups_per_point).collect();
        let mut total = 0u64;
        let mut worst = 0u64;
        for &id in &corpus {
            let (_, ops) = placer.place_counted(id)?;
            total += ops;
            worst = worst.max(ops);
        }
        mean_ops.push(total as f64 / lookups_per_point as f64);
        max_ops.push(worst);
        wall.push(if timing {
            let start = Instant::now();
            let mut sink = 0u64;
            for &id in &corpus {
                sink = sink.wrapping_add(placer.place(id)?.0);
            }
            std::hint::black_box(sink);
            Some(start.elapsed().as_nanos() as f64 / lookups_per_point as f64)
        } else {
            None
        });
    }
    let (shape, r2_linear, r2_log) = classify_growth(node_counts, &mean_ops);
    Ok(ScalingReport {
        algo,
        node_counts: node_counts.to_vec(),
        mean_ops,
        max_ops,
        mean_wall_ns: wall,
        vnodes,
        lookups: lookups_per_point,
        shape,
        r2_linear,
        r2_log,
    })
}

/// Serializes `rows` as CSV with a header row.
pub fn write_csv<W: io::Write, R: Serialize>(
    out: W,
    rows: impl IntoIterator<Item = R>,
) -> io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row).map_err(io::Error::other)?;
    }
    writer.flush()
}
