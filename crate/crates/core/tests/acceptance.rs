//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use asura::asura::{churn_metadata, lookup, lookup_k_with, lookup_with, ScriptedNumbers};
use asura::baselines::select_max_straw;
use asura::cluster_map::memory_account;
use asura::harness::{
    self, run_churn, run_draw_count, run_scaling, run_uniformity, synthetic_id, Algo, ChurnEvent,
    ChurnScenario, GrowthShape,
};
use asura::prng::{seed_from, Generator, Seed};
use asura::{ClusterMap, MemoryModel, NodeId, NodeSpec, Segment};

const A: NodeId = NodeId(0xA);
const B: NodeId = NodeId(0xB);
const C: NodeId = NodeId(0xC);
const D: NodeId = NodeId(0xD);
const E: NodeId = NodeId(0xE);

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn seg(number: u64, length: f64, owner: NodeId) -> Segment {
    Segment {
        number,
        length,
        owner,
    }
}

fn three_node_map() -> ClusterMap {
    ClusterMap::from_parts(
        1.0,
        &[NodeSpec::new(A, 1.5), NodeSpec::new(B, 0.7), NodeSpec::new(C, 1.0)],
        &[seg(0, 1.0, A), seg(1, 1.0, C), seg(2, 0.5, A), seg(3, 0.7, B)],
    )
    .unwrap()
}

fn random_scenario(g: &mut Generator) -> ChurnScenario {
    let capacity = |g: &mut Generator| (1 + g.next_integer() % 12) as f64 * 0.25;
    let nodes = 5 + g.next_integer() % 196;
    let initial: Vec<NodeSpec> = (0..nodes).map(|i| NodeSpec::new(i, capacity(g))).collect();
    let mut alive: Vec<NodeId> = initial.iter().map(|s| s.id).collect();
    let mut next = nodes;
    let mut events = Vec::new();
    for _ in 0..4 {
        if alive.len() > 1 && g.next_integer().is_multiple_of(2) {
            let victim = alive.swap_remove((g.next_integer() % alive.len() as u64) as usize);
            events.push(ChurnEvent::Remove(victim));
        } else {
            events.push(ChurnEvent::Add(NodeSpec::new(next, capacity(g))));
            alive.push(NodeId(next));
            next += 1;
        }
    }
    ChurnScenario {
        unit: 1.0,
        initial,
        events,
        vnodes: 100,
    }
}

fn movement_optimality() -> Outcome {
    let start = Instant::now();
    let mut g = Generator::new(Seed(2024));
    let mut misdirected = [0u64; 3];
    let mut false_negatives = 0;
    let scenarios = 20;
    for s in 0..scenarios {
        let scenario = random_scenario(&mut g);
        for (i, algo) in Algo::ALL.into_iter().enumerate() {
            for r in run_churn(algo, &scenario, 100_000, s).unwrap() {
                misdirected[i] += r.misdirected_count;
                false_negatives += r.metadata_false_negatives;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        misdirected == [0; 3] && false_negatives == 0 && elapsed < Duration::from_secs(120),
        format!(
            "{scenarios} scenarios x 4 events x 1e5 ids: misdirected asura/ring/straw = {:?}, \
             metadata false negatives = {false_negatives}, {:.1}s (limit 120s)",
            misdirected,
            elapsed.as_secs_f64()
        ),
    )
}

fn capacity_weighting() -> Outcome {
    let start = Instant::now();
    let map = three_node_map();
    let total = 1_000_000u64;
    let mut counts = [0u64; 3];
    for i in 0..total {
        let (_, node) = lookup(&map, synthetic_id(0xCAFE, i)).unwrap();
        counts[[A, B, C].iter().position(|&n| n == node).unwrap()] += 1;
    }
    let mut worst: f64 = 0.0;
    for (i, cap) in [1.5, 0.7, 1.0].into_iter().enumerate() {
        let p = cap / 3.2;
        let sigma = (total as f64 * p * (1.0 - p)).sqrt();
        worst = worst.max((counts[i] as f64 - p * total as f64).abs() / sigma);
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 5.0 && elapsed < Duration::from_secs(10),
        format!(
            "counts A/B/C = {counts:?} of 1e6, worst deviation {worst:.2} sigma (limit 5), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn uniformity() -> Outcome {
    let seed = 11;
    let [asura, ring, straw] =
        Algo::ALL.map(|algo| run_uniformity(algo, 100, 100, 100_000, 20, seed).unwrap());
    let ordered = (0..20)
        .filter(|&t| {
            asura.per_trial[t] < ring.per_trial[t] && straw.per_trial[t] < ring.per_trial[t]
        })
        .count();
    outcome(
        asura.median < 1.5 && straw.median < 1.5 && ring.median > 5.0 && ordered >= 18,
        format!(
            "100 nodes x 1e5/node x 20 trials: median asura {:.3}% straw {:.3}% (limit 1.5), \
             ring V=100 {:.2}% (> 5), ordering held in {ordered}/20 (>= 18)",
            asura.median, straw.median, ring.median
        ),
    )
}

fn uniformity_long() -> Outcome {
    let report = run_uniformity(Algo::Asura, 100, 1, 1_000_000, 1, 12).unwrap();
    outcome(
        report.max_variability_percent < 0.6,
        format!(
            "100 nodes x 1e6/node, one trial: asura {:.3}% (limit 0.6)",
            report.max_variability_percent
        ),
    )
}

fn draw_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_at = (0, 0.0);
    for n in [10, 100, 1000, 10_000] {
        for h in [0.0, 0.1, 0.25] {
            let r = run_draw_count(n, h, 100_000, 31).unwrap();
            if r.relative_error > worst {
                worst = r.relative_error;
                worst_at = (n, h);
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 0.05 && elapsed < Duration::from_secs(60),
        format!(
            "12-point grid, 1e5 ids each: worst relative error {:.3}% at n={} h/n={} (limit 5%), {:.1}s",
            worst * 100.0,
            worst_at.0,
            worst_at.1,
            elapsed.as_secs_f64()
        ),
    )
}

fn scaling_shape() -> Outcome {
    let counts = [10, 100, 1000, 10_000];
    let straw = run_scaling(Algo::Straw, &counts, 1, 10_000, 41, false).unwrap();
    let ring = run_scaling(Algo::Ring, &counts, 100, 100_000, 41, true).unwrap();
    let asura = run_scaling(Algo::Asura, &[100, 100_000], 1, 100_000, 41, true).unwrap();
    let ring_bounded = counts.iter().zip(&ring.max_ops).all(|(&n, &probes)| {
        probes <= ((n * 100) as f64).log2().ceil() as u64 + 1
    });
    let ring_monotone = ring.mean_ops.windows(2).all(|w| w[0] < w[1]);
    let ratio = asura.mean_ops[1] / asura.mean_ops[0];
    let wall = ring
        .mean_wall_ns
        .iter()
        .chain(&asura.mean_wall_ns)
        .map(|w| w.unwrap())
        .fold(0.0, f64::max);
    outcome(
        straw.r2_linear > 0.99
            && straw.shape == GrowthShape::Linear
            && ring_bounded
            && ring_monotone
            && ring.shape == GrowthShape::Logarithmic
            && ratio < 1.25
            && wall < 10_000.0,
        format!(
            "straw R2 linear {:.5} ({:?}); ring probes {:?} bounded={ring_bounded} ({:?}); \
             asura draws {:.3} -> {:.3}, ratio {ratio:.3} (limit 1.25); slowest asura/ring lookup {:.0} ns",
            straw.r2_linear,
            straw.shape,
            ring.mean_ops.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>(),
            ring.shape,
            asura.mean_ops[0],
            asura.mean_ops[1],
            wall
        ),
    )
}

fn memory_accounting() -> Outcome {
    let ring = memory_account(10_000, MemoryModel::ConsistentHashing { vnodes: 100 });
    let asura = memory_account(10_000, MemoryModel::Asura);
    outcome(
        ring == 8_000_000 && asura == 80_000,
        format!("N=1e4: ring V=100 {ring} bytes (want 8000000), asura {asura} bytes (want 80000)"),
    )
}

fn worked_examples() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let map = three_node_map();
    check("lookup 4.2,1.1", lookup_with(&map, [4.2, 1.1]) == Ok((1, C)));
    check("lookup 3.3,0.6", lookup_with(&map, [3.3, 0.6]) == Ok((3, B)));
    let added = map.add_node(NodeSpec::new(D, 1.0)).unwrap();
    check("add D", lookup_with(&added, [4.2, 1.1]) == Ok((4, D)));
    check("add D keeps B", lookup_with(&added, [3.3, 0.6]) == Ok((3, B)));
    let removed = map.remove_node(B).unwrap();
    check("remove B", lookup_with(&removed, [3.3, 0.6]) == Ok((0, A)));
    check("remove B keeps C", lookup_with(&removed, [4.2, 1.1]) == Ok((1, C)));

    let replicas = ClusterMap::from_parts(
        1.0,
        &[NodeSpec::new(C, 0.8), NodeSpec::new(D, 1.0), NodeSpec::new(E, 0.5)],
        &[seg(3, 0.8, C), seg(4, 1.0, D), seg(5, 0.5, E)],
    )
    .unwrap();
    let hole_seq = [6.2, 3.3, 1.6, 5.1, 4.9, 8.0, 7.2];
    check(
        "three replicas",
        lookup_k_with(&replicas, 3, hole_seq).map(|p| p.selections) == Ok(vec![(3, C), (5, E), (4, D)]),
    );
    let meta = churn_metadata(&replicas, 3, &ScriptedNumbers::new(hole_seq)).unwrap();
    check("addition number 1", meta.addition_number == 1);
    check("remove numbers 3,5,4", meta.remove_numbers == [3, 5, 4]);
    let extended = ScriptedNumbers::new([3.6, 5.4, 4.9, 6.2, 2.1, 1.9, 7.5])
        .with_widened([3.6, 5.4, 12.2, 4.9, 6.2, 13.4, 2.1]);
    let meta = churn_metadata(&replicas, 3, &extended).unwrap();
    check("addition number 12", meta.addition_number == 12);

    let row = |v: [u64; 4]| [A, B, C, D].into_iter().zip(v).collect::<Vec<_>>();
    check("straw row A", select_max_straw(row([1, 5, 123, 23])) == Some(C));
    check("straw row F", select_max_straw(row([121, 127, 112, 111])) == Some(B));
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "12 lookup, replica, metadata and straw examples match exactly".to_string()
        } else {
            format!("mismatched: {}", failures.join(", "))
        },
    )
}

fn csv_bytes(seed: u64) -> Vec<u8> {
    let mut out = Vec::new();
    for algo in Algo::ALL {
        let report = run_uniformity(algo, 50, 20, 2_000, 3, seed).unwrap();
        harness::write_csv(&mut out, report.rows()).unwrap();
    }
    let scenario = random_scenario(&mut Generator::new(Seed(seed)));
    for algo in Algo::ALL {
        harness::write_csv(&mut out, run_churn(algo, &scenario, 10_000, seed).unwrap()).unwrap();
    }
    let draws = [run_draw_count(1000, 0.25, 10_000, seed).unwrap()];
    harness::write_csv(&mut out, &draws).unwrap();
    let scaling = run_scaling(Algo::Ring, &[10, 100], 10, 1_000, seed, false).unwrap();
    harness::write_csv(&mut out, scaling.rows()).unwrap();
    let shards = harness::run_shard_sim(Algo::Straw, 10, 5_000, 10, 1, seed).unwrap();
    harness::write_csv(&mut out, shards.rows()).unwrap();
    out
}

fn determinism() -> Outcome {
    let first = csv_bytes(5);
    let second = csv_bytes(5);
    let other = csv_bytes(6);
    let golden = include_str!("data/prng_golden.txt");
    let mut vectors = 0;
    let mut golden_ok = true;
    let mut g = Generator::new(Seed(0));
    for line in golden.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let hex = |s: &str| u64::from_str_radix(s, 16).unwrap();
        match f.first() {
            Some(&"#") | None => {}
            Some(&"seed") => g = Generator::new(Seed(hex(f[1]))),
            Some(&"seed_from") => {
                golden_ok &= seed_from(hex(f[1]), hex(f[2])).0 == hex(f[3]);
                vectors += 1;
            }
            Some(_) => {
                for want in &f {
                    golden_ok &= g.next_integer() == hex(want);
                    vectors += 1;
                }
            }
        }
    }
    outcome(
        first == second && first != other && golden_ok && vectors == 516,
        format!(
            "{} CSV bytes identical across reruns: {}, differ under another seed: {}; \
             {vectors} golden PRNG vectors match: {golden_ok}",
            first.len(),
            first == second,
            first != other
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 movement optimality", movement_optimality),
        ("2 capacity weighting", capacity_weighting),
        ("3 uniformity", uniformity),
        ("3 uniformity (long mode)", uniformity_long),
        ("4 expected draw count", draw_oracle),
        ("5 scaling shape", scaling_shape),
        ("6 memory accounting", memory_accounting),
        ("7 worked examples", worked_examples),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let result = run();
        if !result.pass {
            failed += 1;
        }
        println!("{} criterion {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
