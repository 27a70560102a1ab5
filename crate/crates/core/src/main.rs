use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use asura::asura::lookup_k;
use asura::harness::{
    self, Algo, ChurnEvent, ChurnScenario, ScalingRow, UniformityRow,
};
use asura::{ClusterMap, NodeId, NodeSpec};

#[derive(Parser)]
#[command(name = "asura", version, about = "Data placement experiments and lookups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print `segment node` for each replica of a datum in a map file.
    Lookup {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        id: u64,
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Max variability over equal nodes.
    #[command(after_help = "CSV columns: algo,nodes,vnodes,data_per_node,trial,max_variability_percent")]
    Uniformity(Common),
    /// Data movement per churn event, starting from `--nodes` unit nodes with ids 0..N.
    #[command(after_help = "CSV columns: algo,step,event,node,moved_count,total_count,moved_fraction,\
misdirected_count,metadata_false_negatives,metadata_flagged\n\
Exits with status 2 if any move is misdirected or missed by the churn metadata.")]
    Churn {
        #[command(flatten)]
        common: Common,
        /// Comma-separated `add:ID:CAPACITY` or `remove:ID`. Defaults to adding node N then removing node 0.
        #[arg(long, value_delimiter = ',')]
        events: Vec<String>,
        /// Number of synthetic datum ids.
        #[arg(long, default_value_t = 100_000)]
        ids: u64,
    },
    /// Measured ASURA draws per lookup against the analytic expectation.
    #[command(after_help = "CSV columns: node_count,hole_count,n,h,ids,measured_mean_draws,predicted,relative_error\n\
--algo, --vnodes, --data-per-node and --trials are ignored.")]
    Draws {
        #[command(flatten)]
        common: Common,
        /// Comma-separated fractions of segments removed, each in [0, 0.9].
        #[arg(long, value_delimiter = ',', default_value = "0")]
        hole_fraction: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        ids: u64,
    },
    /// Per-lookup cost against node count.
    #[command(after_help = "CSV columns: algo,nodes,vnodes,lookups,mean_ops,max_ops,mean_wall_ns\n\
ops are raw draws (asura), binary-search probes (ring) or straw comparisons (straw).")]
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        lookups: u64,
        /// Leave mean_wall_ns empty so output is reproducible.
        #[arg(long)]
        no_timing: bool,
    },
    /// String keys written to in-process stores.
    #[command(after_help = "CSV columns: algo,nodes,vnodes,data_per_node,trial,max_variability_percent")]
    Shardsim {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1_000_000)]
        keys: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Comma-separated subset of asura, ring, straw.
    #[arg(long, value_delimiter = ',', default_value = "asura,ring,straw")]
    algo: Vec<Algo>,
    /// Comma-separated node counts.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    nodes: Vec<usize>,
    /// Virtual nodes per physical node on the ring.
    #[arg(long, default_value_t = 100)]
    vnodes: u32,
    #[arg(long, default_value_t = 1_000)]
    data_per_node: u64,
    /// Defaults to 20 (uniformity) or 1 (shardsim).
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Argument(anyhow::Error),
    Invariant(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Argument(e)
    }
}

impl From<asura::Error> for Failure {
    fn from(e: asura::Error) -> Self {
        Failure::Argument(e.into())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Argument(e.into())
    }
}

fn output(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_event(text: &str) -> anyhow::Result<ChurnEvent> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["add", id, cap] => Ok(ChurnEvent::Add(NodeSpec::new(
            id.parse::<u64>().with_context(|| format!("bad node id in `{text}`"))?,
            cap.parse::<f64>().with_context(|| format!("bad capacity in `{text}`"))?,
        ))),
        ["remove", id] => Ok(ChurnEvent::Remove(NodeId(
            id.parse().with_context(|| format!("bad node id in `{text}`"))?,
        ))),
        _ => bail!("event `{text}` is not add:ID:CAPACITY or remove:ID"),
    }
}

fn read_map(path: &Path) -> anyhow::Result<ClusterMap> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ClusterMap::parse_map_file(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Lookup { map, id, k } => {
            let map = read_map(&map)?;
            let placement = lookup_k(&map, id, k)?;
            let mut out = io::stdout().lock();
            for (segment, node) in &placement.selections {
                writeln!(out, "{segment} {node}")?;
            }
        }
        Command::Uniformity(c) => {
            let trials = c.trials.unwrap_or(20);
            let mut rows: Vec<UniformityRow> = Vec::new();
            for &algo in &c.algo {
                for &nodes in &c.nodes {
                    let report =
                        harness::run_uniformity(algo, nodes, c.vnodes, c.data_per_node, trials, c.seed)?;
                    rows.extend(report.rows());
                }
            }
            harness::write_csv(output(&c.out)?, rows)?;
        }
        Command::Shardsim { common: c, keys } => {
            let trials = c.trials.unwrap_or(1);
            let mut rows: Vec<UniformityRow> = Vec::new();
            for &algo in &c.algo {
                for &nodes in &c.nodes {
                    let report = harness::run_shard_sim(algo, nodes, keys, c.vnodes, trials, c.seed)?;
                    rows.extend(report.rows());
                }
            }
            harness::write_csv(output(&c.out)?, rows)?;
        }
        Command::Churn { common: c, events, ids } => {
            let [nodes] = c.nodes[..] else {
                return Err(anyhow::anyhow!("churn takes a single --nodes count").into());
            };
            let events: Vec<ChurnEvent> = if events.is_empty() {
                vec![
                    ChurnEvent::Add(NodeSpec::new(nodes as u64, 1.0)),
                    ChurnEvent::Remove(NodeId(0)),
                ]
            } else {
                events.iter().map(|e| parse_event(e)).collect::<anyhow::Result<_>>()?
            };
            let scenario = ChurnScenario {
                unit: 1.0,
                initial: (0..nodes as u64).map(|i| NodeSpec::new(i, 1.0)).collect(),
                events,
                vnodes: c.vnodes,
            };
            let mut rows = Vec::new();
            for &algo in &c.algo {
                rows.extend(harness::run_churn(algo, &scenario, ids, c.seed)?);
            }
            harness::write_csv(output(&c.out)?, &rows)?;
            if let Some(bad) = rows
                .iter()
                .find(|r| r.misdirected_count > 0 || r.metadata_false_negatives > 0)
            {
                return Err(Failure::Invariant(format!(
                    "{} step {}: {} misdirected moves, {} metadata false negatives",
                    bad.algo, bad.step, bad.misdirected_count, bad.metadata_false_negatives
                )));
            }
        }
        Command::Draws { common: c, hole_fraction, ids } => {
            let mut rows = Vec::new();
            for &nodes in &c.nodes {
                for &h in &hole_fraction {
                    rows.push(harness::run_draw_count(nodes, h, ids, c.seed)?);
                }
            }
            harness::write_csv(output(&c.out)?, &rows)?;
            if let Some(bad) = rows.iter().find(|r| r.measured_mean_draws < 1.0) {
                return Err(Failure::Invariant(format!(
                    "mean draws {} below 1 at {} nodes",
                    bad.measured_mean_draws, bad.node_count
                )));
            }
        }
        Command::Scaling { common: c, lookups, no_timing } => {
            let mut rows: Vec<ScalingRow> = Vec::new();
            for &algo in &c.algo {
                let report =
                    harness::run_scaling(algo, &c.nodes, c.vnodes, lookups, c.seed, !no_timing)?;
                eprintln!(
                    "{algo}: {:?} (R2 linear {:.4}, log {:.4})",
                    report.shape, report.r2_linear, report.r2_log
                );
                rows.extend(report.rows());
            }
            harness::write_csv(output(&c.out)?, rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Argument(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant violated: {msg}");
            ExitCode::from(2)
        }
    }
}
