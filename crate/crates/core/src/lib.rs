//! ASURA data placement with cascaded range-extensible random numbers, plus
//! consistent-hashing and straw baselines and an experiment harness.
//!
//! ```
//! use asura::{asura::lookup, ClusterMap, NodeSpec};
//!
//! let map = ClusterMap::from_specs(1.0, [NodeSpec::new(1, 1.5), NodeSpec::new(2, 0.7)]).unwrap();
//! let (segment, node) = lookup(&map, 42).unwrap();
//! assert_eq!(map.segment(segment).unwrap().owner, node);
//! ```

pub mod asura;
pub mod baselines;
pub mod cluster_map;
pub mod error;
pub mod harness;
pub mod prng;

pub use cluster_map::{ClusterMap, MemoryModel, NodeId, NodeSpec, Segment};
pub use error::{Error, Result};
pub use prng::{seed_from, Generator, Seed};
