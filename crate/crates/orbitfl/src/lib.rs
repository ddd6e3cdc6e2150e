//! Deterministic simulator and scheduling library for federated learning
//! across a low-Earth-orbit satellite constellation and a set of ground
//! stations acting as one logical server.
//!
//! The crate is organized around the lifecycle of an experiment:
//!
//! * [`orbits`] propagates circular two-body orbits, rotates ground stations,
//!   and derives time-indexed connectivity sets from an elevation-angle
//!   visibility test. Contact traces round-trip through a small CSV format.
//! * [`learntask`] provides a synthetic multiclass classification task with
//!   IID and visit-proportional non-IID partitioning.
//! * [`flcore`] holds the model/gradient types, satellite-side local SGD, the
//!   staleness-compensated server aggregation rule, and the per-time-index
//!   server step.
//! * [`schedulers`] implements the aggregation policies: synchronous,
//!   asynchronous, buffered (FedBuff), and the forecast-driven FedSpace
//!   scheduler (staleness forecasting, a learned utility regressor, and
//!   random search over schedule vectors).
//! * [`sim`] drives full experiments over a trace and records metrics.
//!
//! With the default `parallel` feature the data-parallel inner loops
//! (connectivity sampling, search trials, forest fitting, sweeps) run on
//! rayon; disabling it falls back to sequential loops with identical results.

pub mod error;
mod exec;
pub mod flcore;
pub mod learntask;
pub mod orbits;
pub mod schedulers;
pub mod sim;

pub use error::{Error, Result};

/// Satellite identifier: index into the constellation, `0..K`.
pub type SatId = u32;

/// Derives an independent RNG seed from a master seed and a stream id.
///
/// Mixing is splitmix64, so distinct streams give statistically independent
/// sequences; the same (master, stream) pair always yields the same seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
