//! Fairness metric computation: group, individual, intersectional, distance
//! based and procedural measures, plus built-in learners and an experiment
//! harness for studying how the measures behave and what they cost.

pub mod data;
pub mod error;
pub mod experiments;
pub mod group;
pub mod hfm;
pub mod individual;
pub mod intersectional;
pub mod learners;
pub mod pipeline;
pub mod predictions;
pub mod procedural;
pub mod report;

pub use data::{Dataset, GroupPartition, SensitiveAttributeSpec};
pub use error::{FairError, Result};
pub use group::{Form, MetricResult, ProbeKind};
pub use predictions::PredictionSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for `seed`; `stream` separates independent consumers of
/// the same seed.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
