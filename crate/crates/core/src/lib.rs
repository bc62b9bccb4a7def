//! Multi-hypothesis belief-space planning with refinable entropy-cost bounds.
//!
//! An agent localizing among perceptually identical landmarks maintains a
//! Gaussian-mixture belief over its pose, one component per data-association
//! hypothesis. Planning over such beliefs is expensive because the number of
//! components multiplies with every ambiguous observation along the horizon.
//! This crate plans over a belief-tree *skeleton* (sampled states and
//! observations, no posterior inference) and scores candidate action sequences
//! with lower/upper bounds on the mixture-weight entropy cost. The bounds are
//! computed from a small subset of components and tighten as components are
//! added, so an optimal action can often be certified long before the full
//! posterior is ever materialized. When hypothesis budgets cap either
//! inference or planning, the same machinery yields a provable bound on the
//! loss in solution quality.
//!
//! Modules mirror the pipeline: [`models`] (kinematics and range sensing),
//! [`env`] (benchmark worlds and ground-truth simulation), [`belief`]
//! (mixture beliefs and budgeted filtering), [`tree`] (skeleton and explicit
//! belief trees), [`bounds`] (entropy cost bounds), [`planner`] (bound-based
//! action selection and the four budget regimes), and [`harness`] (experiment
//! configuration, CSV output, closed-loop runs).
//!
//! All numerical code is generic over the scalar type via [`Real`]; the
//! crate root exports `f64` aliases which the CLI and harness use.

// `!(x > 0)` guards deliberately treat NaN as zero mass; the suggested
// `x <= 0` rewrite would let NaN pass as positive.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::RealField;
use num_traits::{Float, FromPrimitive};
use rand::distributions::uniform::SampleUniform;
use rand::Rng;
use rand_distr::StandardNormal;

pub mod belief;
pub mod bounds;
pub mod env;
pub mod harness;
pub mod models;
pub mod planner;
pub mod tree;

/// Scalar type for all core math: `f32` or `f64`.
pub trait Real: RealField + Float + FromPrimitive + SampleUniform {
    /// Draws from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

/// Converts an `f64` constant to the working scalar type.
pub(crate) fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 constant converts to scalar")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("belief contradicts observation: every hypothesis has zero weight")]
    Contradiction,
    #[error("numerical degeneracy: {0}")]
    Degenerate(&'static str),
    #[error("simplified subset has zero probability mass")]
    ZeroMassSubset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("instance exceeds enumeration cap: {actual} > {cap}")]
    CapExceeded { actual: usize, cap: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Derives a decorrelated child seed from a base seed and a salt.
///
/// Counter-based splitting (SplitMix64 finalizer) so concurrent or reordered
/// consumers of substreams see identical draws.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// f64 instantiations used by the CLI, the harness, and most downstream code.
pub type Pose2 = models::Pose2<f64>;
pub type Action = models::Action<f64>;
pub type Measurement = models::Measurement<f64>;
pub type MotionModel = models::MotionModel<f64>;
pub type ObservationModel = models::ObservationModel<f64>;
pub type Landmark = env::Landmark<f64>;
pub type World = env::World<f64>;
pub type Hypothesis = belief::Hypothesis<f64>;
pub type MixtureBelief = belief::MixtureBelief<f64>;
pub type SimplifiedBelief = belief::SimplifiedBelief<f64>;
pub type BoundInterval = bounds::BoundInterval<f64>;
pub type TreeShape = tree::TreeShape<f64>;
pub type Skeleton = tree::Skeleton<f64>;
pub type ExplicitTree = tree::ExplicitTree<f64>;
pub type PlanReport = planner::PlanReport<f64>;
