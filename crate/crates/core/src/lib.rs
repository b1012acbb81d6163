//! Long-horizon Q-learning (LQL) next to 1-step and n-step TD on finite,
//! exactly solvable MDPs.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom fix `f64`.

pub mod agents;
pub mod error;
pub mod hinge;
pub mod losses;
pub mod mdp;
pub mod oracle;
pub mod qfunc;
pub mod replay;
mod scalar;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mdp = mdp::FiniteMdp<f64>;
pub type Transition = mdp::Transition<f64>;
pub type Behavior = mdp::BehaviorPolicy<f64>;
pub type Q = qfunc::QFunction<f64>;
pub type Pair = qfunc::TargetPair<f64>;
pub type Buffer = replay::ReplayBuffer<f64>;
pub type Batch = replay::TrajectoryBatch<f64>;
pub type Oracle = oracle::QStar<f64>;
pub type Breakdown = losses::LossBreakdown<f64>;
pub type Run = agents::TrainRun<f64>;
