//! Policy-guided, chance-constrained MPPI for decentralized multi-robot navigation.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`); the simulator,
//! scenarios and baselines work in `f64`. Concrete aliases for both widths live at the
//! crate root.

pub mod dynamics;
pub mod error;
pub mod mppi;
pub mod normal;
pub mod orca;
pub mod orca_dd;
pub mod planner;
pub mod policy;
pub mod projection;
pub mod rng;
pub mod scalar;
pub mod scenarios;
pub mod sim;
pub mod simplex;
pub mod vec2;

pub use error::{Error, Result};
pub use scalar::Real;

pub type AgentStateF64 = dynamics::AgentState<f64>;
pub type AgentStateF32 = dynamics::AgentState<f32>;
pub type ControlInputF64 = dynamics::ControlInput<f64>;
pub type ControlInputF32 = dynamics::ControlInput<f32>;
pub type ControlBoundsF64 = dynamics::ControlBounds<f64>;
pub type ControlBoundsF32 = dynamics::ControlBounds<f32>;
pub type NoiseModelF64 = dynamics::NoiseModel<f64>;
pub type NoiseModelF32 = dynamics::NoiseModel<f32>;
pub type HalfPlaneConstraintF64 = orca::HalfPlaneConstraint<f64>;
pub type HalfPlaneConstraintF32 = orca::HalfPlaneConstraint<f32>;
pub type GaussianControlF64 = projection::GaussianControl<f64>;
pub type GaussianControlF32 = projection::GaussianControl<f32>;
pub type ControlSequenceF64 = mppi::ControlSequence<f64>;
pub type ControlSequenceF32 = mppi::ControlSequence<f32>;
pub type PlannerConfigF64 = planner::PlannerConfig<f64>;
pub type PlannerConfigF32 = planner::PlannerConfig<f32>;
pub type PlannerF64 = planner::Planner<f64>;
pub type PlannerF32 = planner::Planner<f32>;
pub type Vec2F64 = vec2::Vec2<f64>;
pub type Vec2F32 = vec2::Vec2<f32>;
