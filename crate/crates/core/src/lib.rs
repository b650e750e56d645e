//! Push-recovery planning stack for bipedal walking on a reduced-order
//! inverted-pendulum model.
//!
//! The stack is organized as a pipeline:
//!
//! 1. [`phase_space`] — closed-form pendulum math: flow, step timing,
//!    lateral foot placement, apex recalculation, and the Riemannian
//!    cell partition that step-to-step decisions operate on.
//! 2. [`traj_opt`] — Hermite–Simpson collocation of one walking step on a
//!    point-mass + massless-leg model, with leg self-collision constraints;
//!    produces the feasibility table of verified keyframe transitions.
//! 3. [`synthesis`] — a two-player safety game between the walker and an
//!    adversarial perturbation; solves for a winning keyframe policy over
//!    the feasibility table.
//! 4. [`pabt`] — perturbation-aware behavior tree that executes planned
//!    transitions and recalculates keyframes when pushes land mid-step.
//! 5. [`simulator`] — closed-loop episode engine and sweep drivers that
//!    measure recovery performance.
//!
//! [`config`] owns the stack-wide configuration file format and its
//! canonical hash, which ties the pipeline artifacts together.

pub mod config;
pub mod pabt;
pub mod phase_space;
pub mod simulator;
pub mod synthesis;
pub mod traj_opt;
pub mod util;

pub use config::StackConfig;
pub use phase_space::{
    Keyframe, OwsTiming, PhaseState, PipmParams, RiemannianCell, Side, SizeClass,
};
pub use simulator::{EpisodeResult, PerturbationEvent, SimConfig};
pub use synthesis::{GameStructure, Strategy, SystemAction};
pub use traj_opt::{FeasibilityTable, ReducedModelConfig};
