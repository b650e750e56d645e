//! Collision-aware kinodynamic verification of keyframe transitions on the
//! reduced model, and the feasibility table it produces for the task planner.

mod collocation;
mod solver;
mod table;

pub use collocation::{
    build_nlp, collision_distances, min_pair_distance, AuditReport, CollocationProblem, Group,
    NodeGeometry, ReducedModelConfig, TrajOptError,
};
pub use solver::{solve, SmoothProblem, SolveResult, SolveStatus, SolverOptions};
pub use table::{
    build_feasibility_table, check_transition, concretize, content_digest, enumerate_candidates,
    plan_candidate, Family, FeasibilityRecord, FeasibilityTable, PlannedCandidate, TableError,
    TableMeta, TransitionCandidate, Verdict,
};
