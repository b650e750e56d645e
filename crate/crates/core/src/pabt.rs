//! Perturbation-aware behavior tree: fallback/sequence/condition/action
//! nodes with memoryless tick semantics, locomotion subtrees keyed by
//! keyframe transitions, and the mid-step keyframe recalculation action.
//!
//! Each locomotion subtree encodes one transition (k^c, k^n):
//!
//! ```text
//! Sequence(
//!     Condition(desired current keyframe == k^c),
//!     Fallback(
//!         Condition(live CoM on the nominal manifold),
//!         Action(keyframe recalculation),
//!     ),
//!     Action(execute the walking step toward k^n),
//! )
//! ```
//!
//! Fresh subtrees are inserted in front of older ones under the root
//! fallback, so the newest plan shadows stale behaviors.

use crate::phase_space::{
    classify_cell, classify_lateral, lateral_foot_placement, lipm_flow, position_guard_recalc,
    time_of_flight, Keyframe, LatDir, PhaseState, PipmParams, PlacementCaps, RiemannianCell, Side,
};
use crate::traj_opt::FeasibilityTable;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TickStatus {
    Success,
    Failure,
    Running,
}

/// Condition leaves.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditionKind {
    /// The desired transition's current keyframe matches.
    DesiredCurrentIs(Keyframe),
    /// The live CoM state lies on the nominal manifold of the active plan.
    OnNominalManifold,
    /// Fixed-outcome leaf for diagnostics and tests.
    Always(bool),
}

/// Action leaves.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionKind {
    /// Recalculate the next keyframe from the live state (position guard).
    RiemannianRecalc,
    /// Commit to executing the active walking step.
    ExecuteOws,
    /// Fixed-outcome leaf for diagnostics and tests.
    Fixed(TickStatus),
}

/// Behavior-tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum BtNode {
    /// Returns the first non-failure child status.
    Fallback(Vec<BtNode>),
    /// Returns the first non-success child status.
    Sequence(Vec<BtNode>),
    Condition(ConditionKind),
    Action(ActionKind),
}

/// Live snapshot the simulator exposes to the tree each tick.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveState {
    pub com_sag: PhaseState,
    pub com_lat: PhaseState,
    pub stance: Side,
    pub foot_current: [f64; 2],
    pub foot_next: [f64; 2],
    /// 0 before the contact switch, 1 after.
    pub domain: usize,
    /// Time since the step began (s).
    pub time_in_ows: f64,
    pub t1: f64,
    pub t2: f64,
    /// Planned sagittal contact-switch position (kept under recalculation).
    pub switch_position: f64,
    /// Planned states at the next keyframe (world coordinates).
    pub sagittal_target: PhaseState,
    pub lateral_target: PhaseState,
    /// Planned orbital energies in the active domain, per axis.
    pub planned_e_sag: f64,
    pub planned_e_lat: f64,
    pub phase: f64,
}

/// Modified transition produced by the recalculation action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifiedTransition {
    /// Updated first-half duration (pre-switch recalculations only).
    pub new_t1: Option<f64>,
    /// Updated remaining duration after the switch.
    pub new_t2: f64,
    /// Updated lateral foot placement (pre-switch recalculations only).
    pub new_foot_next_y: Option<f64>,
    pub sagittal_target: PhaseState,
    pub lateral_target: PhaseState,
    pub next_sag: RiemannianCell,
    pub next_lat: RiemannianCell,
    pub next_dir: LatDir,
}

/// Shared data the tree reads and writes during a tick.
#[derive(Debug, Clone)]
pub struct Blackboard {
    /// Desired transition commanded by the decision maker.
    pub desired: (Keyframe, Keyframe),
    pub live: LiveState,
    /// Written by the recalculation action; the executor applies it.
    pub modified: Option<ModifiedTransition>,
    /// Set when the execute action committed this tick.
    pub execute: bool,
    /// Why the recalculation failed, when it did.
    pub recalc_failure: Option<String>,
    /// Leaves evaluated this tick, in order (instrumentation).
    pub evaluated: Vec<String>,
}

impl Blackboard {
    pub fn new(desired: (Keyframe, Keyframe), live: LiveState) -> Self {
        Self {
            desired,
            live,
            modified: None,
            execute: false,
            recalc_failure: None,
            evaluated: Vec::new(),
        }
    }
}

/// Context the leaves need: parameters, placement caps, robustness
/// thresholds, and the feasibility table for re-classification checks.
#[derive(Debug, Clone)]
pub struct PabtContext {
    pub params: PipmParams,
    pub caps: PlacementCaps,
    /// Normalized orbital-energy deviation accepted as on-manifold.
    pub manifold_tol: f64,
    pub table: Arc<FeasibilityTable>,
}

impl PabtContext {
    fn energy_scale(&self) -> f64 {
        let span = self.params.p_centers[2] - self.params.p_centers[0];
        let s = self.params.omega() * span;
        s * s
    }
}

/// Normalized deviation of the live state from the planned manifold: worst
/// per-axis orbital-energy deviation about the active foot, scaled by
/// (ω · position span)².
pub fn manifold_deviation(live: &LiveState, ctx: &PabtContext) -> f64 {
    let omega = ctx.params.omega();
    let foot = if live.domain == 0 {
        live.foot_current
    } else {
        live.foot_next
    };
    let e_sag = live.com_sag.orbital_energy(foot[0], omega);
    let e_lat = live.com_lat.orbital_energy(foot[1], omega);
    let dev = (e_sag - live.planned_e_sag)
        .abs()
        .max((e_lat - live.planned_e_lat).abs());
    dev / ctx.energy_scale()
}

/// Ticks a node against the blackboard. Memoryless: no state survives
/// between ticks besides the blackboard itself.
pub fn tick(node: &BtNode, bb: &mut Blackboard, ctx: &PabtContext) -> TickStatus {
    match node {
        BtNode::Fallback(children) => {
            for child in children {
                let s = tick(child, bb, ctx);
                if s != TickStatus::Failure {
                    return s;
                }
            }
            TickStatus::Failure
        }
        BtNode::Sequence(children) => {
            for child in children {
                let s = tick(child, bb, ctx);
                if s != TickStatus::Success {
                    return s;
                }
            }
            TickStatus::Success
        }
        BtNode::Condition(kind) => {
            let pass = match kind {
                ConditionKind::DesiredCurrentIs(k) => {
                    bb.evaluated.push(format!("cond:current={k}"));
                    bb.desired.0 == *k
                }
                ConditionKind::OnNominalManifold => {
                    bb.evaluated.push("cond:on-manifold".into());
                    manifold_deviation(&bb.live, ctx) <= ctx.manifold_tol
                }
                ConditionKind::Always(v) => {
                    bb.evaluated.push(format!("cond:always={v}"));
                    *v
                }
            };
            if pass {
                TickStatus::Success
            } else {
                TickStatus::Failure
            }
        }
        BtNode::Action(kind) => match kind {
            ActionKind::RiemannianRecalc => riemannian_recalc_action(bb, ctx),
            ActionKind::ExecuteOws => {
                bb.evaluated.push("act:execute".into());
                bb.execute = true;
                TickStatus::Success
            }
            ActionKind::Fixed(s) => {
                bb.evaluated.push(format!("act:fixed={s:?}"));
                *s
            }
        },
    }
}

/// Recalculates the next keyframe from the live (possibly disturbed) state,
/// keeping the committed foot placements. Pre-switch, the lateral placement
/// is re-planned with the velocity-nulling rule under the width caps;
/// post-switch the placement is down and only the flow remains. Returns
/// success iff the recalculated keyframe is inside the robustness bound:
/// positive sagittal orbital energy, velocities inside the modeled
/// partition, and a covered cell after re-classification.
pub fn riemannian_recalc_action(bb: &mut Blackboard, ctx: &PabtContext) -> TickStatus {
    bb.evaluated.push("act:recalc".into());
    match recalc_transition(&bb.live, ctx) {
        Ok(modified) => {
            bb.modified = Some(modified);
            TickStatus::Success
        }
        Err(reason) => {
            bb.recalc_failure = Some(reason);
            TickStatus::Failure
        }
    }
}

fn recalc_transition(live: &LiveState, ctx: &PabtContext) -> Result<ModifiedTransition, String> {
    let params = &ctx.params;
    let omega = params.omega();
    let f1 = live.foot_current;
    let f2 = live.foot_next;

    let (new_t1, new_t2, new_f2y, sag_target, lat_target) = if live.domain == 0 {
        // Keep the planned switch position under the current foot and
        // recompute the arrival state there from the disturbed energy.
        let x_sw = live.switch_position;
        let v_sw_sq = live.com_sag.orbital_energy(f1[0], omega)
            + omega * omega * (x_sw - f1[0]) * (x_sw - f1[0]);
        if v_sw_sq < 0.0 {
            return Err("switch position unreachable after disturbance".into());
        }
        let switch_state = PhaseState::new(x_sw, v_sw_sq.sqrt());
        let t_to_switch = time_of_flight(live.com_sag, switch_state, f1[0], omega)
            .ok_or("no forward path to the contact switch")?;
        if t_to_switch < 0.0 {
            return Err("contact switch behind the disturbed state".into());
        }
        // Apex over the committed next foot.
        let apex = position_guard_recalc(switch_state, f2[0], params)
            .map_err(|e| format!("no apex crossing: {e}"))?;
        let t2 = time_of_flight(switch_state, apex, f2[0], omega)
            .ok_or("no forward path from switch to apex")?;
        if t2 <= 0.0 {
            return Err("apex not ahead of the contact switch".into());
        }
        // Lateral: propagate to the new switch time, re-place, flow to apex.
        let lat_switch = lipm_flow(live.com_lat, f1[1], t_to_switch, params);
        let ideal = lateral_foot_placement(lat_switch, t2, params);
        let sigma = live.stance.lateral_sign();
        let width = (sigma * (ideal - f1[1]))
            .clamp(-ctx.caps.max_crossed_width, ctx.caps.max_step_width);
        let f2y = f1[1] + sigma * width;
        let lat_target = lipm_flow(lat_switch, f2y, t2, params);
        (
            Some(live.time_in_ows + t_to_switch),
            t2,
            Some(f2y),
            apex,
            lat_target,
        )
    } else {
        // Placement committed: recompute the apex over it and the remaining
        // time; the lateral state just flows.
        let apex = position_guard_recalc(live.com_sag, f2[0], params)
            .map_err(|e| format!("no apex crossing: {e}"))?;
        let t_rem = time_of_flight(live.com_sag, apex, f2[0], omega)
            .ok_or("no forward path to the apex")?;
        if t_rem < 0.0 {
            return Err("apex crossing already behind the disturbed state".into());
        }
        let lat_target = lipm_flow(live.com_lat, f2[1], t_rem, params);
        (None, t_rem, None, apex, lat_target)
    };

    // Robustness bound.
    let max_speed = params.max_speed();
    if sag_target.v.abs() > max_speed || lat_target.v.abs() > max_speed {
        return Err(format!(
            "recalculated apex velocity outside the modeled partition ({:.3}, {:.3})",
            sag_target.v, lat_target.v
        ));
    }
    let next_stance = live.stance.other();
    let f2y_final = new_f2y.unwrap_or(f2[1]);
    let next_sag = classify_cell(sag_target, f2[0], params)
        .map_err(|e| format!("recalculated keyframe unclassifiable: {e}"))?;
    let next_lat = classify_lateral(lat_target, f2y_final, next_stance, params)
        .map_err(|e| format!("recalculated keyframe unclassifiable: {e}"))?;
    let frame_vel = next_stance.lateral_sign() * lat_target.v;
    let next_dir = LatDir::of(frame_vel, next_lat.vel);
    if !ctx.table.covered(next_sag, next_lat, next_dir) {
        return Err(format!(
            "recalculated transition ({next_sag})s ({next_lat})l/{next_dir} not in the feasibility table"
        ));
    }
    Ok(ModifiedTransition {
        new_t1,
        new_t2,
        new_foot_next_y: new_f2y,
        sagittal_target: sag_target,
        lateral_target: lat_target,
        next_sag,
        next_lat,
        next_dir,
    })
}

/// One locomotion subtree: the transition pair plus the composed tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LocomotionSubtree {
    pub pre: Keyframe,
    pub post: Keyframe,
    pub root: BtNode,
}

#[derive(Debug, Error)]
#[error("transition {0} -> {1} is not certified by the feasibility table")]
pub struct InfeasibleTransition(pub Keyframe, pub Keyframe);

/// Builds the subtree for one certified keyframe transition.
pub fn make_locomotion_subtree(
    k_c: Keyframe,
    k_n: Keyframe,
    table: &FeasibilityTable,
) -> Result<LocomotionSubtree, InfeasibleTransition> {
    let certified = [LatDir::Toward, LatDir::Away].iter().any(|&dir| {
        table
            .feasible_from(k_c.sagittal, k_c.lateral, dir)
            .any(|r| r.sag_n == k_n.sagittal && r.lat_n == k_n.lateral)
    });
    if !certified {
        return Err(InfeasibleTransition(k_c, k_n));
    }
    let root = BtNode::Sequence(vec![
        BtNode::Condition(ConditionKind::DesiredCurrentIs(k_c)),
        BtNode::Fallback(vec![
            BtNode::Condition(ConditionKind::OnNominalManifold),
            BtNode::Action(ActionKind::RiemannianRecalc),
        ]),
        BtNode::Action(ActionKind::ExecuteOws),
    ]);
    Ok(LocomotionSubtree {
        pre: k_c,
        post: k_n,
        root,
    })
}

/// The perturbation-aware behavior tree: a root fallback over locomotion
/// subtrees, most recently inserted first.
#[derive(Debug, Clone)]
pub struct Pabt {
    pub ctx: PabtContext,
    subtrees: Vec<LocomotionSubtree>,
}

impl Pabt {
    pub fn new(ctx: PabtContext) -> Self {
        Self {
            ctx,
            subtrees: Vec::new(),
        }
    }

    pub fn subtree_count(&self) -> usize {
        self.subtrees.len()
    }

    pub fn subtrees(&self) -> &[LocomotionSubtree] {
        &self.subtrees
    }

    /// Inserts a subtree in front; duplicates of an existing transition pair
    /// refresh its position instead of growing the tree.
    pub fn insert_subtree(&mut self, sub: LocomotionSubtree) {
        self.subtrees
            .retain(|s| !(s.pre == sub.pre && s.post == sub.post));
        self.subtrees.insert(0, sub);
    }

    /// Ticks the root fallback.
    pub fn tick(&self, bb: &mut Blackboard) -> TickStatus {
        bb.evaluated.clear();
        bb.execute = false;
        bb.modified = None;
        for sub in &self.subtrees {
            let s = tick(&sub.root, bb, &self.ctx);
            if s != TickStatus::Failure {
                return s;
            }
        }
        TickStatus::Failure
    }
}

/// World interface the step-execution loop drives. The simulator implements
/// it; tests use lightweight mocks.
pub trait LocomotionWorld {
    /// True when the episode has nothing left to run.
    fn episode_over(&self) -> bool;
    /// True exactly at keyframe-instant ticks.
    fn at_keyframe_instant(&self) -> bool;
    /// Queries the decision maker, commits the next step plan, and returns
    /// the planned transitions for subtree insertion.
    fn plan_keyframe_transitions(&mut self) -> Result<Vec<(Keyframe, Keyframe)>, String>;
    /// Builds the blackboard snapshot for this tick.
    fn blackboard(&mut self) -> Blackboard;
    /// Applies tick outputs and advances one control period.
    fn apply_and_advance(&mut self, bb: &Blackboard, status: TickStatus);
    /// Records a failure cause discovered by the loop.
    fn record_failure(&mut self, cause: String);
}

/// Outcome of the step-execution loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub status: TickStatus,
    pub failure: Option<String>,
}

/// Keyframe decision making and tree execution: while the tree reports
/// success, estimate the state, replan at keyframe instants (inserting fresh
/// subtrees), tick the tree, and let the world advance.
pub fn run_ows_loop<W: LocomotionWorld>(pabt: &mut Pabt, world: &mut W) -> LoopOutcome {
    let mut status = TickStatus::Success;
    let mut failure = None;
    while status == TickStatus::Success && !world.episode_over() {
        if world.at_keyframe_instant() {
            match world.plan_keyframe_transitions() {
                Ok(pairs) => {
                    // Front insertion reverses; iterate backward so the
                    // fresh plan's subtrees tick in plan order.
                    for (k_c, k_n) in pairs.into_iter().rev() {
                        match make_locomotion_subtree(k_c, k_n, &pabt.ctx.table) {
                            Ok(sub) => pabt.insert_subtree(sub),
                            Err(e) => {
                                failure = Some(e.to_string());
                                status = TickStatus::Failure;
                            }
                        }
                    }
                }
                Err(cause) => {
                    world.record_failure(cause.clone());
                    failure = Some(cause);
                    status = TickStatus::Failure;
                }
            }
            if status == TickStatus::Failure || world.episode_over() {
                break;
            }
        }
        let mut bb = world.blackboard();
        status = pabt.tick(&mut bb);
        if status == TickStatus::Failure {
            let cause = bb
                .recalc_failure
                .clone()
                .unwrap_or_else(|| "no subtree accepted the desired transition".to_string());
            world.record_failure(cause.clone());
            failure = Some(cause);
        }
        world.apply_and_advance(&bb, status);
    }
    LoopOutcome { status, failure }
}
