//! Closed-loop episode engine: propagates the reduced-order walker along
//! planned steps with the exact pendulum flow, injects velocity-jump
//! perturbations at arbitrary phase and direction, runs the keyframe
//! decision loop against the synthesized strategy and the behavior tree, and
//! scores recovery. Sweep drivers run batches of episodes over direction ×
//! magnitude × phase grids.
//!
//! Phase convention: each step runs keyframe-to-keyframe with the contact
//! switch at phase 0.5; phase is normalized per half against the solved
//! half durations (t1, t2), so keyframes land exactly on phase 0/1 ticks and
//! the switch exactly on a phase-0.5 tick.

use crate::config::StackConfig;
use crate::phase_space::{
    is_steady_state, lipm_flow, periodic_sway, plan_transition, solve_ows_timing, BodyState,
    Keyframe, LatDir, PhaseState, PipmParams, Side, SizeClass,
};
use crate::pabt::{
    manifold_deviation, run_ows_loop, Blackboard, LiveState, LocomotionWorld, Pabt, PabtContext,
    TickStatus,
};
use crate::synthesis::{
    rollout, ActionPlan, GameStructure, RolloutContext, Strategy,
    WidthCarry,
};
use crate::traj_opt::FeasibilityTable;
use crate::util::fmt_f64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Control period (s).
    pub dt: f64,
    /// Nominal step duration (s); must be an integer multiple of `dt`.
    pub step_time: f64,
    /// Episode cap in steps.
    pub max_steps: u32,
    /// Steps allowed for recovery after the last perturbation.
    pub success_window: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.0005,
            step_time: 0.4,
            max_steps: 12,
            success_window: 2,
        }
    }
}

/// An instantaneous CoM velocity jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEvent {
    /// Step index plus phase fraction: 2.3 means phase 0.3 of step 2. A
    /// whole number lands exactly on that keyframe instant.
    pub phase: f64,
    /// Push direction in the horizontal plane, degrees; 0° is forward (+x),
    /// 90° is left (+y).
    pub direction_deg: f64,
    /// Velocity change magnitude (m/s).
    pub magnitude: f64,
}

impl PerturbationEvent {
    pub fn delta(&self) -> [f64; 2] {
        let rad = self.direction_deg.to_radians();
        [self.magnitude * rad.cos(), self.magnitude * rad.sin()]
    }

    pub fn step(&self) -> u32 {
        self.phase.floor() as u32
    }

    pub fn frac(&self) -> f64 {
        self.phase - self.phase.floor()
    }

    pub fn at_keyframe(&self) -> bool {
        self.frac() == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Recovered,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    NoApexCrossing,
    InfeasibleTransition,
    OutOfBound,
    PlanExhausted,
}

impl fmt::Display for FailureCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureCause::NoApexCrossing => "no_apex_crossing",
            FailureCause::InfeasibleTransition => "infeasible_transition",
            FailureCause::OutOfBound => "out_of_bound",
            FailureCause::PlanExhausted => "plan_exhausted",
        })
    }
}

/// One trace record per control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub step: u32,
    pub phase: f64,
    /// CoM state: x, y, vx, vy.
    pub com: [f64; 4],
    pub stance: Side,
    pub foot_current: [f64; 2],
    pub foot_next: [f64; 2],
    pub status: TickStatus,
    /// Active subtree label, when a locomotion subtree ran.
    pub active: Option<String>,
    /// The recalculation action modified the transition this tick.
    pub modified: bool,
    /// Velocity jump applied at this tick.
    pub event: Option<[f64; 2]>,
    pub manifold_dev: f64,
    /// Keyframe reached at this tick, with the post-condition check result.
    pub keyframe: Option<(Keyframe, bool)>,
}

impl TraceRecord {
    pub fn to_json_line(&self) -> String {
        let active = self
            .active
            .as_ref()
            .map(|a| format!("\"{a}\""))
            .unwrap_or_else(|| "null".into());
        let event = self
            .event
            .map(|d| format!("[{},{}]", fmt_f64(d[0]), fmt_f64(d[1])))
            .unwrap_or_else(|| "null".into());
        let keyframe = self
            .keyframe
            .as_ref()
            .map(|(k, ok)| format!("{{\"k\":\"{k}\",\"post_ok\":{ok}}}"))
            .unwrap_or_else(|| "null".into());
        format!(
            "{{\"t\":{},\"step\":{},\"phase\":{},\"com\":[{},{},{},{}],\"stance\":\"{}\",\"foot_current\":[{},{}],\"foot_next\":[{},{}],\"status\":\"{}\",\"active\":{},\"modified\":{},\"event\":{},\"manifold_dev\":{},\"keyframe\":{}}}",
            fmt_f64(self.t),
            self.step,
            fmt_f64(self.phase),
            fmt_f64(self.com[0]),
            fmt_f64(self.com[1]),
            fmt_f64(self.com[2]),
            fmt_f64(self.com[3]),
            self.stance,
            fmt_f64(self.foot_current[0]),
            fmt_f64(self.foot_current[1]),
            fmt_f64(self.foot_next[0]),
            fmt_f64(self.foot_next[1]),
            match self.status {
                TickStatus::Success => "success",
                TickStatus::Failure => "failure",
                TickStatus::Running => "running",
            },
            active,
            self.modified,
            event,
            fmt_f64(self.manifold_dev),
            keyframe,
        )
    }
}

/// Result of one closed-loop episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub cause: Option<FailureCause>,
    /// Steps from the last perturbation to the first steady keyframe.
    pub steps_to_recovery: Option<u32>,
    pub recalc_count: u32,
    /// Keyframe decisions taken, in order.
    pub plans: Vec<ActionPlan>,
    pub trace: Vec<TraceRecord>,
    /// Keyframes reached, in order (including the initial one).
    pub keyframes: Vec<Keyframe>,
    /// Signed stance-frame width of each completed step, in order.
    pub executed_widths: Vec<f64>,
}

impl EpisodeResult {
    pub fn recovered(&self) -> bool {
        self.outcome == Outcome::Recovered
    }

    pub fn trace_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.trace {
            s.push_str(&r.to_json_line());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("artifact mismatch: {0}")]
    ConfigMismatch(String),
}

/// Shared immutable engine: configuration plus pipeline artifacts.
pub struct SimEngine {
    pub config: StackConfig,
    pub table: Arc<FeasibilityTable>,
    pub game: Arc<GameStructure>,
    pub strategy: Arc<Strategy>,
}

impl SimEngine {
    pub fn new(
        config: StackConfig,
        table: Arc<FeasibilityTable>,
        game: Arc<GameStructure>,
        strategy: Arc<Strategy>,
    ) -> Result<Self, SimError> {
        let hash = config.config_hash();
        if strategy.config_hash != hash {
            return Err(SimError::ConfigMismatch(format!(
                "strategy built for config {} but running {}",
                &strategy.config_hash[..12.min(strategy.config_hash.len())],
                &hash[..12]
            )));
        }
        Ok(Self {
            config,
            table,
            game,
            strategy,
        })
    }

    /// Runs one episode. Deterministic in all inputs.
    pub fn run(&self, events: &[PerturbationEvent], record_trace: bool) -> EpisodeResult {
        let mut episode = Episode::new(self, events.to_vec(), record_trace);
        let mut pabt = Pabt::new(PabtContext {
            params: self.config.pipm.clone(),
            caps: self.config.planner.caps(),
            manifold_tol: self.config.planner.manifold_tol,
            table: Arc::clone(&self.table),
        });
        let _ = run_ows_loop(&mut pabt, &mut episode);
        episode.into_result()
    }
}

/// One keyframe-to-keyframe plan in execution.
#[derive(Debug, Clone)]
struct ActivePlan {
    desired: (Keyframe, Keyframe),
    foot_next: [f64; 2],
    switch_time: f64,
    end_time: f64,
    switch_position: f64,
    sagittal_target: PhaseState,
    lateral_target: PhaseState,
    e_sag_d1: f64,
    e_lat_d1: f64,
    e_sag_d2: f64,
    e_lat_d2: f64,
    width_signed: f64,
}

struct Episode<'a> {
    engine: &'a SimEngine,
    events: Vec<PerturbationEvent>,
    fired: Vec<bool>,
    record_trace: bool,

    t: f64,
    tau: f64,
    step: u32,
    domain: usize,
    sag: PhaseState,
    lat: PhaseState,
    stance: Side,
    foot: [f64; 2],
    swing_origin: [f64; 2],
    plan: Option<ActivePlan>,

    counter: u8,
    quiet: u8,
    carry: WidthCarry,

    at_keyframe: bool,
    over: bool,
    failed: Option<FailureCause>,
    recovered: bool,
    steps_to_recovery: Option<u32>,
    recalc_count: u32,
    plans: Vec<ActionPlan>,
    keyframes: Vec<Keyframe>,
    executed_widths: Vec<f64>,
    trace: Vec<TraceRecord>,
    pending_event: Option<[f64; 2]>,
    horizon: u32,
    last_event_step: Option<u32>,
}

impl<'a> Episode<'a> {
    fn new(engine: &'a SimEngine, events: Vec<PerturbationEvent>, record_trace: bool) -> Self {
        let params = &engine.config.pipm;
        // Initial steady state: medium-velocity forward walking on the right
        // stance at the medium-width periodic sway.
        let v0 = params.v_centers[2];
        let l = params.length(SizeClass::Medium);
        let sag = PhaseState::new(0.0, v0);
        let timing = solve_ows_timing(sag, PhaseState::new(l, v0), 0.0, l, params)
            .expect("nominal gait timing must solve");
        let sway = periodic_sway(
            params.width(SizeClass::Medium),
            timing.t1,
            timing.t2,
            params.omega(),
        );
        let lat = PhaseState::new(sway, 0.0);
        let last_event_step = events.iter().map(|e| e.step()).max();
        let sim = &engine.config.sim;
        let horizon = match last_event_step {
            Some(s) => sim.max_steps.min(s + sim.success_window + 1),
            None => sim.max_steps,
        };
        let fired = vec![false; events.len()];
        Self {
            engine,
            events,
            fired,
            record_trace,
            t: 0.0,
            tau: 0.0,
            step: 0,
            domain: 0,
            sag,
            lat,
            stance: Side::Right,
            foot: [0.0, 0.0],
            swing_origin: [-l, params.width(SizeClass::Medium)],
            plan: None,
            counter: 0,
            quiet: 0,
            carry: WidthCarry::Free,
            at_keyframe: true,
            over: false,
            failed: None,
            recovered: false,
            steps_to_recovery: None,
            recalc_count: 0,
            plans: Vec::new(),
            keyframes: Vec::new(),
            executed_widths: Vec::new(),
            trace: Vec::new(),
            pending_event: None,
            horizon,
            last_event_step,
        }
    }

    fn params(&self) -> &PipmParams {
        &self.engine.config.pipm
    }

    fn body(&self) -> BodyState {
        BodyState {
            sagittal: self.sag,
            lateral: self.lat,
            stance: self.stance,
            stance_foot: self.foot,
            swing_origin: self.swing_origin,
        }
    }

    fn fail(&mut self, cause: FailureCause) {
        if self.failed.is_none() {
            self.failed = Some(cause);
        }
        self.over = true;
    }

    fn classify_cause(cause: &str) -> FailureCause {
        if cause.contains("apex") {
            FailureCause::NoApexCrossing
        } else if cause.contains("partition") || cause.contains("unclassifiable") {
            FailureCause::OutOfBound
        } else if cause.contains("winning region") || cause.contains("recovery window") {
            FailureCause::PlanExhausted
        } else {
            FailureCause::InfeasibleTransition
        }
    }

    /// Applies keyframe-instant events of the current step, returning the
    /// applied delta.
    fn apply_keyframe_events(&mut self) -> Option<[f64; 2]> {
        let mut applied: Option<[f64; 2]> = None;
        for i in 0..self.events.len() {
            if self.fired[i] || !self.events[i].at_keyframe() || self.events[i].step() != self.step
            {
                continue;
            }
            let d = self.events[i].delta();
            self.sag.v += d[0];
            self.lat.v += d[1];
            self.fired[i] = true;
            applied = Some(match applied {
                None => d,
                Some(prev) => [prev[0] + d[0], prev[1] + d[1]],
            });
        }
        applied
    }

    /// Wall-clock offset within the step for an event fraction, under the
    /// active plan timing.
    fn event_tau(&self, frac: f64, plan: &ActivePlan) -> f64 {
        if frac < 0.5 {
            2.0 * frac * plan.switch_time
        } else {
            plan.switch_time + (2.0 * frac - 1.0) * (plan.end_time - plan.switch_time)
        }
    }

    fn phase(&self) -> f64 {
        match &self.plan {
            None => 0.0,
            Some(p) => {
                if self.tau <= p.switch_time {
                    0.5 * self.tau / p.switch_time
                } else {
                    0.5 + 0.5 * (self.tau - p.switch_time) / (p.end_time - p.switch_time)
                }
            }
        }
    }

    fn record(&mut self, status: TickStatus, bb: Option<&Blackboard>, keyframe: Option<(Keyframe, bool)>) {
        if !self.record_trace {
            return;
        }
        let (active, modified, dev) = match bb {
            Some(bb) => (
                Some(format!("{}->{}", bb.desired.0, bb.desired.1)),
                bb.modified.is_some(),
                manifold_deviation(
                    &bb.live,
                    &PabtContext {
                        params: self.engine.config.pipm.clone(),
                        caps: self.engine.config.planner.caps(),
                        manifold_tol: self.engine.config.planner.manifold_tol,
                        table: Arc::clone(&self.engine.table),
                    },
                ),
            ),
            None => (None, false, 0.0),
        };
        let plan = self.plan.as_ref();
        self.trace.push(TraceRecord {
            t: self.t,
            step: self.step,
            phase: self.phase(),
            com: [self.sag.p, self.lat.p, self.sag.v, self.lat.v],
            stance: self.stance,
            foot_current: self.foot,
            foot_next: plan.map(|p| p.foot_next).unwrap_or(self.foot),
            status,
            active,
            modified,
            event: self.pending_event.take(),
            manifold_dev: dev,
            keyframe,
        });
    }

    fn into_result(mut self) -> EpisodeResult {
        let outcome = if self.failed.is_some() {
            Outcome::Failed
        } else if self.recovered
            || self.events.is_empty()
            || !self.fired.iter().any(|&f| f)
        {
            Outcome::Recovered
        } else {
            Outcome::Failed
        };
        if outcome == Outcome::Recovered && self.steps_to_recovery.is_none() {
            self.steps_to_recovery = Some(0);
        }
        if outcome == Outcome::Failed && self.failed.is_none() {
            self.failed = Some(FailureCause::PlanExhausted);
        }
        EpisodeResult {
            outcome,
            cause: self.failed,
            steps_to_recovery: self.steps_to_recovery,
            recalc_count: self.recalc_count,
            plans: self.plans,
            trace: self.trace,
            keyframes: self.keyframes,
            executed_widths: self.executed_widths,
        }
    }
}

impl LocomotionWorld for Episode<'_> {
    fn episode_over(&self) -> bool {
        self.over || self.step >= self.horizon
    }

    fn at_keyframe_instant(&self) -> bool {
        self.at_keyframe
    }

    fn plan_keyframe_transitions(&mut self) -> Result<Vec<(Keyframe, Keyframe)>, String> {
        self.at_keyframe = false;
        let params = self.params().clone();
        // Keyframe-instant perturbations land before classification and
        // reset the environment quiet budget (the game-level path).
        let jumped = self.apply_keyframe_events();
        if jumped.is_some() {
            self.quiet = self.engine.strategy.quiet_moves;
            self.pending_event = jumped;
        } else if self.step > 0 {
            self.quiet = self.quiet.saturating_sub(1);
        }

        let body = self.body();
        let k = body
            .keyframe(&params)
            .map_err(|e| format!("state unclassifiable: {e}"))?;
        self.keyframes.push(k);
        self.counter = if is_steady_state(&k) {
            0
        } else {
            self.counter + 1
        };
        if self.counter > 2 {
            return Err("recovery window exceeded before reaching a steady keyframe".into());
        }
        // Recovery bookkeeping: steady keyframe with every perturbation in
        // the past ends the episode successfully.
        if is_steady_state(&k) && !self.events.is_empty() && self.fired.iter().all(|&f| f) {
            if let Some(last) = self.last_event_step {
                self.recovered = true;
                self.steps_to_recovery = Some(self.step.saturating_sub(last));
                if self.step > last {
                    self.over = true;
                    return Ok(Vec::new());
                }
            }
        }

        let sigma = self.stance.lateral_sign();
        let dir = LatDir::of(sigma * self.lat.v, k.lateral.vel);
        let ctx = RolloutContext {
            dir,
            counter: self.counter,
            quiet: self.quiet,
            carry: self.carry,
        };
        let plan = rollout(&self.engine.strategy, k, ctx, &[], &self.engine.game)
            .map_err(|e| e.to_string())?;
        let action = plan.actions[0];
        let caps = self.engine.config.planner.caps();
        let tp = plan_transition(&body, action.action.next_sag, action.action.length, &params, &caps)
            .map_err(|e| format!("transition unplannable: {e}"))?;
        let omega = params.omega();
        let desired = (k, plan.keyframes[1]);
        self.plan = Some(ActivePlan {
            desired,
            foot_next: tp.foot_next,
            switch_time: tp.timing.t1,
            end_time: tp.timing.t1 + tp.timing.t2,
            switch_position: tp.timing.switch_state.p,
            sagittal_target: tp.sagittal_target,
            lateral_target: tp.lateral_target,
            e_sag_d1: self.sag.orbital_energy(self.foot[0], omega),
            e_lat_d1: self.lat.orbital_energy(self.foot[1], omega),
            e_sag_d2: tp.sagittal_target.orbital_energy(tp.foot_next[0], omega),
            e_lat_d2: tp.lateral_target.orbital_energy(tp.foot_next[1], omega),
            width_signed: tp.width_signed,
        });
        let pairs = plan.transitions().map(|(a, b, _)| (a, b)).collect();
        self.plans.push(plan);
        // Update the width carry from the action just committed; it clears
        // at steady keyframes and crossed placements do not trigger it.
        self.carry = if is_steady_state(&desired.1)
            || action.action.width == SizeClass::Medium
            || action.width_signed < 0.0
        {
            WidthCarry::Free
        } else {
            WidthCarry::ForceSmall
        };
        Ok(pairs)
    }

    fn blackboard(&mut self) -> Blackboard {
        let plan = self.plan.as_ref().expect("blackboard needs an active plan");
        let (e_sag, e_lat) = if self.domain == 0 {
            (plan.e_sag_d1, plan.e_lat_d1)
        } else {
            (plan.e_sag_d2, plan.e_lat_d2)
        };
        let live = LiveState {
            com_sag: self.sag,
            com_lat: self.lat,
            stance: self.stance,
            foot_current: self.foot,
            foot_next: plan.foot_next,
            domain: self.domain,
            time_in_ows: self.tau,
            t1: plan.switch_time,
            t2: plan.end_time - plan.switch_time,
            switch_position: plan.switch_position,
            sagittal_target: plan.sagittal_target,
            lateral_target: plan.lateral_target,
            planned_e_sag: e_sag,
            planned_e_lat: e_lat,
            phase: self.phase(),
        };
        Blackboard::new(plan.desired, live)
    }

    fn apply_and_advance(&mut self, bb: &Blackboard, status: TickStatus) {
        if status == TickStatus::Failure {
            self.record(status, Some(bb), None);
            self.over = true;
            return;
        }
        let params = self.params().clone();
        let omega = params.omega();
        // Apply a transition modification from the recalculation action.
        if let Some(modified) = &bb.modified {
            self.recalc_count += 1;
            let plan = self.plan.as_mut().expect("active plan");
            if let (Some(new_t1), Some(f2y)) = (modified.new_t1, modified.new_foot_next_y) {
                plan.switch_time = new_t1;
                plan.end_time = new_t1 + modified.new_t2;
                plan.foot_next[1] = f2y;
            } else {
                plan.end_time = self.tau + modified.new_t2;
            }
            plan.sagittal_target = modified.sagittal_target;
            plan.lateral_target = modified.lateral_target;
            plan.desired.1 = Keyframe::new(
                modified.next_sag,
                modified.next_lat,
                self.stance.other(),
            );
            plan.e_sag_d1 = self.sag.orbital_energy(self.foot[0], omega);
            plan.e_lat_d1 = self.lat.orbital_energy(self.foot[1], omega);
            plan.e_sag_d2 = plan.sagittal_target.orbital_energy(plan.foot_next[0], omega);
            plan.e_lat_d2 = plan.lateral_target.orbital_energy(plan.foot_next[1], omega);
        }

        let plan = self.plan.as_ref().expect("active plan").clone();
        // Clip the control period to the next boundary: contact switch, step
        // end, or a pending mid-step event.
        let mut dt_eff = self.engine.config.sim.dt;
        let boundary = if self.domain == 0 {
            plan.switch_time
        } else {
            plan.end_time
        };
        dt_eff = dt_eff.min(boundary - self.tau);
        let mut event_hit: Option<usize> = None;
        for i in 0..self.events.len() {
            if self.fired[i] || self.events[i].at_keyframe() || self.events[i].step() != self.step
            {
                continue;
            }
            let tau_e = self.event_tau(self.events[i].frac(), &plan);
            if tau_e >= self.tau - 1e-12 && tau_e <= self.tau + dt_eff + 1e-12 {
                let clipped = (tau_e - self.tau).max(0.0);
                if clipped <= dt_eff {
                    dt_eff = clipped;
                    event_hit = Some(i);
                }
            }
        }

        // Advance the flow under the active foot.
        let active_foot = if self.domain == 0 {
            self.foot
        } else {
            plan.foot_next
        };
        if dt_eff > 0.0 {
            self.sag = lipm_flow(self.sag, active_foot[0], dt_eff, &params);
            self.lat = lipm_flow(self.lat, active_foot[1], dt_eff, &params);
            self.tau += dt_eff;
            self.t += dt_eff;
        }

        if let Some(i) = event_hit {
            let d = self.events[i].delta();
            self.sag.v += d[0];
            self.lat.v += d[1];
            self.fired[i] = true;
            self.pending_event = Some(d);
        }

        // Boundary handling.
        if self.domain == 0 && self.tau >= plan.switch_time - 1e-12 {
            self.tau = plan.switch_time;
            self.domain = 1;
        } else if self.domain == 1 && self.tau >= plan.end_time - 1e-12 {
            // Keyframe reached: verify the post-condition, transfer feet.
            let next_stance = self.stance.other();
            let post_ok = BodyState {
                sagittal: self.sag,
                lateral: self.lat,
                stance: next_stance,
                stance_foot: plan.foot_next,
                swing_origin: self.foot,
            }
            .keyframe(&params)
            .map(|k| k == plan.desired.1)
            .unwrap_or(false);
            self.executed_widths.push(plan.width_signed);
            self.swing_origin = self.foot;
            self.foot = plan.foot_next;
            self.stance = next_stance;
            self.step += 1;
            self.tau = 0.0;
            self.domain = 0;
            self.at_keyframe = true;
            self.record(status, Some(bb), Some((plan.desired.1, post_ok)));
            return;
        }
        self.record(status, Some(bb), None);
    }

    fn record_failure(&mut self, cause: String) {
        let mapped = Self::classify_cause(&cause);
        self.fail(mapped);
    }
}

// ---------------------------------------------------------------------------
// Sweep drivers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Rate,
    Envelope,
}

/// One cell of the success-rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCell {
    pub direction_deg: f64,
    pub magnitude: f64,
    pub phase: f64,
    pub recovered: bool,
    pub cause: Option<FailureCause>,
    pub steps_to_recovery: Option<u32>,
}

/// One cell of the maximum-disturbance envelope sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeCell {
    pub direction_deg: f64,
    pub phase: f64,
    pub max_magnitude: f64,
    /// Magnitudes below the envelope that nevertheless failed.
    pub pockets: Vec<f64>,
}

/// Success-rate grid over direction × magnitude × phase; one deterministic
/// episode per cell.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub rate_cells: Vec<RateCell>,
    pub envelope_cells: Vec<EnvelopeCell>,
}

impl SweepGrid {
    pub fn rate_csv(&self) -> String {
        let mut out = String::from("direction_deg,magnitude,phase,recovered,cause,steps_to_recovery\n");
        for c in &self.rate_cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f64(c.direction_deg),
                fmt_f64(c.magnitude),
                fmt_f64(c.phase),
                if c.recovered { 1 } else { 0 },
                c.cause.map(|c| c.to_string()).unwrap_or_default(),
                c.steps_to_recovery
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
            ));
        }
        out
    }

    pub fn envelope_csv(&self) -> String {
        let mut out = String::from("direction_deg,phase,max_magnitude,pockets\n");
        for c in &self.envelope_cells {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(c.direction_deg),
                fmt_f64(c.phase),
                fmt_f64(c.max_magnitude),
                c.pockets
                    .iter()
                    .map(|&p| fmt_f64(p))
                    .collect::<Vec<_>>()
                    .join(";"),
            ));
        }
        out
    }
}

fn single_event(direction_deg: f64, magnitude: f64, phase: f64) -> Vec<PerturbationEvent> {
    if magnitude == 0.0 {
        return Vec::new();
    }
    vec![PerturbationEvent {
        phase,
        direction_deg,
        magnitude,
    }]
}

/// One episode per (direction, magnitude, phase) cell. The phase is within
/// step 0.
pub fn sweep_success_rate(
    engine: &SimEngine,
    directions: &[f64],
    magnitudes: &[f64],
    phases: &[f64],
) -> SweepGrid {
    let mut cells = Vec::new();
    for &d in directions {
        for &m in magnitudes {
            for &p in phases {
                cells.push((d, m, p));
            }
        }
    }
    let rate_cells: Vec<RateCell> = cells
        .par_iter()
        .map(|&(direction, magnitude, phase)| {
            let res = engine.run(&single_event(direction, magnitude, phase), false);
            RateCell {
                direction_deg: direction,
                magnitude,
                phase,
                recovered: res.recovered(),
                cause: res.cause,
                steps_to_recovery: res.steps_to_recovery,
            }
        })
        .collect();
    SweepGrid {
        rate_cells,
        envelope_cells: Vec::new(),
    }
}

/// Bisection on the push magnitude at fixed direction and phase, followed by
/// a fine scan below the envelope to surface non-monotone pockets.
pub fn max_recoverable_disturbance(
    engine: &SimEngine,
    direction_deg: f64,
    phase: f64,
    resolution: f64,
    max_magnitude: f64,
) -> EnvelopeCell {
    let succeeds = |m: f64| -> bool {
        engine
            .run(&single_event(direction_deg, m, phase), false)
            .recovered()
    };
    if !succeeds(0.0) {
        return EnvelopeCell {
            direction_deg,
            phase,
            max_magnitude: 0.0,
            pockets: Vec::new(),
        };
    }
    let mut lo = 0.0;
    let mut hi = max_magnitude;
    if succeeds(max_magnitude) {
        lo = max_magnitude;
    } else {
        while hi - lo > resolution {
            let mid = 0.5 * (lo + hi);
            if succeeds(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    // Scan below the envelope at the stated resolution.
    let mut pockets = Vec::new();
    let mut m = resolution;
    while m < lo - resolution / 2.0 {
        if !succeeds(m) {
            pockets.push(m);
        }
        m += resolution;
    }
    EnvelopeCell {
        direction_deg,
        phase,
        max_magnitude: lo,
        pockets,
    }
}

/// Envelope sweep over a direction × phase grid.
pub fn sweep_envelope(
    engine: &SimEngine,
    directions: &[f64],
    phases: &[f64],
    resolution: f64,
    max_magnitude: f64,
) -> SweepGrid {
    let mut cells = Vec::new();
    for &d in directions {
        for &p in phases {
            cells.push((d, p));
        }
    }
    let envelope_cells: Vec<EnvelopeCell> = cells
        .par_iter()
        .map(|&(d, p)| max_recoverable_disturbance(engine, d, p, resolution, max_magnitude))
        .collect();
    SweepGrid {
        rate_cells: Vec::new(),
        envelope_cells,
    }
}

/// Convenience: builds the engine from artifacts and runs one episode.
pub fn run_episode(
    config: &StackConfig,
    events: &[PerturbationEvent],
    strategy: Arc<Strategy>,
    game: Arc<GameStructure>,
    table: Arc<FeasibilityTable>,
) -> Result<EpisodeResult, SimError> {
    let engine = SimEngine::new(config.clone(), table, game, strategy)?;
    Ok(engine.run(events, true))
}
