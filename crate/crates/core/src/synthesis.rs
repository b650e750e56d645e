//! Two-player keyframe transition game between the walker and an adversarial
//! perturbation, solved as an explicit-state safety game.
//!
//! The walker picks a transition from the feasibility table (filtered by the
//! velocity-descent and width-preference rules); the environment may, when
//! its quiet budget is spent, overwrite the resulting keyframe with any
//! admissible perturbation target. The safety objective is the bounded
//! recovery requirement: a non-steady keyframe must return to the steady set
//! within two transitions, tracked by a small counter.
//!
//! Environment admissibility is refined during synthesis: targets whose
//! perturbed entry states cannot be won are removed from the assumption (the
//! bounded-environment set), and the final set is exported with the strategy.

use crate::phase_space::{
    is_steady_state, Keyframe, LatDir, PosClass, RiemannianCell, Side, SizeClass, VelClass,
};
use crate::traj_opt::FeasibilityTable;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

/// A walker action: the commanded next keyframe cells plus the nominal step
/// length and width classes.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SystemAction {
    pub next_sag: RiemannianCell,
    pub next_lat: RiemannianCell,
    pub length: SizeClass,
    pub width: SizeClass,
}

/// An environment move: no perturbation, or a jump to a cell-pair target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnvPerturbation {
    None,
    Jump {
        sag: RiemannianCell,
        lat: RiemannianCell,
    },
}

/// Action with its phase-space planning outcome, as certified by the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameAction {
    pub action: SystemAction,
    pub next_dir: LatDir,
    pub width_signed: f64,
    pub record_index: usize,
}

/// Width-preference carry: `ForceSmall` after a small or large step during
/// recovery; clears at steady keyframes.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum WidthCarry {
    Free,
    ForceSmall,
}

/// Solver position: keyframe plus the bookkeeping the specifications need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GamePos {
    pub k: Keyframe,
    pub dir: LatDir,
    /// Consecutive non-steady keyframes; 0 exactly at steady keyframes.
    pub counter: u8,
    /// Perturbation-free moves still owed by the environment.
    pub quiet: u8,
    pub carry: WidthCarry,
}

/// Automaton-state view: keyframe, chosen action, environment move, and the
/// recovery counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutomatonState {
    pub k: Keyframe,
    pub a: SystemAction,
    pub p: EnvPerturbation,
    pub recovery_counter: u8,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("no feasible action from keyframe {0}")]
    EmptyActionSet(Keyframe),
    #[error("strategy file error: {0}")]
    Io(String),
}

/// The finite transition game.
#[derive(Debug, Clone)]
pub struct GameStructure {
    /// Feasible actions per (sagittal cell, lateral cell, lateral direction),
    /// sorted in the deterministic selection order.
    actions: BTreeMap<(RiemannianCell, RiemannianCell, LatDir), Vec<GameAction>>,
    /// Initial admissible perturbation targets (covered cell pairs).
    pub env_targets: BTreeSet<(RiemannianCell, RiemannianCell)>,
    pub init: GamePos,
    pub quiet_moves: u8,
    pub descent_rule_lateral: bool,
    pub config_hash: String,
}

fn steady_cells(sag: RiemannianCell, lat: RiemannianCell) -> bool {
    sag.pos == PosClass::Zero && lat.vel == VelClass::Zero
}

/// Direction bit of a perturbation target: adversarial pushes concretize
/// toward the stance foot when they carry lateral velocity.
pub fn target_dir(lat: RiemannianCell) -> LatDir {
    if lat.vel == VelClass::Zero {
        LatDir::Away
    } else {
        LatDir::Toward
    }
}

/// The initial steady keyframe: forward walking at medium apex velocity on
/// the right stance with the lateral apex over the nominal sway.
pub fn initial_keyframe() -> Keyframe {
    Keyframe::new(
        RiemannianCell::new(PosClass::Zero, VelClass::Medium),
        RiemannianCell::new(PosClass::Zero, VelClass::Zero),
        Side::Right,
    )
}

impl GameStructure {
    pub fn actions_at(
        &self,
        sag: RiemannianCell,
        lat: RiemannianCell,
        dir: LatDir,
    ) -> &[GameAction] {
        self.actions
            .get(&(sag, lat, dir))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Actions admissible at a position after the specification filters.
    pub fn admissible_actions(&self, pos: &GamePos) -> Vec<GameAction> {
        self.actions_at(pos.k.sagittal, pos.k.lateral, pos.dir)
            .iter()
            .filter(|ga| {
                if pos.carry == WidthCarry::ForceSmall && ga.action.width != SizeClass::Small {
                    return false;
                }
                if ga.action.next_sag.vel > pos.k.sagittal.vel {
                    return false;
                }
                if self.descent_rule_lateral && ga.action.next_lat.vel > pos.k.lateral.vel {
                    return false;
                }
                true
            })
            .copied()
            .collect()
    }

    /// Environment moves admissible at a position given a target set.
    pub fn admissible_env<'a>(
        &self,
        pos: &GamePos,
        targets: &'a BTreeSet<(RiemannianCell, RiemannianCell)>,
    ) -> Vec<EnvPerturbation> {
        let mut moves = vec![EnvPerturbation::None];
        if pos.quiet == 0 {
            moves.extend(
                targets
                    .iter()
                    .map(|&(sag, lat)| EnvPerturbation::Jump { sag, lat }),
            );
        }
        moves
    }

    /// Transition function. `None` means the move violates the bounded
    /// recovery requirement (the bad sink).
    pub fn successor(
        &self,
        pos: &GamePos,
        action: &GameAction,
        env: EnvPerturbation,
    ) -> Option<GamePos> {
        let stance = pos.k.stance.other();
        let (sag, lat, dir) = match env {
            EnvPerturbation::None => (action.action.next_sag, action.action.next_lat, action.next_dir),
            EnvPerturbation::Jump { sag, lat } => (sag, lat, target_dir(lat)),
        };
        let k = Keyframe::new(sag, lat, stance);
        let steady = is_steady_state(&k);
        let counter = if steady { 0 } else { pos.counter + 1 };
        if counter > 2 {
            return None;
        }
        let quiet = match env {
            EnvPerturbation::Jump { .. } => self.quiet_moves,
            EnvPerturbation::None => pos.quiet.saturating_sub(1),
        };
        // The width-preference constraint binds after a small or large
        // nominal-width step while recovering. Crossed placements carry a
        // flipped sign and do not instantiate the nominal width classes; the
        // constraint clears when the action's nominal destination is steady
        // (an environment overwrite starts a new recovery episode rather
        // than extending the system's own width sequence).
        let nominal_steady = steady_cells(action.action.next_sag, action.action.next_lat);
        let carry = if nominal_steady
            || action.action.width == SizeClass::Medium
            || action.width_signed < 0.0
        {
            WidthCarry::Free
        } else {
            WidthCarry::ForceSmall
        };
        Some(GamePos {
            k,
            dir,
            counter,
            quiet,
            carry,
        })
    }

    /// All structurally valid positions over covered cells.
    fn candidate_positions(&self) -> Vec<GamePos> {
        let mut out = Vec::new();
        for &(sag, lat, dir) in self.actions.keys() {
            for stance in [Side::Left, Side::Right] {
                let k = Keyframe::new(sag, lat, stance);
                let counters: &[u8] = if is_steady_state(&k) { &[0] } else { &[1, 2] };
                for &counter in counters {
                    for quiet in 0..=self.quiet_moves {
                        for carry in [WidthCarry::Free, WidthCarry::ForceSmall] {
                            out.push(GamePos {
                                k,
                                dir,
                                counter,
                                quiet,
                                carry,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Builds the game from the feasibility table. Actions are sorted by the
/// deterministic selection order: steady successors first, then smaller step
/// width, then sagittal velocity class closest to medium, then lexicographic.
pub fn build_game(
    table: &FeasibilityTable,
    quiet_moves: u8,
    descent_rule_lateral: bool,
    config_hash: &str,
) -> Result<GameStructure, SynthesisError> {
    let mut actions: BTreeMap<(RiemannianCell, RiemannianCell, LatDir), Vec<GameAction>> =
        BTreeMap::new();
    for (idx, r) in table.records.iter().enumerate() {
        if !r.is_feasible() {
            continue;
        }
        actions
            .entry((r.sag_c, r.lat_c, r.cur_dir))
            .or_default()
            .push(GameAction {
                action: SystemAction {
                    next_sag: r.sag_n,
                    next_lat: r.lat_n,
                    length: r.length,
                    width: r.width,
                },
                next_dir: r.next_dir,
                width_signed: r.width_signed,
                record_index: idx,
            });
    }
    for list in actions.values_mut() {
        list.sort_by(|a, b| {
            let steady_a = !steady_cells(a.action.next_sag, a.action.next_lat);
            let steady_b = !steady_cells(b.action.next_sag, b.action.next_lat);
            steady_a
                .cmp(&steady_b)
                .then(a.width_signed.abs().total_cmp(&b.width_signed.abs()))
                .then_with(|| {
                    let da = (a.action.next_sag.vel.index() as i8 - 2).unsigned_abs();
                    let db = (b.action.next_sag.vel.index() as i8 - 2).unsigned_abs();
                    da.cmp(&db)
                })
                .then(a.action.cmp(&b.action))
        });
    }
    let env_targets: BTreeSet<(RiemannianCell, RiemannianCell)> = actions
        .keys()
        .filter(|(_, lat, dir)| *dir == target_dir(*lat))
        .map(|&(sag, lat, _)| (sag, lat))
        .collect();
    let init = GamePos {
        k: initial_keyframe(),
        dir: LatDir::Away,
        counter: 0,
        quiet: 0,
        carry: WidthCarry::Free,
    };
    let game = GameStructure {
        actions,
        env_targets,
        init,
        quiet_moves,
        descent_rule_lateral,
        config_hash: config_hash.to_string(),
    };
    if game
        .actions_at(init.k.sagittal, init.k.lateral, init.dir)
        .is_empty()
    {
        return Err(SynthesisError::EmptyActionSet(init.k));
    }
    Ok(game)
}

/// Winning strategy with the refined environment assumption.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub entries: BTreeMap<GamePos, GameAction>,
    pub admissible_targets: BTreeSet<(RiemannianCell, RiemannianCell)>,
    pub quiet_moves: u8,
    pub config_hash: String,
}

impl Strategy {
    pub fn action(&self, pos: &GamePos) -> Option<&GameAction> {
        self.entries.get(pos)
    }

    pub fn is_winning(&self, pos: &GamePos) -> bool {
        self.entries.contains_key(pos)
    }
}

/// A losing play extracted for diagnosis: the environment moves that defeat
/// the sampled system play.
#[derive(Debug, Clone)]
pub struct Counterplay {
    pub steps: Vec<(GamePos, Option<SystemAction>, EnvPerturbation)>,
    pub reason: String,
}

impl fmt::Display for Counterplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "environment counter-play ({}):", self.reason)?;
        for (pos, a, e) in &self.steps {
            let a_str = a
                .map(|a| format!("{}/{} l={} w={}", a.next_sag, a.next_lat, a.length, a.width))
                .unwrap_or_else(|| "-".to_string());
            let e_str = match e {
                EnvPerturbation::None => "env: none".to_string(),
                EnvPerturbation::Jump { sag, lat } => format!("env: jump ({sag})s ({lat})l"),
            };
            writeln!(
                f,
                "  at {} [c={} q={} {:?}] action {} ; {}",
                pos.k, pos.counter, pos.quiet, pos.carry, a_str, e_str
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
#[error("specification unrealizable: {}", counterplay.reason)]
pub struct Unrealizable {
    pub counterplay: Counterplay,
}

fn solve_fixpoint(
    game: &GameStructure,
    targets: &BTreeSet<(RiemannianCell, RiemannianCell)>,
) -> (BTreeSet<GamePos>, BTreeMap<GamePos, GameAction>) {
    let positions = game.candidate_positions();
    let mut winning: BTreeSet<GamePos> = positions.iter().copied().collect();
    loop {
        let mut removed = false;
        let current = winning.clone();
        for pos in &positions {
            if !winning.contains(pos) {
                continue;
            }
            let keeps = game.admissible_actions(pos).into_iter().any(|a| {
                game.admissible_env(pos, targets).into_iter().all(|e| {
                    game.successor(pos, &a, e)
                        .map(|s| current.contains(&s))
                        .unwrap_or(false)
                })
            });
            if !keeps {
                winning.remove(pos);
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    let mut strategy = BTreeMap::new();
    for pos in &positions {
        if !winning.contains(pos) {
            continue;
        }
        let choice = game.admissible_actions(pos).into_iter().find(|a| {
            game.admissible_env(pos, targets).into_iter().all(|e| {
                game.successor(pos, a, e)
                    .map(|s| winning.contains(&s))
                    .unwrap_or(false)
            })
        });
        if let Some(a) = choice {
            strategy.insert(*pos, a);
        }
    }
    (winning, strategy)
}

/// Entry positions the environment can force for a target.
fn entry_positions(
    game: &GameStructure,
    target: (RiemannianCell, RiemannianCell),
) -> Vec<GamePos> {
    let dir = target_dir(target.1);
    // With two quiet moves the environment can only act at steady-loop
    // positions, whose actions nominally land steady and therefore carry no
    // width constraint into the perturbed state; shorter quiet budgets can
    // interrupt recoveries, so both carries are considered there.
    let entry_counters: Vec<u8> = if game.quiet_moves >= 2 {
        vec![1]
    } else {
        vec![1, 2]
    };
    let carries: &[WidthCarry] = if game.quiet_moves >= 2 {
        &[WidthCarry::Free]
    } else {
        &[WidthCarry::Free, WidthCarry::ForceSmall]
    };
    let mut out = Vec::new();
    for stance in [Side::Left, Side::Right] {
        let k = Keyframe::new(target.0, target.1, stance);
        if is_steady_state(&k) {
            out.push(GamePos {
                k,
                dir,
                counter: 0,
                quiet: game.quiet_moves,
                carry: WidthCarry::Free,
            });
        } else {
            for &counter in &entry_counters {
                for &carry in carries {
                    out.push(GamePos {
                        k,
                        dir,
                        counter,
                        quiet: game.quiet_moves,
                        carry,
                    });
                }
            }
        }
    }
    out
}

fn extract_counterplay(
    game: &GameStructure,
    targets: &BTreeSet<(RiemannianCell, RiemannianCell)>,
    winning: &BTreeSet<GamePos>,
) -> Counterplay {
    let mut steps = Vec::new();
    let mut pos = game.init;
    let mut reason = "recovery bound exceeded".to_string();
    for _ in 0..8 {
        let actions = game.admissible_actions(&pos);
        let Some(action) = actions.first().copied() else {
            steps.push((pos, None, EnvPerturbation::None));
            reason = "no admissible action".to_string();
            break;
        };
        let env = game
            .admissible_env(&pos, targets)
            .into_iter()
            .find(|e| {
                game.successor(&pos, &action, *e)
                    .map(|s| !winning.contains(&s))
                    .unwrap_or(true)
            })
            .unwrap_or(EnvPerturbation::None);
        steps.push((pos, Some(action.action), env));
        match game.successor(&pos, &action, env) {
            Some(next) => pos = next,
            None => break,
        }
    }
    Counterplay { steps, reason }
}

/// Solves the safety game, refining the environment assumption.
///
/// A perturbation target is kept only if the game restricted to that single
/// target is winnable from both the initial state and the target's entry
/// states (so one genuinely unrecoverable target cannot poison the shared
/// steady-walking positions for every other target). The surviving set is
/// then solved jointly; any residual interaction losses remove further
/// targets until the set stabilizes.
pub fn synthesize(game: &GameStructure) -> Result<Strategy, Unrealizable> {
    let mut targets: BTreeSet<(RiemannianCell, RiemannianCell)> = game
        .env_targets
        .iter()
        .copied()
        .filter(|&t| {
            let single: BTreeSet<_> = [t].into_iter().collect();
            let (winning, _) = solve_fixpoint(game, &single);
            winning.contains(&game.init)
                && entry_positions(game, t).iter().all(|p| winning.contains(p))
        })
        .collect();
    loop {
        let (winning, entries) = solve_fixpoint(game, &targets);
        if winning.contains(&game.init) {
            let bad: Vec<_> = targets
                .iter()
                .copied()
                .filter(|&t| entry_positions(game, t).iter().any(|p| !winning.contains(p)))
                .collect();
            if bad.is_empty() {
                return Ok(Strategy {
                    entries,
                    admissible_targets: targets,
                    quiet_moves: game.quiet_moves,
                    config_hash: game.config_hash.clone(),
                });
            }
            for t in bad {
                targets.remove(&t);
            }
            continue;
        }
        // Initial position lost: weaken the assumption if possible.
        let bad: Vec<_> = targets
            .iter()
            .copied()
            .filter(|&t| entry_positions(game, t).iter().any(|p| !winning.contains(p)))
            .collect();
        if bad.is_empty() {
            return Err(Unrealizable {
                counterplay: extract_counterplay(game, &targets, &winning),
            });
        }
        for t in bad {
            targets.remove(&t);
        }
    }
}

/// Rollout context: the live bookkeeping a caller carries between keyframes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutContext {
    pub dir: LatDir,
    pub counter: u8,
    pub quiet: u8,
    pub carry: WidthCarry,
}

impl RolloutContext {
    pub fn for_keyframe(k: &Keyframe) -> Self {
        Self {
            dir: LatDir::Away,
            counter: if is_steady_state(k) { 0 } else { 1 },
            quiet: 0,
            carry: WidthCarry::Free,
        }
    }
}

/// An action plan: keyframes from the current one to the steady target, with
/// the chosen action per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPlan {
    pub keyframes: Vec<Keyframe>,
    pub actions: Vec<GameAction>,
}

impl ActionPlan {
    pub fn transitions(&self) -> impl Iterator<Item = (Keyframe, Keyframe, &GameAction)> {
        self.keyframes
            .windows(2)
            .zip(&self.actions)
            .map(|(w, a)| (w[0], w[1], a))
    }
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("keyframe {0} outside the winning region")]
    OutsideWinningRegion(Keyframe),
    #[error("no steady keyframe reached within {0} transitions")]
    PlanTooLong(usize),
}

/// Plans transitions from the current keyframe until a steady keyframe,
/// following the strategy under the given future environment moves (empty
/// slots mean no perturbation).
pub fn rollout(
    strategy: &Strategy,
    k_current: Keyframe,
    ctx: RolloutContext,
    env_trace: &[EnvPerturbation],
    game: &GameStructure,
) -> Result<ActionPlan, RolloutError> {
    const CAP: usize = 8;
    let mut pos = GamePos {
        k: k_current,
        dir: ctx.dir,
        counter: ctx.counter,
        quiet: ctx.quiet,
        carry: ctx.carry,
    };
    let mut keyframes = vec![pos.k];
    let mut actions = Vec::new();
    for step in 0..CAP {
        let ga = *strategy
            .action(&pos)
            .ok_or(RolloutError::OutsideWinningRegion(pos.k))?;
        let env = env_trace.get(step).copied().unwrap_or(EnvPerturbation::None);
        let next = game
            .successor(&pos, &ga, env)
            .ok_or(RolloutError::PlanTooLong(CAP))?;
        actions.push(ga);
        keyframes.push(next.k);
        if is_steady_state(&next.k) {
            return Ok(ActionPlan { keyframes, actions });
        }
        pos = next;
    }
    Err(RolloutError::PlanTooLong(CAP))
}

/// Verification report of a synthesized strategy.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub violations: Vec<String>,
    pub reachable_states: usize,
    pub paths_checked: usize,
}

impl VerificationReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "strategy verification: {} reachable states, {} bounded paths, {} violations",
            self.reachable_states,
            self.paths_checked,
            self.violations.len()
        )?;
        for v in &self.violations {
            writeln!(f, "  violation: {v}")?;
        }
        Ok(())
    }
}

/// Exhaustively checks the strategy: winning-region closure under all
/// admissible environment moves, the bounded-recovery property along every
/// environment sequence up to depth 4, the action filters, and the
/// environment quiet-move assumption.
pub fn verify_strategy(strategy: &Strategy, game: &GameStructure) -> VerificationReport {
    let targets = &strategy.admissible_targets;
    let mut violations = Vec::new();

    // Reachable closure under the strategy.
    let mut reachable: BTreeSet<GamePos> = BTreeSet::new();
    let mut queue = VecDeque::from([game.init]);
    reachable.insert(game.init);
    while let Some(pos) = queue.pop_front() {
        let Some(ga) = strategy.action(&pos) else {
            violations.push(format!("reachable state {} has no strategy entry", pos.k));
            continue;
        };
        // Action filters re-checked explicitly.
        if pos.carry == WidthCarry::ForceSmall && ga.action.width != SizeClass::Small {
            violations.push(format!(
                "width preference violated at {}: width {} after a small/large step",
                pos.k, ga.action.width
            ));
        }
        if ga.action.next_sag.vel > pos.k.sagittal.vel {
            violations.push(format!(
                "sagittal velocity descent violated at {}: {} -> {}",
                pos.k,
                pos.k.sagittal,
                ga.action.next_sag
            ));
        }
        if game.descent_rule_lateral && ga.action.next_lat.vel > pos.k.lateral.vel {
            violations.push(format!(
                "lateral velocity descent violated at {}: {} -> {}",
                pos.k,
                pos.k.lateral,
                ga.action.next_lat
            ));
        }
        if !game
            .actions_at(pos.k.sagittal, pos.k.lateral, pos.dir)
            .iter()
            .any(|a| a.action == ga.action)
        {
            violations.push(format!(
                "strategy action at {} is not a feasible table transition",
                pos.k
            ));
        }
        for e in game.admissible_env(&pos, targets) {
            match game.successor(&pos, ga, e) {
                None => violations.push(format!(
                    "recovery bound exceeded from {} under admissible environment move",
                    pos.k
                )),
                Some(next) => {
                    if !strategy.is_winning(&next) {
                        violations.push(format!(
                            "strategy exits the winning region from {} to {}",
                            pos.k, next.k
                        ));
                    } else if reachable.insert(next) {
                        queue.push_back(next);
                    }
                }
            }
        }
    }

    // Depth-bounded exhaustive enumeration of environment sequences.
    let mut paths_checked = 0usize;
    for start in &reachable {
        let mut stack = vec![(*start, vec![is_steady_state(&start.k)], 0usize)];
        while let Some((pos, steady_seq, depth)) = stack.pop() {
            if depth == 4 {
                paths_checked += 1;
                check_two_step(&steady_seq, &mut violations, &pos.k);
                continue;
            }
            let Some(ga) = strategy.action(&pos) else {
                continue;
            };
            for e in game.admissible_env(&pos, targets) {
                if pos.quiet > 0 && matches!(e, EnvPerturbation::Jump { .. }) {
                    violations.push("environment assumption filter admitted a jump during the quiet window".into());
                }
                match game.successor(&pos, ga, e) {
                    Some(next) => {
                        let mut seq = steady_seq.clone();
                        seq.push(is_steady_state(&next.k));
                        stack.push((next, seq, depth + 1));
                    }
                    None => {
                        paths_checked += 1;
                        violations.push(format!(
                            "bounded recovery violated within depth 4 from {}",
                            start.k
                        ));
                    }
                }
            }
        }
    }

    // Deduplicate repeated messages, keeping deterministic order.
    let mut seen = BTreeSet::new();
    violations.retain(|v| seen.insert(v.clone()));

    VerificationReport {
        violations,
        reachable_states: reachable.len(),
        paths_checked,
    }
}

fn check_two_step(steady_seq: &[bool], violations: &mut Vec<String>, origin: &Keyframe) {
    for i in 0..steady_seq.len() {
        if !steady_seq[i] {
            let within_two = steady_seq.get(i + 1).copied().unwrap_or(true)
                || steady_seq.get(i + 2).copied().unwrap_or(true);
            if !within_two {
                violations.push(format!(
                    "two-step recovery violated along a path from {origin}"
                ));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Strategy file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StrategyFileEntry {
    state: GamePos,
    action: GameAction,
}

#[derive(Serialize, Deserialize)]
struct StrategyFile {
    schema_version: u32,
    config_hash: String,
    quiet_moves: u8,
    admissible_targets: Vec<(RiemannianCell, RiemannianCell)>,
    entries: Vec<StrategyFileEntry>,
}

impl Strategy {
    pub fn to_json(&self) -> String {
        let file = StrategyFile {
            schema_version: 1,
            config_hash: self.config_hash.clone(),
            quiet_moves: self.quiet_moves,
            admissible_targets: self.admissible_targets.iter().copied().collect(),
            entries: self
                .entries
                .iter()
                .map(|(state, action)| StrategyFileEntry {
                    state: *state,
                    action: *action,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("strategy serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, SynthesisError> {
        let file: StrategyFile =
            serde_json::from_str(text).map_err(|e| SynthesisError::Io(e.to_string()))?;
        if file.schema_version != 1 {
            return Err(SynthesisError::Io(format!(
                "unsupported strategy schema version {}",
                file.schema_version
            )));
        }
        Ok(Strategy {
            entries: file
                .entries
                .into_iter()
                .map(|e| (e.state, e.action))
                .collect(),
            admissible_targets: file.admissible_targets.into_iter().collect(),
            quiet_moves: file.quiet_moves,
            config_hash: file.config_hash,
        })
    }
}
