//! Game construction and synthesis against independent oracles: exhaustive
//! breadth-first reachability and a depth-bounded minimax search that
//! re-derives winnability without the fixpoint machinery.

use std::collections::{BTreeSet, VecDeque};
use strider_core::phase_space::{is_steady_state, LatDir, Side, SizeClass};
use strider_core::synthesis::{
    build_game, initial_keyframe, rollout, synthesize, verify_strategy, EnvPerturbation,
    GamePos, GameStructure, RolloutContext, Strategy, WidthCarry,
};
use strider_core::traj_opt::{Family, FeasibilityRecord, FeasibilityTable, Verdict};

fn record(
    sag_c: &str,
    lat_c: &str,
    cur_dir: LatDir,
    sag_n: &str,
    lat_n: &str,
    next_dir: LatDir,
    width: SizeClass,
    width_signed: f64,
) -> FeasibilityRecord {
    FeasibilityRecord {
        family: if cur_dir == LatDir::Toward {
            Family::Crossed
        } else {
            Family::Wider
        },
        stance: Side::Right,
        sag_c: sag_c.parse().unwrap(),
        lat_c: lat_c.parse().unwrap(),
        cur_dir,
        length: SizeClass::Medium,
        sag_n: sag_n.parse().unwrap(),
        lat_n: lat_n.parse().unwrap(),
        next_dir,
        width,
        width_signed,
        verdict: Verdict::Feasible,
        cause: String::new(),
        min_distance: Some(0.15),
        iterations: 1,
    }
}

/// Desk-scale game: steady loop, one crossed recovery chain, one wide chain.
fn desk_table() -> FeasibilityTable {
    FeasibilityTable::new(vec![
        record("zm", "zz", LatDir::Away, "zm", "zz", LatDir::Away, SizeClass::Medium, 0.2),
        record("zm", "zs", LatDir::Toward, "zm", "zs", LatDir::Away, SizeClass::Small, -0.12),
        record("zm", "zs", LatDir::Away, "zm", "zz", LatDir::Away, SizeClass::Medium, 0.25),
        record("zm", "pm", LatDir::Away, "zm", "zz", LatDir::Away, SizeClass::Large, 0.42),
        record("zs", "zz", LatDir::Away, "zs", "zz", LatDir::Away, SizeClass::Medium, 0.2),
    ])
}

fn desk_game() -> GameStructure {
    build_game(&desk_table(), 2, true, "hash").unwrap()
}

/// Exhaustive reachable-set oracle: breadth-first over every admissible
/// action and environment move, independent of the synthesis code path.
fn bfs_reachable(game: &GameStructure, strategy: Option<&Strategy>) -> BTreeSet<GamePos> {
    let targets = match strategy {
        Some(s) => s.admissible_targets.clone(),
        None => game.env_targets.clone(),
    };
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([game.init]);
    seen.insert(game.init);
    while let Some(pos) = queue.pop_front() {
        let actions: Vec<_> = match strategy {
            Some(s) => s.action(&pos).into_iter().copied().collect(),
            None => game.admissible_actions(&pos),
        };
        for a in actions {
            for e in game.admissible_env(&pos, &targets) {
                if let Some(next) = game.successor(&pos, &a, e) {
                    if seen.insert(next) {
                        queue.push_back(next);
                    }
                }
            }
        }
    }
    seen
}

#[test]
fn reachable_count_matches_bfs_oracle() {
    let game = desk_game();
    let strategy = synthesize(&game).unwrap();
    // Under the strategy the reachable set equals what the verifier reports.
    let reachable = bfs_reachable(&game, Some(&strategy));
    let report = verify_strategy(&strategy, &game);
    assert!(report.clean(), "{report}");
    assert_eq!(report.reachable_states, reachable.len());
    // Frozen after the first audited run of the desk game: the steady loop
    // holds 6 positions (2 stances x 3 quiet levels), the crossed-recovery
    // chain 4 (entry and intermediate on both stances), and the second
    // steady loop reachable by perturbation another 6.
    assert_eq!(reachable.len(), 16);
    // Full-game reachability (any action) is a superset.
    let all = bfs_reachable(&game, None);
    assert!(all.len() >= reachable.len());
}

/// Depth-bounded minimax: the system wins from `pos` within `depth` moves iff
/// some admissible action survives every admissible environment reply
/// without exceeding the recovery bound. With a depth beyond the game's
/// diameter this agrees with the fixpoint on the reachable region.
fn minimax_wins(
    game: &GameStructure,
    targets: &BTreeSet<(strider_core::phase_space::RiemannianCell, strider_core::phase_space::RiemannianCell)>,
    pos: &GamePos,
    depth: usize,
) -> bool {
    if depth == 0 {
        return true;
    }
    game.admissible_actions(pos).into_iter().any(|a| {
        game.admissible_env(pos, targets).into_iter().all(|e| {
            game.successor(pos, &a, e)
                .map(|next| minimax_wins(game, targets, &next, depth - 1))
                .unwrap_or(false)
        })
    })
}

#[test]
fn winning_region_cross_checked_by_minimax() {
    let game = desk_game();
    let strategy = synthesize(&game).unwrap();
    let targets = &strategy.admissible_targets;
    // On this small game, depth 8 exceeds the diameter: minimax and the
    // fixpoint must agree on every strategy-reachable position, and on the
    // perturbed entry positions.
    for pos in bfs_reachable(&game, Some(&strategy)) {
        assert!(
            minimax_wins(&game, targets, &pos, 8),
            "minimax disagrees at {}",
            pos.k
        );
    }
}

#[test]
fn rollout_edges_all_exist_in_the_game() {
    let game = desk_game();
    let strategy = synthesize(&game).unwrap();
    let perturbed = strider_core::phase_space::Keyframe::new(
        "zm".parse().unwrap(),
        "zs".parse().unwrap(),
        Side::Left,
    );
    let ctx = RolloutContext {
        dir: LatDir::Toward,
        counter: 1,
        quiet: 2,
        carry: WidthCarry::Free,
    };
    let plan = rollout(&strategy, perturbed, ctx, &[], &game).unwrap();
    // Every planned transition corresponds to a feasible game action at the
    // position it is taken from.
    let mut pos = GamePos {
        k: perturbed,
        dir: ctx.dir,
        counter: ctx.counter,
        quiet: ctx.quiet,
        carry: ctx.carry,
    };
    for (from, to, ga) in plan.transitions() {
        assert_eq!(from, pos.k);
        assert!(game
            .actions_at(pos.k.sagittal, pos.k.lateral, pos.dir)
            .iter()
            .any(|a| a.action == ga.action));
        pos = game.successor(&pos, ga, EnvPerturbation::None).unwrap();
        assert_eq!(pos.k, to);
    }
    assert!(is_steady_state(plan.keyframes.last().unwrap()));
}

#[test]
fn rollout_outside_winning_region_is_an_error() {
    let game = desk_game();
    let strategy = synthesize(&game).unwrap();
    // A keyframe with no table coverage can never be winning.
    let stranded = strider_core::phase_space::Keyframe::new(
        "pf".parse().unwrap(),
        "pf".parse().unwrap(),
        Side::Left,
    );
    let ctx = RolloutContext::for_keyframe(&stranded);
    assert!(rollout(&strategy, stranded, ctx, &[], &game).is_err());
}

#[test]
fn rollout_respects_future_environment_moves() {
    let game = desk_game();
    let strategy = synthesize(&game).unwrap();
    // Push the walker mid-plan: the rollout extends until steady again.
    let env = vec![EnvPerturbation::Jump {
        sag: "zm".parse().unwrap(),
        lat: "zs".parse().unwrap(),
    }];
    let plan = rollout(
        &strategy,
        initial_keyframe(),
        RolloutContext::for_keyframe(&initial_keyframe()),
        &env,
        &game,
    )
    .unwrap();
    assert!(plan.actions.len() >= 2);
    assert!(is_steady_state(plan.keyframes.last().unwrap()));
}

#[test]
fn spec_filters_hold_on_every_strategy_entry() {
    // No synthesized action may violate the velocity-descent or the width
    // rules; enumerated over all entries, not just reachable ones.
    let game = desk_game();
    let strategy = synthesize(&game).unwrap();
    for (pos, ga) in &strategy.entries {
        assert!(ga.action.next_sag.vel <= pos.k.sagittal.vel);
        assert!(ga.action.next_lat.vel <= pos.k.lateral.vel);
        if pos.carry == WidthCarry::ForceSmall {
            assert_eq!(ga.action.width, SizeClass::Small);
        }
    }
}

#[test]
fn verification_depth_four_counts_paths() {
    let game = desk_game();
    let strategy = synthesize(&game).unwrap();
    let report = verify_strategy(&strategy, &game);
    assert!(report.clean());
    assert!(report.paths_checked > 0);
}
