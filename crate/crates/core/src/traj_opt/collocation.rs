//! Hermite–Simpson transcription of one walking step on the reduced model:
//! a point-mass CoM at constant height plus massless leg segments from the
//! hips to the feet. The decision trajectory covers two stance domains with
//! fixed durations taken from the phase-space timing; the swing foot is a
//! controlled point in the first domain and the freed foot stays parked in
//! the second.
//!
//! Every constraint is affine or a sum of squared affine expressions, so
//! analytic gradients are exact.

use crate::phase_space::{PhaseState, PipmParams, Side, TransitionPlan};
use crate::traj_opt::solver::SmoothProblem;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced-model and transcription parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedModelConfig {
    /// Shortest admissible hip-to-foot distance (m).
    pub leg_min: f64,
    /// Longest admissible hip-to-foot distance (m).
    pub leg_max: f64,
    /// Swing-foot acceleration bound per component (m/s²).
    pub swing_accel_max: f64,
    /// Contact friction coefficient.
    pub friction_mu: f64,
    /// Minimum distance between matched leg points (m).
    pub d_min: f64,
    /// Number of collision point pairs along the legs.
    pub collision_pairs: usize,
    /// Collocation nodes per stance domain.
    pub nodes_per_domain: usize,
    /// Lateral distance between hip joints (m).
    pub pelvis_width: f64,
}

impl Default for ReducedModelConfig {
    fn default() -> Self {
        Self {
            leg_min: 0.6,
            leg_max: 1.15,
            swing_accel_max: 150.0,
            friction_mu: 0.8,
            d_min: 0.1,
            collision_pairs: 5,
            nodes_per_domain: 10,
            pelvis_width: 0.2,
        }
    }
}

impl ReducedModelConfig {
    /// Leg-point interpolation fractions: midpoints of `collision_pairs`
    /// equal bands along each leg (0.1, 0.3, 0.5, 0.7, 0.9 for five pairs).
    pub fn pair_fractions(&self) -> Vec<f64> {
        let m = self.collision_pairs;
        (0..m).map(|k| (2 * k + 1) as f64 / (2 * m) as f64).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.d_min > 0.0) {
            return Err("d_min must be positive".into());
        }
        if self.collision_pairs < 1 {
            return Err("collision_pairs must be at least 1".into());
        }
        if self.nodes_per_domain < 3 {
            return Err("nodes_per_domain must be at least 3".into());
        }
        if !(self.friction_mu > 0.0) {
            return Err("friction_mu must be positive".into());
        }
        if !(self.leg_min > 0.0) || self.leg_max <= self.leg_min {
            return Err("leg bounds must satisfy 0 < leg_min < leg_max".into());
        }
        if !(self.swing_accel_max > 0.0) || !(self.pelvis_width > 0.0) {
            return Err("swing_accel_max and pelvis_width must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrajOptError {
    #[error("bad transition: {0}")]
    BadTransition(String),
    #[error("decision vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Constraint group tags, used for structural checks and audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Dynamics,
    ResetMap,
    Friction,
    Kinematics,
    Collision,
    Boundary,
    ControlBounds,
}

/// Sparse affine expression a·x + c.
#[derive(Debug, Clone, Default)]
pub(crate) struct LinExpr {
    terms: Vec<(usize, f64)>,
    c: f64,
}

impl LinExpr {
    fn var(i: usize) -> Self {
        Self {
            terms: vec![(i, 1.0)],
            c: 0.0,
        }
    }
    fn constant(c: f64) -> Self {
        Self { terms: vec![], c }
    }
    fn add_scaled(&mut self, other: &LinExpr, k: f64) {
        self.c += k * other.c;
        for &(i, a) in &other.terms {
            match self.terms.iter_mut().find(|(j, _)| *j == i) {
                Some((_, b)) => *b += k * a,
                None => self.terms.push((i, k * a)),
            }
        }
    }
    fn scaled(&self, k: f64) -> LinExpr {
        LinExpr {
            terms: self.terms.iter().map(|&(i, a)| (i, k * a)).collect(),
            c: k * self.c,
        }
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.c + self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>()
    }
    fn grad_accum(&self, w: f64, g: &mut [f64]) {
        for &(i, a) in &self.terms {
            g[i] += w * a;
        }
    }
}

/// One scalar constraint: lin(x) + Σ s_k·expr_k(x)².
#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    lin: LinExpr,
    quads: Vec<(f64, LinExpr)>,
    pub group: Group,
}

impl Constraint {
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.lin.value(x);
        for (s, e) in &self.quads {
            let ev = e.value(x);
            v += s * ev * ev;
        }
        v
    }
    fn grad_accum(&self, x: &[f64], w: f64, g: &mut [f64]) {
        self.lin.grad_accum(w, g);
        for (s, e) in &self.quads {
            let ev = e.value(x);
            e.grad_accum(2.0 * s * ev * w, g);
        }
    }
    /// Gradient as a sparse vector.
    fn grad_sparse(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self.lin.terms.clone();
        for (s, e) in &self.quads {
            let k = 2.0 * s * e.value(x);
            for &(i, a) in &e.terms {
                match out.iter_mut().find(|(j, _)| *j == i) {
                    Some((_, b)) => *b += k * a,
                    None => out.push((i, k * a)),
                }
            }
        }
        out
    }
    /// Adds w·∇²c + rho·∇c ∇cᵀ into `h`.
    fn hess_accum(&self, x: &[f64], w: f64, rho: f64, h: &mut crate::traj_opt::solver::DenseMat) {
        if w != 0.0 {
            for (s, e) in &self.quads {
                h.add_outer(&e.terms, 2.0 * s * w);
            }
        }
        if rho != 0.0 {
            let g = self.grad_sparse(x);
            h.add_outer(&g, rho);
        }
    }
}

/// Solve-time inflation of the collision bound, so the true bound holds on
/// the dense audit between enforcement points.
const COLLISION_BUFFER: f64 = 5e-3;
/// Solve-time tightening of the leg length bounds, for the same reason.
const LEG_BUFFER: f64 = 2e-3;

const D1_STATE: usize = 10; // cx cy vx vy sx sy sz svx svy svz
const D2_STATE: usize = 4; // cx cy vx vy
const CTRL: usize = 3;

/// Transcribed collocation problem for one walking step.
pub struct CollocationProblem {
    pub plan: TransitionPlan,
    pub cfg: ReducedModelConfig,
    pub weights: [f64; 2],
    pub omega: f64,
    pub h_apex: f64,
    n: usize,
    base_u: usize,
    base_d2: usize,
    n_vars: usize,
    pub(crate) eq: Vec<Constraint>,
    pub(crate) ineq: Vec<Constraint>,
    h1: f64,
    h2: f64,
}

impl CollocationProblem {
    pub fn n_nodes(&self) -> usize {
        2 * self.n
    }
    pub fn h_steps(&self) -> (f64, f64) {
        (self.h1, self.h2)
    }
    fn d1(&self, i: usize, k: usize) -> usize {
        i * D1_STATE + k
    }
    fn u(&self, i: usize, k: usize) -> usize {
        self.base_u + i * CTRL + k
    }
    fn d2(&self, i: usize, k: usize) -> usize {
        self.base_d2 + i * D2_STATE + k
    }

    /// Feet of the two legs in a given domain: (left foot, right foot),
    /// where a `None` component means the swing-foot decision variables.
    fn domain_feet(&self, domain: usize) -> ([Option<[f64; 3]>; 2], Side) {
        let p = &self.plan;
        let f1 = [p.foot_current[0], p.foot_current[1], 0.0];
        let f2 = [p.foot_next[0], p.foot_next[1], 0.0];
        if domain == 0 {
            // Stance on the current foot; the other leg swings.
            let stance = p.stance;
            match stance {
                Side::Right => ([None, Some(f1)], stance),
                Side::Left => ([Some(f1), None], stance),
            }
        } else {
            // Stance transferred to the new foot; the freed foot stays parked.
            let stance = p.stance.other();
            match stance {
                Side::Right => ([Some(f1), Some(f2)], stance),
                Side::Left => ([Some(f2), Some(f1)], stance),
            }
        }
    }
}

fn dynamics_exprs(
    state: &[LinExpr],
    control: Option<&[LinExpr]>,
    foot: [f64; 2],
    omega: f64,
) -> Vec<LinExpr> {
    let w2 = omega * omega;
    let mut f = Vec::with_capacity(state.len());
    // CoM: position derivatives then pendulum accelerations about the foot.
    f.push(state[2].clone());
    f.push(state[3].clone());
    let mut ax = state[0].scaled(w2);
    ax.add_scaled(&LinExpr::constant(foot[0]), -w2);
    f.push(ax);
    let mut ay = state[1].scaled(w2);
    ay.add_scaled(&LinExpr::constant(foot[1]), -w2);
    f.push(ay);
    if let Some(u) = control {
        // Swing foot: double integrator driven by the control.
        f.push(state[7].clone());
        f.push(state[8].clone());
        f.push(state[9].clone());
        f.push(u[0].clone());
        f.push(u[1].clone());
        f.push(u[2].clone());
    }
    f
}

/// Builds the collocation problem for a planned transition.
pub fn build_nlp(
    plan: &TransitionPlan,
    cfg: &ReducedModelConfig,
    params: &PipmParams,
    weights: [f64; 2],
) -> Result<CollocationProblem, TrajOptError> {
    cfg.validate().map_err(TrajOptError::BadTransition)?;
    let t1 = plan.timing.t1;
    let t2 = plan.timing.t2;
    if !(t1 > 1e-9) || !(t2 > 1e-9) || !t1.is_finite() || !t2.is_finite() {
        return Err(TrajOptError::BadTransition(format!(
            "non-positive domain durations ({t1}, {t2})"
        )));
    }
    if (plan.foot_next[0] - plan.foot_current[0]).abs() < 1e-9 {
        return Err(TrajOptError::BadTransition(
            "zero step length: feet sagittally coincident".into(),
        ));
    }
    let n = cfg.nodes_per_domain;
    let base_u = n * D1_STATE;
    let base_d2 = base_u + n * CTRL;
    let n_vars = base_d2 + n * D2_STATE;
    let mut prob = CollocationProblem {
        plan: plan.clone(),
        cfg: cfg.clone(),
        weights,
        omega: params.omega(),
        h_apex: params.h_apex,
        n,
        base_u,
        base_d2,
        n_vars,
        eq: Vec::new(),
        ineq: Vec::new(),
        h1: t1 / (n - 1) as f64,
        h2: t2 / (n - 1) as f64,
    };
    build_constraints(&mut prob);
    Ok(prob)
}

fn build_constraints(prob: &mut CollocationProblem) {
    let n = prob.n;
    let omega = prob.omega;
    let plan = prob.plan.clone();
    let cfg = prob.cfg.clone();
    let f1 = plan.foot_current;
    let f2 = [plan.foot_next[0], plan.foot_next[1]];

    let d1_state_exprs = |i: usize, p: &CollocationProblem| -> Vec<LinExpr> {
        (0..D1_STATE).map(|k| LinExpr::var(p.d1(i, k))).collect()
    };
    let d1_ctrl_exprs = |i: usize, p: &CollocationProblem| -> Vec<LinExpr> {
        (0..CTRL).map(|k| LinExpr::var(p.u(i, k))).collect()
    };
    let d2_state_exprs = |i: usize, p: &CollocationProblem| -> Vec<LinExpr> {
        (0..D2_STATE).map(|k| LinExpr::var(p.d2(i, k))).collect()
    };

    // Hermite–Simpson defects, collecting midpoint states for collision use.
    let mut midpoints: Vec<(usize, Vec<LinExpr>)> = Vec::new(); // (domain, state exprs)
    for domain in 0..2 {
        let (foot, h, dim) = if domain == 0 {
            (f1, prob.h1, D1_STATE)
        } else {
            (f2, prob.h2, D2_STATE)
        };
        for i in 0..n - 1 {
            let (xi, xip, ui, uip) = if domain == 0 {
                (
                    d1_state_exprs(i, prob),
                    d1_state_exprs(i + 1, prob),
                    Some(d1_ctrl_exprs(i, prob)),
                    Some(d1_ctrl_exprs(i + 1, prob)),
                )
            } else {
                (d2_state_exprs(i, prob), d2_state_exprs(i + 1, prob), None, None)
            };
            let fi = dynamics_exprs(&xi, ui.as_deref(), foot, omega);
            let fip = dynamics_exprs(&xip, uip.as_deref(), foot, omega);
            // Midpoint state: (x_i + x_{i+1})/2 + h/8 (f_i − f_{i+1}).
            let mut xm = Vec::with_capacity(dim);
            for k in 0..dim {
                let mut e = xi[k].scaled(0.5);
                e.add_scaled(&xip[k], 0.5);
                e.add_scaled(&fi[k], h / 8.0);
                e.add_scaled(&fip[k], -h / 8.0);
                xm.push(e);
            }
            let um = ui.as_ref().map(|u| {
                let up = uip.as_ref().unwrap();
                (0..CTRL)
                    .map(|k| {
                        let mut e = u[k].scaled(0.5);
                        e.add_scaled(&up[k], 0.5);
                        e
                    })
                    .collect::<Vec<_>>()
            });
            let fm = dynamics_exprs(&xm, um.as_deref(), foot, omega);
            for k in 0..dim {
                // x_{i+1} − x_i − h/6 (f_i + 4 f_m + f_{i+1}) = 0
                let mut defect = xip[k].clone();
                defect.add_scaled(&xi[k], -1.0);
                defect.add_scaled(&fi[k], -h / 6.0);
                defect.add_scaled(&fm[k], -4.0 * h / 6.0);
                defect.add_scaled(&fip[k], -h / 6.0);
                prob.eq.push(Constraint {
                    lin: defect,
                    quads: vec![],
                    group: Group::Dynamics,
                });
            }
            midpoints.push((domain, xm));
        }
    }

    // Reset map: identity on the CoM state across the contact switch.
    for k in 0..D2_STATE {
        let mut e = LinExpr::var(prob.d2(0, k));
        e.add_scaled(&LinExpr::var(prob.d1(n - 1, k)), -1.0);
        prob.eq.push(Constraint {
            lin: e,
            quads: vec![],
            group: Group::ResetMap,
        });
    }

    // Keyframe boundary conditions.
    let start = [
        plan.sagittal_start.p,
        plan.lateral_start.p,
        plan.sagittal_start.v,
        plan.lateral_start.v,
    ];
    let target = [
        plan.sagittal_target.p,
        plan.lateral_target.p,
        plan.sagittal_target.v,
        plan.lateral_target.v,
    ];
    for k in 0..4 {
        let mut e = LinExpr::var(prob.d1(0, k));
        e.add_scaled(&LinExpr::constant(start[k]), -1.0);
        prob.eq.push(Constraint {
            lin: e,
            quads: vec![],
            group: Group::Boundary,
        });
        let mut e = LinExpr::var(prob.d2(n - 1, k));
        e.add_scaled(&LinExpr::constant(target[k]), -1.0);
        prob.eq.push(Constraint {
            lin: e,
            quads: vec![],
            group: Group::Boundary,
        });
    }
    // Swing foot: lifts from its previous placement at rest, lands on the
    // commanded placement at rest.
    let swing_pins = [
        (0, [plan.swing_origin[0], plan.swing_origin[1], 0.0]),
        (n - 1, [plan.foot_next[0], plan.foot_next[1], 0.0]),
    ];
    for (node, pos) in swing_pins {
        for k in 0..3 {
            let mut e = LinExpr::var(prob.d1(node, 4 + k));
            e.add_scaled(&LinExpr::constant(pos[k]), -1.0);
            prob.eq.push(Constraint {
                lin: e,
                quads: vec![],
                group: Group::Boundary,
            });
            prob.eq.push(Constraint {
                lin: LinExpr::var(prob.d1(node, 7 + k)),
                quads: vec![],
                group: Group::Boundary,
            });
        }
    }

    // Path inequalities at the nodes of both domains.
    let friction_bound = cfg.friction_mu * prob.h_apex;
    for domain in 0..2 {
        let foot = if domain == 0 { f1 } else { f2 };
        for i in 0..n {
            let (cx, cy) = if domain == 0 {
                (LinExpr::var(prob.d1(i, 0)), LinExpr::var(prob.d1(i, 1)))
            } else {
                (LinExpr::var(prob.d2(i, 0)), LinExpr::var(prob.d2(i, 1)))
            };
            // Friction cone of the stance contact: |CoM − foot|² ≤ (μ·h)².
            let mut dx = cx.clone();
            dx.add_scaled(&LinExpr::constant(foot[0]), -1.0);
            let mut dy = cy.clone();
            dy.add_scaled(&LinExpr::constant(foot[1]), -1.0);
            prob.ineq.push(Constraint {
                lin: LinExpr::constant(-friction_bound * friction_bound),
                quads: vec![(1.0, dx), (1.0, dy)],
                group: Group::Friction,
            });
        }
    }

    // Leg-length bounds and swing clearance.
    let state_of = |prob: &CollocationProblem, domain: usize, i: usize| -> Vec<LinExpr> {
        if domain == 0 {
            d1_state_exprs(i, prob)
        } else {
            d2_state_exprs(i, prob)
        }
    };
    for domain in 0..2 {
        let (feet, _) = prob.domain_feet(domain);
        for i in 0..n {
            let st = state_of(prob, domain, i);
            for (leg, foot) in feet.iter().enumerate() {
                let hip_sign = if leg == 0 { 1.0 } else { -1.0 }; // left hip at +pw/2
                let hip = [
                    st[0].clone(),
                    {
                        let mut e = st[1].clone();
                        e.add_scaled(
                            &LinExpr::constant(hip_sign * cfg.pelvis_width / 2.0),
                            1.0,
                        );
                        e
                    },
                    LinExpr::constant(prob.h_apex),
                ];
                let foot_exprs: [LinExpr; 3] = match foot {
                    Some(p) => [
                        LinExpr::constant(p[0]),
                        LinExpr::constant(p[1]),
                        LinExpr::constant(p[2]),
                    ],
                    None => [st[4].clone(), st[5].clone(), st[6].clone()],
                };
                let mut comps = Vec::with_capacity(3);
                for k in 0..3 {
                    let mut e = hip[k].clone();
                    e.add_scaled(&foot_exprs[k], -1.0);
                    comps.push(e);
                }
                let max_enf = cfg.leg_max - LEG_BUFFER;
                let min_enf = cfg.leg_min + LEG_BUFFER;
                prob.ineq.push(Constraint {
                    lin: LinExpr::constant(-max_enf * max_enf),
                    quads: comps.iter().map(|e| (1.0, e.clone())).collect(),
                    group: Group::Kinematics,
                });
                prob.ineq.push(Constraint {
                    lin: LinExpr::constant(min_enf * min_enf),
                    quads: comps.iter().map(|e| (-1.0, e.clone())).collect(),
                    group: Group::Kinematics,
                });
            }
            if domain == 0 {
                // Swing-foot clearance: s_z ≥ 0.
                prob.ineq.push(Constraint {
                    lin: LinExpr::var(prob.d1(i, 6)).scaled(-1.0),
                    quads: vec![],
                    group: Group::Kinematics,
                });
                // Control box.
                for k in 0..CTRL {
                    let u = LinExpr::var(prob.u(i, k));
                    let mut hi = u.clone();
                    hi.add_scaled(&LinExpr::constant(cfg.swing_accel_max), -1.0);
                    prob.ineq.push(Constraint {
                        lin: hi,
                        quads: vec![],
                        group: Group::ControlBounds,
                    });
                    let mut lo = u.scaled(-1.0);
                    lo.add_scaled(&LinExpr::constant(cfg.swing_accel_max), -1.0);
                    prob.ineq.push(Constraint {
                        lin: lo,
                        quads: vec![],
                        group: Group::ControlBounds,
                    });
                }
            }
        }
    }

    // Self-collision constraints at nodes and interval midpoints. The
    // solver enforces a slightly inflated bound so that the true bound
    // holds between the enforcement points as well.
    let d_enforce = cfg.d_min + COLLISION_BUFFER;
    let fractions = cfg.pair_fractions();
    let push_collision = |prob: &mut CollocationProblem, domain: usize, st: &[LinExpr]| {
        let (feet, _) = prob.domain_feet(domain);
        let mut leg_points: Vec<Vec<[LinExpr; 3]>> = Vec::with_capacity(2);
        for (leg, foot) in feet.iter().enumerate() {
            let hip_sign = if leg == 0 { 1.0 } else { -1.0 };
            let hip = [
                st[0].clone(),
                {
                    let mut e = st[1].clone();
                    e.add_scaled(&LinExpr::constant(hip_sign * cfg.pelvis_width / 2.0), 1.0);
                    e
                },
                LinExpr::constant(prob.h_apex),
            ];
            let foot_exprs: [LinExpr; 3] = match foot {
                Some(p) => [
                    LinExpr::constant(p[0]),
                    LinExpr::constant(p[1]),
                    LinExpr::constant(p[2]),
                ],
                None => [st[4].clone(), st[5].clone(), st[6].clone()],
            };
            let pts = fractions
                .iter()
                .map(|&tau| {
                    let mut p: [LinExpr; 3] =
                        [LinExpr::default(), LinExpr::default(), LinExpr::default()];
                    for k in 0..3 {
                        let mut e = hip[k].scaled(1.0 - tau);
                        e.add_scaled(&foot_exprs[k], tau);
                        p[k] = e;
                    }
                    p
                })
                .collect();
            leg_points.push(pts);
        }
        for m in 0..fractions.len() {
            let mut quads = Vec::with_capacity(3);
            for k in 0..3 {
                let mut d = leg_points[0][m][k].clone();
                d.add_scaled(&leg_points[1][m][k], -1.0);
                quads.push((-1.0, d));
            }
            prob.ineq.push(Constraint {
                lin: LinExpr::constant(d_enforce * d_enforce),
                quads,
                group: Group::Collision,
            });
        }
    };
    for domain in 0..2 {
        for i in 0..n {
            let st = state_of(prob, domain, i);
            push_collision(prob, domain, &st);
        }
    }
    for (domain, xm) in &midpoints {
        push_collision(prob, *domain, xm);
    }
}

impl CollocationProblem {
    /// Initial guess: CoM nodes on the exact pendulum flow, swing foot on a
    /// smoothstep arc from its origin to the landing placement.
    pub fn initial_guess(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n_vars];
        let plan = &self.plan;
        let params_omega = self.omega;
        let n = self.n;
        let flow = |s: PhaseState, foot: f64, t: f64| -> PhaseState {
            // Same closed form as the planner; rebuilt here from ω directly.
            let d0 = s.p - foot;
            let (sh, ch) = ((params_omega * t).sinh(), (params_omega * t).cosh());
            PhaseState {
                p: foot + d0 * ch + s.v / params_omega * sh,
                v: d0 * params_omega * sh + s.v * ch,
            }
        };
        let t1 = plan.timing.t1;
        let t2 = plan.timing.t2;
        let z_arc = 0.06;
        for i in 0..n {
            let t = self.h1 * i as f64;
            let sag = flow(plan.sagittal_start, plan.foot_current[0], t);
            let lat = flow(plan.lateral_start, plan.foot_current[1], t);
            x[self.d1(i, 0)] = sag.p;
            x[self.d1(i, 1)] = lat.p;
            x[self.d1(i, 2)] = sag.v;
            x[self.d1(i, 3)] = lat.v;
            let theta = t / t1;
            let blend = 3.0 * theta * theta - 2.0 * theta * theta * theta;
            let dblend = (6.0 * theta - 6.0 * theta * theta) / t1;
            let ddblend = (6.0 - 12.0 * theta) / (t1 * t1);
            for k in 0..2 {
                let a = plan.swing_origin[k];
                let b = plan.foot_next[k];
                x[self.d1(i, 4 + k)] = a + (b - a) * blend;
                x[self.d1(i, 7 + k)] = (b - a) * dblend;
                x[self.u(i, k)] = (b - a) * ddblend;
            }
            x[self.d1(i, 6)] = 4.0 * z_arc * theta * (1.0 - theta);
            x[self.d1(i, 9)] = 4.0 * z_arc * (1.0 - 2.0 * theta) / t1;
            x[self.u(i, 2)] = -8.0 * z_arc / (t1 * t1);
        }
        let switch_sag = plan.timing.switch_state;
        let switch_lat = plan.lateral_switch;
        for i in 0..n {
            let t = self.h2 * i as f64;
            let sag = flow(switch_sag, plan.foot_next[0], t);
            let lat = flow(switch_lat, plan.foot_next[1], t);
            x[self.d2(i, 0)] = sag.p;
            x[self.d2(i, 1)] = lat.p;
            x[self.d2(i, 2)] = sag.v;
            x[self.d2(i, 3)] = lat.v;
        }
        let _ = t2;
        x
    }

    /// Dynamics defects only, for a given decision vector.
    pub fn hermite_simpson_defects(&self, x: &[f64]) -> Result<Vec<f64>, TrajOptError> {
        if x.len() != self.n_vars {
            return Err(TrajOptError::DimensionMismatch {
                expected: self.n_vars,
                got: x.len(),
            });
        }
        Ok(self
            .eq
            .iter()
            .filter(|c| c.group == Group::Dynamics)
            .map(|c| c.value(x))
            .collect())
    }

    /// Counts constraints per group: (equalities, inequalities).
    pub fn group_counts(&self, group: Group) -> (usize, usize) {
        (
            self.eq.iter().filter(|c| c.group == group).count(),
            self.ineq.iter().filter(|c| c.group == group).count(),
        )
    }

    /// Numeric state at parameter θ ∈ [0,1] of interval `i` in `domain`,
    /// via the cubic Hermite interpolant consistent with the collocation.
    fn interp_state(&self, x: &[f64], domain: usize, i: usize, theta: f64) -> Vec<f64> {
        let (dim, h, foot) = if domain == 0 {
            (D1_STATE, self.h1, self.plan.foot_current)
        } else {
            (
                D2_STATE,
                self.h2,
                [self.plan.foot_next[0], self.plan.foot_next[1]],
            )
        };
        let get = |node: usize, k: usize| -> f64 {
            if domain == 0 {
                x[self.d1(node, k)]
            } else {
                x[self.d2(node, k)]
            }
        };
        let xi: Vec<f64> = (0..dim).map(|k| get(i, k)).collect();
        let xip: Vec<f64> = (0..dim).map(|k| get(i + 1, k)).collect();
        let ui: Option<Vec<f64>> = (domain == 0).then(|| (0..CTRL).map(|k| x[self.u(i, k)]).collect());
        let uip: Option<Vec<f64>> =
            (domain == 0).then(|| (0..CTRL).map(|k| x[self.u(i + 1, k)]).collect());
        let fi = numeric_dynamics(&xi, ui.as_deref(), foot, self.omega);
        let fip = numeric_dynamics(&xip, uip.as_deref(), foot, self.omega);
        let (t, t2, t3) = (theta, theta * theta, theta * theta * theta);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        (0..dim)
            .map(|k| h00 * xi[k] + h10 * h * fi[k] + h01 * xip[k] + h11 * h * fip[k])
            .collect()
    }

    /// Re-checks the path constraints on a densely resampled trajectory
    /// (`density` samples per interval) and reports the worst violation and
    /// the minimum collision pair distance.
    pub fn audit(&self, x: &[f64], density: usize) -> AuditReport {
        let mut worst = 0.0f64;
        let mut min_dist = f64::INFINITY;
        let mut check = |domain: usize, st: &[f64]| {
            let geom = self.node_geometry(domain, st);
            let stance_foot = if domain == 0 {
                self.plan.foot_current
            } else {
                [self.plan.foot_next[0], self.plan.foot_next[1]]
            };
            let fb = self.cfg.friction_mu * self.h_apex;
            let dx = st[0] - stance_foot[0];
            let dy = st[1] - stance_foot[1];
            worst = worst.max(dx * dx + dy * dy - fb * fb);
            for (a, b) in leg_segments(&geom, self.h_apex, self.cfg.pelvis_width) {
                let len2 = dist2(a, b);
                worst = worst
                    .max(len2 - self.cfg.leg_max * self.cfg.leg_max)
                    .max(self.cfg.leg_min * self.cfg.leg_min - len2);
            }
            if domain == 0 {
                worst = worst.max(-st[6]);
            }
            for c in collision_distances(&geom, self.h_apex, &self.cfg) {
                worst = worst.max(c);
            }
            min_dist = min_dist.min(min_pair_distance(&geom, self.h_apex, &self.cfg));
        };
        for domain in 0..2 {
            for i in 0..self.n - 1 {
                for s in 0..density {
                    let theta = s as f64 / density as f64;
                    let st = self.interp_state(x, domain, i, theta);
                    check(domain, &st);
                }
            }
            // Final node of the domain.
            let st = self.interp_state(x, domain, self.n - 2, 1.0);
            check(domain, &st);
        }
        // Discrete equalities at the solved resolution.
        for c in &self.eq {
            worst = worst.max(c.value(x).abs());
        }
        AuditReport {
            max_violation: worst,
            min_pair_distance: min_dist,
        }
    }

    /// Leg geometry of a node state in a domain.
    pub fn node_geometry(&self, domain: usize, st: &[f64]) -> NodeGeometry {
        let (feet, _) = self.domain_feet(domain);
        let resolve = |f: &Option<[f64; 3]>| -> [f64; 3] {
            match f {
                Some(p) => *p,
                None => [st[4], st[5], st[6]],
            }
        };
        NodeGeometry {
            com: [st[0], st[1]],
            left_foot: resolve(&feet[0]),
            right_foot: resolve(&feet[1]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AuditReport {
    pub max_violation: f64,
    pub min_pair_distance: f64,
}

fn numeric_dynamics(x: &[f64], u: Option<&[f64]>, foot: [f64; 2], omega: f64) -> Vec<f64> {
    let w2 = omega * omega;
    let mut f = vec![x[2], x[3], w2 * (x[0] - foot[0]), w2 * (x[1] - foot[1])];
    if let Some(u) = u {
        f.extend_from_slice(&[x[7], x[8], x[9], u[0], u[1], u[2]]);
    }
    f
}

/// Point-mass leg geometry at one instant: CoM plus both foot positions.
#[derive(Debug, Clone, Copy)]
pub struct NodeGeometry {
    pub com: [f64; 2],
    pub left_foot: [f64; 3],
    pub right_foot: [f64; 3],
}

fn leg_segments(g: &NodeGeometry, h_apex: f64, pelvis_width: f64) -> [([f64; 3], [f64; 3]); 2] {
    let hip_l = [g.com[0], g.com[1] + pelvis_width / 2.0, h_apex];
    let hip_r = [g.com[0], g.com[1] - pelvis_width / 2.0, h_apex];
    [(hip_l, g.left_foot), (hip_r, g.right_foot)]
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Signed collision constraint values per pair: ‖d_min‖² − ‖d_m‖², where d_m
/// is the difference between matched fraction points on the two legs.
/// Positive values mean violation.
pub fn collision_distances(g: &NodeGeometry, h_apex: f64, cfg: &ReducedModelConfig) -> Vec<f64> {
    let [(hl, fl), (hr, fr)] = leg_segments(g, h_apex, cfg.pelvis_width);
    cfg.pair_fractions()
        .iter()
        .map(|&tau| {
            let mut d2 = 0.0;
            for k in 0..3 {
                let pl = (1.0 - tau) * hl[k] + tau * fl[k];
                let pr = (1.0 - tau) * hr[k] + tau * fr[k];
                d2 += (pl - pr) * (pl - pr);
            }
            cfg.d_min * cfg.d_min - d2
        })
        .collect()
}

/// Minimum distance over the matched leg point pairs.
pub fn min_pair_distance(g: &NodeGeometry, h_apex: f64, cfg: &ReducedModelConfig) -> f64 {
    let d_min2 = cfg.d_min * cfg.d_min;
    collision_distances(g, h_apex, cfg)
        .into_iter()
        .map(|c| (d_min2 - c).max(0.0).sqrt())
        .fold(f64::INFINITY, f64::min)
}

impl SmoothProblem for CollocationProblem {
    fn n_vars(&self) -> usize {
        self.n_vars
    }
    fn n_eq(&self) -> usize {
        self.eq.len()
    }
    fn n_ineq(&self) -> usize {
        self.ineq.len()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..self.n {
            for k in 0..CTRL {
                let u = x[self.u(i, k)];
                v += self.weights[0] * u * u;
            }
        }
        v
    }
    fn objective_grad(&self, x: &[f64], g: &mut [f64]) {
        g.fill(0.0);
        for i in 0..self.n {
            for k in 0..CTRL {
                let idx = self.u(i, k);
                g[idx] = 2.0 * self.weights[0] * x[idx];
            }
        }
    }
    fn eval_eq(&self, x: &[f64], out: &mut [f64]) {
        for (i, c) in self.eq.iter().enumerate() {
            out[i] = c.value(x);
        }
    }
    fn eval_ineq(&self, x: &[f64], out: &mut [f64]) {
        for (i, c) in self.ineq.iter().enumerate() {
            out[i] = c.value(x);
        }
    }
    fn eq_grad_accum(&self, x: &[f64], w: &[f64], g: &mut [f64]) {
        for (i, c) in self.eq.iter().enumerate() {
            if w[i] != 0.0 {
                c.grad_accum(x, w[i], g);
            }
        }
    }
    fn ineq_grad_accum(&self, x: &[f64], w: &[f64], g: &mut [f64]) {
        for (i, c) in self.ineq.iter().enumerate() {
            if w[i] != 0.0 {
                c.grad_accum(x, w[i], g);
            }
        }
    }
    fn objective_hessian_accum(&self, _x: &[f64], h: &mut crate::traj_opt::solver::DenseMat) {
        for i in 0..self.n {
            for k in 0..CTRL {
                let idx = self.u(i, k);
                h.add(idx, idx, 2.0 * self.weights[0]);
            }
        }
    }
    fn eq_hessian_accum(
        &self,
        x: &[f64],
        w: &[f64],
        rho: &[f64],
        h: &mut crate::traj_opt::solver::DenseMat,
    ) {
        for (i, c) in self.eq.iter().enumerate() {
            c.hess_accum(x, w[i], rho[i], h);
        }
    }
    fn ineq_hessian_accum(
        &self,
        x: &[f64],
        w: &[f64],
        rho: &[f64],
        h: &mut crate::traj_opt::solver::DenseMat,
    ) {
        for (i, c) in self.ineq.iter().enumerate() {
            if w[i] != 0.0 || rho[i] != 0.0 {
                c.hess_accum(x, w[i], rho[i], h);
            }
        }
    }
}
