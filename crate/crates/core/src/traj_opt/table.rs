//! Transition candidate enumeration, per-transition feasibility checking, and
//! the feasibility table artifact (CSV plus JSON metadata).
//!
//! Two candidate families are enumerated, both on the canonical right stance
//! (left-stance queries mirror to it exactly):
//!
//! * `Crossed` — current sagittal/lateral cells with nonzero velocity and the
//!   lateral motion toward the stance foot, times nonzero-velocity next
//!   sagittal cells: 9 × 9 × 9 = 729 candidates. These are the push states
//!   that may force crossed-leg placements.
//! * `Wider` — current lateral cells in the zero/slow/medium velocity rows
//!   moving away from the stance foot (zero-velocity cells at their periodic
//!   or cell-center sway), same sagittal enumeration: another 729. These
//!   cover steady walking, wide-step recoveries, and post-crossed rebounds.
//!
//! For each candidate the next lateral cell and the achieved step width are
//! computed by phase-space planning; the collocation solver then issues the
//! verdict.

use crate::config::PlannerConfig;
use crate::phase_space::{
    classify_lateral, nearest_width_class, periodic_sway, plan_transition, solve_ows_timing,
    BodyState, LatDir, PhaseState, PipmParams, PosClass, RiemannianCell, Side, SizeClass,
    TransitionPlan, VelClass,
};
use crate::traj_opt::collocation::{build_nlp, ReducedModelConfig};
use crate::traj_opt::solver::{solve, SolveStatus, SolverOptions};
use crate::util::{fmt_f64, parse_f64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Crossed,
    Wider,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Crossed => "crossed",
            Family::Wider => "wider",
        })
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "crossed" => Ok(Family::Crossed),
            "wider" => Ok(Family::Wider),
            other => Err(format!("unknown family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Feasible,
    Infeasible,
}

/// One enumerated transition candidate (canonical right stance).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionCandidate {
    pub family: Family,
    pub sag_c: RiemannianCell,
    pub lat_c: RiemannianCell,
    pub cur_dir: LatDir,
    pub sag_n: RiemannianCell,
    pub length: SizeClass,
}

/// Verdict row of the feasibility table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityRecord {
    pub family: Family,
    pub stance: Side,
    pub sag_c: RiemannianCell,
    pub lat_c: RiemannianCell,
    pub cur_dir: LatDir,
    pub length: SizeClass,
    pub sag_n: RiemannianCell,
    pub lat_n: RiemannianCell,
    pub next_dir: LatDir,
    pub width: SizeClass,
    /// Achieved signed step width in the stance-local frame (negative =
    /// crossed-leg placement).
    pub width_signed: f64,
    pub verdict: Verdict,
    /// Empty for feasible rows; otherwise the failure stage.
    pub cause: String,
    /// Minimum matched-pair leg distance over the solved trajectory (m).
    pub min_distance: Option<f64>,
    pub iterations: u32,
}

impl FeasibilityRecord {
    pub fn is_feasible(&self) -> bool {
        self.verdict == Verdict::Feasible
    }
}

/// Table metadata written alongside the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub schema_version: u32,
    pub config_hash: String,
    pub content_digest: String,
    pub feas_tol: f64,
    pub stat_tol: f64,
    /// The contact-switch state map on the reduced model (no velocity jump).
    pub reset_map: String,
    pub nodes_per_domain: usize,
    pub total_rows: usize,
    pub crossed_rows: usize,
    pub wider_rows: usize,
    pub feasible_rows: usize,
}

/// The table of verified keyframe transitions.
#[derive(Debug, Clone)]
pub struct FeasibilityTable {
    pub records: Vec<FeasibilityRecord>,
    index: BTreeMap<(RiemannianCell, RiemannianCell, LatDir), Vec<usize>>,
}

impl FeasibilityTable {
    pub fn new(records: Vec<FeasibilityRecord>) -> Self {
        let mut index: BTreeMap<(RiemannianCell, RiemannianCell, LatDir), Vec<usize>> =
            BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.is_feasible() {
                index
                    .entry((r.sag_c, r.lat_c, r.cur_dir))
                    .or_default()
                    .push(i);
            }
        }
        Self { records, index }
    }

    /// Feasible rows from a classified current state.
    pub fn feasible_from(
        &self,
        sag: RiemannianCell,
        lat: RiemannianCell,
        dir: LatDir,
    ) -> impl Iterator<Item = &FeasibilityRecord> {
        self.index
            .get(&(sag, lat, dir))
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    /// True when at least one feasible transition leaves this state.
    pub fn covered(&self, sag: RiemannianCell, lat: RiemannianCell, dir: LatDir) -> bool {
        self.index.contains_key(&(sag, lat, dir))
    }

    pub fn crossed_candidate_rows(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.family == Family::Crossed)
            .count()
    }

    pub fn feasible_rows(&self) -> usize {
        self.records.iter().filter(|r| r.is_feasible()).count()
    }

    const HEADER: &'static str = "family,stance,sag_c,lat_c,cur_dir,length,sag_n,lat_n,next_dir,width,width_signed,verdict,cause,min_distance,iterations";

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 96);
        out.push_str(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.family,
                r.stance,
                r.sag_c,
                r.lat_c,
                r.cur_dir,
                r.length,
                r.sag_n,
                r.lat_n,
                r.next_dir,
                r.width,
                fmt_f64(r.width_signed),
                match r.verdict {
                    Verdict::Feasible => "feasible",
                    Verdict::Infeasible => "infeasible",
                },
                r.cause,
                r.min_distance.map(fmt_f64).unwrap_or_default(),
                r.iterations,
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == Self::HEADER => {}
            _ => {
                return Err(TableError::Parse {
                    line: 1,
                    msg: "missing or unexpected header".into(),
                })
            }
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let err = |msg: String| TableError::Parse { line: lineno, msg };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 15 {
                return Err(err(format!("expected 15 columns, got {}", cols.len())));
            }
            let cell = |s: &str| RiemannianCell::from_str(s).map_err(&err);
            records.push(FeasibilityRecord {
                family: cols[0].parse().map_err(&err)?,
                stance: cols[1].parse().map_err(&err)?,
                sag_c: cell(cols[2])?,
                lat_c: cell(cols[3])?,
                cur_dir: cols[4].parse().map_err(&err)?,
                length: cols[5].parse().map_err(&err)?,
                sag_n: cell(cols[6])?,
                lat_n: cell(cols[7])?,
                next_dir: cols[8].parse().map_err(&err)?,
                width: cols[9].parse().map_err(&err)?,
                width_signed: parse_f64(cols[10]).map_err(|e| err(e.to_string()))?,
                verdict: match cols[11] {
                    "feasible" => Verdict::Feasible,
                    "infeasible" => Verdict::Infeasible,
                    other => return Err(err(format!("bad verdict `{other}`"))),
                },
                cause: cols[12].to_string(),
                min_distance: if cols[13].is_empty() {
                    None
                } else {
                    Some(parse_f64(cols[13]).map_err(|e| err(e.to_string()))?)
                },
                iterations: cols[14].parse().map_err(|e: std::num::ParseIntError| {
                    err(e.to_string())
                })?,
            });
        }
        Ok(Self::new(records))
    }

    pub fn meta(&self, config_hash: &str, cfg: &ReducedModelConfig) -> TableMeta {
        TableMeta {
            schema_version: 1,
            config_hash: config_hash.to_string(),
            content_digest: content_digest(&self.to_csv()),
            feas_tol: 1e-6,
            stat_tol: 1e-4,
            reset_map: "identity".to_string(),
            nodes_per_domain: cfg.nodes_per_domain,
            total_rows: self.records.len(),
            crossed_rows: self.crossed_candidate_rows(),
            wider_rows: self
                .records
                .iter()
                .filter(|r| r.family == Family::Wider)
                .count(),
            feasible_rows: self.feasible_rows(),
        }
    }
}

/// SHA-256 hex digest of an artifact's text content.
pub fn content_digest(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

const NONZERO_VELS: [VelClass; 3] = [VelClass::Slow, VelClass::Medium, VelClass::Fast];
const LOWER_VELS: [VelClass; 3] = [VelClass::Zero, VelClass::Slow, VelClass::Medium];

/// Enumerates both candidate families in deterministic order.
pub fn enumerate_candidates() -> Vec<TransitionCandidate> {
    let mut out = Vec::with_capacity(1458);
    let nonzero_cells = || {
        PosClass::ALL.into_iter().flat_map(|p| {
            NONZERO_VELS
                .into_iter()
                .map(move |v| RiemannianCell::new(p, v))
        })
    };
    for sag_c in nonzero_cells() {
        for lat_c in nonzero_cells() {
            for sag_n in nonzero_cells() {
                out.push(TransitionCandidate {
                    family: Family::Crossed,
                    sag_c,
                    lat_c,
                    cur_dir: LatDir::Toward,
                    sag_n,
                    length: SizeClass::Medium,
                });
            }
        }
    }
    for sag_c in nonzero_cells() {
        for lat_pos in PosClass::ALL {
            for lat_vel in LOWER_VELS {
                let lat_c = RiemannianCell::new(lat_pos, lat_vel);
                for sag_n in nonzero_cells() {
                    out.push(TransitionCandidate {
                        family: Family::Wider,
                        sag_c,
                        lat_c,
                        cur_dir: LatDir::Away,
                        sag_n,
                        length: SizeClass::Medium,
                    });
                }
            }
        }
    }
    out
}

/// Concretizes a candidate into a continuous body state on the canonical
/// right stance with the foot at the origin.
///
/// Lateral zero-velocity cells take their sway from the periodic
/// medium-width gait when the position class is `zero` (the cell-center
/// state would be the pendulum fixed point, which cannot walk) and the cell
/// center otherwise; nonzero-velocity cells take the cell center with the
/// candidate's motion direction.
pub fn concretize(
    cand: &TransitionCandidate,
    params: &PipmParams,
) -> Result<BodyState, String> {
    let f1 = [0.0, 0.0];
    let sagittal = PhaseState::new(
        params.p_centers[cand.sag_c.pos.index()],
        params.v_centers[cand.sag_c.vel.index()],
    );
    let l = params.length(cand.length);
    let sag_target = PhaseState::new(
        l + params.p_centers[cand.sag_n.pos.index()],
        params.v_centers[cand.sag_n.vel.index()],
    );
    let lateral = if cand.lat_c.vel == VelClass::Zero {
        let lambda = match cand.lat_c.pos {
            PosClass::Zero => {
                let timing = solve_ows_timing(sagittal, sag_target, 0.0, l, params)
                    .map_err(|e| format!("no_switch: {e}"))?;
                periodic_sway(
                    params.width(SizeClass::Medium),
                    timing.t1,
                    timing.t2,
                    params.omega(),
                )
            }
            other => params.p_centers[other.index()],
        };
        PhaseState::new(lambda, 0.0)
    } else {
        let sign = match cand.cur_dir {
            LatDir::Toward => -1.0,
            LatDir::Away => 1.0,
        };
        PhaseState::new(
            params.p_centers[cand.lat_c.pos.index()],
            sign * params.v_centers[cand.lat_c.vel.index()],
        )
    };
    Ok(BodyState {
        sagittal,
        lateral,
        stance: Side::Right,
        stance_foot: f1,
        swing_origin: [
            f1[0] - l,
            f1[1] + Side::Right.lateral_sign() * params.width(SizeClass::Medium),
        ],
    })
}

/// Planning outcome of a candidate: the computed next lateral cell, motion
/// direction, and achieved width.
pub struct PlannedCandidate {
    pub plan: TransitionPlan,
    pub lat_n: RiemannianCell,
    pub next_dir: LatDir,
    pub width: SizeClass,
}

pub fn plan_candidate(
    body: &BodyState,
    cand: &TransitionCandidate,
    params: &PipmParams,
    planner: &PlannerConfig,
) -> Result<PlannedCandidate, String> {
    let plan = plan_transition(body, cand.sag_n, cand.length, params, &planner.caps())
        .map_err(|e| format!("no_switch: {e}"))?;
    let next_stance = body.stance.other();
    let lat_n = classify_lateral(
        plan.lateral_target,
        plan.foot_next[1],
        next_stance,
        params,
    )
    .map_err(|e| format!("out_of_range: {e}"))?;
    // Also require the sagittal target to classify (it is a cell center by
    // construction, but keep the check for non-center widths of v_centers).
    let frame_vel = next_stance.lateral_sign() * plan.lateral_target.v;
    let next_dir = LatDir::of(frame_vel, lat_n.vel);
    let width = nearest_width_class(plan.width_signed.abs(), params);
    Ok(PlannedCandidate {
        plan,
        lat_n,
        next_dir,
        width,
    })
}

fn failed_record(cand: &TransitionCandidate, cause: &str) -> FeasibilityRecord {
    let stage = cause.split(':').next().unwrap_or("planning").to_string();
    FeasibilityRecord {
        family: cand.family,
        stance: Side::Right,
        sag_c: cand.sag_c,
        lat_c: cand.lat_c,
        cur_dir: cand.cur_dir,
        length: cand.length,
        sag_n: cand.sag_n,
        lat_n: cand.lat_c,
        next_dir: cand.cur_dir,
        width: SizeClass::Medium,
        width_signed: 0.0,
        verdict: Verdict::Infeasible,
        cause: stage,
        min_distance: None,
        iterations: 0,
    }
}

/// Runs the full pipeline on one candidate: concretize, plan, transcribe,
/// solve, audit. Deterministic.
pub fn check_transition(
    cand: &TransitionCandidate,
    cfg: &ReducedModelConfig,
    params: &PipmParams,
    planner: &PlannerConfig,
) -> FeasibilityRecord {
    let body = match concretize(cand, params) {
        Ok(b) => b,
        Err(cause) => return failed_record(cand, &cause),
    };
    let planned = match plan_candidate(&body, cand, params, planner) {
        Ok(p) => p,
        Err(cause) => return failed_record(cand, &cause),
    };
    let problem = match build_nlp(&planned.plan, cfg, params, planner.objective_weights) {
        Ok(p) => p,
        Err(e) => {
            let mut rec = failed_record(cand, "bad_transition");
            rec.cause = format!("bad_transition");
            let _ = e;
            rec.lat_n = planned.lat_n;
            rec.next_dir = planned.next_dir;
            rec.width = planned.width;
            rec.width_signed = planned.plan.width_signed;
            return rec;
        }
    };
    let opts = SolverOptions::default();
    let result = solve(&problem, problem.initial_guess(), &opts);
    let audit = problem.audit(&result.x, 5);
    let (verdict, cause) = match result.status {
        SolveStatus::Feasible => {
            if audit.max_violation <= opts.feas_tol {
                (Verdict::Feasible, String::new())
            } else {
                (Verdict::Infeasible, "audit".to_string())
            }
        }
        SolveStatus::Infeasible => (Verdict::Infeasible, "nlp_infeasible".to_string()),
        SolveStatus::MaxIterations => (Verdict::Infeasible, "max_iterations".to_string()),
    };
    FeasibilityRecord {
        family: cand.family,
        stance: Side::Right,
        sag_c: cand.sag_c,
        lat_c: cand.lat_c,
        cur_dir: cand.cur_dir,
        length: cand.length,
        sag_n: cand.sag_n,
        lat_n: planned.lat_n,
        next_dir: planned.next_dir,
        width: planned.width,
        width_signed: planned.plan.width_signed,
        verdict,
        cause,
        min_distance: Some(audit.min_pair_distance),
        iterations: result.iterations,
    }
}

/// Builds the full feasibility table: a parallel map over the enumerated
/// candidates with deterministic output ordering.
pub fn build_feasibility_table(
    cfg: &ReducedModelConfig,
    params: &PipmParams,
    planner: &PlannerConfig,
) -> FeasibilityTable {
    let candidates = enumerate_candidates();
    let records: Vec<FeasibilityRecord> = candidates
        .par_iter()
        .map(|cand| check_transition(cand, cfg, params, planner))
        .collect();
    FeasibilityTable::new(records)
}
