//! Closed-form inverted-pendulum phase-space math for one walking step (OWS):
//! pendulum flow, contact-switch timing, lateral foot placement, apex
//! recalculation after a disturbance, and the Riemannian cell partition that
//! keyframe decisions operate on.
//!
//! Conventions used throughout the stack:
//!
//! * world `x` points forward (sagittal), world `y` points left (lateral);
//! * one walking step runs keyframe-to-keyframe with the contact switch in
//!   the middle (phase 0.5);
//! * lateral quantities are classified in a stance-local frame whose sign
//!   [`Side::lateral_sign`] makes the nominal mid-stance sway positive for
//!   both stance feet, so left and right stance mirror exactly.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Smallest admissible argument of the logarithmic time-of-flight form;
/// below it we fall back to bisection against the flow.
const MIN_LOG_ARG: f64 = 1e-12;

/// Errors for phase-space planning.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseSpaceError {
    /// The two pendulum phases admit no usable switch state between the
    /// footholds (no real energy intersection, or non-positive half durations,
    /// or coincident feet).
    #[error("no contact-switch point between footholds: {0}")]
    NoSwitchPoint(String),
    /// The disturbed state never crosses over the foot (orbital energy
    /// negative: the CoM reverses before the foot).
    #[error("state does not admit an apex crossing (orbital energy {energy:.6})")]
    NoApexCrossing { energy: f64 },
    /// Velocity magnitude outside the modeled partition.
    #[error("velocity magnitude {speed:.4} m/s outside the modeled partition (max {max:.4})")]
    OutOfRange { speed: f64, max: f64 },
}

/// Reduced-order pendulum and partition parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipmParams {
    /// Gravitational acceleration (m/s²).
    pub g: f64,
    /// Apex CoM height above the stance foot (m).
    pub h_apex: f64,
    /// Nominal OWS duration (s); actual step durations are solved per step.
    pub step_time: f64,
    /// Velocity cell-center magnitudes (m/s), strictly increasing, first 0.
    pub v_centers: [f64; 4],
    /// Relative-position cell centers (m), strictly increasing, symmetric.
    pub p_centers: [f64; 3],
    /// Nominal step lengths (m) for the small/medium/large classes.
    pub step_lengths: [f64; 3],
    /// Nominal step widths (m) for the small/medium/large classes.
    pub step_widths: [f64; 3],
}

impl Default for PipmParams {
    fn default() -> Self {
        Self {
            g: 9.81,
            h_apex: 1.0,
            step_time: 0.4,
            v_centers: [0.0, 0.25, 0.5, 0.75],
            p_centers: [-0.15, 0.0, 0.15],
            step_lengths: [0.25, 0.35, 0.45],
            step_widths: [0.10, 0.20, 0.30],
        }
    }
}

impl PipmParams {
    /// Divergent pendulum rate ω = √(g / h_apex).
    pub fn omega(&self) -> f64 {
        (self.g / self.h_apex).sqrt()
    }

    /// Largest velocity magnitude inside the modeled partition.
    pub fn max_speed(&self) -> f64 {
        let half_gap = (self.v_centers[3] - self.v_centers[2]) / 2.0;
        self.v_centers[3] + half_gap
    }

    pub fn length(&self, class: SizeClass) -> f64 {
        self.step_lengths[class as usize]
    }

    pub fn width(&self, class: SizeClass) -> f64 {
        self.step_widths[class as usize]
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.g > 0.0) {
            return Err("g must be positive".into());
        }
        if !(self.h_apex > 0.0) {
            return Err("h_apex must be positive".into());
        }
        if !(self.step_time > 0.0) {
            return Err("step_time must be positive".into());
        }
        if self.v_centers[0] != 0.0 {
            return Err("v_centers[0] must be 0".into());
        }
        if !self.v_centers.windows(2).all(|w| w[0] < w[1]) {
            return Err("v_centers must be strictly increasing".into());
        }
        if !self.p_centers.windows(2).all(|w| w[0] < w[1]) {
            return Err("p_centers must be strictly increasing".into());
        }
        if (self.p_centers[0] + self.p_centers[2]).abs() > 1e-12 || self.p_centers[1].abs() > 1e-12
        {
            return Err("p_centers must be symmetric about 0".into());
        }
        for arr in [&self.step_lengths, &self.step_widths] {
            if !arr.windows(2).all(|w| w[0] < w[1]) || arr[0] <= 0.0 {
                return Err("step lengths/widths must be positive and increasing".into());
            }
        }
        Ok(())
    }
}

/// One-axis CoM state: position and velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub p: f64,
    pub v: f64,
}

impl PhaseState {
    pub fn new(p: f64, v: f64) -> Self {
        Self { p, v }
    }

    /// Orbital energy v² − ω²Δ² relative to `foot`; conserved along the flow.
    pub fn orbital_energy(&self, foot: f64, omega: f64) -> f64 {
        let d = self.p - foot;
        self.v * self.v - omega * omega * d * d
    }
}

/// Stance foot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Sign σ of the stance-local lateral frame: λ = σ·(y − y_foot).
    /// Chosen so the nominal mid-stance sway is positive for both feet.
    pub fn lateral_sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

impl FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" | "l" | "L" => Ok(Side::Left),
            "right" | "r" | "R" => Ok(Side::Right),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

/// Relative-position class of a Riemannian cell.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum PosClass {
    Negative,
    Zero,
    Positive,
}

impl PosClass {
    pub const ALL: [PosClass; 3] = [PosClass::Negative, PosClass::Zero, PosClass::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    fn code(self) -> char {
        match self {
            PosClass::Negative => 'n',
            PosClass::Zero => 'z',
            PosClass::Positive => 'p',
        }
    }
}

/// Velocity-magnitude class of a Riemannian cell.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum VelClass {
    Zero,
    Slow,
    Medium,
    Fast,
}

impl VelClass {
    pub const ALL: [VelClass; 4] = [
        VelClass::Zero,
        VelClass::Slow,
        VelClass::Medium,
        VelClass::Fast,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    fn code(self) -> char {
        match self {
            VelClass::Zero => 'z',
            VelClass::Slow => 's',
            VelClass::Medium => 'm',
            VelClass::Fast => 'f',
        }
    }
}

/// One cell of the 3 × 4 position × velocity partition.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct RiemannianCell {
    pub pos: PosClass,
    pub vel: VelClass,
}

impl RiemannianCell {
    pub fn new(pos: PosClass, vel: VelClass) -> Self {
        Self { pos, vel }
    }

    /// All 12 cells in deterministic order.
    pub fn all() -> impl Iterator<Item = RiemannianCell> {
        PosClass::ALL.into_iter().flat_map(|pos| {
            VelClass::ALL
                .into_iter()
                .map(move |vel| RiemannianCell { pos, vel })
        })
    }
}

impl fmt::Display for RiemannianCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.pos.code(), self.vel.code())
    }
}

impl FromStr for RiemannianCell {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let (p, v) = (chars.next(), chars.next());
        if chars.next().is_some() {
            return Err(format!("cell code `{s}` too long"));
        }
        let pos = match p {
            Some('n') => PosClass::Negative,
            Some('z') => PosClass::Zero,
            Some('p') => PosClass::Positive,
            _ => return Err(format!("bad position code in `{s}`")),
        };
        let vel = match v {
            Some('z') => VelClass::Zero,
            Some('s') => VelClass::Slow,
            Some('m') => VelClass::Medium,
            Some('f') => VelClass::Fast,
            _ => return Err(format!("bad velocity code in `{s}`")),
        };
        Ok(RiemannianCell { pos, vel })
    }
}

/// Apex-state abstraction: sagittal cell × lateral cell × stance foot.
/// 12 × 12 × 2 = 288 members.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Keyframe {
    pub sagittal: RiemannianCell,
    pub lateral: RiemannianCell,
    pub stance: Side,
}

impl Keyframe {
    pub fn new(sagittal: RiemannianCell, lateral: RiemannianCell, stance: Side) -> Self {
        Self {
            sagittal,
            lateral,
            stance,
        }
    }

    /// All 288 keyframes in deterministic order.
    pub fn all() -> impl Iterator<Item = Keyframe> {
        RiemannianCell::all().flat_map(|sagittal| {
            RiemannianCell::all().flat_map(move |lateral| {
                [Side::Left, Side::Right]
                    .into_iter()
                    .map(move |stance| Keyframe {
                        sagittal,
                        lateral,
                        stance,
                    })
            })
        })
    }
}

impl fmt::Display for Keyframe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({})s({})l/{}",
            self.sagittal,
            self.lateral,
            match self.stance {
                Side::Left => "L",
                Side::Right => "R",
            }
        )
    }
}

/// Direction of lateral CoM motion in the stance-local frame. Cells classify
/// velocity magnitude, so this bit carries the sign the partition drops:
/// `Toward` means falling toward the stance foot (the crossed-leg danger
/// direction), `Away` means falling away from it. States with a zero lateral
/// velocity class use `Away` canonically.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum LatDir {
    Toward,
    Away,
}

impl LatDir {
    /// Direction of a classified lateral state: `frame_vel` is σ·v in the
    /// stance-local frame, `vel` its velocity class.
    pub fn of(frame_vel: f64, vel: VelClass) -> LatDir {
        if vel == VelClass::Zero || frame_vel >= 0.0 {
            LatDir::Away
        } else {
            LatDir::Toward
        }
    }
}

impl fmt::Display for LatDir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatDir::Toward => "toward",
            LatDir::Away => "away",
        })
    }
}

impl FromStr for LatDir {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toward" => Ok(LatDir::Toward),
            "away" => Ok(LatDir::Away),
            other => Err(format!("unknown lateral direction `{other}`")),
        }
    }
}

/// Step length/width size classes.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        })
    }
}

impl FromStr for SizeClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" | "s" => Ok(SizeClass::Small),
            "medium" | "m" => Ok(SizeClass::Medium),
            "large" | "l" => Ok(SizeClass::Large),
            other => Err(format!("unknown size class `{other}`")),
        }
    }
}

/// Solved timing of one walking step: first/second half durations and the
/// sagittal state at the contact switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OwsTiming {
    pub t1: f64,
    pub t2: f64,
    /// Sagittal CoM state (world coordinates) at the contact switch.
    pub switch_state: PhaseState,
}

/// Tangent-manifold coordinate σ = Δ²·(v² − ω²Δ²) of a state relative to a
/// foot. Zero exactly at apex-over-foot states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldValue {
    pub sigma: f64,
}

impl ManifoldValue {
    pub fn of(state: PhaseState, foot: f64, params: &PipmParams) -> Self {
        let omega = params.omega();
        let d = state.p - foot;
        Self {
            sigma: d * d * state.orbital_energy(foot, omega),
        }
    }
}

/// Exact pendulum flow about `foot` for time `t` (negative `t` integrates
/// backward): Δ(t) = Δ₀cosh(ωt) + (v₀/ω)sinh(ωt), v(t) = Δ₀ω sinh(ωt) + v₀cosh(ωt).
pub fn lipm_flow(state: PhaseState, foot: f64, t: f64, params: &PipmParams) -> PhaseState {
    flow_about(state, foot, t, params.omega())
}

fn flow_about(state: PhaseState, foot: f64, t: f64, omega: f64) -> PhaseState {
    let d0 = state.p - foot;
    let (sh, ch) = ((omega * t).sinh(), (omega * t).cosh());
    PhaseState {
        p: foot + d0 * ch + state.v / omega * sh,
        v: d0 * omega * sh + state.v * ch,
    }
}

/// Time to flow from `from` to `to` about `foot`, using the logarithmic form
/// on whichever pendulum mode is better conditioned; falls back to bisection
/// against the flow when both modes degenerate.
pub fn time_of_flight(from: PhaseState, to: PhaseState, foot: f64, omega: f64) -> Option<f64> {
    let (d0, d1) = (from.p - foot, to.p - foot);
    // Unstable mode grows as e^{ωt}, stable mode decays as e^{-ωt}.
    let xi0 = omega * d0 + from.v;
    let xi1 = omega * d1 + to.v;
    let eta0 = omega * d0 - from.v;
    let eta1 = omega * d1 - to.v;

    let try_unstable = || {
        if xi0.abs() < MIN_LOG_ARG {
            return None;
        }
        let arg = xi1 / xi0;
        if arg < MIN_LOG_ARG {
            return None;
        }
        Some(arg.ln() / omega)
    };
    let try_stable = || {
        if eta1.abs() < MIN_LOG_ARG {
            return None;
        }
        let arg = eta0 / eta1;
        if arg < MIN_LOG_ARG {
            return None;
        }
        Some(arg.ln() / omega)
    };

    let candidate = if xi0.abs() >= eta0.abs() {
        try_unstable().or_else(try_stable)
    } else {
        try_stable().or_else(try_unstable)
    };
    if let Some(t) = candidate {
        if t.is_finite() {
            return Some(t);
        }
    }
    bisect_time(from, to, foot, omega)
}

/// Bisection on t against the closed-form flow, matching position.
fn bisect_time(from: PhaseState, to: PhaseState, foot: f64, omega: f64) -> Option<f64> {
    const T_MAX: f64 = 10.0;
    const SCAN: f64 = 0.02;
    let residual = |t: f64| flow_about(from, foot, t, omega).p - to.p;
    let mut lo = 0.0;
    let mut f_lo = residual(lo);
    if f_lo.abs() < 1e-14 {
        return Some(0.0);
    }
    let mut hi = SCAN;
    loop {
        if hi > T_MAX {
            return None;
        }
        let f_hi = residual(hi);
        if f_lo * f_hi <= 0.0 {
            break;
        }
        lo = hi;
        f_lo = f_hi;
        hi += SCAN;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(lo) * residual(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Solves the contact-switch state and half durations for one sagittal step.
///
/// The switch position is where the orbital energies of the two pendulum
/// phases intersect (a closed-form linear solve); the durations are recovered
/// with the logarithmic time-of-flight form and cross-checked against the
/// flow.
pub fn solve_ows_timing(
    kf_sag_current: PhaseState,
    kf_sag_next: PhaseState,
    foot_current: f64,
    foot_next: f64,
    params: &PipmParams,
) -> Result<OwsTiming, PhaseSpaceError> {
    let omega = params.omega();
    let w2 = omega * omega;
    if (foot_next - foot_current).abs() < 1e-12 {
        return Err(PhaseSpaceError::NoSwitchPoint(
            "coincident footholds".into(),
        ));
    }
    let e1 = kf_sag_current.orbital_energy(foot_current, omega);
    let e2 = kf_sag_next.orbital_energy(foot_next, omega);
    let x_sw = (e2 - e1 + w2 * (foot_next * foot_next - foot_current * foot_current))
        / (2.0 * w2 * (foot_next - foot_current));
    let v_sw_sq = e1 + w2 * (x_sw - foot_current) * (x_sw - foot_current);
    if v_sw_sq < 0.0 {
        return Err(PhaseSpaceError::NoSwitchPoint(format!(
            "energies admit no real intersection (v_sw^2 = {v_sw_sq:.6})"
        )));
    }
    let dir = if (kf_sag_next.p - kf_sag_current.p).abs() > 1e-12 {
        (kf_sag_next.p - kf_sag_current.p).signum()
    } else if kf_sag_current.v.abs() > 1e-12 {
        kf_sag_current.v.signum()
    } else {
        1.0
    };
    let switch_state = PhaseState::new(x_sw, dir * v_sw_sq.sqrt());

    let t1 = time_of_flight(kf_sag_current, switch_state, foot_current, omega)
        .ok_or_else(|| PhaseSpaceError::NoSwitchPoint("first-half time unsolvable".into()))?;
    let t2 = time_of_flight(switch_state, kf_sag_next, foot_next, omega)
        .ok_or_else(|| PhaseSpaceError::NoSwitchPoint("second-half time unsolvable".into()))?;
    if !(t1 > 1e-9) || !(t2 > 1e-9) {
        return Err(PhaseSpaceError::NoSwitchPoint(format!(
            "non-positive half durations (t1 = {t1:.6}, t2 = {t2:.6})"
        )));
    }
    // Cross-check the logarithmic form against the flow itself.
    let chk1 = flow_about(kf_sag_current, foot_current, t1, omega);
    let chk2 = flow_about(switch_state, foot_next, t2, omega);
    let err = (chk1.p - switch_state.p)
        .abs()
        .max((chk1.v - switch_state.v).abs())
        .max((chk2.p - kf_sag_next.p).abs())
        .max((chk2.v - kf_sag_next.v).abs());
    if err > 1e-6 {
        return Err(PhaseSpaceError::NoSwitchPoint(format!(
            "time-of-flight cross-check failed (residual {err:.3e})"
        )));
    }
    Ok(OwsTiming {
        t1,
        t2,
        switch_state,
    })
}

/// Lateral foot placement that brings the lateral velocity to zero exactly
/// `t2` seconds after the contact switch.
///
/// Derived from the pendulum flow: v(t2) = 0 requires
/// Δ_switch = −(v/ω)·coth(ω t2), i.e. p_foot = p_switch + (v/ω)·coth(ω t2).
/// For `t2 = 0` the nulling problem is ill-posed and the switch position is
/// returned unchanged.
pub fn lateral_foot_placement(switch_lateral: PhaseState, t2: f64, params: &PipmParams) -> f64 {
    if t2 <= 0.0 || switch_lateral.v == 0.0 {
        return switch_lateral.p;
    }
    let omega = params.omega();
    let coth = 1.0 / (omega * t2).tanh();
    switch_lateral.p + switch_lateral.v / omega * coth
}

/// Recalculates the next apex state after a mid-step disturbance, keeping the
/// foot placement (position-guard strategy).
///
/// The disturbed state lands on a tangent manifold σ′ = Δ′²(v′² − ω²Δ′²); the
/// apex-over-foot velocity solves A² − v′²A + ω²σ′ = 0, whose roots are the
/// orbital energy E and ω²Δ′². The root on the disturbed state's energy
/// manifold (E) is the post-crossing apex; the conjugate root is rejected.
pub fn position_guard_recalc(
    disturbed: PhaseState,
    foot: f64,
    params: &PipmParams,
) -> Result<PhaseState, PhaseSpaceError> {
    let omega = params.omega();
    let energy = disturbed.orbital_energy(foot, omega);
    if energy < 0.0 {
        return Err(PhaseSpaceError::NoApexCrossing { energy });
    }
    let dir = if disturbed.v != 0.0 {
        disturbed.v.signum()
    } else {
        1.0
    };
    Ok(PhaseState {
        p: foot,
        v: dir * energy.sqrt(),
    })
}

/// Classifies a one-axis state into its Riemannian cell. Position classes by
/// nearest position center, velocity classes by nearest velocity center of
/// |v|; boundary ties go to the lower cell.
pub fn classify_cell(
    apex: PhaseState,
    foot: f64,
    params: &PipmParams,
) -> Result<RiemannianCell, PhaseSpaceError> {
    let d = apex.p - foot;
    let pc = &params.p_centers;
    let pos = if d <= (pc[0] + pc[1]) / 2.0 {
        PosClass::Negative
    } else if d <= (pc[1] + pc[2]) / 2.0 {
        PosClass::Zero
    } else {
        PosClass::Positive
    };
    let speed = apex.v.abs();
    let max = params.max_speed();
    if speed > max {
        return Err(PhaseSpaceError::OutOfRange { speed, max });
    }
    let vc = &params.v_centers;
    let vel = if speed <= (vc[0] + vc[1]) / 2.0 {
        VelClass::Zero
    } else if speed <= (vc[1] + vc[2]) / 2.0 {
        VelClass::Slow
    } else if speed <= (vc[2] + vc[3]) / 2.0 {
        VelClass::Medium
    } else {
        VelClass::Fast
    };
    Ok(RiemannianCell { pos, vel })
}

/// Classifies a lateral world state in the stance-local frame of `stance`.
pub fn classify_lateral(
    state: PhaseState,
    foot_y: f64,
    stance: Side,
    params: &PipmParams,
) -> Result<RiemannianCell, PhaseSpaceError> {
    let sigma = stance.lateral_sign();
    let local = PhaseState::new(sigma * (state.p - foot_y), sigma * state.v);
    classify_cell(local, 0.0, params)
}

/// True iff the keyframe is a steady-state keyframe: sagittal apex position
/// over the foot and zero lateral apex velocity.
pub fn is_steady_state(k: &Keyframe) -> bool {
    k.sagittal.pos == PosClass::Zero && k.lateral.vel == VelClass::Zero
}

/// Propagates the lateral state through one step: to the contact switch under
/// the current foot, foot placement by the velocity-nulling rule, then to the
/// next keyframe. The returned apex has zero lateral velocity.
pub fn next_lateral_keyframe(
    sag_current: PhaseState,
    sag_next: PhaseState,
    lateral_now: PhaseState,
    foot_current: [f64; 2],
    foot_next_x: f64,
    params: &PipmParams,
) -> Result<(PhaseState, [f64; 2]), PhaseSpaceError> {
    let timing = solve_ows_timing(
        sag_current,
        sag_next,
        foot_current[0],
        foot_next_x,
        params,
    )?;
    let lat_switch = lipm_flow(lateral_now, foot_current[1], timing.t1, params);
    let foot_next_y = lateral_foot_placement(lat_switch, timing.t2, params);
    let apex = lipm_flow(lat_switch, foot_next_y, timing.t2, params);
    Ok((apex, [foot_next_x, foot_next_y]))
}

/// Caps on the signed step width available to the placement planner. Widths
/// are signed in the stance-local frame: positive is a normal-orientation
/// step, negative is a crossed-leg step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementCaps {
    /// Largest crossed-leg width magnitude (m).
    pub max_crossed_width: f64,
    /// Largest normal-orientation width (m).
    pub max_step_width: f64,
}

impl Default for PlacementCaps {
    fn default() -> Self {
        Self {
            max_crossed_width: 0.12,
            max_step_width: 0.5,
        }
    }
}

/// Continuous body state at a keyframe instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub sagittal: PhaseState,
    pub lateral: PhaseState,
    pub stance: Side,
    /// World position of the stance foot.
    pub stance_foot: [f64; 2],
    /// World position of the other (currently swinging) foot's last placement.
    pub swing_origin: [f64; 2],
}

impl BodyState {
    /// Classifies the body state into its keyframe.
    pub fn keyframe(&self, params: &PipmParams) -> Result<Keyframe, PhaseSpaceError> {
        let sagittal = classify_cell(self.sagittal, self.stance_foot[0], params)?;
        let lateral = classify_lateral(self.lateral, self.stance_foot[1], self.stance, params)?;
        Ok(Keyframe::new(sagittal, lateral, self.stance))
    }
}

/// Fully planned one-walking-step transition, ready for execution or
/// collocation-based verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPlan {
    pub stance: Side,
    pub foot_current: [f64; 2],
    pub foot_next: [f64; 2],
    pub swing_origin: [f64; 2],
    pub timing: OwsTiming,
    /// Sagittal/lateral states at the current keyframe (world).
    pub sagittal_start: PhaseState,
    pub lateral_start: PhaseState,
    /// Planned lateral state at the contact switch (world).
    pub lateral_switch: PhaseState,
    /// Planned sagittal state at the next keyframe (world).
    pub sagittal_target: PhaseState,
    /// Planned lateral state at the next keyframe (world).
    pub lateral_target: PhaseState,
    /// Achieved signed step width in the stance-local frame.
    pub width_signed: f64,
    /// True when the velocity-nulling placement was clamped by the caps.
    pub width_clamped: bool,
    pub length: f64,
}

impl TransitionPlan {
    /// Classifies the planned next keyframe.
    pub fn next_keyframe(&self, params: &PipmParams) -> Result<Keyframe, PhaseSpaceError> {
        let stance = self.stance.other();
        let sagittal = classify_cell(self.sagittal_target, self.foot_next[0], params)?;
        let lateral =
            classify_lateral(self.lateral_target, self.foot_next[1], stance, params)?;
        Ok(Keyframe::new(sagittal, lateral, stance))
    }

    /// Size class nearest to the achieved width magnitude.
    pub fn width_class(&self, params: &PipmParams) -> SizeClass {
        nearest_width_class(self.width_signed.abs(), params)
    }
}

pub fn nearest_width_class(width_abs: f64, params: &PipmParams) -> SizeClass {
    let mut best = SizeClass::Small;
    let mut best_d = f64::INFINITY;
    for class in SizeClass::ALL {
        let d = (params.width(class) - width_abs).abs();
        if d < best_d {
            best_d = d;
            best = class;
        }
    }
    best
}

/// Plans one walking step from a continuous body state toward a commanded
/// next sagittal cell: sagittal foot displacement from the step-length class,
/// switch timing from the energy intersection, lateral placement by the
/// velocity-nulling rule clamped to the width caps.
pub fn plan_transition(
    body: &BodyState,
    next_sag: RiemannianCell,
    length: SizeClass,
    params: &PipmParams,
    caps: &PlacementCaps,
) -> Result<TransitionPlan, PhaseSpaceError> {
    let l = params.length(length);
    let f1 = body.stance_foot;
    let f2x = f1[0] + l;
    let sag_target = PhaseState::new(
        f2x + params.p_centers[next_sag.pos.index()],
        params.v_centers[next_sag.vel.index()],
    );
    let timing = solve_ows_timing(body.sagittal, sag_target, f1[0], f2x, params)?;
    let lat_switch = lipm_flow(body.lateral, f1[1], timing.t1, params);
    let ideal_f2y = lateral_foot_placement(lat_switch, timing.t2, params);
    let sigma = body.stance.lateral_sign();
    let ideal_width = sigma * (ideal_f2y - f1[1]);
    let width_signed = ideal_width.clamp(-caps.max_crossed_width, caps.max_step_width);
    let width_clamped = (width_signed - ideal_width).abs() > 1e-12;
    let f2y = f1[1] + sigma * width_signed;
    let lateral_target = lipm_flow(lat_switch, f2y, timing.t2, params);
    Ok(TransitionPlan {
        stance: body.stance,
        foot_current: f1,
        foot_next: [f2x, f2y],
        swing_origin: body.swing_origin,
        timing,
        sagittal_start: body.sagittal,
        lateral_start: body.lateral,
        lateral_switch: lat_switch,
        sagittal_target: sag_target,
        lateral_target,
        width_signed,
        width_clamped,
        length: l,
    })
}

/// Mid-stance sway magnitude of the periodic gait with step width `width` and
/// half durations (t1, t2): the lateral apex offset that reproduces itself
/// step after step under the velocity-nulling placement.
pub fn periodic_sway(width: f64, t1: f64, t2: f64, omega: f64) -> f64 {
    width * (omega * t2).sinh() / (omega * (t1 + t2)).sinh()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PipmParams {
        PipmParams::default()
    }

    #[test]
    fn flow_identity_at_zero_time() {
        let s = PhaseState::new(0.0, 0.5);
        let out = lipm_flow(s, 0.0, 0.0, &params());
        assert_eq!(out, s);
    }

    #[test]
    fn flow_reversibility() {
        let p = params();
        let s = PhaseState::new(0.1, 0.0);
        let fwd = lipm_flow(s, 0.0, 0.37, &p);
        let back = lipm_flow(fwd, 0.0, -0.37, &p);
        assert!((back.p - s.p).abs() < 1e-12);
        assert!((back.v - s.v).abs() < 1e-12);
    }

    #[test]
    fn ows_timing_symmetric_case() {
        let p = params();
        let kf = PhaseState::new(0.0, 0.5);
        let kf2 = PhaseState::new(0.4, 0.5);
        let t = solve_ows_timing(kf, kf2, 0.0, 0.4, &p).unwrap();
        assert!((t.switch_state.p - 0.2).abs() < 1e-12);
        assert!((t.t1 - t.t2).abs() < 1e-12);
    }

    #[test]
    fn ows_timing_degenerate_reports_error() {
        let p = params();
        let kf = PhaseState::new(0.0, 0.5);
        let err = solve_ows_timing(kf, kf, 0.0, 0.0, &p).unwrap_err();
        assert!(matches!(err, PhaseSpaceError::NoSwitchPoint(_)));
    }

    #[test]
    fn placement_trivial_cases() {
        let p = params();
        // Zero switch velocity: foot at the switch position.
        assert_eq!(
            lateral_foot_placement(PhaseState::new(0.07, 0.0), 0.3, &p),
            0.07
        );
        // Zero remaining duration: nulling is ill-posed, return the switch position.
        assert_eq!(
            lateral_foot_placement(PhaseState::new(0.07, 0.4), 0.0, &p),
            0.07
        );
    }

    #[test]
    fn placement_nulls_velocity_at_t2() {
        let p = params();
        let sw = PhaseState::new(0.05, 0.3);
        let t2 = 0.2;
        let foot = lateral_foot_placement(sw, t2, &p);
        let end = lipm_flow(sw, foot, t2, &p);
        assert!(end.v.abs() < 1e-12, "residual velocity {}", end.v);
    }

    #[test]
    fn position_guard_fixed_point_at_apex() {
        let p = params();
        let apex = position_guard_recalc(PhaseState::new(0.3, 0.5), 0.3, &p).unwrap();
        assert_eq!(apex.p, 0.3);
        assert!((apex.v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn position_guard_rejects_negative_energy() {
        let p = params();
        let err = position_guard_recalc(PhaseState::new(0.2, 0.1), 0.0, &p).unwrap_err();
        assert!(matches!(err, PhaseSpaceError::NoApexCrossing { .. }));
    }

    #[test]
    fn position_guard_matches_both_quadratic_roots_route() {
        // The quadratic A² − v²A + ω²σ = 0 has roots {E, ω²Δ²}; the apex
        // velocity must be the energy root even when it is the smaller one.
        let p = params();
        let omega = p.omega();
        for (d, v) in [(0.05, 0.55), (0.15, 0.5), (0.02, 0.09), (0.28, 0.9)] {
            let st = PhaseState::new(d, v);
            let energy = st.orbital_energy(0.0, omega);
            if energy < 0.0 {
                continue;
            }
            let apex = position_guard_recalc(st, 0.0, &p).unwrap();
            assert!((apex.v * apex.v - energy).abs() < 1e-12);
            let sigma = ManifoldValue::of(st, 0.0, &p).sigma;
            let disc = (v * v * v * v - 4.0 * omega * omega * sigma).max(0.0).sqrt();
            let roots = [(v * v + disc) / 2.0, (v * v - disc) / 2.0];
            assert!(
                roots.iter().any(|r| (r - energy).abs() < 1e-10),
                "energy root missing from quadratic"
            );
        }
    }

    #[test]
    fn classify_matches_documented_cells() {
        let p = params();
        let c = classify_cell(PhaseState::new(0.0, 0.0), 0.0, &p).unwrap();
        assert_eq!(c, RiemannianCell::new(PosClass::Zero, VelClass::Zero));
        let c = classify_cell(PhaseState::new(0.0, 0.5), 0.0, &p).unwrap();
        assert_eq!(c, RiemannianCell::new(PosClass::Zero, VelClass::Medium));
        // Boundary ties go to the lower cell.
        let c = classify_cell(PhaseState::new(0.0, 0.375), 0.0, &p).unwrap();
        assert_eq!(c.vel, VelClass::Slow);
        let c = classify_cell(PhaseState::new(0.05, 0.0), 0.0, &p).unwrap();
        assert_eq!(c.pos, PosClass::Zero);
        assert!(classify_cell(PhaseState::new(0.0, 0.9), 0.0, &p).is_err());
    }

    #[test]
    fn steady_state_definition() {
        let k = Keyframe::new(
            RiemannianCell::new(PosClass::Zero, VelClass::Medium),
            RiemannianCell::new(PosClass::Positive, VelClass::Zero),
            Side::Right,
        );
        assert!(is_steady_state(&k));
        let k = Keyframe::new(
            RiemannianCell::new(PosClass::Negative, VelClass::Medium),
            RiemannianCell::new(PosClass::Zero, VelClass::Zero),
            Side::Left,
        );
        assert!(!is_steady_state(&k));
        let k = Keyframe::new(
            RiemannianCell::new(PosClass::Zero, VelClass::Zero),
            RiemannianCell::new(PosClass::Zero, VelClass::Slow),
            Side::Right,
        );
        assert!(!is_steady_state(&k));
    }

    #[test]
    fn steady_state_count_is_24_of_288() {
        let count = Keyframe::all().filter(is_steady_state_ref).count();
        assert_eq!(Keyframe::all().count(), 288);
        assert_eq!(count, 24);

        fn is_steady_state_ref(k: &Keyframe) -> bool {
            is_steady_state(k)
        }
    }

    #[test]
    fn cell_codes_round_trip() {
        for cell in RiemannianCell::all() {
            let s = cell.to_string();
            assert_eq!(s.parse::<RiemannianCell>().unwrap(), cell);
        }
    }

    #[test]
    fn periodic_sway_reproduces_itself() {
        // A gait started at the periodic sway must return to the same
        // stance-frame sway after one step under the nulling placement.
        let p = params();
        let omega = p.omega();
        let kf = PhaseState::new(0.0, 0.5);
        let kf2 = PhaseState::new(0.35, 0.5);
        let timing = solve_ows_timing(kf, kf2, 0.0, 0.35, &p).unwrap();
        for width in [0.1, 0.2, 0.3] {
            let sway = periodic_sway(width, timing.t1, timing.t2, omega);
            // Right stance at y=0: CoM apex at +sway.
            let lat = PhaseState::new(sway, 0.0);
            let (apex, foot) =
                next_lateral_keyframe(kf, kf2, lat, [0.0, 0.0], 0.35, &p).unwrap();
            assert!((foot[1] - width).abs() < 1e-9, "width {width}");
            // Next stance is left: stance-frame sway must equal the original.
            let frame = Side::Left.lateral_sign() * (apex.p - foot[1]);
            assert!((frame - sway).abs() < 1e-9);
            assert!(apex.v.abs() < 1e-9);
        }
    }

    #[test]
    fn plan_transition_clamps_deep_crossed_placement() {
        let p = params();
        let caps = PlacementCaps::default();
        let body = BodyState {
            sagittal: PhaseState::new(0.0, 0.5),
            lateral: PhaseState::new(0.0, -0.31),
            stance: Side::Right,
            stance_foot: [0.0, 0.0],
            swing_origin: [-0.35, 0.2],
        };
        let plan = plan_transition(
            &body,
            RiemannianCell::new(PosClass::Zero, VelClass::Medium),
            SizeClass::Medium,
            &p,
            &caps,
        )
        .unwrap();
        assert!(plan.width_clamped);
        assert!((plan.width_signed + caps.max_crossed_width).abs() < 1e-12);
        // Residual lateral velocity survives the clamped placement.
        assert!(plan.lateral_target.v.abs() > 0.1);
    }
}
