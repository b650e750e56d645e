//! Stack-wide configuration: a flat `key = value` file with section headers,
//! chosen for diff-friendliness and trivial canonicalization. The canonical
//! form (sorted sections and keys, 17-significant-digit floats) is hashed to
//! tie pipeline artifacts (table → strategy → runs) together.

use crate::phase_space::{PipmParams, PlacementCaps};
use crate::simulator::SimConfig;
use crate::traj_opt::ReducedModelConfig;
use crate::util::fmt_f64;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Planner-level switches: action filters for synthesis, placement caps, and
/// the behavior-tree robustness thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Apply the velocity-descent rule to the lateral axis as well as the
    /// sagittal one.
    pub descent_rule_lateral: bool,
    /// Largest crossed-leg (negative) step width magnitude (m).
    pub max_crossed_width: f64,
    /// Largest normal-orientation step width (m).
    pub max_step_width: f64,
    /// Normalized orbital-energy deviation below which the live state counts
    /// as on the nominal manifold (recalculation skipped).
    pub manifold_tol: f64,
    /// Perturbation-free moves the environment must grant after each
    /// perturbation.
    pub env_quiet_moves: u32,
    /// Objective weights for the two stance domains of the collocation
    /// problem.
    pub objective_weights: [f64; 2],
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            descent_rule_lateral: true,
            max_crossed_width: 0.12,
            max_step_width: 0.5,
            manifold_tol: 1e-6,
            env_quiet_moves: 2,
            objective_weights: [1.0, 1.0],
        }
    }
}

impl PlannerConfig {
    pub fn caps(&self) -> PlacementCaps {
        PlacementCaps {
            max_crossed_width: self.max_crossed_width,
            max_step_width: self.max_step_width,
        }
    }
}

/// Full stack configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StackConfig {
    pub pipm: PipmParams,
    pub model: ReducedModelConfig,
    pub planner: PlannerConfig,
    pub sim: SimConfig,
}

impl StackConfig {
    /// Parses the flat `key = value` grammar. Unknown sections or keys are
    /// errors; omitted keys keep their documented defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = StackConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: lineno,
                    msg: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: lineno,
                msg: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value).map_err(|msg| ConfigError::Parse {
                line: lineno,
                msg,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn f(v: &str) -> Result<f64, String> {
            v.parse::<f64>().map_err(|e| format!("bad float `{v}`: {e}"))
        }
        fn u(v: &str) -> Result<u32, String> {
            v.parse::<u32>().map_err(|e| format!("bad integer `{v}`: {e}"))
        }
        fn b(v: &str) -> Result<bool, String> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(format!("bad bool `{other}`")),
            }
        }
        fn list<const N: usize>(v: &str) -> Result<[f64; N], String> {
            let parts: Vec<f64> = v
                .split(',')
                .map(|s| f(s.trim()))
                .collect::<Result<_, _>>()?;
            parts
                .try_into()
                .map_err(|_| format!("expected {N} comma-separated values"))
        }

        match (section, key) {
            ("pipm", "g") => self.pipm.g = f(value)?,
            ("pipm", "h_apex") => self.pipm.h_apex = f(value)?,
            ("pipm", "step_time") => self.pipm.step_time = f(value)?,
            ("pipm", "v_centers") => self.pipm.v_centers = list::<4>(value)?,
            ("pipm", "p_centers") => self.pipm.p_centers = list::<3>(value)?,
            ("pipm", "step_lengths") => self.pipm.step_lengths = list::<3>(value)?,
            ("pipm", "step_widths") => self.pipm.step_widths = list::<3>(value)?,
            ("model", "leg_min") => self.model.leg_min = f(value)?,
            ("model", "leg_max") => self.model.leg_max = f(value)?,
            ("model", "swing_accel_max") => self.model.swing_accel_max = f(value)?,
            ("model", "friction_mu") => self.model.friction_mu = f(value)?,
            ("model", "d_min") => self.model.d_min = f(value)?,
            ("model", "collision_pairs") => self.model.collision_pairs = u(value)? as usize,
            ("model", "nodes_per_domain") => self.model.nodes_per_domain = u(value)? as usize,
            ("model", "pelvis_width") => self.model.pelvis_width = f(value)?,
            ("planner", "descent_rule_lateral") => self.planner.descent_rule_lateral = b(value)?,
            ("planner", "max_crossed_width") => self.planner.max_crossed_width = f(value)?,
            ("planner", "max_step_width") => self.planner.max_step_width = f(value)?,
            ("planner", "manifold_tol") => self.planner.manifold_tol = f(value)?,
            ("planner", "env_quiet_moves") => self.planner.env_quiet_moves = u(value)?,
            ("planner", "omega_weights") => self.planner.objective_weights = list::<2>(value)?,
            ("sim", "dt") => self.sim.dt = f(value)?,
            ("sim", "step_time") => self.sim.step_time = f(value)?,
            ("sim", "max_steps") => self.sim.max_steps = u(value)?,
            ("sim", "success_window") => self.sim.success_window = u(value)?,
            _ => return Err(format!("unknown key `[{section}] {key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipm.validate().map_err(ConfigError::Invalid)?;
        self.model.validate().map_err(ConfigError::Invalid)?;
        if !(self.sim.dt > 0.0) {
            return Err(ConfigError::Invalid("sim.dt must be positive".into()));
        }
        let ratio = self.sim.step_time / self.sim.dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(ConfigError::Invalid(
                "sim.dt must divide sim.step_time".into(),
            ));
        }
        if self.sim.max_steps == 0 {
            return Err(ConfigError::Invalid("sim.max_steps must be positive".into()));
        }
        if !(self.planner.max_crossed_width > 0.0) || !(self.planner.max_step_width > 0.0) {
            return Err(ConfigError::Invalid(
                "planner width caps must be positive".into(),
            ));
        }
        if !(self.planner.manifold_tol > 0.0) {
            return Err(ConfigError::Invalid(
                "planner.manifold_tol must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text form: sorted sections and keys, floats with 17
    /// significant digits. Key order in the source file does not affect it.
    pub fn canonical_string(&self) -> String {
        let mut sections: BTreeMap<&str, BTreeMap<&str, String>> = BTreeMap::new();
        let fl = |xs: &[f64]| {
            xs.iter()
                .map(|&x| fmt_f64(x))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let pipm = sections.entry("pipm").or_default();
        pipm.insert("g", fmt_f64(self.pipm.g));
        pipm.insert("h_apex", fmt_f64(self.pipm.h_apex));
        pipm.insert("step_time", fmt_f64(self.pipm.step_time));
        pipm.insert("v_centers", fl(&self.pipm.v_centers));
        pipm.insert("p_centers", fl(&self.pipm.p_centers));
        pipm.insert("step_lengths", fl(&self.pipm.step_lengths));
        pipm.insert("step_widths", fl(&self.pipm.step_widths));
        let model = sections.entry("model").or_default();
        model.insert("leg_min", fmt_f64(self.model.leg_min));
        model.insert("leg_max", fmt_f64(self.model.leg_max));
        model.insert("swing_accel_max", fmt_f64(self.model.swing_accel_max));
        model.insert("friction_mu", fmt_f64(self.model.friction_mu));
        model.insert("d_min", fmt_f64(self.model.d_min));
        model.insert("collision_pairs", self.model.collision_pairs.to_string());
        model.insert("nodes_per_domain", self.model.nodes_per_domain.to_string());
        model.insert("pelvis_width", fmt_f64(self.model.pelvis_width));
        let planner = sections.entry("planner").or_default();
        planner.insert(
            "descent_rule_lateral",
            self.planner.descent_rule_lateral.to_string(),
        );
        planner.insert("max_crossed_width", fmt_f64(self.planner.max_crossed_width));
        planner.insert("max_step_width", fmt_f64(self.planner.max_step_width));
        planner.insert("manifold_tol", fmt_f64(self.planner.manifold_tol));
        planner.insert("env_quiet_moves", self.planner.env_quiet_moves.to_string());
        planner.insert("omega_weights", fl(&self.planner.objective_weights));
        let sim = sections.entry("sim").or_default();
        sim.insert("dt", fmt_f64(self.sim.dt));
        sim.insert("step_time", fmt_f64(self.sim.step_time));
        sim.insert("max_steps", self.sim.max_steps.to_string());
        sim.insert("success_window", self.sim.success_window.to_string());

        let mut out = String::new();
        for (name, keys) in sections {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in keys {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    /// SHA-256 of the canonical form, as lowercase hex.
    pub fn config_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_string().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// A documented config file with every default spelled out.
    pub fn default_ini() -> String {
        let d = StackConfig::default();
        format!(
            "# Push-recovery stack configuration.\n\
             # Flat key = value grammar with [section] headers; `#` starts a comment.\n\
             \n\
             [pipm]\n\
             # Gravity (m/s^2) and apex CoM height above the stance foot (m).\n\
             g = {g}\n\
             h_apex = {h}\n\
             # Nominal one-walking-step duration (s); actual durations are solved.\n\
             step_time = {st}\n\
             # Velocity cell centers (m/s): zero, slow, medium, fast.\n\
             v_centers = 0.0, 0.25, 0.5, 0.75\n\
             # Relative-position cell centers (m): negative, zero, positive.\n\
             p_centers = -0.15, 0.0, 0.15\n\
             # Nominal step lengths / widths (m): small, medium, large.\n\
             step_lengths = 0.25, 0.35, 0.45\n\
             step_widths = 0.1, 0.2, 0.3\n\
             \n\
             [model]\n\
             # Leg length bounds (m) between hip and foot points.\n\
             leg_min = {lmin}\n\
             leg_max = {lmax}\n\
             # Swing-foot acceleration bound (m/s^2).\n\
             swing_accel_max = {amax}\n\
             # Friction coefficient of the stance contact.\n\
             friction_mu = {mu}\n\
             # Minimum distance between leg point pairs (m) and pair count.\n\
             d_min = {dmin}\n\
             collision_pairs = {m}\n\
             # Collocation nodes per stance domain.\n\
             nodes_per_domain = {n}\n\
             # Lateral distance between the hip joints (m).\n\
             pelvis_width = {pw}\n\
             \n\
             [planner]\n\
             # Apply the velocity-descent rule to the lateral axis too.\n\
             descent_rule_lateral = {dr}\n\
             # Signed step-width caps for the placement planner (m).\n\
             max_crossed_width = {mcw}\n\
             max_step_width = {msw}\n\
             # Normalized orbital-energy deviation treated as on-manifold.\n\
             manifold_tol = {mt}\n\
             # Perturbation-free moves the environment grants after a push.\n\
             env_quiet_moves = {eqm}\n\
             # Objective weights of the two stance domains.\n\
             omega_weights = 1.0, 1.0\n\
             \n\
             [sim]\n\
             # Control period (s); must divide step_time.\n\
             dt = {dt}\n\
             step_time = {sst}\n\
             # Episode cap (steps) and recovery window (steps after the last push).\n\
             max_steps = {ms}\n\
             success_window = {sw}\n",
            g = d.pipm.g,
            h = d.pipm.h_apex,
            st = d.pipm.step_time,
            lmin = d.model.leg_min,
            lmax = d.model.leg_max,
            amax = d.model.swing_accel_max,
            mu = d.model.friction_mu,
            dmin = d.model.d_min,
            m = d.model.collision_pairs,
            n = d.model.nodes_per_domain,
            pw = d.model.pelvis_width,
            dr = d.planner.descent_rule_lateral,
            mcw = d.planner.max_crossed_width,
            msw = d.planner.max_step_width,
            mt = d.planner.manifold_tol,
            eqm = d.planner.env_quiet_moves,
            dt = d.sim.dt,
            sst = d.sim.step_time,
            ms = d.sim.max_steps,
            sw = d.sim.success_window,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ini_parses_to_default_config() {
        let cfg = StackConfig::parse(&StackConfig::default_ini()).unwrap();
        assert_eq!(cfg, StackConfig::default());
    }

    #[test]
    fn hash_stable_under_key_reordering() {
        let a = StackConfig::parse("[pipm]\ng = 9.81\nh_apex = 1.0\n").unwrap();
        let b = StackConfig::parse("[pipm]\nh_apex = 1.0\ng = 9.81\n").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn hash_changes_with_values() {
        let a = StackConfig::default();
        let b = StackConfig::parse("[pipm]\nh_apex = 0.9\n").unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(StackConfig::parse("[pipm]\nbogus = 1\n").is_err());
    }

    #[test]
    fn dt_must_divide_step_time() {
        let err = StackConfig::parse("[sim]\ndt = 0.0003\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }
}
