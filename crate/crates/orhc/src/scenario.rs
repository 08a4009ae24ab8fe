//! Scenario configuration: a TOML file with sections for every module,
//! compiled-in coefficient and initial-data presets, `key=value`
//! overrides and construction of the assembled problem instance.

use serde::{Deserialize, Serialize};

use crate::error::OrhcError;
use crate::fem::{
    assemble_static, BoundaryCondition, CoefficientField, ConstantCoefficients, Mesh,
    OperatorSet, OscillatingCoefficients,
};
use crate::layout::{build_layout, ActuatorSensorLayout, ObserverConfig};
use crate::ocp::TolerancePolicy;
use crate::rhc::{OcpSettings, OrhcConfig, TnRule};
use crate::spectral::{compute_neumann_eigenbasis, EigenBasis, PenaltyOperator};
use crate::timestep::SolverStrategy;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub n_div: usize,
    pub refinement_level: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self {
            n_div: 32,
            refinement_level: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub nu: f64,
    /// Coefficient preset: `unstable-oscillating` (the benchmark
    /// family) or `constant`.
    pub coefficients: String,
    /// Used by the `constant` preset.
    pub constant_a: f64,
    pub constant_b: [f64; 2],
    pub bc: BoundaryCondition,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            nu: 0.1,
            coefficients: "unstable-oscillating".into(),
            constant_a: 1.0,
            constant_b: [0.0, 0.0],
            bc: BoundaryCondition::Neumann,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSection {
    pub grid_m: usize,
    pub shrink_ratio: f64,
}

impl Default for LayoutSection {
    fn default() -> Self {
        Self {
            grid_m: 2,
            shrink_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverSection {
    pub lambda: f64,
}

impl Default for ObserverSection {
    fn default() -> Self {
        Self { lambda: 100.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySection {
    /// `eig_projection`, `identity`, `sensors` or `sqrt_a`.
    pub kind: String,
    pub scale: f64,
    pub n_q: usize,
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self {
            kind: "eig_projection".into(),
            scale: 800f64.sqrt(),
            n_q: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpSection {
    pub tol_low: [f64; 2],
    pub tol_up: [f64; 2],
    pub max_iter: usize,
    pub warm_start: bool,
}

impl Default for OcpSection {
    fn default() -> Self {
        Self {
            tol_low: [1e-28, 1e-14],
            tol_up: [1e-4, 1e-2],
            max_iter: 2000,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RhcSection {
    pub t_rh: f64,
    pub tau: f64,
    pub t_infty: f64,
    pub tn_rule: TnRule,
    pub consecutive_limit: usize,
    pub total_limit: usize,
}

impl Default for RhcSection {
    fn default() -> Self {
        Self {
            t_rh: 2.0,
            tau: 0.1,
            t_infty: 4.0,
            tn_rule: TnRule::MaxArgmin,
            consecutive_limit: 10,
            total_limit: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    /// Step size on the level-0 mesh; halved per refinement level.
    pub dt0: f64,
    /// Per-step linear solver.
    pub solver: SolverStrategy,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            dt0: 4e-4,
            solver: SolverStrategy::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    /// Initial-state preset: `cosine-bump` (`1 - 2 cos(pi x1)`) or
    /// `zero`.
    pub preset: String,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            preset: "cosine-bump".into(),
        }
    }
}

/// Complete scenario description.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mesh: MeshSection,
    pub physics: PhysicsSection,
    pub layout: LayoutSection,
    pub observer: ObserverSection,
    pub penalty: PenaltySection,
    pub ocp: OcpSection,
    pub rhc: RhcSection,
    pub time: TimeSection,
    pub initial: InitialSection,
    /// Seed for randomized property checks (the simulation itself is
    /// deterministic).
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| OrhcError::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Effective time step: `dt0 / 2^level`.
    pub fn dt(&self) -> f64 {
        self.time.dt0 / (1u64 << self.mesh.refinement_level) as f64
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec.split_once('=').ok_or_else(|| {
            OrhcError::Config(format!("override '{spec}' is not of the form key=value"))
        })?;
        let err = |what: &str| OrhcError::Config(format!("cannot parse '{value}' as {what} for '{path}'"));
        macro_rules! num {
            ($t:ty, $w:expr) => {
                value.trim().parse::<$t>().map_err(|_| err($w))?
            };
        }
        match path.trim() {
            "mesh.n_div" => self.mesh.n_div = num!(usize, "integer"),
            "mesh.refinement_level" => self.mesh.refinement_level = num!(usize, "integer"),
            "physics.nu" => self.physics.nu = num!(f64, "float"),
            "physics.coefficients" => self.physics.coefficients = value.trim().into(),
            "physics.constant_a" => self.physics.constant_a = num!(f64, "float"),
            "layout.grid_m" => self.layout.grid_m = num!(usize, "integer"),
            "layout.shrink_ratio" => self.layout.shrink_ratio = num!(f64, "float"),
            "observer.lambda" => self.observer.lambda = num!(f64, "float"),
            "penalty.kind" => self.penalty.kind = value.trim().into(),
            "penalty.scale" => self.penalty.scale = num!(f64, "float"),
            "penalty.n_q" => self.penalty.n_q = num!(usize, "integer"),
            "ocp.max_iter" => self.ocp.max_iter = num!(usize, "integer"),
            "ocp.warm_start" => self.ocp.warm_start = num!(bool, "bool"),
            "ocp.tol_low.1" => self.ocp.tol_low[0] = num!(f64, "float"),
            "ocp.tol_low.2" => self.ocp.tol_low[1] = num!(f64, "float"),
            "ocp.tol_up.1" => self.ocp.tol_up[0] = num!(f64, "float"),
            "ocp.tol_up.2" => self.ocp.tol_up[1] = num!(f64, "float"),
            "rhc.t_rh" => self.rhc.t_rh = num!(f64, "float"),
            "rhc.tau" => self.rhc.tau = num!(f64, "float"),
            "rhc.t_infty" => self.rhc.t_infty = num!(f64, "float"),
            "rhc.consecutive_limit" => self.rhc.consecutive_limit = num!(usize, "integer"),
            "rhc.total_limit" => self.rhc.total_limit = num!(usize, "integer"),
            "rhc.tn_rule" => {
                self.rhc.tn_rule = match value.trim() {
                    "max_argmin" => TnRule::MaxArgmin,
                    "min_argmin" => TnRule::MinArgmin,
                    "fixed_tau" => TnRule::FixedTau,
                    other => {
                        return Err(OrhcError::Config(format!("unknown tn_rule '{other}'")))
                    }
                }
            }
            "time.dt0" => self.time.dt0 = num!(f64, "float"),
            "initial.preset" => self.initial.preset = value.trim().into(),
            "seed" => self.seed = num!(u64, "integer"),
            other => {
                return Err(OrhcError::Config(format!("unknown override key '{other}'")))
            }
        }
        self.validate()
    }

    /// Re-validate the parameter bounds owned by the individual modules.
    pub fn validate(&self) -> Result<()> {
        if self.mesh.n_div < 4 || self.mesh.n_div % 8 != 0 {
            return Err(OrhcError::Config(
                "mesh.n_div must be >= 4 and divisible by 8".into(),
            ));
        }
        if !(self.physics.nu > 0.0) {
            return Err(OrhcError::Config("physics.nu must be positive".into()));
        }
        match self.physics.coefficients.as_str() {
            "unstable-oscillating" | "constant" => {}
            other => {
                return Err(OrhcError::Config(format!(
                    "unknown coefficient preset '{other}'"
                )))
            }
        }
        if self.layout.grid_m == 0 {
            return Err(OrhcError::Config("layout.grid_m must be positive".into()));
        }
        if !(self.layout.shrink_ratio > 0.0 && self.layout.shrink_ratio <= 1.0) {
            return Err(OrhcError::Config(
                "layout.shrink_ratio must lie in (0, 1]".into(),
            ));
        }
        if !(self.observer.lambda > 0.0) {
            return Err(OrhcError::Config("observer.lambda must be positive".into()));
        }
        match self.penalty.kind.as_str() {
            "eig_projection" | "identity" | "sensors" | "sqrt_a" => {}
            other => {
                return Err(OrhcError::Config(format!("unknown penalty kind '{other}'")))
            }
        }
        if self.penalty.scale < 0.0 {
            return Err(OrhcError::Config("penalty.scale must be >= 0".into()));
        }
        if self.penalty.kind == "eig_projection" && self.penalty.n_q == 0 {
            return Err(OrhcError::Config("penalty.n_q must be positive".into()));
        }
        self.tolerance_policy().validate()?;
        if !(self.time.dt0 > 0.0) {
            return Err(OrhcError::Config("time.dt0 must be positive".into()));
        }
        if !(self.rhc.tau > 0.0 && self.rhc.tau <= self.rhc.t_rh) {
            return Err(OrhcError::Config(
                "rhc requires 0 < tau <= t_rh".into(),
            ));
        }
        if !(self.rhc.t_infty > 0.0) {
            return Err(OrhcError::Config("rhc.t_infty must be positive".into()));
        }
        match self.initial.preset.as_str() {
            "cosine-bump" | "zero" => {}
            other => {
                return Err(OrhcError::Config(format!(
                    "unknown initial preset '{other}'"
                )))
            }
        }
        Ok(())
    }

    pub fn tolerance_policy(&self) -> TolerancePolicy {
        TolerancePolicy {
            tol_low: (self.ocp.tol_low[0], self.ocp.tol_low[1]),
            tol_up: (self.ocp.tol_up[0], self.ocp.tol_up[1]),
        }
    }

    pub fn ocp_settings(&self) -> OcpSettings {
        OcpSettings {
            tol_policy: self.tolerance_policy(),
            max_iter: self.ocp.max_iter,
            warm_start: self.ocp.warm_start,
        }
    }

    pub fn orhc_config(&self) -> OrhcConfig {
        OrhcConfig {
            t_rh: self.rhc.t_rh,
            tau: self.rhc.tau,
            t_infty: self.rhc.t_infty,
            tn_rule: self.rhc.tn_rule,
            consecutive_limit: self.rhc.consecutive_limit,
            total_limit: self.rhc.total_limit,
        }
    }

    pub fn coefficients(&self) -> Box<dyn CoefficientField> {
        match self.physics.coefficients.as_str() {
            "constant" => Box::new(ConstantCoefficients {
                a: self.physics.constant_a,
                b: self.physics.constant_b,
            }),
            _ => Box::new(OscillatingCoefficients),
        }
    }

    /// Assemble every object the scenario needs. The eigenbasis is only
    /// computed for the eigenprojection penalty.
    pub fn build(&self) -> Result<Instance> {
        self.validate()?;
        let mesh = Mesh::build(self.mesh.n_div, self.mesh.refinement_level)?;
        let ops = assemble_static(&mesh, self.physics.nu, self.physics.bc)?;
        let layout = build_layout(self.layout.grid_m, self.layout.shrink_ratio, &mesh, &ops)?;
        let (q, basis_values) = match self.penalty.kind.as_str() {
            "eig_projection" => {
                let basis = compute_neumann_eigenbasis(&ops, self.penalty.n_q)?;
                let values = basis.values.clone();
                (
                    PenaltyOperator::eig_projection(self.penalty.scale, basis, &ops),
                    Some(values),
                )
            }
            "identity" => (PenaltyOperator::identity(self.penalty.scale), None),
            "sensors" => (PenaltyOperator::sensors(self.penalty.scale, &layout), None),
            "sqrt_a" => (PenaltyOperator::sqrt_a(self.penalty.scale, &ops)?, None),
            _ => unreachable!("validated"),
        };
        let obs = ObserverConfig::new(self.observer.lambda)?;
        let y0 = match self.initial.preset.as_str() {
            "zero" => vec![0.0; ops.n_dofs()],
            _ => ops.interpolate(&mesh, |x| 1.0 - 2.0 * (std::f64::consts::PI * x[0]).cos()),
        };
        let yhat0 = layout.project_onto_sensors(&y0)?;
        Ok(Instance {
            config: self.clone(),
            mesh,
            ops,
            layout,
            q,
            obs,
            eigenvalues: basis_values,
            y0,
            yhat0,
        })
    }
}

/// Fully assembled problem objects for a scenario.
pub struct Instance {
    pub config: ScenarioConfig,
    pub mesh: Mesh,
    pub ops: OperatorSet,
    pub layout: ActuatorSensorLayout,
    pub q: PenaltyOperator,
    pub obs: ObserverConfig,
    /// Eigenvalue table when the penalty carries an eigenbasis.
    pub eigenvalues: Option<Vec<f64>>,
    pub y0: Vec<f64>,
    pub yhat0: Vec<f64>,
}

impl Instance {
    pub fn coefficients(&self) -> Box<dyn CoefficientField> {
        self.config.coefficients()
    }

    pub fn dt(&self) -> f64 {
        self.config.dt()
    }

    pub fn strategy(&self) -> SolverStrategy {
        self.config.time.solver
    }

    pub fn eigenbasis(&self) -> Option<&EigenBasis> {
        self.q.basis.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ScenarioConfig::default();
        let text = cfg.to_toml();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.to_toml(), back.to_toml());
        assert_eq!(back.mesh.n_div, 32);
        assert!((back.penalty.scale - 800f64.sqrt()).abs() < 1e-15);
        assert_eq!(back.dt(), 4e-4);
    }

    #[test]
    fn refinement_halves_dt() {
        let mut cfg = ScenarioConfig::default();
        cfg.mesh.refinement_level = 1;
        assert_eq!(cfg.dt(), 2e-4);
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut cfg = ScenarioConfig::default();
        cfg.apply_override("rhc.t_rh=1.5").unwrap();
        assert_eq!(cfg.rhc.t_rh, 1.5);
        cfg.apply_override("observer.lambda=19").unwrap();
        assert_eq!(cfg.observer.lambda, 19.0);
        assert!(cfg.apply_override("rhc.tau=9.0").is_err()); // tau > t_rh
        assert!(cfg.apply_override("nonsense.key=1").is_err());
        assert!(cfg.apply_override("mesh.n_div").is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ScenarioConfig::default();
        cfg.mesh.n_div = 12;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.ocp.tol_low = [1e-2, 1e-2];
        cfg.ocp.tol_up = [1e-4, 1e-2];
        assert!(cfg.validate().is_err());
        assert!(ScenarioConfig::from_toml("[mesh]\nn_div = 7\n").is_err());
        assert!(ScenarioConfig::from_toml("[mesh]\nundefined_key = 7\n").is_err());
    }

    #[test]
    fn builds_small_instance() {
        let mut cfg = ScenarioConfig::default();
        cfg.mesh.n_div = 16;
        cfg.penalty.n_q = 8;
        let inst = cfg.build().unwrap();
        assert_eq!(inst.ops.n_dofs(), 17 * 17);
        assert_eq!(inst.layout.n_actuators(), 8);
        assert_eq!(inst.eigenvalues.as_ref().unwrap().len(), 8);
        assert_eq!(inst.y0.len(), inst.ops.n_dofs());
        // estimate is the sensor-span projection of the initial state
        let p = inst.layout.project_onto_sensors(&inst.y0).unwrap();
        assert_eq!(p, inst.yhat0);
    }
}
