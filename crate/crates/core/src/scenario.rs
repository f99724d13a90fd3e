//! Scenario files: a TOML document describing one closed-loop experiment.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barrier::{
    BarrierChain, ClassKappaPower, RadialForm, ReachSchedule, ReachSpec, ETA_ONE_TOL,
};
use crate::dynamics::{make_unicycle, InputBox, SystemModel, Unicycle};
use crate::error::{Error, Result};
use crate::ode::OdeOptions;
use crate::simulator::{
    ControllerKind, InfeasibilityPolicy, SimSetup, DEFAULT_AUDIT_TOL, DEFAULT_INTEGRATOR_TOL,
};
use crate::taylor_bound::EstimatorSettings;

/// Sub-steps per sampling period used by the dense audit unless overridden.
pub const DEFAULT_AUDIT_DIVISIONS: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    Unicycle,
}

impl ModelId {
    pub fn instantiate(&self) -> Unicycle {
        match self {
            ModelId::Unicycle => make_unicycle(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormId {
    #[default]
    PowerSum,
    Norm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaDecl {
    pub lambda: f64,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDecl {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyDecl {
    pub name: String,
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default = "default_norm_order")]
    pub norm_order: f64,
    #[serde(default)]
    pub form: FormId,
    pub alphas: Vec<AlphaDecl>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachDecl {
    pub name: String,
    pub center: Vec<f64>,
    pub eps0: f64,
    pub eps_d: f64,
    pub t_start: f64,
    pub t_reach: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_remain: Option<f64>,
    #[serde(default = "default_norm_order")]
    pub norm_order: f64,
    #[serde(default)]
    pub form: FormId,
    #[serde(default)]
    pub schedule: ReachSchedule,
    pub alphas: Vec<AlphaDecl>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationDecl {
    /// Filled with `dt / 100` during parsing when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit_substep: Option<f64>,
    pub audit_tol: f64,
    pub integrator_tol: f64,
    pub infeasibility: InfeasibilityPolicy,
}

impl Default for SimulationDecl {
    fn default() -> Self {
        SimulationDecl {
            audit_substep: None,
            audit_tol: DEFAULT_AUDIT_TOL,
            integrator_tol: DEFAULT_INTEGRATOR_TOL,
            infeasibility: InfeasibilityPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: ModelId,
    pub initial_state: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    /// Headings swept by the command line tool when none are given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub headings: Vec<f64>,
    pub input: InputDecl,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub simulation: SimulationDecl,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub safety: Vec<SafetyDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reach: Vec<ReachDecl>,
}

fn default_norm_order() -> f64 {
    2.0
}

fn default_controller() -> ControllerKind {
    ControllerKind::RSacbf
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("field `{field}`: {msg}"))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field_err(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn finite(field: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(field_err(field, "entries must be finite"))
    }
}

fn radial(form: FormId, p: f64) -> RadialForm {
    match form {
        FormId::PowerSum => RadialForm::PowerSum(p),
        FormId::Norm => RadialForm::Norm(p),
    }
}

fn alphas(field: &str, decl: &[AlphaDecl]) -> Result<Vec<ClassKappaPower>> {
    if decl.is_empty() {
        return Err(field_err(
            field,
            "at least one class-kappa level is required",
        ));
    }
    decl.iter()
        .map(|a| ClassKappaPower::new(a.lambda, a.eta).map_err(|e| field_err(field, e)))
        .collect()
}

/// Parses and validates a scenario document, filling in defaults.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let mut config: ScenarioConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    config.normalize();
    config.validate()?;
    Ok(config)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn normalize(&mut self) {
        if self.simulation.audit_substep.is_none() && self.dt > 0.0 {
            self.simulation.audit_substep = Some(self.dt / DEFAULT_AUDIT_DIVISIONS);
        }
        let snap = |a: &mut AlphaDecl| {
            if (a.eta - 1.0).abs() <= ETA_ONE_TOL {
                a.eta = 1.0;
            }
        };
        self.safety
            .iter_mut()
            .flat_map(|s| s.alphas.iter_mut())
            .for_each(snap);
        self.reach
            .iter_mut()
            .flat_map(|s| s.alphas.iter_mut())
            .for_each(snap);
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn audit_substep(&self) -> f64 {
        self.simulation
            .audit_substep
            .unwrap_or(self.dt / DEFAULT_AUDIT_DIVISIONS)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(field_err("name", "must not be empty"));
        }
        let model = self.model.instantiate();
        if self.initial_state.len() != model.state_dim() {
            return Err(field_err(
                "initial_state",
                format!(
                    "expected {} entries, got {}",
                    model.state_dim(),
                    self.initial_state.len()
                ),
            ));
        }
        finite("initial_state", &self.initial_state)?;
        finite("headings", &self.headings)?;
        positive("dt", self.dt)?;
        positive("horizon", self.horizon)?;
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(field_err(
                "horizon",
                format!("must be a multiple of dt = {}", self.dt),
            ));
        }
        if self.input.lower.len() != model.input_dim()
            || self.input.upper.len() != model.input_dim()
        {
            return Err(field_err(
                "input",
                format!("bounds must have {} entries", model.input_dim()),
            ));
        }
        InputBox::new(self.input.lower.clone(), self.input.upper.clone())
            .map_err(|e| field_err("input", e))?;
        self.estimator
            .validate()
            .map_err(|e| field_err("estimator", e))?;
        let sub = self.audit_substep();
        if !(sub > 0.0 && sub <= self.dt) {
            return Err(field_err(
                "simulation.audit_substep",
                format!("must lie in (0, dt], got {sub}"),
            ));
        }
        positive("simulation.audit_tol", self.simulation.audit_tol)?;
        positive("simulation.integrator_tol", self.simulation.integrator_tol)?;
        if self.safety.is_empty() && self.reach.is_empty() {
            return Err(field_err(
                "safety",
                "at least one barrier chain is required",
            ));
        }
        let mut names: Vec<&str> = self
            .safety
            .iter()
            .map(|s| s.name.as_str())
            .chain(self.reach.iter().map(|r| r.name.as_str()))
            .collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(field_err(
                "name",
                format!("duplicate chain name `{}`", w[0]),
            ));
        }
        for s in &self.safety {
            positive(&format!("safety.{}.weight", s.name), s.weight)?;
        }
        for r in &self.reach {
            positive(&format!("reach.{}.weight", r.name), r.weight)?;
        }
        self.chains(&model)?;
        Ok(())
    }

    /// Chains in declaration order: safety first, then reach.
    pub fn chains(&self, model: &dyn SystemModel) -> Result<Vec<BarrierChain>> {
        let mut out = Vec::new();
        for s in &self.safety {
            let field = format!("safety.{}", s.name);
            out.push(
                BarrierChain::circular_safety(
                    s.name.clone(),
                    model,
                    s.center.clone(),
                    s.radius,
                    radial(s.form, s.norm_order),
                    alphas(&format!("{field}.alphas"), &s.alphas)?,
                )
                .map_err(|e| field_err(&field, e))?,
            );
        }
        for r in &self.reach {
            let field = format!("reach.{}", r.name);
            let mut spec = ReachSpec::new(r.center.clone(), r.eps0, r.eps_d, r.t_start, r.t_reach);
            spec.t_remain = r.t_remain;
            spec.form = radial(r.form, r.norm_order);
            spec.schedule = r.schedule;
            out.push(
                BarrierChain::reach_remain(
                    r.name.clone(),
                    model,
                    spec,
                    alphas(&format!("{field}.alphas"), &r.alphas)?,
                )
                .map_err(|e| field_err(&field, e))?,
            );
        }
        Ok(out)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.safety
            .iter()
            .map(|s| s.weight)
            .chain(self.reach.iter().map(|r| r.weight))
            .collect()
    }

    pub fn setup<'a>(&self, model: &'a dyn SystemModel) -> Result<SimSetup<'a>> {
        Ok(SimSetup {
            model,
            chains: self.chains(model)?,
            weights: self.weights(),
            initial_state: DVector::from_row_slice(&self.initial_state),
            t0: 0.0,
            dt: self.dt,
            steps: self.steps(),
            controller: self.controller,
            input_box: InputBox::new(self.input.lower.clone(), self.input.upper.clone())?,
            estimator: self.estimator,
            policy: self.simulation.infeasibility,
            audit_substep: self.audit_substep(),
            ode: OdeOptions::with_tolerance(self.simulation.integrator_tol),
            audit_tol: self.simulation.audit_tol,
        })
    }

    pub fn with_heading(mut self, heading: f64) -> Result<Self> {
        let idx = self
            .model
            .instantiate()
            .heading_index()
            .ok_or_else(|| Error::InvalidArgument("model has no heading coordinate".into()))?;
        if !heading.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "heading must be finite, got {heading}"
            )));
        }
        self.initial_state[idx] = heading;
        Ok(self)
    }

    pub fn with_controller(mut self, controller: ControllerKind) -> Self {
        self.controller = controller;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.estimator.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
model = "unicycle"
initial_state = [-3.0, 0.0, 0.0, 1.0]
dt = 0.1
horizon = 1.0

[input]
lower = [-10.0, -10.0]
upper = [10.0, 10.0]

[[safety]]
name = "obstacle"
center = [0.0, 0.0]
radius = 1.0
alphas = [{ lambda = 2.0, eta = 1.0 }, { lambda = 2.0, eta = 1.0 }]
weight = 200.0
"#;

    #[test]
    fn defaults_are_applied() {
        let c = parse_scenario(MINIMAL).unwrap();
        assert_eq!(c.estimator.nodes, 5);
        assert_eq!(c.estimator.safety_factor, 1.5);
        assert_eq!(c.simulation.audit_substep, Some(0.001));
        assert_eq!(c.controller, ControllerKind::RSacbf);
        assert_eq!(c.steps(), 10);
    }

    #[test]
    fn empty_document_is_rejected() {
        assert!(matches!(parse_scenario(""), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(parse_scenario(&text).is_err());
        let text = MINIMAL.replace("radius = 1.0", "radius = 1.0\nradious = 2.0");
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn errors_name_the_field() {
        let msg = parse_scenario(&MINIMAL.replace("dt = 0.1", "dt = -0.1"))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("dt"), "{msg}");
        let msg = parse_scenario(&MINIMAL.replace("horizon = 1.0", "horizon = 1.05"))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("horizon"), "{msg}");
        let msg = parse_scenario(&MINIMAL.replace("dt = 0.1\n", ""))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("dt"), "{msg}");
    }

    #[test]
    fn round_trip() {
        let c = parse_scenario(MINIMAL).unwrap();
        let again = parse_scenario(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn heading_override() {
        let c = parse_scenario(MINIMAL).unwrap().with_heading(0.5).unwrap();
        assert_eq!(c.initial_state[2], 0.5);
    }
}
