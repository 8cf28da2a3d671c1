//! Run configuration: strict JSON with every failing field reported.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::alpha::AlphaSchedule;
use crate::benchmarks::Preset;
use crate::continuation::EpsSchedule;
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::functions::{zero, Polynomial, SharedFunction};
use crate::mesh::{Diagonal, Mesh};
use crate::objective::ObjectiveParams;
use crate::optimizer::OptimizerOptions;
use crate::space::Field;
use crate::state::{SolverOptions, StateProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Solve,
    Optimize,
    Continue,
    VerifyGradient,
    VerifyShape,
    GammaCheck,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Solve,
        Mode::Optimize,
        Mode::Continue,
        Mode::VerifyGradient,
        Mode::VerifyShape,
        Mode::GammaCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Optimize => "optimize",
            Mode::Continue => "continue",
            Mode::VerifyGradient => "verify-gradient",
            Mode::VerifyShape => "verify-shape",
            Mode::GammaCheck => "gamma-check",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
    pub diagonal: Diagonal,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 32,
            width: 1.0,
            height: 1.0,
            diagonal: Diagonal::Right,
        }
    }
}

/// Physical data. `boundary` and `force` override the preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub preset: Preset,
    /// Inlet peak velocity of the preset windows.
    pub peak: f64,
    pub mu: f64,
    pub gamma: f64,
    /// Volume bound; the preset default when absent.
    pub beta: Option<f64>,
    pub boundary: Option<Polynomial>,
    pub force: Option<Polynomial>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Pipe,
            peak: 0.25,
            mu: 1.0,
            gamma: 0.05,
            beta: None,
            boundary: None,
            force: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Random feasible directions for the gradient check.
    pub directions: usize,
    pub gradient_tol: f64,
    /// Canonical velocity names for the shape check.
    pub velocities: Vec<String>,
    pub shape_steps: Vec<f64>,
    pub shape_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            directions: 5,
            gradient_tol: 1e-4,
            velocities: vec!["translate_y".into(), "stretch_x".into(), "dilate".into()],
            shape_steps: vec![1e-2, 5e-3, 2.5e-3],
            shape_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaCheckConfig {
    pub eps0: f64,
    pub n0: usize,
    pub halvings: usize,
    pub tol: f64,
}

impl Default for GammaCheckConfig {
    fn default() -> Self {
        Self {
            eps0: 0.32,
            n0: 8,
            halvings: 2,
            tol: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub mesh: MeshConfig,
    pub problem: ProblemConfig,
    pub alpha: AlphaSchedule,
    pub eps: EpsSchedule,
    pub optimizer: OptimizerOptions,
    pub solver: SolverOptions,
    pub verify: VerifyConfig,
    pub gamma_check: GammaCheckConfig,
    pub output: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            mesh: MeshConfig::default(),
            problem: ProblemConfig::default(),
            alpha: AlphaSchedule::new(1000.0, 0.5).expect("valid defaults"),
            eps: EpsSchedule::default(),
            optimizer: OptimizerOptions::default(),
            solver: SolverOptions::default(),
            verify: VerifyConfig::default(),
            gamma_check: GammaCheckConfig::default(),
            output: PathBuf::from("out"),
            seed: 0,
        }
    }
}

const KEYS: [&str; 11] = [
    "mode",
    "mesh",
    "problem",
    "alpha",
    "eps",
    "optimizer",
    "solver",
    "verify",
    "gamma_check",
    "output",
    "seed",
];

fn section<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str, errs: &mut Vec<String>) -> Option<T> {
    let v = obj.get(key)?;
    match serde_json::from_value(v.clone()) {
        Ok(t) => Some(t),
        Err(e) => {
            errs.push(format!("{key}: {e}"));
            None
        }
    }
}

/// Parses and validates a JSON configuration.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Config(vec!["top level must be a JSON object".into()]))?;
    let mut errs: Vec<String> = obj
        .keys()
        .filter(|k| !KEYS.contains(&k.as_str()))
        .map(|k| format!("unknown field `{k}`"))
        .collect();
    let mut c = RunConfig::default();
    if let Some(m) = obj.get("mode") {
        match m.as_str().and_then(Mode::parse) {
            Some(mode) => c.mode = Some(mode),
            None => errs.push(format!("mode: unknown mode {m}")),
        }
    }
    if let Some(v) = section(obj, "mesh", &mut errs) {
        c.mesh = v;
    }
    if let Some(v) = section(obj, "problem", &mut errs) {
        c.problem = v;
    }
    if let Some(v) = section(obj, "alpha", &mut errs) {
        c.alpha = v;
    }
    if let Some(v) = section(obj, "eps", &mut errs) {
        c.eps = v;
    }
    if let Some(v) = section(obj, "optimizer", &mut errs) {
        c.optimizer = v;
    }
    if let Some(v) = section(obj, "solver", &mut errs) {
        c.solver = v;
    }
    if let Some(v) = section(obj, "verify", &mut errs) {
        c.verify = v;
    }
    if let Some(v) = section(obj, "gamma_check", &mut errs) {
        c.gamma_check = v;
    }
    if let Some(v) = section(obj, "output", &mut errs) {
        c.output = v;
    }
    if let Some(v) = section(obj, "seed", &mut errs) {
        c.seed = v;
    }
    errs.extend(c.problems());
    if errs.is_empty() {
        Ok(c)
    } else {
        Err(Error::Config(errs))
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse_config_str(&text)
}

fn push_err(errs: &mut Vec<String>, key: &str, r: Result<()>) {
    match r {
        Ok(()) => {}
        Err(Error::Config(list)) => errs.extend(list),
        Err(e) => errs.push(format!("{key}: {e}")),
    }
}

impl RunConfig {
    /// Every semantic violation, one message per field.
    pub fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let m = &self.mesh;
        if m.nx == 0 || m.ny == 0 {
            errs.push(format!("mesh: nx = {}, ny = {} must be positive", m.nx, m.ny));
        }
        if !(m.width > 0.0 && m.height > 0.0) {
            errs.push("mesh: width and height must be positive".into());
        }
        let p = &self.problem;
        if !(p.mu > 0.0 && p.mu.is_finite()) {
            errs.push(format!("problem.mu = {} must be positive", p.mu));
        }
        if !(p.gamma > 0.0 && p.gamma.is_finite()) {
            errs.push(format!("problem.gamma = {} must be positive", p.gamma));
        }
        if !p.peak.is_finite() {
            errs.push("problem.peak must be finite".into());
        }
        let beta = self.beta();
        if !(beta > -1.0 && beta < 1.0) {
            errs.push(format!("problem.beta = {beta} must lie in (-1, 1)"));
        }
        if !self.alpha.s.is_nan() && !(self.alpha.s > 0.0 && self.alpha.s < 2.0 / 3.0) {
            errs.push(format!(
                "alpha.s = {}: exponent violates growth condition o(eps^(-2/3))",
                self.alpha.s
            ));
        } else {
            push_err(&mut errs, "alpha", self.alpha.validate());
        }
        push_err(&mut errs, "eps", self.eps.validate());
        push_err(&mut errs, "optimizer", self.optimizer.validate());
        let s = &self.solver;
        for (k, v) in [("rtol", s.rtol), ("atol", s.atol), ("armijo", s.armijo), ("picard_reduction", s.picard_reduction)] {
            if !(v > 0.0) {
                errs.push(format!("solver.{k} = {v} must be positive"));
            }
        }
        let v = &self.verify;
        if !(v.gradient_tol > 0.0 && v.shape_tol > 0.0) {
            errs.push("verify: tolerances must be positive".into());
        }
        if v.shape_steps.iter().any(|t| !(*t > 0.0)) {
            errs.push("verify.shape_steps must be positive".into());
        }
        let g = &self.gamma_check;
        if !(g.eps0 > 0.0 && g.tol > 0.0) || g.n0 == 0 {
            errs.push("gamma_check: eps0, n0 and tol must be positive".into());
        }
        errs
    }

    pub fn beta(&self) -> f64 {
        self.problem.beta.unwrap_or_else(|| self.problem.preset.default_beta())
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        let m = &self.mesh;
        Mesh::structured(m.nx, m.ny, m.width, m.height, m.diagonal)
    }

    pub fn force(&self) -> SharedFunction {
        match &self.problem.force {
            Some(p) => Arc::new(p.clone()),
            None => zero(),
        }
    }

    pub fn boundary(&self) -> SharedFunction {
        match &self.problem.boundary {
            Some(p) => Arc::new(p.clone()),
            None => Arc::new(self.problem.preset.boundary(self.problem.peak)),
        }
    }

    pub fn params(&self) -> Result<ObjectiveParams> {
        ObjectiveParams::total_potential_power(self.problem.mu, self.force(), self.problem.gamma)
    }

    /// Fixed design of the preset, or the uniform value `beta`.
    pub fn initial_design(&self, disc: &Discretization) -> Field {
        match self.problem.preset.fixed_design() {
            Some(f) => Field::interpolate_scalar(&disc.spaces.design, f),
            None => Field::constant(&disc.spaces.design, self.beta()),
        }
    }

    /// Problem on the configured mesh at the first `eps` level.
    pub fn build_problem(&self) -> Result<StateProblem> {
        let disc = Discretization::structured(self.build_mesh()?)?;
        let phi = self.initial_design(&disc);
        let alpha = self.alpha.at(self.eps.initial)?;
        let mut p = StateProblem::new(disc, self.problem.mu, self.force(), self.boundary(), phi, alpha)?;
        p.options = self.solver;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config_str(r#"{"mode": "solve"}"#).unwrap();
        assert_eq!(c.mode, Some(Mode::Solve));
        assert_eq!(c.mesh, MeshConfig::default());
        assert_eq!(c.beta(), Preset::Pipe.default_beta());
        let echo = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_config_str(&echo).unwrap(), c);
    }

    #[test]
    fn growth_exponent_is_checked() {
        let e = parse_config_str(r#"{"alpha": {"a0": 10, "s": 0.9}}"#).unwrap_err();
        assert!(e.to_string().contains("exponent violates growth condition o(eps^(-2/3))"), "{e}");
    }

    #[test]
    fn every_failing_field_is_listed() {
        let e = parse_config_str(r#"{"problem": {"beta": 1.5}, "colour": 1, "mesh": {"nx": 4, "bogus": 2}, "mode": "run"}"#)
            .unwrap_err();
        let Error::Config(list) = e else { panic!() };
        let joined = list.join("\n");
        assert!(joined.contains("colour"), "{joined}");
        assert!(joined.contains("bogus"), "{joined}");
        assert!(joined.contains("beta = 1.5"), "{joined}");
        assert!(joined.contains("mode"), "{joined}");
    }

    #[test]
    fn polynomial_escape_hatch() {
        let c = parse_config_str(
            r#"{"problem": {"boundary": {"x": [{"coef": 1, "px": 0, "py": 1}, {"coef": -1, "px": 0, "py": 2}], "y": []}, "beta": 0.5}}"#,
        )
        .unwrap();
        let g = c.boundary();
        assert_eq!(g.value([0.0, 0.5]), [0.25, 0.0]);
        let p = c.build_problem().unwrap();
        assert!(p.boundary_flux().abs() < 1e-12);
    }
}
