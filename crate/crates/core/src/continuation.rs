//! Interface-width continuation: a decreasing `eps` schedule with the
//! coupled `alpha_bar(eps)`, warm starts and sharp-interface extraction.

use std::f64::consts::PI;

use log::info;
use serde::{Deserialize, Serialize};

use crate::alpha::AlphaSchedule;
use crate::assembly::integrate;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::objective::{eval_j0, ObjectiveParams, ObjectiveTerms, SharpObjective};
use crate::optimizer::{check_uniqueness_gate, run_optimization, OptimizationHistory, OptimizerOptions, UniquenessGate};
use crate::sharp::{extract_sharp_interface, SharpMask};
use crate::space::Field;
use crate::state::{StateProblem, StateSolution};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EpsSchedule {
    pub initial: f64,
    /// Number of levels (halvings + 1).
    pub levels: usize,
    pub factor: f64,
    /// Minimum number of cells across the interface width `pi eps`.
    pub min_cells: usize,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        Self {
            initial: 0.16,
            levels: 5,
            factor: 0.5,
            min_cells: 4,
        }
    }
}

impl EpsSchedule {
    pub fn values(&self) -> Vec<f64> {
        (0..self.levels).map(|k| self.initial * self.factor.powi(k as i32)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            errs.push(format!("eps.initial = {} must be positive", self.initial));
        }
        if self.levels == 0 {
            errs.push("eps.levels must be at least 1".to_string());
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            errs.push(format!("eps.factor = {} must lie in (0, 1)", self.factor));
        }
        if self.min_cells == 0 {
            errs.push("eps.min_cells must be at least 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Refuses interface widths `pi eps` spanning fewer than `min_cells` cells.
pub fn check_resolution(eps: f64, mesh: &Mesh, min_cells: usize) -> Result<()> {
    let width = PI * eps;
    let h = mesh.h();
    if width < min_cells as f64 * h * (1.0 - 1e-12) {
        return Err(Error::UnresolvedInterface { width, h, min_cells });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LevelResult {
    pub level: usize,
    pub eps: f64,
    pub alpha_bar: f64,
    pub phi: Field,
    pub state: StateSolution,
    pub terms: ObjectiveTerms,
    pub lambda: f64,
    pub stationarity: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gate: UniquenessGate,
    pub volume: f64,
    /// `int_{sharp = +1, phi < 0} |phi - 1|` against the final sharp design.
    pub l1_mismatch: f64,
}

impl LevelResult {
    pub fn l1_ratio(&self) -> f64 {
        self.l1_mismatch / self.eps
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub levels: Vec<LevelResult>,
    pub sharp: SharpMask,
    /// Solid cells turned fluid because they carried inflow/outflow data.
    pub admitted_cells: usize,
    pub j0: SharpObjective,
    pub history: OptimizationHistory,
}

impl ContinuationResult {
    pub fn last(&self) -> &LevelResult {
        self.levels.last().expect("at least one level")
    }

    /// `|J_eps - J_0| / |J_0|` at the final level.
    pub fn sharp_gap(&self) -> f64 {
        (self.last().terms.total - self.j0.total).abs() / self.j0.total.abs()
    }

    /// `|J_eps - J_{eps'}| / |J_eps|` between consecutive levels.
    pub fn level_gaps(&self) -> Vec<f64> {
        self.levels
            .windows(2)
            .map(|w| (w[0].terms.total - w[1].terms.total).abs() / w[0].terms.total.abs())
            .collect()
    }
}

/// `int_{fluid cells of sharp, phi < 0} (1 - phi)`.
pub fn l1_mismatch(phi: &Field, sharp: &SharpMask) -> f64 {
    let mesh = phi.space().mesh();
    let fluid = sharp.cell_fluid();
    integrate(mesh, &crate::quadrature::TriangleRule::default_rule(), |qp| {
        if !fluid[qp.triangle] {
            return 0.0;
        }
        let v = phi.scalar_at(qp.triangle, &qp.lambda);
        if v < 0.0 {
            1.0 - v
        } else {
            0.0
        }
    })
}

/// Runs the optimizer over the `eps` schedule, each level warm-started from
/// the previous design, then evaluates the sharp objective of the
/// thresholded final design.
pub fn run_continuation(
    problem: &StateProblem,
    params: &ObjectiveParams,
    alpha: &AlphaSchedule,
    schedule: &EpsSchedule,
    beta: f64,
    phi_init: &Field,
    options: &OptimizerOptions,
) -> Result<ContinuationResult> {
    schedule.validate()?;
    alpha.validate()?;
    let mesh = problem.mesh().clone();
    let eps_values = schedule.values();
    for &eps in &eps_values {
        check_resolution(eps, &mesh, schedule.min_cells)?;
    }
    let mut phi = phi_init.clone();
    let mut levels = Vec::new();
    let mut history = OptimizationHistory::default();
    for (level, &eps) in eps_values.iter().enumerate() {
        let a = alpha.at(eps)?;
        let p = problem.with_phi(phi.clone()).with_alpha(a);
        let r = run_optimization(&p, params, eps, beta, &phi, options, level)?;
        info!(
            "level {level} eps {eps:.4} J {:.8e} iterations {} residual {:.3e}",
            r.terms.total, r.iterations, r.stationarity
        );
        history.records.extend(r.history.records.iter().cloned());
        phi = r.phi.clone();
        levels.push(LevelResult {
            level,
            eps,
            alpha_bar: a.alpha_bar(),
            volume: problem.disc.design_integral(r.phi.values()),
            gate: check_uniqueness_gate(&r.state),
            phi: r.phi,
            state: r.state,
            terms: r.terms,
            lambda: r.lambda,
            stationarity: r.stationarity,
            converged: r.converged,
            iterations: r.iterations,
            l1_mismatch: 0.0,
        });
    }
    let mut sharp = extract_sharp_interface(&phi);
    let admitted_cells = sharp.admit_boundary_data(&mesh, &problem.boundary_values());
    for l in &mut levels {
        l.l1_mismatch = l1_mismatch(&l.phi, &sharp);
    }
    let final_problem = problem.with_phi(phi);
    let j0 = eval_j0(&final_problem, &sharp, params)?;
    Ok(ContinuationResult {
        levels,
        sharp,
        admitted_cells,
        j0,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::Discretization;
    use crate::functions::zero;
    use crate::mesh::build_structured_mesh;

    #[test]
    fn schedule_and_resolution() {
        let s = EpsSchedule {
            initial: 0.16,
            levels: 5,
            ..Default::default()
        };
        assert_eq!(s.values(), vec![0.16, 0.08, 0.04, 0.02, 0.01]);
        let mesh = build_structured_mesh(64, 64, 1.0, 1.0).unwrap();
        assert!(check_resolution(0.02, &mesh, 4).is_ok());
        assert!(matches!(check_resolution(0.01, &mesh, 4), Err(Error::UnresolvedInterface { .. })));
        assert!(EpsSchedule { factor: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn all_fluid_is_fixed_across_levels() {
        let d = Discretization::structured(build_structured_mesh(8, 8, 1.0, 1.0).unwrap()).unwrap();
        let phi = Field::constant(&d.spaces.design, 1.0);
        let alpha = AlphaSchedule::new(10.0, 0.5).unwrap();
        let p = StateProblem::new(d.clone(), 1.0, zero(), zero(), phi.clone(), alpha.at(0.5).unwrap()).unwrap();
        let params = ObjectiveParams::total_potential_power(1.0, zero(), 0.1).unwrap();
        let schedule = EpsSchedule {
            initial: 0.8,
            levels: 3,
            ..Default::default()
        };
        let r = run_continuation(&p, &params, &alpha, &schedule, 0.999, &phi, &OptimizerOptions::default()).unwrap();
        let first = r.levels[0].phi.values().to_vec();
        for l in &r.levels {
            assert_eq!(l.phi.values(), &first[..]);
            assert_eq!(l.l1_mismatch, 0.0);
        }
        assert!(r.sharp.is_all_fluid());
        assert_eq!(r.admitted_cells, 0);
    }
}
