//! Projected-gradient descent on the admissible phase fields.

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::adjoint::{reduced_gradient, solve_adjoint, stationarity_residual, InnerProduct, ReducedGradient, RieszMap};
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::objective::{eval_j_eps, ObjectiveParams, ObjectiveTerms};
use crate::space::Field;
use crate::state::{solve_state, StateProblem, StateSolution};

/// Result of projecting onto `{|phi| <= 1, int phi <= beta |Omega|}`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub values: Vec<f64>,
    /// Scalar shift `sigma >= 0` applied before clipping.
    pub shift: f64,
}

impl Projection {
    /// The volume bound is active.
    pub fn active(&self) -> bool {
        self.shift > 0.0
    }
}

fn clipped_volume(raw: &[f64], sigma: f64, weights: &[f64]) -> f64 {
    raw.iter().zip(weights).map(|(r, w)| w * (r - sigma).clamp(-1.0, 1.0)).sum()
}

/// Nodal clip followed, if needed, by the scalar shift that restores the
/// volume bound (bisection on `sigma` to 1e-12).
pub fn project_values(raw: &[f64], beta: f64, weights: &[f64]) -> Projection {
    let measure: f64 = weights.iter().sum();
    let target = beta * measure;
    if clipped_volume(raw, 0.0, weights) <= target {
        return Projection {
            values: raw.iter().map(|r| r.clamp(-1.0, 1.0)).collect(),
            shift: 0.0,
        };
    }
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (0.0, (max + 1.0).max(0.0));
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if clipped_volume(raw, mid, weights) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Projection {
        values: raw.iter().map(|r| (r - hi).clamp(-1.0, 1.0)).collect(),
        shift: hi,
    }
}

/// Projects a design field onto the admissible set.
pub fn project_admissible(raw: &Field, beta: f64, disc: &Discretization) -> Result<(Field, Projection)> {
    if !(beta > -1.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("beta = {beta} must lie in (-1, 1)")));
    }
    let p = project_values(raw.values(), beta, &disc.design_weights);
    Ok((raw.with_values(p.values.clone())?, p))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerOptions {
    pub max_outer: usize,
    /// Relative to the initial stationarity residual.
    pub tol: f64,
    /// Absolute floor for the stationarity residual.
    pub atol: f64,
    pub c1: f64,
    pub max_halvings: usize,
    /// Metric of the gradient step. Only the lumped L2 metric makes the
    /// nodal clip-and-shift an exact projection.
    pub inner_product: InnerProduct,
    /// Largest nodal change of the first trial step.
    pub initial_change: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_outer: 500,
            tol: 1e-6,
            atol: 1e-12,
            c1: 1e-4,
            max_halvings: 30,
            inner_product: InnerProduct::L2,
            initial_change: 0.5,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.tol > 0.0) {
            errs.push(format!("optimizer.tol = {} must be positive", self.tol));
        }
        if !(self.atol > 0.0) {
            errs.push(format!("optimizer.atol = {} must be positive", self.atol));
        }
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            errs.push(format!("optimizer.c1 = {} must lie in (0, 1)", self.c1));
        }
        if !(self.initial_change > 0.0) {
            errs.push(format!("optimizer.initial_change = {} must be positive", self.initial_change));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// A design with its converged state and objective value.
#[derive(Debug, Clone)]
pub struct Iterate {
    pub phi: Field,
    pub state: StateSolution,
    pub terms: ObjectiveTerms,
}

impl Iterate {
    pub fn evaluate(problem: &StateProblem, params: &ObjectiveParams, eps: f64, phi: Field, warm: Option<&StateSolution>) -> Result<Self> {
        let p = problem.with_phi(phi);
        let state = solve_state(&p, warm)?;
        let terms = eval_j_eps(&p, &state, params, eps)?;
        Ok(Self { phi: p.phi, state, terms })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub iterate: Iterate,
    pub accepted: bool,
    /// Step length that was accepted.
    pub tau: f64,
    pub halvings: usize,
    pub shift: f64,
}

/// One projected-gradient step with Armijo backtracking:
/// accept `phi+ = P(phi - tau g)` when
/// `J(phi+) <= J(phi) - c1 / tau ||phi+ - phi||^2`.
pub fn step(
    problem: &StateProblem,
    params: &ObjectiveParams,
    eps: f64,
    beta: f64,
    current: &Iterate,
    gradient: &ReducedGradient,
    riesz: &RieszMap,
    tau: f64,
    options: &OptimizerOptions,
) -> Result<StepOutcome> {
    let disc = &problem.disc;
    let j0 = current.terms.total;
    let mut tau = tau;
    for halvings in 0..=options.max_halvings {
        let raw: Vec<f64> = current
            .phi
            .values()
            .iter()
            .zip(gradient.field.values())
            .map(|(p, g)| p - tau * g)
            .collect();
        let proj = project_values(&raw, beta, &disc.design_weights);
        let diff: Vec<f64> = proj.values.iter().zip(current.phi.values()).map(|(a, b)| a - b).collect();
        let dist2 = riesz.inner_product(&diff, &diff);
        if dist2 == 0.0 {
            return Ok(StepOutcome {
                iterate: current.clone(),
                accepted: true,
                tau,
                halvings,
                shift: proj.shift,
            });
        }
        let phi = current.phi.with_values(proj.values.clone())?;
        match Iterate::evaluate(problem, params, eps, phi, Some(&current.state)) {
            Ok(trial) if trial.terms.total <= j0 - options.c1 / tau * dist2 => {
                return Ok(StepOutcome {
                    iterate: trial,
                    accepted: true,
                    tau,
                    halvings,
                    shift: proj.shift,
                });
            }
            Ok(trial) => debug!("reject tau {tau:.3e}: J {:.10e} vs {j0:.10e}", trial.terms.total),
            Err(e @ (Error::NonConvergence { .. } | Error::Singular { .. })) => {
                debug!("reject tau {tau:.3e}: {e}")
            }
            Err(e) => return Err(e),
        }
        tau *= 0.5;
    }
    Err(Error::Stalled {
        halvings: options.max_halvings,
        tau,
        objective: j0,
    })
}

/// Nodes strictly inside the box.
fn free_nodes(phi: &[f64]) -> impl Iterator<Item = usize> + '_ {
    phi.iter().enumerate().filter(|(_, p)| p.abs() < 1.0 - 1e-12).map(|(i, _)| i)
}

/// Volume multiplier from the gradient on free nodes; zero when the bound is
/// inactive.
pub fn estimate_multiplier(phi: &[f64], g: &[f64], beta: f64, weights: &[f64]) -> f64 {
    let measure: f64 = weights.iter().sum();
    let slack = beta * measure - crate::sparse::dot(weights, phi);
    if slack > 1e-9 * measure {
        return 0.0;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in free_nodes(phi) {
        num -= weights[i] * g[i];
        den += weights[i];
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).max(0.0)
    }
}

/// Per-iteration record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub level: usize,
    pub eps: f64,
    pub iteration: usize,
    pub j_total: f64,
    pub alpha_term: f64,
    pub f_term: f64,
    pub gl_term: f64,
    pub stationarity: f64,
    pub lambda: f64,
    pub tau: f64,
    pub halvings: usize,
    pub volume: f64,
    pub margin: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OptimizationHistory {
    pub records: Vec<IterationRecord>,
}

impl OptimizationHistory {
    /// `J` never increases across accepted steps.
    pub fn is_monotone(&self) -> bool {
        self.records
            .windows(2)
            .filter(|w| w[0].level == w[1].level && w[1].accepted)
            .all(|w| w[1].j_total <= w[0].j_total)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub phi: Field,
    pub state: StateSolution,
    pub terms: ObjectiveTerms,
    pub lambda: f64,
    pub stationarity: f64,
    pub converged: bool,
    pub iterations: usize,
    pub history: OptimizationHistory,
}

/// Projected-gradient loop at fixed `eps` (the problem's `alpha` is used as
/// given), with Barzilai-Borwein trial steps and monotone Armijo
/// acceptance. Stops once the stationarity residual drops below
/// `max(tol * r0, atol)` or after `max_outer` iterations.
pub fn run_optimization(
    problem: &StateProblem,
    params: &ObjectiveParams,
    eps: f64,
    beta: f64,
    phi_init: &Field,
    options: &OptimizerOptions,
    level: usize,
) -> Result<OptimizationResult> {
    options.validate()?;
    let disc = &problem.disc;
    let weights = &disc.design_weights;
    let (phi0, _) = project_admissible(phi_init, beta, disc)?;
    let riesz = RieszMap::new(problem, options.inner_product, eps)?;
    let mut current = Iterate::evaluate(problem, params, eps, phi0, None)?;
    let mut history = OptimizationHistory::default();
    let mut tau = f64::NAN;
    let mut tau0 = f64::NAN;
    let mut r0 = f64::NAN;
    let mut last_halvings = 0;
    let mut last_accepted = true;
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    for iteration in 0.. {
        let p = problem.with_phi(current.phi.clone());
        let adj = solve_adjoint(&p, &current.state, params)?;
        let mut grad = reduced_gradient(&p, &current.state, &adj, params, eps, &riesz)?;
        grad.lambda = estimate_multiplier(current.phi.values(), grad.field.values(), beta, weights);
        let res = stationarity_residual(&grad, &current.phi, beta, weights);
        if iteration == 0 {
            r0 = res;
            let gmax = grad.field.max_abs();
            tau0 = if gmax > 0.0 { options.initial_change / gmax } else { 1.0 };
            tau = tau0;
        } else if let Some((phi_prev, g_prev)) = &previous {
            tau = barzilai_borwein(&riesz, current.phi.values(), phi_prev, grad.field.values(), g_prev)
                .unwrap_or(2.0 * tau)
                .clamp(1e-6 * tau0, 1e6 * tau0);
        }
        history.records.push(IterationRecord {
            level,
            eps,
            iteration,
            j_total: current.terms.total,
            alpha_term: current.terms.alpha_term,
            f_term: current.terms.f_term,
            gl_term: current.terms.gl_term,
            stationarity: res,
            lambda: grad.lambda,
            tau,
            halvings: last_halvings,
            volume: crate::sparse::dot(weights, current.phi.values()),
            margin: current.state.margin,
            accepted: last_accepted,
        });
        info!(
            "eps {eps:.4} iter {iteration} J {:.8e} res {res:.3e} lambda {:.3e} tau {tau:.3e}",
            current.terms.total, grad.lambda
        );
        let done = res <= (options.tol * r0).max(options.atol);
        if done || iteration >= options.max_outer {
            if !done {
                warn!("optimizer stopped at max_outer = {} with residual {res:.3e}", options.max_outer);
            }
            return Ok(OptimizationResult {
                phi: current.phi,
                state: current.state,
                terms: current.terms,
                lambda: grad.lambda,
                stationarity: res,
                converged: done,
                iterations: iteration,
                history,
            });
        }
        let out = step(&p, params, eps, beta, &current, &grad, &riesz, tau, options)?;
        last_halvings = out.halvings;
        last_accepted = out.accepted;
        tau = out.tau;
        previous = Some((current.phi.values().to_vec(), grad.field.values().to_vec()));
        current = out.iterate;
    }
    unreachable!()
}

/// Spectral step `<s, s> / <s, y>` with `s` the design change and `y` the
/// gradient change; `None` without positive curvature.
fn barzilai_borwein(riesz: &RieszMap, phi: &[f64], phi_prev: &[f64], g: &[f64], g_prev: &[f64]) -> Option<f64> {
    let s: Vec<f64> = phi.iter().zip(phi_prev).map(|(a, b)| a - b).collect();
    let y: Vec<f64> = g.iter().zip(g_prev).map(|(a, b)| a - b).collect();
    let sy = riesz.inner_product(&s, &y);
    let ss = riesz.inner_product(&s, &s);
    (sy > 0.0 && ss > 0.0).then(|| ss / sy)
}

/// Uniqueness classes of the margin `m = K_Omega ||grad u|| / mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UniquenessClass {
    #[serde(rename = "m<1/2")]
    SharpRegime,
    #[serde(rename = "m<1")]
    Unique,
    #[serde(rename = "uncertified")]
    Uncertified,
}

impl UniquenessClass {
    pub fn label(&self) -> &'static str {
        match self {
            Self::SharpRegime => "m<1/2",
            Self::Unique => "m<1",
            Self::Uncertified => "uncertified",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessGate {
    pub margin: f64,
    pub class: UniquenessClass,
}

pub fn classify_margin(margin: f64) -> UniquenessGate {
    let class = if margin < 0.5 {
        UniquenessClass::SharpRegime
    } else if margin < 1.0 {
        UniquenessClass::Unique
    } else {
        UniquenessClass::Uncertified
    };
    UniquenessGate { margin, class }
}

pub fn check_uniqueness_gate(state: &StateSolution) -> UniquenessGate {
    classify_margin(state.margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alpha::AlphaSchedule;
    use crate::functions::{analytic, zero, SharedFunction};
    use crate::mesh::build_structured_mesh;
    use crate::state::margin_from_norm;

    fn unit(n: usize) -> std::sync::Arc<Discretization> {
        Discretization::structured(build_structured_mesh(n, n, 1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn projection_examples() {
        let d = unit(4);
        let s = &d.spaces.design;
        let inside = Field::interpolate_scalar(s, |x| 0.5 * x[0] - 0.4);
        let (p, pr) = project_admissible(&inside, 0.5, &d).unwrap();
        assert_eq!(p.values(), inside.values());
        assert!(!pr.active());

        let (p, _) = project_admissible(&Field::constant(s, 1.5), 0.999, &d).unwrap();
        assert!(p.values().iter().all(|&v| v <= 1.0));
        assert!((d.design_integral(p.values()) - 0.999).abs() < 1e-11);

        let (p, pr) = project_admissible(&Field::constant(s, 1.0), 0.0, &d).unwrap();
        assert!((pr.shift - 1.0).abs() < 1e-11);
        assert!(p.max_abs() < 1e-11);
        assert!(d.design_integral(p.values()) <= 1e-10);
    }

    #[test]
    fn multiplier_and_classes() {
        let w = vec![0.25; 4];
        assert_eq!(estimate_multiplier(&[0.0; 4], &[-1.0; 4], 0.5, &w), 0.0);
        assert!((estimate_multiplier(&[0.5; 4], &[-2.0; 4], 0.5, &w) - 2.0).abs() < 1e-15);
        assert_eq!(classify_margin(0.0).class.label(), "m<1/2");
        assert_eq!(classify_margin(margin_from_norm(0.8, 1.0, 1.0, 2)).class, UniquenessClass::SharpRegime);
        assert!((margin_from_norm(0.8, 1.0, 1.0, 2) - 0.4).abs() < 1e-15);
        assert_eq!(classify_margin(0.7).class.label(), "m<1");
        assert_eq!(classify_margin(margin_from_norm(3.0, 1.0, 1.0, 2)).class.label(), "uncertified");
    }

    fn channel(n: usize) -> (StateProblem, ObjectiveParams) {
        let d = unit(n);
        let g: SharedFunction = analytic(
            |x| {
                let y = x[1];
                if (x[0] == 0.0 || x[0] == 1.0) && (0.25..=0.75).contains(&y) {
                    [16.0 * (y - 0.25) * (0.75 - y) * 0.2, 0.0]
                } else {
                    [0.0, 0.0]
                }
            },
            |_| [[0.0; 2]; 2],
        );
        let phi = Field::constant(&d.spaces.design, 0.0);
        let alpha = AlphaSchedule::new(100.0, 0.5).unwrap().at(0.2).unwrap();
        let p = StateProblem::new(d, 1.0, zero(), g, phi, alpha).unwrap();
        let params = ObjectiveParams::total_potential_power(1.0, zero(), 0.02).unwrap();
        (p, params)
    }

    #[test]
    fn trivial_problem_is_stationary() {
        let d = unit(4);
        let alpha = AlphaSchedule::new(10.0, 0.5).unwrap().at(0.25).unwrap();
        let phi = Field::constant(&d.spaces.design, 1.0);
        let p = StateProblem::new(d.clone(), 1.0, zero(), zero(), phi.clone(), alpha).unwrap();
        let params = ObjectiveParams::total_potential_power(1.0, zero(), 0.1).unwrap();
        // beta close to 1 keeps the all-fluid design feasible up to the bound
        let r = run_optimization(&p, &params, 0.25, 0.999, &phi, &OptimizerOptions::default(), 0).unwrap();
        assert!(r.iterations <= 1, "{}", r.iterations);
        assert!(r.phi.values().iter().all(|&v| (v - 1.0).abs() < 1e-2));
    }

    #[test]
    fn zero_gradient_step_keeps_design() {
        let (p, params) = channel(6);
        let it = Iterate::evaluate(&p, &params, 0.2, p.phi.clone(), None).unwrap();
        let riesz = RieszMap::new(&p, InnerProduct::L2, 0.2).unwrap();
        let g = ReducedGradient {
            derivative: vec![0.0; p.phi.values().len()],
            field: Field::zeros(&p.disc.spaces.design),
            inner: InnerProduct::L2,
            lambda: 0.0,
        };
        let out = step(&p, &params, 0.2, 0.0, &it, &g, &riesz, 1.0, &OptimizerOptions::default()).unwrap();
        assert!(out.accepted);
        assert_eq!(out.iterate.phi.values(), it.phi.values());
    }

    #[test]
    fn small_step_matches_first_order_model() {
        let (p, params) = channel(6);
        let eps = 0.2;
        let phi = Field::interpolate_scalar(&p.disc.spaces.design, |x| 0.5 * (x[1] - 0.5));
        let it = Iterate::evaluate(&p, &params, eps, phi, None).unwrap();
        for inner in [InnerProduct::L2, InnerProduct::H1] {
            let riesz = RieszMap::new(&p, inner, eps).unwrap();
            let pp = p.with_phi(it.phi.clone());
            let adj = solve_adjoint(&pp, &it.state, &params).unwrap();
            let g = reduced_gradient(&pp, &it.state, &adj, &params, eps, &riesz).unwrap();
            let tau = 1e-4 / g.field.max_abs();
            let out = step(&pp, &params, eps, 0.9, &it, &g, &riesz, tau, &OptimizerOptions::default()).unwrap();
            assert!(out.accepted && out.halvings == 0);
            let decrease = it.terms.total - out.iterate.terms.total;
            let model = tau * riesz.inner_product(g.field.values(), g.field.values());
            let ratio = decrease / model;
            assert!((0.5..=1.5).contains(&ratio), "{inner:?} {ratio}");
        }
    }

    #[test]
    fn channel_optimization_contract() {
        let (p, params) = channel(8);
        let beta = 0.0;
        let opts = OptimizerOptions {
            max_outer: 15,
            ..Default::default()
        };
        let r = run_optimization(&p, &params, 0.2, beta, &p.phi, &opts, 0).unwrap();
        assert!(r.history.is_monotone());
        assert!(r.phi.values().iter().all(|v| v.abs() <= 1.0));
        let vol = p.disc.design_integral(r.phi.values());
        assert!(vol <= beta + 1e-10);
        assert!(r.lambda >= 0.0);
        assert!(r.lambda * (vol - beta).abs() <= 1e-8 * (1.0 + r.lambda));
        let again = run_optimization(&p, &params, 0.2, beta, &p.phi, &opts, 0).unwrap();
        assert_eq!(r.history.records, again.history.records);
    }
}
