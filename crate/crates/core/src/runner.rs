//! Mode dispatch: every run writes `config.json`, `history.csv`, field VTKs
//! and `summary.json` into the output directory.

use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::adjoint::{
    default_fd_steps, gradient_v_curve, random_feasible_direction, reduced_derivative, solve_adjoint, v_curve_minimum,
};
use crate::config::{Mode, RunConfig};
use crate::continuation::{run_continuation, ContinuationResult};
use crate::error::{Error, Result};
use crate::io::{write_csv, write_json, write_vtk, PointData};
use crate::objective::{eval_j_eps, gamma_check, sine_profile, ObjectiveParams, ObjectiveTerms};
use crate::optimizer::{check_uniqueness_gate, run_optimization};
use crate::shape::{
    canonical_velocities, divergence_identity_residual, eval_shape_derivative, fd_sweep, optimality_residual_geometric,
    shape_derivative_eps_sweep, solve_linearized_geometric, DesignVelocity, SweepRow,
};
use crate::space::Field;
use crate::state::{solve_state, StateProblem, StateSolution};

/// Result of a run: whether its verification gate passed and where the
/// artifacts are.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub passed: bool,
    pub output: PathBuf,
    pub summary: Value,
}

impl Error {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::SpaceMismatch(_) => "space_mismatch",
            Error::FluxViolation { .. } => "flux_violation",
            Error::NegativeAlpha { .. } => "negative_alpha",
            Error::PotentialOutOfRange { .. } => "potential_out_of_range",
            Error::NonConvergence { .. } => "non_convergence",
            Error::NotANumber(_) => "not_a_number",
            Error::Singular { .. } => "singular",
            Error::EmptyAdmissibleSpace { .. } => "empty_admissible_space",
            Error::Stalled { .. } => "stalled",
            Error::InadmissibleVelocity(_) => "inadmissible_velocity",
            Error::FlowLeftDomain { .. } => "flow_left_domain",
            Error::UnresolvedInterface { .. } => "unresolved_interface",
            Error::MarginTooLarge { .. } => "margin_too_large",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// 2 for usage and configuration errors, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::FluxViolation { .. } | Error::InadmissibleVelocity(_) => 2,
            _ => 1,
        }
    }
}

/// Writes `error.json` for a failed run (best effort).
pub fn write_error_record(dir: &Path, mode: Mode, err: &Error) {
    let record = json!({"mode": mode.name(), "kind": err.kind(), "message": err.to_string()});
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = write_json(&dir.join("error.json"), &record);
    }
}

/// Runs `mode` with `config`, writing into `config.output`.
pub fn run(mode: Mode, config: &RunConfig) -> Result<RunOutcome> {
    let mut config = config.clone();
    config.mode = Some(mode);
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let out = config.output.clone();
    std::fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), &config)?;
    info!("{} -> {}", mode.name(), out.display());
    let (passed, mut summary) = match mode {
        Mode::Solve => run_solve(&config, &out)?,
        Mode::Optimize => run_optimize(&config, &out)?,
        Mode::Continue => run_continue(&config, &out)?,
        Mode::VerifyGradient => run_verify_gradient(&config, &out)?,
        Mode::VerifyShape => run_verify_shape(&config, &out)?,
        Mode::GammaCheck => run_gamma_check(&config, &out)?,
    };
    summary["mode"] = json!(mode.name());
    summary["passed"] = json!(passed);
    summary["seed"] = json!(config.seed);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(RunOutcome {
        passed,
        output: out,
        summary,
    })
}

fn write_fields(path: &Path, problem: &StateProblem, state: &StateSolution, title: &str) -> Result<()> {
    write_vtk(
        path,
        problem.mesh(),
        title,
        &[
            ("phi", PointData::from_field(&problem.phi)),
            ("velocity", PointData::from_field(&state.velocity)),
            ("pressure", PointData::from_field(&state.pressure)),
        ],
    )
}

fn state_summary(state: &StateSolution) -> Value {
    json!({
        "margin": state.margin,
        "uniqueness": check_uniqueness_gate(state).class.label(),
        "residual": state.residual,
        "divergence_residual": state.divergence_residual,
        "nonlinear_iterations": state.iterations(),
        "newton_steps": state.newton_steps,
    })
}

fn terms_json(t: &ObjectiveTerms) -> Value {
    serde_json::to_value(t).expect("plain numbers")
}

#[derive(Serialize)]
struct ResidualRow {
    iteration: usize,
    residual: f64,
}

fn run_solve(c: &RunConfig, out: &Path) -> Result<(bool, Value)> {
    let p = c.build_problem()?;
    let params = c.params()?;
    let s = solve_state(&p, None)?;
    let eps = c.eps.initial;
    let terms = eval_j_eps(&p, &s, &params, eps)?;
    let rows: Vec<ResidualRow> = s
        .history
        .iter()
        .enumerate()
        .map(|(iteration, &residual)| ResidualRow { iteration, residual })
        .collect();
    write_csv(&out.join("history.csv"), &rows)?;
    write_fields(&out.join("state.vtk"), &p, &s, "state")?;
    Ok((
        true,
        json!({
            "eps": eps,
            "terms": terms_json(&terms),
            "lambda": null,
            "stationarity": null,
            "state": state_summary(&s),
        }),
    ))
}

fn complementarity(lambda: f64, volume: f64, beta: f64, measure: f64) -> f64 {
    (lambda * (volume - beta * measure)).abs()
}

fn geometric_residuals(
    p: &StateProblem,
    s: &StateSolution,
    params: &ObjectiveParams,
    eps: f64,
    lambda: f64,
) -> Result<Value> {
    let family = canonical_velocities(p)?;
    let r = optimality_residual_geometric(p, s, params, eps, lambda, &family)?;
    let max = r.iter().map(|r| r.normalized()).fold(0.0, f64::max);
    Ok(json!({"max_normalized": max, "per_velocity": r}))
}

fn run_optimize(c: &RunConfig, out: &Path) -> Result<(bool, Value)> {
    let p = c.build_problem()?;
    let params = c.params()?;
    let eps = c.eps.initial;
    let beta = c.beta();
    let r = run_optimization(&p, &params, eps, beta, &p.phi, &c.optimizer, 0)?;
    write_csv(&out.join("history.csv"), &r.history.records)?;
    let fp = p.with_phi(r.phi.clone());
    write_fields(&out.join("design.vtk"), &fp, &r.state, "optimized design")?;
    let measure = p.mesh().measure();
    let volume = p.disc.design_integral(r.phi.values());
    let geo = geometric_residuals(&fp, &r.state, &params, eps, r.lambda)?;
    Ok((
        r.converged,
        json!({
            "eps": eps,
            "beta": beta,
            "terms": terms_json(&r.terms),
            "lambda": r.lambda,
            "stationarity": r.stationarity,
            "converged": r.converged,
            "iterations": r.iterations,
            "volume": volume,
            "volume_bound": beta * measure,
            "complementarity": complementarity(r.lambda, volume, beta, measure),
            "monotone": r.history.is_monotone(),
            "state": state_summary(&r.state),
            "geometric_residuals": geo,
        }),
    ))
}

#[derive(Serialize)]
struct LevelRow {
    level: usize,
    eps: f64,
    alpha_bar: f64,
    j_total: f64,
    alpha_term: f64,
    f_term: f64,
    gl_term: f64,
    lambda: f64,
    stationarity: f64,
    converged: bool,
    iterations: usize,
    volume: f64,
    margin: f64,
    uniqueness: &'static str,
    l1_mismatch: f64,
    l1_ratio: f64,
}

#[derive(Serialize)]
struct ShapeSweepRow {
    velocity: String,
    eps: f64,
    derivative: f64,
    cauchy: f64,
}

/// Shape-derivative sweep over the levels of a continuation run.
pub fn continuation_shape_sweep(
    problem: &StateProblem,
    config: &RunConfig,
    result: &ContinuationResult,
    params: &ObjectiveParams,
    velocities: &[DesignVelocity],
) -> Result<Vec<(String, Vec<SweepRow>)>> {
    let levels: Vec<(f64, StateProblem, StateSolution)> = result
        .levels
        .iter()
        .map(|l| {
            let p = problem.with_phi(l.phi.clone()).with_alpha(config.alpha.at(l.eps)?);
            Ok((l.eps, p, l.state.clone()))
        })
        .collect::<Result<_>>()?;
    velocities
        .iter()
        .map(|v| Ok((v.name.clone(), shape_derivative_eps_sweep(&levels, params, v)?)))
        .collect()
}

/// `|d_last - d_prev| < |d_prev - d_prevprev|`.
pub fn cauchy_decreasing(rows: &[SweepRow]) -> bool {
    let n = rows.len();
    n >= 3 && rows[n - 1].cauchy < rows[n - 2].cauchy
}

fn select_velocities(p: &StateProblem, names: &[String]) -> Result<Vec<DesignVelocity>> {
    let family = canonical_velocities(p)?;
    names
        .iter()
        .map(|n| {
            family.iter().find(|v| &v.name == n).cloned().ok_or_else(|| {
                let known: Vec<&str> = family.iter().map(|v| v.name.as_str()).collect();
                Error::Config(vec![format!("verify.velocities: unknown velocity `{n}` (known: {})", known.join(", "))])
            })
        })
        .collect()
}

fn run_continue(c: &RunConfig, out: &Path) -> Result<(bool, Value)> {
    let p = c.build_problem()?;
    let params = c.params()?;
    let beta = c.beta();
    let velocities = select_velocities(&p, &c.verify.velocities)?;
    let r = run_continuation(&p, &params, &c.alpha, &c.eps, beta, &p.phi, &c.optimizer)?;
    write_csv(&out.join("history.csv"), &r.history.records)?;
    let rows: Vec<LevelRow> = r
        .levels
        .iter()
        .map(|l| LevelRow {
            level: l.level,
            eps: l.eps,
            alpha_bar: l.alpha_bar,
            j_total: l.terms.total,
            alpha_term: l.terms.alpha_term,
            f_term: l.terms.f_term,
            gl_term: l.terms.gl_term,
            lambda: l.lambda,
            stationarity: l.stationarity,
            converged: l.converged,
            iterations: l.iterations,
            volume: l.volume,
            margin: l.gate.margin,
            uniqueness: l.gate.class.label(),
            l1_mismatch: l.l1_mismatch,
            l1_ratio: l.l1_ratio(),
        })
        .collect();
    write_csv(&out.join("levels.csv"), &rows)?;
    let sweep = continuation_shape_sweep(&p, c, &r, &params, &velocities)?;
    let sweep_rows: Vec<ShapeSweepRow> = sweep
        .iter()
        .flat_map(|(name, rows)| {
            rows.iter().map(move |row| ShapeSweepRow {
                velocity: name.clone(),
                eps: row.eps,
                derivative: row.derivative,
                cauchy: row.cauchy,
            })
        })
        .collect();
    write_csv(&out.join("shape_sweep.csv"), &sweep_rows)?;
    let last = r.last();
    let fp = p.with_phi(last.phi.clone());
    write_fields(&out.join("design.vtk"), &fp, &last.state, "final design")?;
    write_vtk(
        &out.join("sharp.vtk"),
        p.mesh(),
        "sharp design",
        &[
            ("sharp", PointData::Scalar(r.sharp.to_phase_field(&p.disc.spaces.design).into_values())),
            ("velocity", PointData::from_field(&r.j0.state.velocity)),
        ],
    )?;
    let gaps = r.level_gaps();
    let last_gap = gaps.last().copied().unwrap_or(0.0);
    let sharp_gap = r.sharp_gap();
    let certified = r.levels.iter().all(|l| l.gate.margin < 1.0);
    let sweep_ok = sweep.iter().all(|(_, rows)| cauchy_decreasing(rows));
    let passed = last_gap <= 0.05 && sharp_gap <= 0.10 && certified;
    let measure = p.mesh().measure();
    Ok((
        passed,
        json!({
            "beta": beta,
            "eps": c.eps.values(),
            "levels": rows,
            "terms": terms_json(&last.terms),
            "lambda": last.lambda,
            "stationarity": last.stationarity,
            "complementarity": complementarity(last.lambda, last.volume, beta, measure),
            "margin": last.gate.margin,
            "j0": {"total": r.j0.total, "f_term": r.j0.f_term, "perimeter": r.j0.perimeter, "perimeter_term": r.j0.perimeter_term},
            "admitted_cells": r.admitted_cells,
            "level_gaps": gaps,
            "last_level_gap": last_gap,
            "sharp_gap": sharp_gap,
            "all_levels_certified": certified,
            "monotone": r.history.is_monotone(),
            "shape_sweep_cauchy_decreasing": sweep_ok,
        }),
    ))
}

/// Smooth design with a solid disc of radius 0.2 at the domain center and a
/// `sin` profile of width `pi eps`, used by the verification modes.
pub fn verification_design(p: &StateProblem, eps: f64) -> Field {
    let m = p.mesh();
    let c = [0.45 * m.width(), 0.6 * m.height()];
    Field::interpolate_scalar(&p.disc.spaces.design, |x| {
        sine_profile(((x[0] - c[0]).hypot(x[1] - c[1]) - 0.2) / eps)
    })
}

#[derive(Serialize)]
struct GradientRow {
    direction: usize,
    step: f64,
    fd: f64,
    exact: f64,
    rel_error: f64,
}

fn run_verify_gradient(c: &RunConfig, out: &Path) -> Result<(bool, Value)> {
    let base = c.build_problem()?;
    let eps = c.eps.initial;
    let p = base.with_phi(verification_design(&base, eps));
    let params = c.params()?;
    let s = solve_state(&p, None)?;
    let a = solve_adjoint(&p, &s, &params)?;
    let d = reduced_derivative(&p, &s, &a, &params, eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let steps = default_fd_steps();
    let mut rows = Vec::new();
    let mut minima = Vec::new();
    for k in 0..c.verify.directions {
        let dphi = random_feasible_direction(&p.phi, &mut rng);
        let curve = gradient_v_curve(&p, &s, &params, eps, &d, &dphi, &steps)?;
        let best = v_curve_minimum(&curve).expect("nonempty steps");
        minima.push(json!({"direction": k, "step": best.step, "rel_error": best.rel_error, "exact": best.exact}));
        rows.extend(curve.into_iter().map(|pt| GradientRow {
            direction: k,
            step: pt.step,
            fd: pt.fd,
            exact: pt.exact,
            rel_error: pt.rel_error,
        }));
    }
    write_csv(&out.join("history.csv"), &rows)?;
    write_fields(&out.join("state.vtk"), &p, &s, "verification design")?;
    let worst = minima
        .iter()
        .map(|m| m["rel_error"].as_f64().unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let terms = eval_j_eps(&p, &s, &params, eps)?;
    Ok((
        worst <= c.verify.gradient_tol,
        json!({
            "eps": eps,
            "terms": terms_json(&terms),
            "lambda": null,
            "stationarity": null,
            "state": state_summary(&s),
            "adjoint_residual": a.residual,
            "minima": minima,
            "worst_min_rel_error": worst,
            "tolerance": c.verify.gradient_tol,
        }),
    ))
}

#[derive(Serialize)]
struct ShapeRow {
    velocity: String,
    step: f64,
    fd: f64,
    exact: f64,
    rel_error: f64,
}

fn run_verify_shape(c: &RunConfig, out: &Path) -> Result<(bool, Value)> {
    let base = c.build_problem()?;
    let eps = c.eps.initial;
    let p = base.with_phi(verification_design(&base, eps));
    let params = c.params()?;
    let s = solve_state(&p, None)?;
    let velocities = select_velocities(&p, &c.verify.velocities)?;
    let mut rows = Vec::new();
    let mut per_v = Vec::new();
    let mut passed = true;
    for v in &velocities {
        let lin = solve_linearized_geometric(&p, &s, v)?;
        let div = divergence_identity_residual(&p, &lin);
        let d = eval_shape_derivative(&p, &s, &lin, v, &params, eps)?;
        let sweep = fd_sweep(&p, &s, &params, eps, v, d.total, &c.verify.shape_steps)?;
        let best = sweep.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
        passed &= best <= c.verify.shape_tol && div <= 1e-8 && lin.residual <= 1e-10;
        per_v.push(json!({
            "velocity": v.name,
            "derivative": d,
            "best_rel_error": best,
            "divergence_identity_residual": div,
            "compatibility_defect": lin.compatibility_defect,
            "linear_residual": lin.residual,
        }));
        rows.extend(sweep.into_iter().map(|(step, fd, rel_error)| ShapeRow {
            velocity: v.name.clone(),
            step,
            fd,
            exact: d.total,
            rel_error,
        }));
    }
    write_csv(&out.join("history.csv"), &rows)?;
    write_fields(&out.join("state.vtk"), &p, &s, "verification design")?;
    let terms = eval_j_eps(&p, &s, &params, eps)?;
    Ok((
        passed,
        json!({
            "eps": eps,
            "terms": terms_json(&terms),
            "lambda": null,
            "stationarity": null,
            "state": state_summary(&s),
            "velocities": per_v,
            "tolerance": c.verify.shape_tol,
        }),
    ))
}

fn run_gamma_check(c: &RunConfig, out: &Path) -> Result<(bool, Value)> {
    let g = &c.gamma_check;
    let gamma = c.problem.gamma;
    let rows = gamma_check(g.eps0, g.n0, g.halvings, gamma)?;
    write_csv(&out.join("history.csv"), &rows)?;
    let first = rows[0];
    let disc = crate::discretization::Discretization::structured(crate::mesh::build_structured_mesh(first.n, first.n, 1.0, 1.0)?)?;
    let phi = Field::interpolate_scalar(&disc.spaces.design, |x| sine_profile((x[0] - 0.5) / first.eps));
    write_vtk(&out.join("profile.vtk"), disc.mesh(), "interface profile", &[("phi", PointData::from_field(&phi))])?;
    let within = rows.iter().filter(|r| r.cells >= 8.0).all(|r| r.rel_error <= g.tol);
    let monotone = rows.windows(2).all(|w| w[1].rel_error < w[0].rel_error);
    Ok((
        within && monotone,
        json!({
            "rows": rows,
            "within_tolerance": within,
            "monotone": monotone,
            "lambda": null,
            "stationarity": null,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn config(dir: &Path, extra: &str) -> RunConfig {
        let text = format!(
            r#"{{"mesh": {{"nx": 8, "ny": 8}}, "output": {:?}{extra}}}"#,
            dir.to_str().unwrap()
        );
        parse_config_str(&text).unwrap()
    }

    #[test]
    fn solve_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), r#", "problem": {"preset": "poiseuille"}"#);
        let r = run(Mode::Solve, &c).unwrap();
        assert!(r.passed);
        for f in ["config.json", "history.csv", "state.vtk", "summary.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(r.summary["state"]["margin"].as_f64().unwrap() < 1.0);
        assert!(r.summary["state"]["residual"].as_f64().is_some());
        let echo = crate::config::parse_config(&dir.path().join("config.json")).unwrap();
        assert_eq!(echo.mode, Some(Mode::Solve));
    }

    #[test]
    fn gamma_check_mode() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), r#", "gamma_check": {"halvings": 1}"#);
        let r = run(Mode::GammaCheck, &c).unwrap();
        assert!(r.passed, "{}", r.summary);
    }

    #[test]
    fn unknown_velocity_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), r#", "verify": {"velocities": ["spin"]}"#);
        let e = run(Mode::VerifyShape, &c).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(e.kind(), "config");
    }
}
