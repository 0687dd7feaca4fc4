//! Value iteration, policy iteration and modified policy iteration.
//!
//! VI and MPI count every sweep as an iteration; PI counts policy
//! evaluations. All three stop on the first update below `ε` in the
//! configured norm.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{assemble_b, AssembledSystem, Policy};
use crate::bellman::{FrozenRow, NodeDecision, Scheme, SchemeParams};
use crate::grid::{fmt_f64, Grid, ValueField, MAX_DIM};
use crate::linalg::solve;
use crate::model::HybridProblem;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vi,
    Pi,
    Mpi,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Vi => "vi",
            Method::Pi => "pi",
            Method::Mpi => "mpi",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vi" => Ok(Method::Vi),
            "pi" => Ok(Method::Pi),
            "mpi" => Ok(Method::Mpi),
            other => Err(Error::Parse(format!(
                "unknown solver `{other}` (expected vi, pi or mpi)"
            ))),
        }
    }
}

/// Norm of the update `v_j − v_{j−1}` tested against `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StoppingNorm {
    #[serde(rename = "sup")]
    SupUpdate,
    /// `‖v_j − v_{j−1}‖₁ / ‖v_j‖₁`.
    #[serde(rename = "rel-l1")]
    RelativeL1Update,
}

impl StoppingNorm {
    pub fn name(&self) -> &'static str {
        match self {
            StoppingNorm::SupUpdate => "sup",
            StoppingNorm::RelativeL1Update => "rel-l1",
        }
    }

    pub fn update(&self, old: &[f64], new: &[f64]) -> f64 {
        match self {
            StoppingNorm::SupUpdate => old.iter().zip(new).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs())),
            StoppingNorm::RelativeL1Update => {
                let diff: f64 = old.iter().zip(new).map(|(a, b)| (a - b).abs()).sum();
                let size: f64 = new.iter().map(|v| v.abs()).sum();
                if size > 0.0 {
                    diff / size
                } else {
                    diff
                }
            }
        }
    }
}

impl std::str::FromStr for StoppingNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sup" => Ok(StoppingNorm::SupUpdate),
            "rel-l1" => Ok(StoppingNorm::RelativeL1Update),
            other => Err(Error::Parse(format!("unknown norm `{other}` (expected sup or rel-l1)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub method: Method,
    pub tolerance: f64,
    pub stopping_norm: StoppingNorm,
    pub max_iterations: usize,
    /// MPI: one improvement every `n_it` sweeps.
    pub n_it: usize,
    /// MPI: Bellman sweeps before the first improvement cycle.
    pub warmup_vi: usize,
    /// Defaults to [`default_initial_field`].
    pub initial_field: Option<ValueField>,
    /// Defaults to `ε/100`, floored near rounding level.
    pub linear_solver_tolerance: Option<f64>,
}

impl SolverConfig {
    pub fn new(method: Method, tolerance: f64) -> Self {
        SolverConfig {
            method,
            tolerance,
            stopping_norm: StoppingNorm::SupUpdate,
            max_iterations: 100_000,
            n_it: 10,
            warmup_vi: 10,
            initial_field: None,
            linear_solver_tolerance: None,
        }
    }

    pub fn with_norm(mut self, norm: StoppingNorm) -> Self {
        self.stopping_norm = norm;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_nit(mut self, n_it: usize) -> Self {
        self.n_it = n_it;
        self
    }

    pub fn with_warmup(mut self, warmup: usize) -> Self {
        self.warmup_vi = warmup;
        self
    }

    pub fn with_initial_field(mut self, field: ValueField) -> Self {
        self.initial_field = Some(field);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance {} must be positive",
                self.tolerance
            )));
        }
        if self.n_it == 0 {
            return Err(Error::InvalidParameter("N_it must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub method: Method,
    pub tolerance: f64,
    pub stopping_norm: StoppingNorm,
    pub iterations: usize,
    pub policy_improvements: usize,
    #[serde(skip)]
    pub update_history: Vec<f64>,
    /// `‖T(v) − v‖∞` of the returned field.
    pub final_residual: f64,
    /// Seconds.
    pub wall_time: f64,
    pub converged: bool,
}

impl ConvergenceReport {
    /// `iteration,update_norm`, one row per iteration.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,update_norm")?;
        for (k, u) in self.update_history.iter().enumerate() {
            writeln!(w, "{},{}", k + 1, fmt_f64(*u))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Largest running cost over nodes, modes and control samples.
fn max_running_cost(p: &HybridProblem, grid: &Grid, params: &SchemeParams) -> f64 {
    let d = grid.dim();
    (0..grid.len())
        .into_par_iter()
        .map(|off| {
            let (i, q) = grid.split_offset(off);
            let x = grid.node_coords(i);
            params
                .controls()
                .iter()
                .map(|&a| p.running_cost(&x[..d], q, a))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Largest autonomous or controlled jump cost at any node.
fn max_switch_cost(p: &HybridProblem, grid: &Grid) -> f64 {
    let d = grid.dim();
    let mut best = 0.0f64;
    let mut target = [0.0; MAX_DIM];
    for off in 0..grid.len() {
        let (i, q) = grid.split_offset(off);
        let x = grid.node_coords(i);
        let x = &x[..d];
        if p.in_autonomous_set(x, q) {
            for w in 0..p.autonomous_labels().len() {
                best = best.max(p.autonomous_cost(x, q, w));
            }
        } else if p.in_controlled_set(x, q) {
            for dest in p.destinations(q) {
                dest.target(x, &mut target);
                best = best.max(p.controlled_cost(x, q, &target[..d], dest.mode()));
            }
        }
    }
    best
}

/// Supersolution used to start the solvers: `T(v₀) ≤ v₀`.
///
/// Starts from `K = (Δt·ℓ_max + γ·penalty)/(1 − γ) + c_max`, which already
/// dominates every continuous and controlled branch, then raises the field
/// by `v ← max(v, T v)` until the autonomous branches are dominated too.
pub fn default_initial_field(p: &HybridProblem, grid: &Grid, params: &SchemeParams) -> Result<ValueField> {
    let gamma = params.discount_factor();
    let penalty = p.boundary_penalty().unwrap_or(0.0).max(0.0);
    let lmax = max_running_cost(p, grid, params);
    let k = (params.dt() * lmax + gamma * penalty) / (1.0 - gamma) + max_switch_cost(p, grid);
    let mut v = ValueField::constant(grid, k);
    let scheme = Scheme::new(p, grid, params)?;
    for _ in 0..20_000 {
        let tv = scheme.sweep(&v)?;
        let dominated = tv
            .values
            .iter()
            .zip(&v.values)
            .all(|(t, x)| *t <= x + 1e-12 * x.abs().max(1.0));
        if dominated {
            break;
        }
        for (x, t) in v.values.iter_mut().zip(&tv.values) {
            *x = x.max(*t);
        }
    }
    Ok(v)
}

/// True iff `T(v) ≤ v` entrywise, up to a relative rounding slack of 1e-12.
pub fn check_subsolution(p: &HybridProblem, grid: &Grid, params: &SchemeParams, field: &ValueField) -> Result<bool> {
    let tv = Scheme::new(p, grid, params)?.sweep(field)?;
    Ok(tv
        .values
        .iter()
        .zip(&field.values)
        .all(|(t, x)| *t <= x + 1e-12 * x.abs().max(1.0)))
}

fn initial_field(p: &HybridProblem, grid: &Grid, params: &SchemeParams, config: &SolverConfig) -> Result<ValueField> {
    match &config.initial_field {
        Some(f) if f.len() != grid.len() => Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: f.len(),
        }),
        Some(f) if !f.is_finite() => Err(Error::InvalidParameter("initial field is not finite".into())),
        Some(f) => Ok(f.clone()),
        None => default_initial_field(p, grid, params),
    }
}

fn finish(
    scheme: &Scheme,
    field: &ValueField,
    config: &SolverConfig,
    iterations: usize,
    improvements: usize,
    history: Vec<f64>,
    converged: bool,
    start: Instant,
) -> Result<ConvergenceReport> {
    let final_residual = scheme.residual(field)?;
    Ok(ConvergenceReport {
        method: config.method,
        tolerance: config.tolerance,
        stopping_norm: config.stopping_norm,
        iterations,
        policy_improvements: improvements,
        update_history: history,
        final_residual,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
    })
}

/// Repeated Bellman sweeps. On non-convergence the last field is returned
/// with `converged = false`.
pub fn value_iteration(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    config: &SolverConfig,
) -> Result<(ValueField, ConvergenceReport)> {
    config.validate()?;
    let start = Instant::now();
    let scheme = Scheme::new(p, grid, params)?;
    let mut v = initial_field(p, grid, params, config)?;
    let mut history = Vec::new();
    let mut converged = false;
    while history.len() < config.max_iterations {
        let next = scheme.sweep(&v)?;
        let u = config.stopping_norm.update(&v.values, &next.values);
        history.push(u);
        v = next;
        if u < config.tolerance {
            converged = true;
            break;
        }
    }
    let n = history.len();
    let report = finish(&scheme, &v, config, n, 0, history, converged, start)?;
    Ok((v, report))
}

fn linear_tolerance(system: &AssembledSystem, config: &SolverConfig) -> f64 {
    if let Some(t) = config.linear_solver_tolerance {
        return t;
    }
    let cmax = system.c.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let scale = (cmax / (1.0 - system.discount_factor)).max(1.0);
    (config.tolerance / 100.0).max(1e-14 * scale)
}

/// Solves `B w = c` to the configured residual tolerance.
pub fn policy_evaluation(system: &AssembledSystem, config: &SolverConfig) -> Result<ValueField> {
    let tol = linear_tolerance(system, config);
    solve(&system.b, &system.c, tol).map(ValueField::new)
}

fn decisions_policy(grid: &Grid, params: &SchemeParams, decisions: &[NodeDecision]) -> Policy {
    Policy::from_decisions(grid, decisions, params.controls()[0])
}

/// Exact policy iteration on a one-dimensional grid.
pub fn policy_iteration(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    config: &SolverConfig,
) -> Result<(ValueField, ConvergenceReport)> {
    policy_iteration_observed(p, grid, params, config, &mut |_| {})
}

/// [`policy_iteration`] calling `observer` with every evaluated field.
pub fn policy_iteration_observed(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    config: &SolverConfig,
    observer: &mut dyn FnMut(&ValueField),
) -> Result<(ValueField, ConvergenceReport)> {
    config.validate()?;
    if grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    let start = Instant::now();
    let scheme = Scheme::new(p, grid, params)?;
    let mut v = initial_field(p, grid, params, config)?;
    let (_, decisions) = scheme.apply(&v)?;
    let mut policy = decisions_policy(grid, params, &decisions);
    let mut history = Vec::new();
    let mut converged = false;
    while history.len() < config.max_iterations {
        let system = assemble_b(p, grid, params, &policy)?;
        let w = policy_evaluation(&system, config)?;
        let u = config.stopping_norm.update(&v.values, &w.values);
        history.push(u);
        v = w;
        observer(&v);
        if u < config.tolerance {
            converged = true;
            break;
        }
        let (_, decisions) = scheme.apply(&v)?;
        let next = decisions_policy(grid, params, &decisions);
        if next == policy {
            // evaluating the same policy again reproduces v
            if history.len() < config.max_iterations {
                history.push(0.0);
                converged = true;
            }
            break;
        }
        policy = next;
    }
    let n = history.len();
    let report = finish(&scheme, &v, config, n, n, history, converged, start)?;
    Ok((v, report))
}

/// Modified policy iteration: `warmup_vi` Bellman sweeps, then one greedy
/// improvement sweep every `n_it` sweeps with frozen-policy sweeps between.
pub fn modified_policy_iteration(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    config: &SolverConfig,
) -> Result<(ValueField, ConvergenceReport)> {
    modified_policy_iteration_observed(p, grid, params, config, &mut |_| {})
}

/// [`modified_policy_iteration`] calling `observer` with the field produced
/// by each improvement sweep after the warmup.
pub fn modified_policy_iteration_observed(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    config: &SolverConfig,
    observer: &mut dyn FnMut(&ValueField),
) -> Result<(ValueField, ConvergenceReport)> {
    config.validate()?;
    let start = Instant::now();
    let scheme = Scheme::new(p, grid, params)?;
    let mut v = initial_field(p, grid, params, config)?;
    let mut history = Vec::new();
    let mut improvements = 0;
    let mut rows: Vec<FrozenRow> = Vec::new();
    let mut converged = false;
    while history.len() < config.max_iterations {
        let j = history.len();
        let improve = j < config.warmup_vi || (j - config.warmup_vi).is_multiple_of(config.n_it);
        let next = if improve {
            if j >= config.warmup_vi && config.n_it > 1 {
                let (next, decisions) = scheme.apply(&v)?;
                rows = decisions
                    .par_iter()
                    .enumerate()
                    .map(|(off, d)| scheme.frozen_row(off, &d.branch))
                    .collect();
                next
            } else {
                scheme.sweep(&v)?
            }
        } else {
            ValueField::new(rows.par_iter().map(|r| r.eval(&v.values)).collect())
        };
        if improve && j >= config.warmup_vi {
            improvements += 1;
            observer(&next);
        }
        let u = config.stopping_norm.update(&v.values, &next.values);
        history.push(u);
        v = next;
        if u < config.tolerance {
            converged = true;
            break;
        }
    }
    let n = history.len();
    let report = finish(&scheme, &v, config, n, improvements, history, converged, start)?;
    Ok((v, report))
}

/// Dispatches on `config.method`.
pub fn run_solver(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    config: &SolverConfig,
) -> Result<(ValueField, ConvergenceReport)> {
    match config.method {
        Method::Vi => value_iteration(p, grid, params, config),
        Method::Pi => policy_iteration(p, grid, params, config),
        Method::Mpi => modified_policy_iteration(p, grid, params, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::greedy_policy;
    use crate::model::{ControlSet, Destination};

    fn constant_problem() -> HybridProblem {
        HybridProblem::new(
            1,
            1,
            |_, _, _, out| out[0] = 0.0,
            |_, _, _| 1.0,
            1.0,
            ControlSet::singleton(0.0),
        )
    }

    fn exact() -> f64 {
        0.1 / (1.0 - (-0.1f64).exp())
    }

    #[test]
    fn vi_on_constant_problem() {
        let p = constant_problem();
        let g = Grid::uniform(&[(0.0, 1.0)], &[5], 1).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let eps = 1e-8;
        let (v, r) = value_iteration(&p, &g, &sp, &SolverConfig::new(Method::Vi, eps)).unwrap();
        assert!(r.converged);
        let bound = eps / (1.0 - (-0.1f64).exp());
        assert!(v.values.iter().all(|x| (x - exact()).abs() <= bound));
        assert_eq!(r.update_history.len(), r.iterations);
    }

    #[test]
    fn huge_tolerance_stops_after_one_sweep() {
        let p = constant_problem();
        let g = Grid::uniform(&[(0.0, 1.0)], &[5], 1).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let (_, r) = value_iteration(&p, &g, &sp, &SolverConfig::new(Method::Vi, 1e30)).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let p = constant_problem();
        let g = Grid::uniform(&[(0.0, 1.0)], &[5], 1).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let cfg = SolverConfig::new(Method::Vi, 1e-12)
            .with_max_iterations(3)
            .with_initial_field(ValueField::constant(&g, 0.0));
        let (_, r) = value_iteration(&p, &g, &sp, &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn pi_from_fixed_point_takes_one_step() {
        let p = constant_problem();
        let g = Grid::uniform(&[(0.0, 1.0)], &[5], 1).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let cfg = SolverConfig::new(Method::Pi, 1e-10).with_initial_field(ValueField::constant(&g, exact()));
        let (v, r) = policy_iteration(&p, &g, &sp, &cfg).unwrap();
        assert_eq!(r.policy_improvements, 1);
        assert!(r.update_history[0] < 1e-12);
        assert!(v.values.iter().all(|x| (x - exact()).abs() < 1e-12));
    }

    #[test]
    fn mpi_with_single_sweep_cycles_is_vi() {
        let p = HybridProblem::new(
            1,
            2,
            |x, q, a, out| out[0] = if q == 0 { x[0] + a } else { -x[0] + 0.5 * a },
            |x, q, a| x[0] * x[0] + (q as f64 + 0.5) * a * a,
            1.0,
            ControlSet::interval(-1.0, 1.0),
        )
        .with_controlled_jumps(
            |_, _| true,
            vec![
                vec![Destination::SameState { mode: 1 }],
                vec![Destination::SameState { mode: 0 }],
            ],
            |_, q, _, _| if q == 0 { 0.1 } else { 0.0 },
        );
        let g = Grid::uniform(&[(-1.0, 1.0)], &[41], 2).unwrap();
        let sp = SchemeParams::new(&p, 0.05, 11).unwrap();
        let (vv, rv) = value_iteration(&p, &g, &sp, &SolverConfig::new(Method::Vi, 1e-6)).unwrap();
        let cfg = SolverConfig::new(Method::Mpi, 1e-6).with_nit(1);
        let (vm, rm) = modified_policy_iteration(&p, &g, &sp, &cfg).unwrap();
        assert_eq!(rv.iterations, rm.iterations);
        assert_eq!(vv, vm);
    }

    #[test]
    fn default_field_is_supersolution() {
        let p = HybridProblem::new(
            1,
            2,
            |x, _, a, out| out[0] = x[0] + a,
            |x, _, _| x[0] * x[0],
            1.0,
            ControlSet::interval(-1.0, 1.0),
        )
        .with_autonomous_jumps(
            vec!["up".into()],
            |x, q| q == 0 && x[0].abs() >= 1.0,
            |x, _, _, out| {
                out[0] = x[0];
                1
            },
            |_, _, _| 0.3,
        )
        .with_controlled_jumps(
            |x, q| !(q == 0 && x[0].abs() >= 1.0),
            vec![
                vec![Destination::SameState { mode: 1 }],
                vec![Destination::SameState { mode: 0 }],
            ],
            |_, _, _, _| 0.0,
        );
        let g = Grid::uniform(&[(-1.0, 1.0)], &[21], 2).unwrap();
        let sp = SchemeParams::new(&p, 0.05, 5).unwrap();
        let v0 = default_initial_field(&p, &g, &sp).unwrap();
        assert!(check_subsolution(&p, &g, &sp, &v0).unwrap());
    }

    #[test]
    fn subsolution_checks() {
        let p = constant_problem();
        let g = Grid::uniform(&[(0.0, 1.0)], &[5], 1).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        assert!(check_subsolution(&p, &g, &sp, &ValueField::constant(&g, 100.0)).unwrap());
        assert!(check_subsolution(&p, &g, &sp, &ValueField::constant(&g, exact())).unwrap());
        assert!(!check_subsolution(&p, &g, &sp, &ValueField::constant(&g, -1e6)).unwrap());
    }

    #[test]
    fn evaluation_of_greedy_policy_at_fixed_point() {
        let p = constant_problem();
        let g = Grid::uniform(&[(0.0, 1.0)], &[5], 1).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let v = ValueField::constant(&g, exact());
        let pol = greedy_policy(&p, &g, &sp, &v).unwrap();
        let sys = assemble_b(&p, &g, &sp, &pol).unwrap();
        let cfg = SolverConfig::new(Method::Pi, 1e-10);
        let w = policy_evaluation(&sys, &cfg).unwrap();
        assert!(w.sup_distance(&v) <= 10.0 * 1e-12);
    }

    #[test]
    fn relative_l1_norm() {
        let n = StoppingNorm::RelativeL1Update;
        assert_eq!(n.update(&[1.0, 1.0], &[2.0, 2.0]), 0.5);
        assert_eq!(n.update(&[0.0], &[0.0]), 0.0);
        assert_eq!("rel-l1".parse::<StoppingNorm>().unwrap(), n);
        assert!("l2".parse::<StoppingNorm>().is_err());
    }

    #[test]
    fn report_exports() {
        let p = constant_problem();
        let g = Grid::uniform(&[(0.0, 1.0)], &[3], 1).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let (_, r) = value_iteration(&p, &g, &sp, &SolverConfig::new(Method::Vi, 1e-3)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), r.iterations + 1);
        let j = r.to_json();
        assert_eq!(j["method"], "vi");
        assert_eq!(j["stopping_norm"], "sup");
        assert_eq!(j["iterations"], r.iterations);
    }
}
