//! Python bindings: benchmarks, solvers and trajectory synthesis.
//!
//! Modes are 1-based on the Python side, as in the CSV outputs.

use hybrid_sl::bellman::write_decisions_csv;
use hybrid_sl::benchmarks::{self, BenchmarkSpec};
use hybrid_sl::{
    bellman_apply, interpolate, qvi_residual, run_solver, synthesize, validate_problem, Branch, ConvergenceReport,
    Grid, Method, SchemeParams, Severity, SolverConfig, StoppingNorm, ValueField,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: hybrid_sl::Error) -> PyErr {
    match e {
        hybrid_sl::Error::ZenoGuard { .. }
        | hybrid_sl::Error::Singular { .. }
        | hybrid_sl::Error::ResidualNotReached { .. }
        | hybrid_sl::Error::NonFiniteState(_)
        | hybrid_sl::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn mode_index(q: usize, modes: usize) -> PyResult<usize> {
    if (1..=modes).contains(&q) {
        Ok(q - 1)
    } else {
        Err(PyValueError::new_err(format!("mode {q} outside 1..={modes}")))
    }
}

/// A benchmark problem with its discretization.
#[pyclass(module = "hybrid_sl", frozen)]
struct Benchmark {
    spec: BenchmarkSpec,
    grid: Grid,
    params: SchemeParams,
}

#[pymethods]
impl Benchmark {
    /// `nodes` is one count per axis; when omitted with a custom `dt` the
    /// benchmark's spacing rule picks it.
    #[new]
    #[pyo3(signature = (name, dt=None, nodes=None, nu=None))]
    fn new(name: &str, dt: Option<f64>, nodes: Option<Vec<usize>>, nu: Option<usize>) -> PyResult<Self> {
        let spec = benchmarks::by_name(name).map_err(value_err)?;
        let dt = dt.unwrap_or(spec.grid.dt);
        let nodes = nodes.unwrap_or_else(|| spec.nodes_for_dt(dt));
        let grid = Grid::uniform(&spec.grid.bounds, &nodes, spec.problem.modes()).map_err(value_err)?;
        let params =
            SchemeParams::new(&spec.problem, dt, nu.unwrap_or(spec.grid.control_samples)).map_err(value_err)?;
        Ok(Benchmark { spec, grid, params })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.spec.name
    }

    #[getter]
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    #[getter]
    fn modes(&self) -> usize {
        self.grid.modes()
    }

    #[getter]
    fn nodes(&self) -> Vec<usize> {
        (0..self.grid.dim()).map(|a| self.grid.nodes_per_axis(a)).collect()
    }

    #[getter]
    fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.grid.dim()).map(|a| self.grid.bounds(a)).collect()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.params.dt()
    }

    /// Number of unknowns, nodes times modes.
    fn __len__(&self) -> usize {
        self.grid.len()
    }

    /// `(severity, message)` pairs from the problem checks.
    fn validate(&self) -> Vec<(String, String)> {
        validate_problem(&self.spec.problem, &self.grid)
            .into_iter()
            .map(|d| {
                let s = match d.severity {
                    Severity::Error => "error",
                    Severity::Warning => "warning",
                };
                (s.to_string(), d.message)
            })
            .collect()
    }

    /// One Bellman sweep of a flat field (mode-major order).
    fn bellman(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&values)?;
        let (tv, _) =
            bellman_apply(&self.spec.problem, &self.grid, &self.params, &ValueField::new(values)).map_err(value_err)?;
        Ok(tv.values)
    }

    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (method="vi", eps=1e-6, norm=None, nit=None, warmup=None, max_iters=None))]
    fn solve(
        &self,
        py: Python<'_>,
        method: &str,
        eps: f64,
        norm: Option<&str>,
        nit: Option<usize>,
        warmup: Option<usize>,
        max_iters: Option<usize>,
    ) -> PyResult<Solution> {
        let method: Method = method.parse().map_err(value_err)?;
        let norm: StoppingNorm = match norm {
            Some(n) => n.parse().map_err(value_err)?,
            None => self.spec.stopping_norm,
        };
        let mut cfg = SolverConfig::new(method, eps)
            .with_norm(norm)
            .with_nit(nit.unwrap_or(self.spec.n_it))
            .with_warmup(warmup.unwrap_or(self.spec.warmup_vi));
        if let Some(n) = max_iters {
            cfg = cfg.with_max_iterations(n);
        }
        let (field, report) = py
            .detach(|| run_solver(&self.spec.problem, &self.grid, &self.params, &cfg))
            .map_err(value_err)?;
        Ok(Solution {
            spec: self.spec.clone(),
            grid: self.grid.clone(),
            params: self.params.clone(),
            field,
            report,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Benchmark({:?}, nodes={:?}, dt={})",
            self.spec.name,
            self.nodes(),
            self.params.dt()
        )
    }
}

impl Benchmark {
    fn check_len(&self, values: &[f64]) -> PyResult<()> {
        if values.len() != self.grid.len() {
            return Err(PyValueError::new_err(format!(
                "expected {} values, got {}",
                self.grid.len(),
                values.len()
            )));
        }
        Ok(())
    }
}

/// Converged (or capped) value field with its convergence report.
#[pyclass(module = "hybrid_sl", frozen)]
struct Solution {
    spec: BenchmarkSpec,
    grid: Grid,
    params: SchemeParams,
    field: ValueField,
    report: ConvergenceReport,
}

#[pymethods]
impl Solution {
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.field.values.clone()
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.report.method.name()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.report.iterations
    }

    #[getter]
    fn policy_improvements(&self) -> usize {
        self.report.policy_improvements
    }

    #[getter]
    fn final_residual(&self) -> f64 {
        self.report.final_residual
    }

    #[getter]
    fn converged(&self) -> bool {
        self.report.converged
    }

    #[getter]
    fn wall_time(&self) -> f64 {
        self.report.wall_time
    }

    #[getter]
    fn update_history(&self) -> Vec<f64> {
        self.report.update_history.clone()
    }

    /// Interpolated value at state `x` in mode `q`.
    fn value_at(&self, x: Vec<f64>, q: usize) -> PyResult<f64> {
        let q = mode_index(q, self.grid.modes())?;
        interpolate(&self.field, &self.grid, &x, q).map_err(value_err)
    }

    /// `‖T(v) − v‖∞`.
    fn residual(&self) -> PyResult<f64> {
        qvi_residual(&self.spec.problem, &self.grid, &self.params, &self.field).map_err(value_err)
    }

    /// Per-node `(kind, control, destination_mode)`; `control` is `None` on
    /// jump rows.
    fn policy(&self) -> PyResult<Vec<(String, Option<f64>, usize)>> {
        let (_, decisions) =
            bellman_apply(&self.spec.problem, &self.grid, &self.params, &self.field).map_err(value_err)?;
        Ok(decisions
            .iter()
            .enumerate()
            .map(|(off, d)| {
                let q = self.grid.split_offset(off).1;
                match d.branch {
                    Branch::Continuous { control } => (d.branch.kind_name().to_string(), Some(control), q + 1),
                    Branch::Autonomous { to_mode, .. } | Branch::Controlled { to_mode, .. } => {
                        (d.branch.kind_name().to_string(), None, to_mode + 1)
                    }
                }
            })
            .collect())
    }

    /// Policy table in the CLI's `policy.csv` layout.
    fn policy_csv(&self) -> PyResult<String> {
        let (_, decisions) =
            bellman_apply(&self.spec.problem, &self.grid, &self.params, &self.field).map_err(value_err)?;
        let mut buf = Vec::new();
        write_decisions_csv(&self.grid, &decisions, &mut buf).map_err(value_err)?;
        Ok(String::from_utf8(buf).expect("ascii output"))
    }

    /// Closed-loop trajectory; defaults come from the benchmark.
    #[pyo3(signature = (x0=None, q0=None, t_f=None))]
    fn trajectory(&self, x0: Option<Vec<f64>>, q0: Option<usize>, t_f: Option<f64>) -> PyResult<Trajectory> {
        let t = &self.spec.trajectory;
        let x0 = x0.unwrap_or_else(|| t.x0.clone());
        let q0 = match q0 {
            Some(q) => mode_index(q, self.grid.modes())?,
            None => t.q0,
        };
        let tr = synthesize(
            &self.spec.problem,
            &self.grid,
            &self.params,
            &self.field,
            &x0,
            q0,
            t_f.unwrap_or(t.t_f),
        )
        .map_err(value_err)?;
        Ok(Trajectory {
            t: tr.samples.iter().map(|s| s.t).collect(),
            x: tr.samples.iter().map(|s| s.x.clone()).collect(),
            q: tr.samples.iter().map(|s| s.mode + 1).collect(),
            alpha: tr.samples.iter().map(|s| s.control).collect(),
            switches: tr
                .switch_events
                .iter()
                .map(|e| (e.t, e.kind.name().to_string(), e.from_mode + 1, e.to_mode + 1))
                .collect(),
            accumulated_cost: tr.accumulated_cost,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution({}, {}, iterations={}, converged={})",
            self.spec.name,
            self.report.method.name(),
            self.report.iterations,
            self.report.converged
        )
    }
}

/// Sampled closed-loop trajectory.
#[pyclass(module = "hybrid_sl", frozen, get_all)]
struct Trajectory {
    t: Vec<f64>,
    x: Vec<Vec<f64>>,
    q: Vec<usize>,
    alpha: Vec<f64>,
    /// `(t, kind, from, to)`.
    switches: Vec<(f64, String, usize, usize)>,
    accumulated_cost: f64,
}

#[pymethods]
impl Trajectory {
    fn __len__(&self) -> usize {
        self.t.len()
    }
}

#[pyfunction]
fn benchmark_names() -> Vec<&'static str> {
    benchmarks::NAMES.to_vec()
}

#[pymodule(name = "hybrid_sl")]
fn hybrid_sl_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Benchmark>()?;
    m.add_class::<Solution>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(benchmark_names, m)?)?;
    Ok(())
}
