//! The four benchmark problems with their default discretizations.
//!
//! Mode numbers in the formulas below are 1-based, as in the literature;
//! the Rust closures receive 0-based modes.

use crate::bellman::SchemeParams;
use crate::grid::Grid;
use crate::model::{ControlSet, Destination, HybridProblem};
use crate::solvers::StoppingNorm;
use crate::{Error, Result};

/// Stable benchmark identifiers.
pub const NAMES: [&str; 4] = ["weak_strong", "three_gear", "chemotherapy", "dc_ac_inverter"];

#[derive(Debug, Clone, PartialEq)]
pub struct GridDefaults {
    pub bounds: Vec<(f64, f64)>,
    pub nodes: Vec<usize>,
    pub dt: f64,
    pub control_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDefaults {
    pub x0: Vec<f64>,
    /// 0-based.
    pub q0: usize,
    pub t_f: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub name: &'static str,
    pub problem: HybridProblem,
    pub grid: GridDefaults,
    pub trajectory: TrajectoryDefaults,
    pub stopping_norm: StoppingNorm,
    pub n_it: usize,
    pub warmup_vi: usize,
    /// `‖f‖∞` when the spacing follows `Δx = Δt‖f‖∞`; `None` for fixed
    /// node counts.
    pub speed_bound: Option<f64>,
}

impl BenchmarkSpec {
    /// Node counts for time step `dt` under the benchmark's spacing rule.
    pub fn nodes_for_dt(&self, dt: f64) -> Vec<usize> {
        match self.speed_bound {
            Some(fmax) => self
                .grid
                .bounds
                .iter()
                .map(|&(lo, hi)| Grid::nodes_for_spacing(lo, hi, dt * fmax))
                .collect(),
            None => self.grid.nodes.clone(),
        }
    }

    pub fn default_grid(&self) -> Result<Grid> {
        Grid::uniform(&self.grid.bounds, &self.grid.nodes, self.problem.modes())
    }

    pub fn default_params(&self) -> Result<SchemeParams> {
        SchemeParams::new(&self.problem, self.grid.dt, self.grid.control_samples)
    }
}

/// Looks a benchmark up by identifier.
pub fn by_name(name: &str) -> Result<BenchmarkSpec> {
    match name {
        "weak_strong" => Ok(weak_strong()),
        "three_gear" => Ok(three_gear()),
        "chemotherapy" => Ok(chemotherapy()),
        "dc_ac_inverter" => Ok(dc_ac_inverter()),
        other => Err(Error::InvalidParameter(format!(
            "unknown benchmark `{other}` (expected one of {})",
            NAMES.join(", ")
        ))),
    }
}

/// Max of `|f|` over a dense sample of the box, all modes and the control
/// samples accepted by `keep`.
fn sampled_speed_bound(
    p: &HybridProblem,
    low: f64,
    high: f64,
    controls: &[f64],
    keep: impl Fn(f64, usize, f64) -> bool,
) -> f64 {
    let samples = 4001;
    let mut best = 0.0f64;
    let mut out = [0.0; 2];
    for k in 0..samples {
        let x = low + (high - low) * k as f64 / (samples - 1) as f64;
        for q in 0..p.modes() {
            for &a in controls {
                if keep(x, q, a) {
                    p.dynamics(&[x], q, a, &mut out);
                    best = best.max(out[0].abs());
                }
            }
        }
    }
    best
}

fn all_other_modes(m: usize) -> Vec<Vec<Destination>> {
    (0..m)
        .map(|q| {
            (0..m)
                .filter(|&l| l != q)
                .map(|l| Destination::SameState { mode: l })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakStrongParams {
    pub d1: f64,
    pub d2: f64,
    pub c12: f64,
    pub c21: f64,
    pub c1: f64,
    pub c2: f64,
    pub lambda: f64,
    pub t_f: f64,
    pub dt: f64,
}

impl Default for WeakStrongParams {
    fn default() -> Self {
        WeakStrongParams {
            d1: 0.5,
            d2: 2.0,
            c12: 0.2,
            c21: 0.0,
            c1: 0.25,
            c2: 4.0,
            lambda: 1.0,
            t_f: 20.0,
            dt: 0.0067,
        }
    }
}

/// `ẋ = x + d_q α`, `ℓ = x² + c_q α²` on `[−1, 1]`, `α ∈ [−1, 1]`. Mode 1 is
/// cheap but weak and must hand over to mode 2 at `|x| = 1`; elsewhere both
/// modes may switch at cost `c_{1,2}` or `c_{2,1}`.
pub fn weak_strong() -> BenchmarkSpec {
    weak_strong_with(WeakStrongParams::default())
}

pub fn weak_strong_with(w: WeakStrongParams) -> BenchmarkSpec {
    let gain = [w.d1, w.d2];
    let weight = [w.c1, w.c2];
    let (c12, c21) = (w.c12, w.c21);
    let forced = |x: &[f64], q: usize| q == 0 && x[0].abs() >= 1.0;
    let problem = HybridProblem::new(
        1,
        2,
        move |x, q, a, out| out[0] = x[0] + gain[q] * a,
        move |x, q, a| x[0] * x[0] + weight[q] * a * a,
        w.lambda,
        ControlSet::interval(-1.0, 1.0),
    )
    .with_autonomous_jumps(
        vec!["to_strong".into()],
        forced,
        |x, _, _, out| {
            out[0] = x[0];
            1
        },
        move |_, _, _| c12,
    )
    .with_controlled_jumps(
        move |x, q| !forced(x, q),
        all_other_modes(2),
        move |_, q, _, _| if q == 0 { c12 } else { c21 },
    );
    let controls = ControlSet::interval(-1.0, 1.0).samples(101);
    let fmax = sampled_speed_bound(&problem, -1.0, 1.0, &controls, |_, _, _| true);
    let nodes = Grid::nodes_for_spacing(-1.0, 1.0, w.dt * fmax);
    BenchmarkSpec {
        name: "weak_strong",
        problem,
        grid: GridDefaults {
            bounds: vec![(-1.0, 1.0)],
            nodes: vec![nodes],
            dt: w.dt,
            control_samples: 101,
        },
        trajectory: TrajectoryDefaults {
            x0: vec![0.5],
            q0: 0,
            t_f: w.t_f,
        },
        stopping_norm: StoppingNorm::SupUpdate,
        n_it: 10,
        warmup_vi: 10,
        speed_bound: Some(fmax),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeGearParams {
    pub mass: f64,
    pub rho: [f64; 3],
    pub radius: f64,
    pub drag: f64,
    pub tau: f64,
    pub nu: f64,
    pub c_alpha: f64,
    pub c_x: f64,
    pub switch_cost: f64,
    pub lambda: f64,
    pub t_f: f64,
    pub dt: f64,
    pub v_max: f64,
}

impl Default for ThreeGearParams {
    fn default() -> Self {
        ThreeGearParams {
            mass: 140.0,
            rho: [0.06, 0.09, 0.12],
            radius: 0.2,
            drag: 0.3,
            tau: 10.0,
            nu: 6000.0,
            c_alpha: 1.0,
            c_x: 0.5,
            switch_cost: 0.1,
            lambda: 1.0,
            t_f: 10.0,
            dt: 0.027,
            v_max: 16.0,
        }
    }
}

impl ThreeGearParams {
    /// Engine torque `T(ω) = τ(ω/ν − (ω/ν)³)`, `ω` in r.p.m.
    pub fn torque(&self, omega: f64) -> f64 {
        let u = omega / self.nu;
        self.tau * (u - u * u * u)
    }

    /// Speed-to-r.p.m. factor `β_q = 60/(r π ρ_q)`, `q` 0-based.
    pub fn beta(&self, q: usize) -> f64 {
        60.0 / (self.radius * std::f64::consts::PI * self.rho[q])
    }

    pub fn acceleration(&self, x: f64, q: usize, alpha: f64) -> f64 {
        (self.torque(self.beta(q) * x) * alpha / (self.radius * self.rho[q]) - self.drag * x * x) / self.mass
    }
}

/// Scooter speed under three gears with throttle `α ∈ [0, 1]` and running
/// cost `−c_x x + c_α α`. Gears may change anywhere at cost 0.1.
pub fn three_gear() -> BenchmarkSpec {
    three_gear_with(ThreeGearParams::default())
}

pub fn three_gear_with(g: ThreeGearParams) -> BenchmarkSpec {
    let (cx, ca, cost) = (g.c_x, g.c_alpha, g.switch_cost);
    let problem = HybridProblem::new(
        1,
        3,
        move |x, q, a, out| out[0] = g.acceleration(x[0], q, a),
        move |x, _, a| -cx * x[0] + ca * a,
        g.lambda,
        ControlSet::interval(0.0, 1.0),
    )
    .with_controlled_jumps(|_, _| true, all_other_modes(3), move |_, _, _, _| cost);
    // Throttle beyond the power band brakes the engine and costs more than
    // coasting, so it never enters the spacing rule.
    let controls = ControlSet::interval(0.0, 1.0).samples(101);
    let fmax = sampled_speed_bound(&problem, 0.0, g.v_max, &controls, |x, q, a| {
        a == 0.0 || g.torque(g.beta(q) * x) >= 0.0
    });
    let nodes = Grid::nodes_for_spacing(0.0, g.v_max, g.dt * fmax);
    BenchmarkSpec {
        name: "three_gear",
        problem,
        grid: GridDefaults {
            bounds: vec![(0.0, g.v_max)],
            nodes: vec![nodes],
            dt: g.dt,
            control_samples: 101,
        },
        trajectory: TrajectoryDefaults {
            x0: vec![0.28],
            q0: 0,
            t_f: g.t_f,
        },
        stopping_norm: StoppingNorm::SupUpdate,
        n_it: 10,
        warmup_vi: 10,
        speed_bound: Some(fmax),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChemoParams {
    pub a1: f64,
    pub a2: f64,
    pub r1: f64,
    pub r2: f64,
    pub lambda: f64,
    pub x0: [f64; 2],
    pub t_f: f64,
    pub dt: f64,
    pub nodes: usize,
}

impl Default for ChemoParams {
    fn default() -> Self {
        ChemoParams {
            a1: 0.197,
            a2: 0.356,
            r1: 6.94,
            r2: 3.94,
            lambda: 0.1,
            x0: [2.0, 1.0],
            t_f: 100.0,
            dt: 0.1,
            nodes: 100,
        }
    }
}

impl ChemoParams {
    /// Two-compartment growth without (mode 1) and with (mode 2) the drug.
    pub fn vector_field(&self, x: &[f64], q: usize) -> [f64; 2] {
        let birth = if q == 0 { 2.0 * self.a2 * x[1] } else { 0.0 };
        [-self.a1 * x[0] + birth, self.a1 * x[0] - self.a2 * x[1]]
    }

    /// `r₁ẋ₁ + r₂ẋ₂ + (Q − 1)` with `ẋ` from the active mode.
    pub fn running_cost(&self, x: &[f64], q: usize) -> f64 {
        let f = self.vector_field(x, q);
        self.r1 * f[0] + self.r2 * f[1] + q as f64
    }
}

/// Bang-bang chemotherapy recast as two modes with free switching.
pub fn chemotherapy() -> BenchmarkSpec {
    chemotherapy_with(ChemoParams::default())
}

pub fn chemotherapy_with(c: ChemoParams) -> BenchmarkSpec {
    let problem = HybridProblem::new(
        2,
        2,
        move |x, q, _, out| {
            let f = c.vector_field(x, q);
            out[0] = f[0];
            out[1] = f[1];
        },
        move |x, q, _| c.running_cost(x, q),
        c.lambda,
        ControlSet::singleton(0.0),
    )
    .with_controlled_jumps(|_, _| true, all_other_modes(2), |_, _, _, _| 0.0);
    BenchmarkSpec {
        name: "chemotherapy",
        problem,
        grid: GridDefaults {
            bounds: vec![(0.0, 2.0), (0.0, 2.0)],
            nodes: vec![c.nodes, c.nodes],
            dt: c.dt,
            control_samples: 1,
        },
        trajectory: TrajectoryDefaults {
            x0: c.x0.to_vec(),
            q0: 0,
            t_f: c.t_f,
        },
        stopping_norm: StoppingNorm::SupUpdate,
        n_it: 10,
        warmup_vi: 10,
        speed_bound: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterParams {
    pub v_dc: f64,
    pub resistance: f64,
    pub inductance: f64,
    pub capacitance: f64,
    pub omega: f64,
    pub c: f64,
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub x0: [f64; 2],
    pub t_f: f64,
    pub dt: f64,
    pub half_width: f64,
    pub nodes: usize,
    pub penalty: f64,
}

impl Default for InverterParams {
    fn default() -> Self {
        InverterParams {
            v_dc: 200.0,
            resistance: 0.7,
            inductance: 0.1,
            capacitance: 0.1,
            omega: 2.0 * std::f64::consts::PI,
            c: 22500.0,
            a: 0.84,
            b: 1.34,
            lambda: 1.0,
            x0: [0.0, 200.0],
            t_f: 5.0,
            dt: 0.01,
            half_width: 250.0,
            nodes: 100,
            penalty: 5e8,
        }
    }
}

impl InverterParams {
    /// RLC load driven by `V_DC·(Q − 2)`, `Q ∈ {1, 2, 3}`; `q` is 0-based.
    pub fn vector_field(&self, x: &[f64], q: usize) -> [f64; 2] {
        let drive = self.v_dc / self.inductance * (q as f64 - 1.0);
        [
            drive - self.resistance / self.inductance * x[0] - x[1] / self.inductance,
            x[0] / self.capacitance,
        ]
    }

    /// `x₁²/a² + x₂²/b² − c`.
    pub fn ellipse_residual(&self, x: &[f64]) -> f64 {
        x[0] * x[0] / (self.a * self.a) + x[1] * x[1] / (self.b * self.b) - self.c
    }
}

/// Single-phase DC/AC inverter: three switch configurations, running cost
/// `(x₁²/a² + x₂²/b² − c)²`, boundary penalty on clamped feet.
pub fn dc_ac_inverter() -> BenchmarkSpec {
    dc_ac_inverter_with(InverterParams::default())
}

pub fn dc_ac_inverter_with(v: InverterParams) -> BenchmarkSpec {
    let problem = HybridProblem::new(
        2,
        3,
        move |x, q, _, out| {
            let f = v.vector_field(x, q);
            out[0] = f[0];
            out[1] = f[1];
        },
        move |x, _, _| {
            let r = v.ellipse_residual(x);
            r * r
        },
        v.lambda,
        ControlSet::singleton(0.0),
    )
    .with_controlled_jumps(|_, _| true, all_other_modes(3), |_, _, _, _| 0.0)
    .with_boundary_penalty(v.penalty);
    let w = v.half_width;
    BenchmarkSpec {
        name: "dc_ac_inverter",
        problem,
        grid: GridDefaults {
            bounds: vec![(-w, w), (-w, w)],
            nodes: vec![v.nodes, v.nodes],
            dt: v.dt,
            control_samples: 1,
        },
        trajectory: TrajectoryDefaults {
            x0: v.x0.to_vec(),
            q0: 1,
            t_f: v.t_f,
        },
        stopping_norm: StoppingNorm::RelativeL1Update,
        n_it: 10,
        warmup_vi: 10,
        speed_bound: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_problem, Severity};
    use approx::assert_relative_eq;

    #[test]
    fn weak_strong_parameters() {
        let w = WeakStrongParams::default();
        assert_eq!(
            [w.d1, w.d2, w.c12, w.c21, w.c1, w.c2, w.lambda, w.t_f],
            [0.5, 2.0, 0.2, 0.0, 0.25, 4.0, 1.0, 20.0]
        );
        let b = weak_strong();
        assert_eq!(b.grid.dt, 0.0067);
        let mut out = [0.0];
        b.problem.dynamics(&[0.0], 0, 1.0, &mut out);
        assert_eq!(out[0], 0.5);
        assert_relative_eq!(b.speed_bound.unwrap(), 3.0);
        // Δx = Δt·‖f‖∞ rounded up to the next uniform spacing
        assert_eq!(b.grid.nodes, vec![100]);
    }

    #[test]
    fn weak_strong_switch_costs() {
        let p = weak_strong().problem;
        assert_eq!(p.switch_cost(&[0.3], 0, 1), Some(0.2));
        assert_eq!(p.switch_cost(&[0.3], 1, 0), Some(0.0));
        assert!(p.in_autonomous_set(&[1.0], 0));
        assert!(p.in_autonomous_set(&[-1.0], 0));
        assert!(!p.in_autonomous_set(&[1.0], 1));
        assert_eq!(p.switch_cost(&[1.0], 0, 1), Some(0.2));
    }

    #[test]
    fn torque_curve() {
        let g = ThreeGearParams::default();
        assert_eq!(g.torque(g.nu), 0.0);
        let star = g.nu / 3f64.sqrt();
        let peak = 2.0 * g.tau / (3.0 * 3f64.sqrt());
        assert_relative_eq!(g.torque(star), peak, max_relative = 1e-14);
        assert_relative_eq!(peak, 3.849, epsilon = 5e-4);
        // numerical maximizer over a fine sample agrees with ν/√3
        let (best, _) = (0..=60_000)
            .map(|k| k as f64 * 0.1)
            .map(|w| (w, g.torque(w)))
            .fold((0.0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
        assert!((best - star).abs() < 0.1);
    }

    #[test]
    fn three_gear_costs_and_grid() {
        let b = three_gear();
        let p = &b.problem;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(p.switch_cost(&[5.0], i, j), Some(0.1));
                }
            }
        }
        let fmax = b.speed_bound.unwrap();
        assert!(fmax > 2.0 && fmax < 2.6, "{fmax}");
        let n = b.grid.nodes[0];
        assert!(16.0 / (n - 1) as f64 >= b.grid.dt * fmax);
        assert_eq!(p.running_cost(&[2.0], 0, 1.0), 0.0);
    }

    #[test]
    fn chemo_costs() {
        let b = chemotherapy();
        let p = &b.problem;
        assert_eq!(p.running_cost(&[0.0, 0.0], 0, 0.0), 0.0);
        assert_eq!(p.running_cost(&[0.0, 0.0], 1, 0.0), 1.0);
        assert_eq!(b.grid.nodes, vec![100, 100]);
        assert_eq!(b.grid.bounds, vec![(0.0, 2.0), (0.0, 2.0)]);
        assert_eq!(b.grid.dt, 0.1);
        assert_eq!(p.switch_cost(&[1.0, 1.0], 0, 1), Some(0.0));
    }

    #[test]
    fn inverter_model() {
        let v = InverterParams::default();
        let x = [3.0, -7.0];
        let f = v.vector_field(&x, 1);
        assert_relative_eq!(f[0], -7.0 * 3.0 + 10.0 * 7.0);
        assert_relative_eq!(f[1], 30.0);
        let b = dc_ac_inverter();
        let on_ellipse = [v.a * v.c.sqrt(), 0.0];
        assert!(b.problem.running_cost(&on_ellipse, 0, 0.0).abs() < 1e-18);
        assert_eq!(b.problem.boundary_penalty(), Some(5e8));
        assert_eq!(b.stopping_norm, StoppingNorm::RelativeL1Update);
    }

    #[test]
    fn benchmarks_validate() {
        for name in NAMES {
            let b = by_name(name).unwrap();
            let g = b.default_grid().unwrap();
            let diags = validate_problem(&b.problem, &g);
            assert!(
                diags.iter().all(|d| d.severity == Severity::Warning),
                "{name}: {diags:?}"
            );
            if name == "weak_strong" || name == "three_gear" {
                assert!(diags.is_empty(), "{name}: {diags:?}");
            }
        }
        assert!(by_name("nope").is_err());
    }

    #[test]
    fn chemo_zero_cost_is_a_warning() {
        let b = chemotherapy();
        let g = b.default_grid().unwrap();
        let diags = validate_problem(&b.problem, &g);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
    }
}
