//! Hybrid optimal control problem description.
//!
//! A problem couples a continuous state `x ∈ R^d` with a discrete mode `q`.
//! Between jumps, `x` follows `ẋ = f(x, q, α)`. Entering the autonomous set
//! `A` forces a jump through the transition map `g`; inside the controlled set
//! `C` the controller may jump to one of the mode's destinations. The cost is
//! the discounted integral of the running cost plus discounted jump costs.
//!
//! Modes and discrete-control labels are 0-based in the Rust API. Exported
//! files use the 1-based numbering of the flat layout.

use std::fmt;
use std::sync::Arc;

use crate::grid::{Grid, MAX_DIM};
use crate::synthesis::{JumpKind, Trajectory};
use crate::{Error, Result};

/// `f(x, q, α, out)`: writes the vector field into `out[..d]`.
pub type DynamicsFn = dyn Fn(&[f64], usize, f64, &mut [f64]) + Send + Sync;
/// `ℓ(x, q, α)`.
pub type RunningCostFn = dyn Fn(&[f64], usize, f64) -> f64 + Send + Sync;
/// Membership test `(x, q) ∈ S`.
pub type SetFn = dyn Fn(&[f64], usize) -> bool + Send + Sync;
/// `g(x, q, w, out) -> q'`: writes the arrival point into `out[..d]`.
pub type TransitionFn = dyn Fn(&[f64], usize, usize, &mut [f64]) -> usize + Send + Sync;
/// `c_A(x, q, w)`.
pub type AutonomousCostFn = dyn Fn(&[f64], usize, usize) -> f64 + Send + Sync;
/// `c_C(x, q, x', q')`.
pub type ControlledCostFn = dyn Fn(&[f64], usize, &[f64], usize) -> f64 + Send + Sync;

/// Compact interval of admissible continuous controls. A singleton has
/// `low == high`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSet {
    pub low: f64,
    pub high: f64,
}

impl ControlSet {
    pub fn interval(low: f64, high: f64) -> Self {
        ControlSet { low, high }
    }

    pub fn singleton(value: f64) -> Self {
        ControlSet {
            low: value,
            high: value,
        }
    }

    pub fn is_singleton(&self) -> bool {
        self.low == self.high
    }

    /// Uniform samples in ascending order; a singleton yields one sample.
    pub fn samples(&self, count: usize) -> Vec<f64> {
        if self.is_singleton() || count <= 1 {
            return vec![self.low];
        }
        let step = (self.high - self.low) / (count - 1) as f64;
        (0..count)
            .map(|k| {
                if k == count - 1 {
                    self.high
                } else {
                    self.low + step * k as f64
                }
            })
            .collect()
    }

    pub fn contains(&self, alpha: f64) -> bool {
        alpha >= self.low && alpha <= self.high
    }
}

/// Admissible destination of a controlled jump.
#[derive(Debug, Clone, PartialEq)]
pub enum Destination {
    /// Keep the continuous state, change the mode.
    SameState { mode: usize },
    /// Jump to a fixed point of the given mode.
    Fixed { point: Vec<f64>, mode: usize },
}

impl Destination {
    pub fn mode(&self) -> usize {
        match self {
            Destination::SameState { mode } | Destination::Fixed { mode, .. } => *mode,
        }
    }

    /// Writes the arrival point for a jump leaving `x` into `out`.
    pub fn target(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Destination::SameState { .. } => out[..x.len()].copy_from_slice(x),
            Destination::Fixed { point, .. } => out[..point.len()].copy_from_slice(point),
        }
    }
}

/// Complete description of an infinite-horizon hybrid optimal control problem.
///
/// All closures must be pure; the problem is shared read-only across sweep
/// workers.
#[derive(Clone)]
pub struct HybridProblem {
    dim: usize,
    modes: usize,
    dynamics: Arc<DynamicsFn>,
    running_cost: Arc<RunningCostFn>,
    discount: f64,
    controls: ControlSet,
    autonomous_labels: Vec<String>,
    autonomous_set: Arc<SetFn>,
    controlled_set: Arc<SetFn>,
    destinations: Vec<Vec<Destination>>,
    transition: Arc<TransitionFn>,
    autonomous_cost: Arc<AutonomousCostFn>,
    controlled_cost: Arc<ControlledCostFn>,
    boundary_penalty: Option<f64>,
}

impl fmt::Debug for HybridProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridProblem")
            .field("dim", &self.dim)
            .field("modes", &self.modes)
            .field("discount", &self.discount)
            .field("controls", &self.controls)
            .field("autonomous_labels", &self.autonomous_labels)
            .field("destinations", &self.destinations)
            .field("boundary_penalty", &self.boundary_penalty)
            .finish_non_exhaustive()
    }
}

impl HybridProblem {
    /// Jump-free problem; jump sets are empty until configured.
    pub fn new<F, L>(
        dim: usize,
        modes: usize,
        dynamics: F,
        running_cost: L,
        discount: f64,
        controls: ControlSet,
    ) -> Self
    where
        F: Fn(&[f64], usize, f64, &mut [f64]) + Send + Sync + 'static,
        L: Fn(&[f64], usize, f64) -> f64 + Send + Sync + 'static,
    {
        HybridProblem {
            dim,
            modes,
            dynamics: Arc::new(dynamics),
            running_cost: Arc::new(running_cost),
            discount,
            controls,
            autonomous_labels: Vec::new(),
            autonomous_set: Arc::new(|_, _| false),
            controlled_set: Arc::new(|_, _| false),
            destinations: vec![Vec::new(); modes],
            transition: Arc::new(|x, _, _, out| {
                out[..x.len()].copy_from_slice(x);
                0
            }),
            autonomous_cost: Arc::new(|_, _, _| 0.0),
            controlled_cost: Arc::new(|_, _, _, _| 0.0),
            boundary_penalty: None,
        }
    }

    /// Installs the autonomous jump set `A`, its discrete controls, the
    /// transition map `g` and the cost `c_A`.
    pub fn with_autonomous_jumps<S, G, C>(mut self, labels: Vec<String>, set: S, transition: G, cost: C) -> Self
    where
        S: Fn(&[f64], usize) -> bool + Send + Sync + 'static,
        G: Fn(&[f64], usize, usize, &mut [f64]) -> usize + Send + Sync + 'static,
        C: Fn(&[f64], usize, usize) -> f64 + Send + Sync + 'static,
    {
        self.autonomous_labels = labels;
        self.autonomous_set = Arc::new(set);
        self.transition = Arc::new(transition);
        self.autonomous_cost = Arc::new(cost);
        self
    }

    /// Installs the controlled jump set `C`, the per-mode destination lists
    /// and the cost `c_C`.
    pub fn with_controlled_jumps<S, C>(mut self, set: S, destinations: Vec<Vec<Destination>>, cost: C) -> Self
    where
        S: Fn(&[f64], usize) -> bool + Send + Sync + 'static,
        C: Fn(&[f64], usize, &[f64], usize) -> f64 + Send + Sync + 'static,
    {
        assert_eq!(destinations.len(), self.modes, "one destination list per mode");
        self.controlled_set = Arc::new(set);
        self.destinations = destinations;
        self.controlled_cost = Arc::new(cost);
        self
    }

    pub fn with_boundary_penalty(mut self, penalty: f64) -> Self {
        self.boundary_penalty = Some(penalty);
        self
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn controls(&self) -> ControlSet {
        self.controls
    }

    pub fn autonomous_labels(&self) -> &[String] {
        &self.autonomous_labels
    }

    pub fn destinations(&self, mode: usize) -> &[Destination] {
        &self.destinations[mode]
    }

    pub fn boundary_penalty(&self) -> Option<f64> {
        self.boundary_penalty
    }

    #[inline]
    pub fn dynamics(&self, x: &[f64], q: usize, alpha: f64, out: &mut [f64]) {
        (self.dynamics)(x, q, alpha, out)
    }

    #[inline]
    pub fn running_cost(&self, x: &[f64], q: usize, alpha: f64) -> f64 {
        (self.running_cost)(x, q, alpha)
    }

    #[inline]
    pub fn in_autonomous_set(&self, x: &[f64], q: usize) -> bool {
        (self.autonomous_set)(x, q)
    }

    #[inline]
    pub fn in_controlled_set(&self, x: &[f64], q: usize) -> bool {
        (self.controlled_set)(x, q)
    }

    #[inline]
    pub fn transition(&self, x: &[f64], q: usize, w: usize, out: &mut [f64]) -> usize {
        (self.transition)(x, q, w, out)
    }

    #[inline]
    pub fn autonomous_cost(&self, x: &[f64], q: usize, w: usize) -> f64 {
        (self.autonomous_cost)(x, q, w)
    }

    #[inline]
    pub fn controlled_cost(&self, x: &[f64], q: usize, target: &[f64], to: usize) -> f64 {
        (self.controlled_cost)(x, q, target, to)
    }

    /// Cost of a mode switch at `x` keeping the continuous state: `c_A` with
    /// the cheapest label realizing it at A-points, `c_C` at C-points.
    pub fn switch_cost(&self, x: &[f64], from: usize, to: usize) -> Option<f64> {
        if self.in_autonomous_set(x, from) {
            let mut arrival = [0.0; MAX_DIM];
            (0..self.autonomous_labels.len())
                .filter(|&w| {
                    let q = self.transition(x, from, w, &mut arrival);
                    q == to && same_point(&arrival[..self.dim], x)
                })
                .map(|w| self.autonomous_cost(x, from, w))
                .reduce(f64::min)
        } else if self.in_controlled_set(x, from) {
            let admissible = self.destinations[from]
                .iter()
                .any(|d| matches!(d, Destination::SameState { mode } if *mode == to));
            admissible.then(|| self.controlled_cost(x, from, x, to))
        } else {
            None
        }
    }
}

pub(crate) fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(u, v)| (u - v).abs() <= 1e-12 * (1.0 + u.abs().max(v.abs())))
}

/// Control actions realized along a trajectory: the continuous signal, the
/// discrete labels chosen at autonomous jumps and the controlled jumps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlStrategy {
    /// `(t, α(t))` samples.
    pub continuous_control: Vec<(f64, f64)>,
    /// `(τ_i, w_i)` for each autonomous jump.
    pub autonomous_choices: Vec<(f64, usize)>,
    /// `(ξ_k, x'_k, q'_k)` for each controlled jump.
    pub controlled_jumps: Vec<(f64, Vec<f64>, usize)>,
}

impl ControlStrategy {
    /// Reads the strategy off a synthesized trajectory.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let mut strategy = ControlStrategy {
            continuous_control: traj.samples.iter().map(|s| (s.t, s.control)).collect(),
            ..Default::default()
        };
        for ev in &traj.switch_events {
            match ev.kind {
                JumpKind::Autonomous { label } => strategy.autonomous_choices.push((ev.t, label)),
                JumpKind::Controlled => strategy.controlled_jumps.push((ev.t, ev.x_after.clone(), ev.to_mode)),
            }
        }
        strategy
    }

    /// Jump times must increase strictly within each sequence.
    pub fn is_well_ordered(&self) -> bool {
        fn increasing(ts: impl Iterator<Item = f64>) -> bool {
            let mut last = f64::NEG_INFINITY;
            for t in ts {
                if t <= last {
                    return false;
                }
                last = t;
            }
            true
        }
        increasing(self.continuous_control.iter().map(|c| c.0))
            && increasing(self.autonomous_choices.iter().map(|c| c.0))
            && increasing(self.controlled_jumps.iter().map(|c| c.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Spot-checks the structural assumptions that can be decided on the grid
/// nodes. Returns one diagnostic per violation; an empty list means every
/// check passed. Free switching back and forth between two modes is
/// reported as a warning.
pub fn validate_problem(p: &HybridProblem, grid: &Grid) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if !(p.discount > 0.0) {
        out.push(Diagnostic::error("discount must be positive"));
    }
    if p.dim != grid.dim() {
        out.push(Diagnostic::error(format!(
            "problem dimension {} does not match grid dimension {}",
            p.dim,
            grid.dim()
        )));
        return out;
    }
    if p.modes != grid.modes() {
        out.push(Diagnostic::error(format!(
            "problem has {} modes but grid has {}",
            p.modes,
            grid.modes()
        )));
        return out;
    }
    if !(p.controls.low <= p.controls.high) {
        out.push(Diagnostic::error("control interval is empty"));
    }
    if let Some(pen) = p.boundary_penalty {
        if !pen.is_finite() {
            out.push(Diagnostic::error("boundary penalty must be finite"));
        }
    }

    let mut negative_cost = false;
    let mut zero_cycle = false;
    let mut escapes = false;
    let mut overlap = false;
    let mut missing_label = false;
    let mut missing_dest = false;
    let mut arrival = [0.0; MAX_DIM];
    let d = p.dim;
    let m = p.modes;
    // zero[q * m + l]: a free switch q -> l exists at the current node
    let mut zero = vec![false; m * m];

    for i in 0..grid.nodes_per_mode() {
        let x = grid.node_coords(i);
        let x = &x[..d];
        zero.iter_mut().for_each(|z| *z = false);
        for q in 0..m {
            let in_a = p.in_autonomous_set(x, q);
            let in_c = p.in_controlled_set(x, q);
            if in_a && in_c {
                overlap = true;
            }
            if in_a {
                if p.autonomous_labels.is_empty() {
                    missing_label = true;
                }
                for w in 0..p.autonomous_labels.len() {
                    let cost = p.autonomous_cost(x, q, w);
                    negative_cost |= cost < 0.0;
                    let to = p.transition(x, q, w, &mut arrival);
                    if to >= m || !grid.contains(&arrival[..d]) {
                        escapes = true;
                    } else if cost == 0.0 && to != q {
                        zero[q * m + to] = true;
                    }
                }
            }
            if in_c {
                let mut any = false;
                for dest in p.destinations(q).iter().filter(|d| d.mode() != q) {
                    any = true;
                    dest.target(x, &mut arrival);
                    let to = dest.mode();
                    if to >= m || !grid.contains(&arrival[..d]) {
                        escapes = true;
                        continue;
                    }
                    let cost = p.controlled_cost(x, q, &arrival[..d], to);
                    negative_cost |= cost < 0.0;
                    if cost == 0.0 {
                        zero[q * m + to] = true;
                    }
                }
                missing_dest |= !any;
            }
        }
        zero_cycle |= (0..m).any(|q| (q + 1..m).any(|l| zero[q * m + l] && zero[l * m + q]));
    }

    if negative_cost {
        out.push(Diagnostic::error("negative switching cost"));
    }
    if escapes {
        out.push(Diagnostic::error("jump arrival point escapes the domain"));
    }
    if overlap {
        out.push(Diagnostic::error(
            "autonomous and controlled jump sets intersect on grid nodes",
        ));
    }
    if missing_label {
        out.push(Diagnostic::error(
            "autonomous jump set is reachable but no discrete controls are defined",
        ));
    }
    if missing_dest {
        out.push(Diagnostic::error(
            "controlled jump set has no destination in another mode",
        ));
    }
    if zero_cycle {
        out.push(Diagnostic::warning(
            "zero-cost switching in both directions: value functions of linked modes coincide",
        ));
    }
    out
}

/// Left-endpoint rectangle quadrature of the discounted cost along a
/// trajectory, truncated at its last sample, plus discounted jump costs.
pub fn evaluate_cost(p: &HybridProblem, traj: &Trajectory) -> Result<f64> {
    let lambda = p.discount;
    for (k, w) in traj.samples.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(Error::NonMonotoneTime(k + 1));
        }
    }
    for (k, w) in traj.switch_events.windows(2).enumerate() {
        if w[1].t < w[0].t {
            return Err(Error::NonMonotoneTime(k + 1));
        }
    }
    let mut running = 0.0;
    for w in traj.samples.windows(2) {
        let s = &w[0];
        let dt = w[1].t - s.t;
        running += dt * p.running_cost(&s.x, s.mode, s.control) * (-lambda * s.t).exp();
    }
    let mut jumps = 0.0;
    for ev in &traj.switch_events {
        let cost = match ev.kind {
            JumpKind::Autonomous { label } => p.autonomous_cost(&ev.x_before, ev.from_mode, label),
            JumpKind::Controlled => p.controlled_cost(&ev.x_before, ev.from_mode, &ev.x_after, ev.to_mode),
        };
        jumps += cost * (-lambda * ev.t).exp();
    }
    Ok(running + jumps)
}

/// Upper bound on the discounted running cost beyond the horizon `t_f`.
pub fn tail_bound(max_abs_running_cost: f64, discount: f64, horizon: f64) -> f64 {
    max_abs_running_cost * (-discount * horizon).exp() / discount
}
