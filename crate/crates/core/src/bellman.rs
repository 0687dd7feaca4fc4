//! Discrete semi-Lagrangian Bellman operator of the hybrid QVI.
//!
//! At node `(x_i, q)`:
//! - `A`-nodes take the autonomous jump operator `M`;
//! - `C`-nodes take `min{N, Σ}`, preferring `Σ` on ties;
//! - every other node takes `Σ`,
//!
//! with `Σ = min_α Δt ℓ(x_i,q,α) + e^{-λΔt} I[v](x_i + Δt f(x_i,q,α), q)`.
//! Feet leaving the box are clamped and pay the boundary penalty, if any.

use std::io::Write;

use rayon::prelude::*;

use crate::grid::{fmt_f64, Grid, ValueField, MAX_DIM};
use crate::model::HybridProblem;
use crate::{Error, Result};

/// Time step, cached discount factor and control samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeParams {
    dt: f64,
    discount_factor: f64,
    controls: Vec<f64>,
}

impl SchemeParams {
    pub fn new(problem: &HybridProblem, dt: f64, control_samples: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        if control_samples == 0 {
            return Err(Error::InvalidParameter("N_u must be at least 1".into()));
        }
        let discount_factor = (-problem.discount() * dt).exp();
        if !(discount_factor > 0.0 && discount_factor < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount factor e^(-λΔt) = {discount_factor} is not in (0, 1)"
            )));
        }
        Ok(SchemeParams {
            dt,
            discount_factor,
            controls: problem.controls().samples(control_samples),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `e^{-λΔt}`.
    pub fn discount_factor(&self) -> f64 {
        self.discount_factor
    }

    /// Sampled control values, ascending.
    pub fn controls(&self) -> &[f64] {
        &self.controls
    }
}

/// Which alternative of the node equation attains the minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branch {
    Continuous { control: f64 },
    Autonomous { label: usize, to_mode: usize },
    Controlled { destination: usize, to_mode: usize },
}

impl Branch {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Branch::Continuous { .. } => "continuous",
            Branch::Autonomous { .. } => "autonomous_jump",
            Branch::Controlled { .. } => "controlled_jump",
        }
    }

    pub fn is_jump(&self) -> bool {
        !matches!(self, Branch::Continuous { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeDecision {
    pub branch: Branch,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NodeKind {
    Autonomous,
    Controlled,
    Free,
}

/// Affine node equation `constant + Σ weights·v[cols]` of a frozen branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FrozenRow {
    constant: f64,
    len: usize,
    cols: [usize; 4],
    weights: [f64; 4],
}

impl FrozenRow {
    #[inline]
    pub(crate) fn eval(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.len {
            s += self.weights[k] * v[self.cols[k]];
        }
        self.constant + s
    }
}

/// Problem, grid and parameters bound together, with per-node set
/// membership cached.
pub struct Scheme<'a> {
    pub problem: &'a HybridProblem,
    pub grid: &'a Grid,
    pub params: &'a SchemeParams,
    kinds: Vec<NodeKind>,
}

impl<'a> Scheme<'a> {
    pub fn new(problem: &'a HybridProblem, grid: &'a Grid, params: &'a SchemeParams) -> Result<Self> {
        if problem.dim() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                got: grid.dim(),
            });
        }
        if problem.modes() != grid.modes() {
            return Err(Error::DimensionMismatch {
                expected: problem.modes(),
                got: grid.modes(),
            });
        }
        let d = grid.dim();
        let kinds = (0..grid.len())
            .map(|off| {
                let (i, q) = grid.split_offset(off);
                let x = grid.node_coords(i);
                if problem.in_autonomous_set(&x[..d], q) {
                    NodeKind::Autonomous
                } else if problem.in_controlled_set(&x[..d], q) {
                    NodeKind::Controlled
                } else {
                    NodeKind::Free
                }
            })
            .collect();
        Ok(Scheme {
            problem,
            grid,
            params,
            kinds,
        })
    }

    pub(crate) fn kind(&self, offset: usize) -> NodeKind {
        self.kinds[offset]
    }

    fn check_field(&self, field: &ValueField) -> Result<()> {
        if field.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: field.len(),
            });
        }
        Ok(())
    }

    /// `I[v](x, q)` after clamping, plus the boundary penalty when clamped.
    #[inline]
    pub(crate) fn penalized_value(&self, field: &ValueField, x: &[f64], q: usize) -> f64 {
        let (foot, clamped) = self.grid.clamp_to_domain(x);
        let v = self.grid.stencil(&foot).apply(field.mode_values(self.grid, q));
        match self.problem.boundary_penalty() {
            Some(pen) if clamped => v + pen,
            _ => v,
        }
    }

    /// Cost of the continuous branch with a fixed control at `x`.
    #[inline]
    pub(crate) fn continuous_value(&self, field: &ValueField, x: &[f64], q: usize, alpha: f64) -> f64 {
        let d = self.grid.dim();
        let dt = self.params.dt;
        let mut vel = [0.0; MAX_DIM];
        self.problem.dynamics(x, q, alpha, &mut vel);
        let mut foot = [0.0; MAX_DIM];
        for a in 0..d {
            foot[a] = x[a] + dt * vel[a];
        }
        dt * self.problem.running_cost(x, q, alpha)
            + self.params.discount_factor * self.penalized_value(field, &foot[..d], q)
    }

    /// `Σ` at an arbitrary point: minimizing control (smallest on ties) and
    /// value.
    pub fn sigma_at(&self, field: &ValueField, x: &[f64], q: usize) -> (f64, f64) {
        let mut best = (self.params.controls[0], f64::INFINITY);
        for &alpha in &self.params.controls {
            let v = self.continuous_value(field, x, q, alpha);
            if v < best.1 {
                best = (alpha, v);
            }
        }
        best
    }

    /// `M` at an arbitrary point: `min_w I[v](g(x,q,w)) + c_A(x,q,w)`.
    pub fn m_at(&self, field: &ValueField, x: &[f64], q: usize) -> Option<(usize, usize, f64)> {
        let d = self.grid.dim();
        let mut arrival = [0.0; MAX_DIM];
        let mut best: Option<(usize, usize, f64)> = None;
        for w in 0..self.problem.autonomous_labels().len() {
            let to = self.problem.transition(x, q, w, &mut arrival);
            let v = self.penalized_value(field, &arrival[..d], to) + self.problem.autonomous_cost(x, q, w);
            if best.is_none_or(|b| v < b.2) {
                best = Some((w, to, v));
            }
        }
        best
    }

    /// `N` at an arbitrary point over destinations in other modes; ties go to
    /// the lowest mode index.
    pub fn n_at(&self, field: &ValueField, x: &[f64], q: usize) -> Option<(usize, usize, f64)> {
        let d = self.grid.dim();
        let mut target = [0.0; MAX_DIM];
        let mut best: Option<(usize, usize, f64)> = None;
        for (k, dest) in self.problem.destinations(q).iter().enumerate() {
            let to = dest.mode();
            if to == q {
                continue;
            }
            dest.target(x, &mut target);
            let v =
                self.penalized_value(field, &target[..d], to) + self.problem.controlled_cost(x, q, &target[..d], to);
            let better = match best {
                None => true,
                Some((_, bto, bv)) => v < bv || (v == bv && to < bto),
            };
            if better {
                best = Some((k, to, v));
            }
        }
        best
    }

    /// Right-hand side of the node equation at storage offset `off`.
    pub fn node_decision(&self, field: &ValueField, off: usize) -> Result<NodeDecision> {
        let d = self.grid.dim();
        let (i, q) = self.grid.split_offset(off);
        let x = self.grid.node_coords(i);
        let x = &x[..d];
        match self.kinds[off] {
            NodeKind::Autonomous => {
                let (label, to_mode, value) = self
                    .m_at(field, x, q)
                    .ok_or(Error::NoAutonomousJump { node: i, mode: q })?;
                Ok(NodeDecision {
                    branch: Branch::Autonomous { label, to_mode },
                    value,
                })
            }
            NodeKind::Controlled => {
                let (control, sigma) = self.sigma_at(field, x, q);
                let (destination, to_mode, jump) = self
                    .n_at(field, x, q)
                    .ok_or(Error::NoDestination { node: i, mode: q })?;
                if jump < sigma {
                    Ok(NodeDecision {
                        branch: Branch::Controlled { destination, to_mode },
                        value: jump,
                    })
                } else {
                    Ok(NodeDecision {
                        branch: Branch::Continuous { control },
                        value: sigma,
                    })
                }
            }
            NodeKind::Free => {
                let (control, value) = self.sigma_at(field, x, q);
                Ok(NodeDecision {
                    branch: Branch::Continuous { control },
                    value,
                })
            }
        }
    }

    /// Value of a fixed branch at a node, evaluated on `field`.
    pub fn branch_value(&self, field: &ValueField, off: usize, branch: &Branch) -> f64 {
        let d = self.grid.dim();
        let (i, q) = self.grid.split_offset(off);
        let x = self.grid.node_coords(i);
        let x = &x[..d];
        match *branch {
            Branch::Continuous { control } => self.continuous_value(field, x, q, control),
            Branch::Autonomous { label, .. } => {
                let mut arrival = [0.0; MAX_DIM];
                let to = self.problem.transition(x, q, label, &mut arrival);
                self.penalized_value(field, &arrival[..d], to) + self.problem.autonomous_cost(x, q, label)
            }
            Branch::Controlled { destination, to_mode } => {
                let mut target = [0.0; MAX_DIM];
                self.problem.destinations(q)[destination].target(x, &mut target);
                self.penalized_value(field, &target[..d], to_mode)
                    + self.problem.controlled_cost(x, q, &target[..d], to_mode)
            }
        }
    }

    /// `scale·(I[v](x, q) + penalty) + constant` as a linear row in `v`.
    fn interpolation_row(&self, x: &[f64], q: usize, scale: f64, constant: f64) -> FrozenRow {
        let (foot, clamped) = self.grid.clamp_to_domain(x);
        let st = self.grid.stencil(&foot[..self.grid.dim()]);
        let base = self.grid.offset(0, q);
        let mut row = FrozenRow {
            constant,
            len: 0,
            cols: [0; 4],
            weights: [0.0; 4],
        };
        for (node, w) in st.entries() {
            row.cols[row.len] = base + node;
            row.weights[row.len] = scale * w;
            row.len += 1;
        }
        if let (Some(pen), true) = (self.problem.boundary_penalty(), clamped) {
            row.constant += scale * pen;
        }
        row
    }

    /// Node equation with the branch frozen, as an affine function of `v`.
    pub(crate) fn frozen_row(&self, off: usize, branch: &Branch) -> FrozenRow {
        let d = self.grid.dim();
        let (i, q) = self.grid.split_offset(off);
        let x = self.grid.node_coords(i);
        let x = &x[..d];
        match *branch {
            Branch::Continuous { control } => {
                let dt = self.params.dt;
                let mut vel = [0.0; MAX_DIM];
                self.problem.dynamics(x, q, control, &mut vel);
                let mut foot = [0.0; MAX_DIM];
                for a in 0..d {
                    foot[a] = x[a] + dt * vel[a];
                }
                let cost = dt * self.problem.running_cost(x, q, control);
                self.interpolation_row(&foot[..d], q, self.params.discount_factor, cost)
            }
            Branch::Autonomous { label, .. } => {
                let mut arrival = [0.0; MAX_DIM];
                let to = self.problem.transition(x, q, label, &mut arrival);
                let cost = self.problem.autonomous_cost(x, q, label);
                self.interpolation_row(&arrival[..d], to, 1.0, cost)
            }
            Branch::Controlled { destination, to_mode } => {
                let mut target = [0.0; MAX_DIM];
                self.problem.destinations(q)[destination].target(x, &mut target);
                let cost = self.problem.controlled_cost(x, q, &target[..d], to_mode);
                self.interpolation_row(&target[..d], to_mode, 1.0, cost)
            }
        }
    }

    /// One Jacobi sweep of the Bellman operator with per-node decisions.
    pub fn apply(&self, field: &ValueField) -> Result<(ValueField, Vec<NodeDecision>)> {
        self.check_field(field)?;
        let decisions: Vec<NodeDecision> = (0..self.grid.len())
            .into_par_iter()
            .map(|off| self.node_decision(field, off))
            .collect::<Result<_>>()?;
        let values = decisions.iter().map(|d| d.value).collect();
        Ok((ValueField::new(values), decisions))
    }

    /// One Jacobi sweep, values only.
    pub fn sweep(&self, field: &ValueField) -> Result<ValueField> {
        self.check_field(field)?;
        let values: Vec<f64> = (0..self.grid.len())
            .into_par_iter()
            .map(|off| self.node_decision(field, off).map(|d| d.value))
            .collect::<Result<_>>()?;
        Ok(ValueField::new(values))
    }

    /// `‖T(v) − v‖∞`.
    pub fn residual(&self, field: &ValueField) -> Result<f64> {
        Ok(self.sweep(field)?.sup_distance(field))
    }
}

/// `Σ` at node `i` (0-based) of mode `q`.
pub fn sigma_op(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    field: &ValueField,
    i: usize,
    q: usize,
) -> Result<NodeDecision> {
    let scheme = Scheme::new(p, grid, params)?;
    check_node(grid, i, q)?;
    let x = grid.node_coords(i);
    let (control, value) = scheme.sigma_at(field, &x[..grid.dim()], q);
    Ok(NodeDecision {
        branch: Branch::Continuous { control },
        value,
    })
}

/// `M` at node `i` of mode `q`.
pub fn m_op(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    field: &ValueField,
    i: usize,
    q: usize,
) -> Result<NodeDecision> {
    let scheme = Scheme::new(p, grid, params)?;
    check_node(grid, i, q)?;
    let x = grid.node_coords(i);
    let (label, to_mode, value) = scheme
        .m_at(field, &x[..grid.dim()], q)
        .ok_or(Error::NoAutonomousJump { node: i, mode: q })?;
    Ok(NodeDecision {
        branch: Branch::Autonomous { label, to_mode },
        value,
    })
}

/// `N` at node `i` of mode `q`.
pub fn n_op(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    field: &ValueField,
    i: usize,
    q: usize,
) -> Result<NodeDecision> {
    let scheme = Scheme::new(p, grid, params)?;
    check_node(grid, i, q)?;
    let x = grid.node_coords(i);
    let (destination, to_mode, value) = scheme
        .n_at(field, &x[..grid.dim()], q)
        .ok_or(Error::NoDestination { node: i, mode: q })?;
    Ok(NodeDecision {
        branch: Branch::Controlled { destination, to_mode },
        value,
    })
}

fn check_node(grid: &Grid, i: usize, q: usize) -> Result<()> {
    if i >= grid.nodes_per_mode() || q >= grid.modes() {
        return Err(Error::IndexOutOfRange(format!("node {i} of mode {q}")));
    }
    Ok(())
}

/// `T_δ(v)` with per-node decisions.
pub fn bellman_apply(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    field: &ValueField,
) -> Result<(ValueField, Vec<NodeDecision>)> {
    Scheme::new(p, grid, params)?.apply(field)
}

/// Sup-norm residual `‖T_δ(v) − v‖∞` of the discrete QVI.
pub fn qvi_residual(p: &HybridProblem, grid: &Grid, params: &SchemeParams, field: &ValueField) -> Result<f64> {
    Scheme::new(p, grid, params)?.residual(field)
}

/// Decision CSV: `mode, node, kind, control, destination_mode, value` with
/// 1-based mode and node numbers. `control` is empty on jump rows and
/// `destination_mode` equals `mode` on continuous rows.
pub fn write_decisions_csv<W: Write>(grid: &Grid, decisions: &[NodeDecision], mut w: W) -> Result<()> {
    writeln!(w, "mode,node,kind,control,destination_mode,value")?;
    for (off, d) in decisions.iter().enumerate() {
        let (i, q) = grid.split_offset(off);
        let (control, dest) = match d.branch {
            Branch::Continuous { control } => (fmt_f64(control), q),
            Branch::Autonomous { to_mode, .. } | Branch::Controlled { to_mode, .. } => (String::new(), to_mode),
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            q + 1,
            i + 1,
            d.branch.kind_name(),
            control,
            dest + 1,
            fmt_f64(d.value)
        )?;
    }
    Ok(())
}
