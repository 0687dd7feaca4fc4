//! Matrix form of the scheme on one-dimensional grids.
//!
//! For a policy `(α, s)` the node equations read `B w = c` with
//! `B = −I + D_A + D_C + γE`, `γ = e^{−λΔt}`. `D_A`/`D_C` move a switch row to
//! the same node of the destination mode, `E` holds the two-point upwind
//! interpolation weights of the characteristic foot and `c` carries the
//! negated running or switching costs.
//!
//! With Courant number `h = Δt f / Δx`, the foot `x_i + hΔx` falls between
//! `x_{i−1}` and `x_i` when `h < 0`, giving `e_{i,i−1} = −h`,
//! `e_{i,i} = 1 + h`; when `h > 0`, `e_{i,i} = 1 − h`, `e_{i,i+1} = h`.

use rayon::prelude::*;

use crate::bellman::{Branch, NodeDecision, NodeKind, Scheme, SchemeParams};
use crate::grid::{Grid, ValueField};
use crate::linalg::{matvec, SparseMatrix};
use crate::model::HybridProblem;
use crate::{Error, Result};

/// Continuous controls and switching strategy over all nodes, in flat
/// layout. Modes in `s` are 0-based; `s[off] == mode(off)` means no switch.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub alpha: Vec<f64>,
    pub s: Vec<usize>,
}

impl Policy {
    /// Policy that never switches and applies `alpha` everywhere.
    pub fn no_switch(grid: &Grid, alpha: f64) -> Self {
        Policy {
            alpha: vec![alpha; grid.len()],
            s: (0..grid.len()).map(|off| grid.split_offset(off).1).collect(),
        }
    }

    /// Reads `(α, s)` off per-node decisions. Jump rows keep the lowest
    /// control sample in `α`; it does not enter the equations.
    pub fn from_decisions(grid: &Grid, decisions: &[NodeDecision], idle_control: f64) -> Self {
        let mut alpha = Vec::with_capacity(decisions.len());
        let mut s = Vec::with_capacity(decisions.len());
        for (off, d) in decisions.iter().enumerate() {
            let q = grid.split_offset(off).1;
            match d.branch {
                Branch::Continuous { control } => {
                    alpha.push(control);
                    s.push(q);
                }
                Branch::Autonomous { to_mode, .. } | Branch::Controlled { to_mode, .. } => {
                    alpha.push(idle_control);
                    s.push(to_mode);
                }
            }
        }
        Policy { alpha, s }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Number of switch rows.
    pub fn switch_count(&self, grid: &Grid) -> usize {
        self.s
            .iter()
            .enumerate()
            .filter(|&(off, &l)| l != grid.split_offset(off).1)
            .count()
    }
}

/// `B` and `c` of the frozen-policy system `B w = c`.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub b: SparseMatrix,
    pub c: Vec<f64>,
    /// `γ = e^{−λΔt}` used in `B`.
    pub discount_factor: f64,
}

impl AssembledSystem {
    /// `(D + γE) v − c`, the frozen-policy right-hand side evaluated on `v`.
    pub fn apply_frozen(&self, v: &[f64]) -> Result<Vec<f64>> {
        let bv = matvec(&self.b, v)?;
        Ok(bv.iter().zip(v).zip(&self.c).map(|((b, x), c)| b + x - c).collect())
    }

    /// `‖B v − c‖∞`.
    pub fn residual(&self, v: &[f64]) -> Result<f64> {
        let bv = matvec(&self.b, v)?;
        Ok(bv
            .iter()
            .zip(&self.c)
            .fold(0.0f64, |acc, (b, c)| acc.max((b - c).abs())))
    }
}

fn require_1d(grid: &Grid) -> Result<()> {
    if grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    Ok(())
}

fn check_policy(grid: &Grid, policy: &Policy) -> Result<()> {
    if policy.alpha.len() != grid.len() || policy.s.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: policy.s.len().min(policy.alpha.len()),
        });
    }
    Ok(())
}

/// Which switch matrix a row belongs to, with the switching cost.
#[derive(Debug, Clone, Copy)]
enum RowKind {
    Continuous,
    AutonomousSwitch { cost: f64 },
    ControlledSwitch { cost: f64 },
}

fn classify(scheme: &Scheme, policy: &Policy, off: usize) -> Result<RowKind> {
    let grid = scheme.grid;
    let p = scheme.problem;
    let (i, k) = grid.split_offset(off);
    let l = policy.s[off];
    if l >= grid.modes() {
        return Err(Error::InvalidPolicy {
            node: i,
            mode: k,
            reason: format!("destination mode {} does not exist", l + 1),
        });
    }
    if l == k {
        let a = policy.alpha[off];
        if !p.controls().contains(a) {
            return Err(Error::InvalidPolicy {
                node: i,
                mode: k,
                reason: format!("control {a} outside the admissible set"),
            });
        }
        return Ok(RowKind::Continuous);
    }
    let x = grid.node_coords(i);
    let x = &x[..1];
    match scheme.kind(off) {
        NodeKind::Autonomous => match p.switch_cost(x, k, l) {
            Some(cost) => Ok(RowKind::AutonomousSwitch { cost }),
            None => Err(Error::InvalidPolicy {
                node: i,
                mode: k,
                reason: format!("switch to mode {} is not in the image of the transition map", l + 1),
            }),
        },
        NodeKind::Controlled => match p.switch_cost(x, k, l) {
            Some(cost) => Ok(RowKind::ControlledSwitch { cost }),
            None => Err(Error::InvalidPolicy {
                node: i,
                mode: k,
                reason: format!("mode {} is not an admissible destination", l + 1),
            }),
        },
        NodeKind::Free => Err(Error::InvalidPolicy {
            node: i,
            mode: k,
            reason: "switch requested outside the jump sets".into(),
        }),
    }
}

fn classify_all(scheme: &Scheme, policy: &Policy) -> Result<Vec<RowKind>> {
    (0..scheme.grid.len())
        .into_par_iter()
        .map(|off| classify(scheme, policy, off))
        .collect()
}

/// `(D_A, D_C)` for the policy's switching strategy.
pub fn assemble_d(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    policy: &Policy,
) -> Result<(SparseMatrix, SparseMatrix)> {
    require_1d(grid)?;
    check_policy(grid, policy)?;
    let scheme = Scheme::new(p, grid, params)?;
    let kinds = classify_all(&scheme, policy)?;
    d_from_kinds(grid, policy, &kinds)
}

fn d_from_kinds(grid: &Grid, policy: &Policy, kinds: &[RowKind]) -> Result<(SparseMatrix, SparseMatrix)> {
    let mut ta = Vec::new();
    let mut tc = Vec::new();
    for (off, kind) in kinds.iter().enumerate() {
        let col = grid.offset(grid.split_offset(off).0, policy.s[off]);
        match kind {
            RowKind::AutonomousSwitch { .. } => ta.push((off, col, 1.0)),
            RowKind::ControlledSwitch { .. } => tc.push((off, col, 1.0)),
            RowKind::Continuous => {}
        }
    }
    Ok((
        SparseMatrix::from_triplets(grid.len(), grid.len(), &ta)?,
        SparseMatrix::from_triplets(grid.len(), grid.len(), &tc)?,
    ))
}

/// Transport row of a non-switch node: stencil entries and whether the foot
/// was clamped.
fn transport_row(scheme: &Scheme, policy: &Policy, off: usize) -> Result<(Vec<(usize, f64)>, bool)> {
    let grid = scheme.grid;
    let (i, k) = grid.split_offset(off);
    let x = grid.node_coords(i)[0];
    let mut vel = [0.0; 2];
    scheme.problem.dynamics(&[x], k, policy.alpha[off], &mut vel);
    let dt = scheme.params.dt();
    let h = dt * vel[0] / grid.spacing(0);
    if !h.is_finite() || h.abs() > 1.0 + 1e-12 {
        return Err(Error::CourantViolation {
            node: i,
            mode: k,
            courant: h.abs(),
        });
    }
    let (foot, clamped) = grid.clamp_to_domain(&[x + dt * vel[0]]);
    let st = grid.stencil(&foot[..1]);
    let base = grid.offset(0, k);
    Ok((st.entries().map(|(node, w)| (base + node, w)).collect(), clamped))
}

/// Block-diagonal transport matrix `E`; switch rows are zero. Fails with the
/// offending node when `|h| > 1`.
pub fn assemble_e(p: &HybridProblem, grid: &Grid, params: &SchemeParams, policy: &Policy) -> Result<SparseMatrix> {
    require_1d(grid)?;
    check_policy(grid, policy)?;
    let scheme = Scheme::new(p, grid, params)?;
    let kinds = classify_all(&scheme, policy)?;
    e_from_kinds(&scheme, policy, &kinds).map(|(e, _)| e)
}

fn e_from_kinds(scheme: &Scheme, policy: &Policy, kinds: &[RowKind]) -> Result<(SparseMatrix, Vec<bool>)> {
    let n = scheme.grid.len();
    let rows: Vec<(Vec<(usize, f64)>, bool)> = (0..n)
        .into_par_iter()
        .map(|off| match kinds[off] {
            RowKind::Continuous => transport_row(scheme, policy, off),
            _ => Ok((Vec::new(), false)),
        })
        .collect::<Result<_>>()?;
    let mut t = Vec::with_capacity(2 * n);
    let mut clamped = Vec::with_capacity(n);
    for (off, (entries, c)) in rows.into_iter().enumerate() {
        t.extend(entries.into_iter().map(|(col, w)| (off, col, w)));
        clamped.push(c);
    }
    Ok((SparseMatrix::from_triplets(n, n, &t)?, clamped))
}

/// Cost vector: `−Δt ℓ` on non-switch rows (minus `γ·penalty` where the
/// foot is clamped) and `−ξ` on switch rows.
pub fn assemble_c(p: &HybridProblem, grid: &Grid, params: &SchemeParams, policy: &Policy) -> Result<Vec<f64>> {
    require_1d(grid)?;
    check_policy(grid, policy)?;
    let scheme = Scheme::new(p, grid, params)?;
    let kinds = classify_all(&scheme, policy)?;
    let (_, clamped) = e_from_kinds(&scheme, policy, &kinds)?;
    Ok(c_from_kinds(&scheme, policy, &kinds, &clamped))
}

fn c_from_kinds(scheme: &Scheme, policy: &Policy, kinds: &[RowKind], clamped: &[bool]) -> Vec<f64> {
    let grid = scheme.grid;
    let dt = scheme.params.dt();
    let gamma = scheme.params.discount_factor();
    let penalty = scheme.problem.boundary_penalty().unwrap_or(0.0);
    kinds
        .iter()
        .enumerate()
        .map(|(off, kind)| match *kind {
            RowKind::Continuous => {
                let (i, k) = grid.split_offset(off);
                let x = grid.node_coords(i)[0];
                let mut c = -dt * scheme.problem.running_cost(&[x], k, policy.alpha[off]);
                if clamped[off] {
                    c -= gamma * penalty;
                }
                c
            }
            RowKind::AutonomousSwitch { cost } | RowKind::ControlledSwitch { cost } => -cost,
        })
        .collect()
}

/// Rows (0-based offsets) of a cycle made only of switch rows, if any.
fn find_switch_cycle(grid: &Grid, policy: &Policy, kinds: &[RowKind]) -> Option<Vec<usize>> {
    let n = grid.len();
    // 0 = unvisited, 1 = on current path, 2 = done
    let mut state = vec![0u8; n];
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            if matches!(kinds[cur], RowKind::Continuous) || state[cur] == 2 {
                break;
            }
            if state[cur] == 1 {
                let pos = path.iter().position(|&r| r == cur).unwrap();
                return Some(path[pos..].to_vec());
            }
            state[cur] = 1;
            path.push(cur);
            cur = grid.offset(grid.split_offset(cur).0, policy.s[cur]);
        }
        for r in path {
            state[r] = 2;
        }
    }
    None
}

/// `B(α, s) = −I + D_A + D_C + γE` and `c(α, s)`. Rejects strategies with
/// a pure switch cycle, which make `B` singular.
pub fn assemble_b(p: &HybridProblem, grid: &Grid, params: &SchemeParams, policy: &Policy) -> Result<AssembledSystem> {
    require_1d(grid)?;
    check_policy(grid, policy)?;
    let scheme = Scheme::new(p, grid, params)?;
    let kinds = classify_all(&scheme, policy)?;
    if let Some(cycle) = find_switch_cycle(grid, policy, &kinds) {
        return Err(Error::SwitchCycle {
            rows: cycle.into_iter().map(|r| r + 1).collect(),
        });
    }
    let (da, dc) = d_from_kinds(grid, policy, &kinds)?;
    let (e, clamped) = e_from_kinds(&scheme, policy, &kinds)?;
    let c = c_from_kinds(&scheme, policy, &kinds, &clamped);
    let gamma = params.discount_factor();
    let d = da.combine(1.0, &dc, 1.0)?;
    let de = d.combine(1.0, &e, gamma)?;
    let b = de.combine(1.0, &SparseMatrix::identity(grid.len()), -1.0)?;
    Ok(AssembledSystem {
        b,
        c,
        discount_factor: gamma,
    })
}

/// Greedy policy of one Bellman sweep on `field`.
pub fn greedy_policy(p: &HybridProblem, grid: &Grid, params: &SchemeParams, field: &ValueField) -> Result<Policy> {
    let scheme = Scheme::new(p, grid, params)?;
    let (_, decisions) = scheme.apply(field)?;
    Ok(Policy::from_decisions(grid, &decisions, params.controls()[0]))
}
