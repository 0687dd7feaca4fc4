//! Closed-loop trajectories from a converged value field.
//!
//! The feedback re-minimizes the node equation at the current off-grid
//! state: inside `A` the cheapest autonomous jump is taken; inside `C` a
//! controlled jump fires only if it beats the continuous branch by more than
//! [`JUMP_TOLERANCE`]; otherwise the state advances by one explicit Euler
//! step with the minimizing control, clamped to the box.

use std::io::Write;

use crate::bellman::{Scheme, SchemeParams};
use crate::grid::{fmt_f64, Grid, ValueField, MAX_DIM};
use crate::model::{evaluate_cost, HybridProblem};
use crate::{Error, Result};

/// Required margin of a controlled jump over staying in the mode.
pub const JUMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpKind {
    Autonomous { label: usize },
    Controlled,
}

impl JumpKind {
    pub fn name(&self) -> &'static str {
        match self {
            JumpKind::Autonomous { .. } => "autonomous",
            JumpKind::Controlled => "controlled",
        }
    }
}

/// State and applied control at one time step. `mode` is 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub mode: usize,
    pub control: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEvent {
    pub t: f64,
    pub kind: JumpKind,
    pub from_mode: usize,
    pub to_mode: usize,
    pub x_before: Vec<f64>,
    pub x_after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub switch_events: Vec<SwitchEvent>,
    pub horizon: f64,
    pub dt: f64,
    pub accumulated_cost: f64,
}

impl Trajectory {
    /// Samples with `t ≥ from`.
    pub fn samples_after(&self, from: f64) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.t >= from)
    }

    /// `t, x1.., q, alpha` with 1-based modes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.samples.first().map_or(0, |s| s.x.len());
        let xs: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
        writeln!(w, "t,{},q,alpha", xs.join(","))?;
        for s in &self.samples {
            let xs: Vec<String> = s.x.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(s.t),
                xs.join(","),
                s.mode + 1,
                fmt_f64(s.control)
            )?;
        }
        Ok(())
    }

    /// `t, kind, from, to, x1..` with 1-based modes; `x` is the state at the
    /// switch.
    pub fn write_switches_csv<W: Write>(&self, dim: usize, mut w: W) -> Result<()> {
        let xs: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
        writeln!(w, "t,kind,from,to,{}", xs.join(","))?;
        for e in &self.switch_events {
            let xs: Vec<String> = e.x_before.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_f64(e.t),
                e.kind.name(),
                e.from_mode + 1,
                e.to_mode + 1,
                xs.join(",")
            )?;
        }
        Ok(())
    }
}

/// Simulates the closed loop from `(x0, q0)` over `[0, t_f]` with the
/// scheme's time step. A chain of controlled jumps that returns to a state
/// already visited at the same instant is cut short in the visited mode with
/// the cheapest continuous branch. Fails if more than `m` jumps happen at one
/// instant.
pub fn synthesize(
    p: &HybridProblem,
    grid: &Grid,
    params: &SchemeParams,
    field: &ValueField,
    x0: &[f64],
    q0: usize,
    t_f: f64,
) -> Result<Trajectory> {
    let d = grid.dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x0.len(),
        });
    }
    if q0 >= grid.modes() {
        return Err(Error::IndexOutOfRange(format!("initial mode {}", q0 + 1)));
    }
    if !grid.contains(x0) {
        return Err(Error::OutsideDomain { point: x0.to_vec() });
    }
    if !(t_f >= 0.0 && t_f.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon {t_f} must be nonnegative")));
    }
    if field.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: field.len(),
        });
    }
    let scheme = Scheme::new(p, grid, params)?;
    let dt = params.dt();
    let steps = (t_f / dt - 1e-9).ceil().max(0.0) as usize;
    let zeno_limit = grid.modes();

    let mut x = [0.0; MAX_DIM];
    x[..d].copy_from_slice(x0);
    let mut q = q0;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut events = Vec::new();
    let mut scratch = [0.0; MAX_DIM];

    for j in 0..=steps {
        let t = if j == steps { t_f } else { j as f64 * dt };
        let mut jumps = 0;
        // (mode, state, events so far, continuous value, control) for every
        // mode entered at this instant outside `A`
        let mut visited: Vec<(usize, [f64; MAX_DIM], usize, f64, f64)> = Vec::new();
        let control = loop {
            let xs = &x[..d];
            let (kind, to) = if p.in_autonomous_set(xs, q) {
                let (label, to, _) = scheme
                    .m_at(field, xs, q)
                    .ok_or(Error::NoAutonomousJump { node: j, mode: q })?;
                p.transition(xs, q, label, &mut scratch);
                (JumpKind::Autonomous { label }, to)
            } else {
                let (control, sigma) = scheme.sigma_at(field, xs, q);
                if !p.in_controlled_set(xs, q) {
                    break control;
                }
                visited.push((q, x, events.len(), sigma, control));
                match scheme.n_at(field, xs, q) {
                    Some((k, to, value)) if value < sigma - JUMP_TOLERANCE => {
                        p.destinations(q)[k].target(xs, &mut scratch);
                        let arrival = grid.clamp_to_domain(&scratch[..d]).0;
                        if visited.iter().any(|v| v.0 == to && v.1[..d] == arrival[..d]) {
                            // a zero-time loop gains nothing; settle in the
                            // visited mode with the cheapest continuation
                            let best = visited
                                .iter()
                                .fold(None::<&(usize, [f64; MAX_DIM], usize, f64, f64)>, |b, v| match b {
                                    Some(b) if b.3 <= v.3 => Some(b),
                                    _ => Some(v),
                                })
                                .expect("visited is not empty");
                            events.truncate(best.2);
                            q = best.0;
                            x = best.1;
                            break best.4;
                        }
                        (JumpKind::Controlled, to)
                    }
                    _ => break control,
                }
            };
            jumps += 1;
            if jumps > zeno_limit {
                return Err(Error::ZenoGuard {
                    time: t,
                    limit: zeno_limit,
                });
            }
            let (arrival, _) = grid.clamp_to_domain(&scratch[..d]);
            events.push(SwitchEvent {
                t,
                kind,
                from_mode: q,
                to_mode: to,
                x_before: x[..d].to_vec(),
                x_after: arrival[..d].to_vec(),
            });
            x = arrival;
            q = to;
        };
        samples.push(Sample {
            t,
            x: x[..d].to_vec(),
            mode: q,
            control,
        });
        if j == steps {
            break;
        }
        let step = if j + 1 == steps { t_f - t } else { dt };
        let mut vel = [0.0; MAX_DIM];
        p.dynamics(&x[..d], q, control, &mut vel);
        let mut next = [0.0; MAX_DIM];
        for a in 0..d {
            next[a] = x[a] + step * vel[a];
        }
        if next[..d].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(t + step));
        }
        x = grid.clamp_to_domain(&next[..d]).0;
    }

    let mut traj = Trajectory {
        samples,
        switch_events: events,
        horizon: t_f,
        dt,
        accumulated_cost: 0.0,
    };
    traj.accumulated_cost = evaluate_cost(p, &traj)?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlSet, Destination};

    fn two_modes(cost: f64) -> HybridProblem {
        HybridProblem::new(
            1,
            2,
            |_, q, _, out| out[0] = if q == 0 { 1.0 } else { -1.0 },
            |_, _, _| 0.0,
            1.0,
            ControlSet::singleton(0.0),
        )
        .with_controlled_jumps(
            |_, _| true,
            vec![
                vec![Destination::SameState { mode: 1 }],
                vec![Destination::SameState { mode: 0 }],
            ],
            move |_, _, _, _| cost,
        )
    }

    #[test]
    fn no_jump_on_ties() {
        let p = two_modes(0.0);
        let g = Grid::uniform(&[(0.0, 1.0)], &[11], 2).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let f = ValueField::constant(&g, 0.0);
        let tr = synthesize(&p, &g, &sp, &f, &[0.2], 0, 0.5).unwrap();
        assert!(tr.switch_events.is_empty());
        assert_eq!(tr.samples.len(), 6);
        assert!((tr.samples[5].t - 0.5).abs() < 1e-15);
        assert!((tr.samples[5].x[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn jumps_to_cheaper_mode_and_stays_in_box() {
        let p = two_modes(0.0);
        let g = Grid::uniform(&[(0.0, 1.0)], &[11], 2).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let mut f = ValueField::constant(&g, 1.0);
        for i in 0..11 {
            f.values[g.offset(i, 1)] = 0.0;
        }
        let tr = synthesize(&p, &g, &sp, &f, &[0.5], 0, 2.0).unwrap();
        assert_eq!(tr.switch_events.len(), 1);
        assert_eq!(tr.switch_events[0].to_mode, 1);
        assert!(tr.samples.iter().all(|s| s.mode == 1));
        assert!(tr.samples.iter().all(|s| (0.0..=1.0).contains(&s.x[0])));
        assert_eq!(tr.samples.last().unwrap().x[0], 0.0);
    }

    #[test]
    fn zeno_guard_trips_on_forced_ping_pong() {
        let p = HybridProblem::new(
            1,
            2,
            |_, _, _, out| out[0] = 0.0,
            |_, _, _| 0.0,
            1.0,
            ControlSet::singleton(0.0),
        )
        .with_autonomous_jumps(
            vec!["flip".into()],
            |_, _| true,
            |x, q, _, out| {
                out[0] = x[0];
                1 - q
            },
            |_, _, _| 0.0,
        );
        let g = Grid::uniform(&[(0.0, 1.0)], &[3], 2).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let f = ValueField::constant(&g, 0.0);
        assert!(matches!(
            synthesize(&p, &g, &sp, &f, &[0.5], 0, 1.0),
            Err(Error::ZenoGuard { limit: 2, .. })
        ));
    }

    #[test]
    fn zero_time_loops_settle_in_cheapest_mode() {
        // free switching and a field below both continuations: each mode
        // sees the other as strictly better
        let p = HybridProblem::new(
            1,
            2,
            |_, _, _, out| out[0] = 0.0,
            |_, q, _| if q == 0 { 2.0 } else { 1.0 },
            1.0,
            ControlSet::singleton(0.0),
        )
        .with_controlled_jumps(
            |_, _| true,
            vec![
                vec![Destination::SameState { mode: 1 }],
                vec![Destination::SameState { mode: 0 }],
            ],
            |_, _, _, _| 0.0,
        );
        let g = Grid::uniform(&[(0.0, 1.0)], &[3], 2).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let f = ValueField::constant(&g, 0.0);
        let tr = synthesize(&p, &g, &sp, &f, &[0.5], 0, 0.3).unwrap();
        assert!(tr.samples.iter().all(|s| s.mode == 1));
        assert_eq!(tr.switch_events.len(), 1);
        let tr = synthesize(&p, &g, &sp, &f, &[0.5], 1, 0.3).unwrap();
        assert!(tr.switch_events.is_empty());
    }

    #[test]
    fn rejects_start_outside_domain() {
        let p = two_modes(0.0);
        let g = Grid::uniform(&[(0.0, 1.0)], &[3], 2).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let f = ValueField::constant(&g, 0.0);
        assert!(matches!(
            synthesize(&p, &g, &sp, &f, &[1.5], 0, 1.0),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn csv_layouts() {
        let p = two_modes(0.0);
        let g = Grid::uniform(&[(0.0, 1.0)], &[11], 2).unwrap();
        let sp = SchemeParams::new(&p, 0.1, 1).unwrap();
        let mut f = ValueField::constant(&g, 1.0);
        for i in 0..11 {
            f.values[g.offset(i, 1)] = 0.0;
        }
        let tr = synthesize(&p, &g, &sp, &f, &[0.5], 0, 0.2).unwrap();
        let mut a = Vec::new();
        tr.write_csv(&mut a).unwrap();
        let a = String::from_utf8(a).unwrap();
        assert_eq!(a.lines().next().unwrap(), "t,x1,q,alpha");
        assert_eq!(a.lines().count(), 4);
        let mut b = Vec::new();
        tr.write_switches_csv(1, &mut b).unwrap();
        let b = String::from_utf8(b).unwrap();
        assert_eq!(b.lines().next().unwrap(), "t,kind,from,to,x1");
        assert!(b.lines().nth(1).unwrap().contains(",controlled,1,2,"));
    }
}
