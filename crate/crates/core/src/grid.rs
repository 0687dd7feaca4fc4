//! Uniform per-mode grids, the flat value layout and P1/Q1 interpolation.
//!
//! Node `i` of mode `k` lives at 0-based offset `k * n + i`; in the 1-based
//! numbering used by exported files this is `(k - 1) * n + i`. Within a mode,
//! axis 0 varies fastest.

use std::io::Write;

use crate::{Error, Result};

/// Largest supported state dimension.
pub const MAX_DIM: usize = 2;

/// Interpolation positions closer than this (in cell units) to a node snap
/// onto it, so node values are reproduced exactly.
const SNAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    lower: [f64; MAX_DIM],
    upper: [f64; MAX_DIM],
    nodes: [usize; MAX_DIM],
    spacing: [f64; MAX_DIM],
    modes: usize,
}

/// Up to `2^d` node offsets and their convex weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub len: usize,
    pub nodes: [usize; 1 << MAX_DIM],
    pub weights: [f64; 1 << MAX_DIM],
}

impl Stencil {
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes[..self.len]
            .iter()
            .copied()
            .zip(self.weights[..self.len].iter().copied())
    }

    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        match self.len {
            1 => values[self.nodes[0]],
            2 => self.weights[0] * values[self.nodes[0]] + self.weights[1] * values[self.nodes[1]],
            _ => {
                // bilinear: (1-w1) * row0 + w1 * row1
                let r0 = self.weights[0] * values[self.nodes[0]] + self.weights[1] * values[self.nodes[1]];
                let r1 = self.weights[2] * values[self.nodes[2]] + self.weights[3] * values[self.nodes[3]];
                r0 + r1
            }
        }
    }
}

impl Grid {
    /// Uniform tensor grid with `nodes[a]` nodes on `bounds[a]`, shared by all
    /// `modes`.
    pub fn uniform(bounds: &[(f64, f64)], nodes: &[usize], modes: usize) -> Result<Grid> {
        let dim = bounds.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidGrid(format!(
                "dimension {dim} not supported (1..={MAX_DIM})"
            )));
        }
        if nodes.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} node counts for {dim} axes",
                nodes.len()
            )));
        }
        if modes == 0 {
            return Err(Error::InvalidGrid("at least one mode required".into()));
        }
        let mut g = Grid {
            dim,
            lower: [0.0; MAX_DIM],
            upper: [0.0; MAX_DIM],
            nodes: [1; MAX_DIM],
            spacing: [0.0; MAX_DIM],
            modes,
        };
        for a in 0..dim {
            let (lo, hi) = bounds[a];
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a}: bounds [{lo}, {hi}] are not an interval"
                )));
            }
            if nodes[a] < 2 {
                return Err(Error::InvalidGrid(format!("axis {a}: at least 2 nodes required")));
            }
            g.lower[a] = lo;
            g.upper[a] = hi;
            g.nodes[a] = nodes[a];
            g.spacing[a] = (hi - lo) / (nodes[a] - 1) as f64;
        }
        Ok(g)
    }

    /// Largest node count per axis whose spacing is at least `target_dx`,
    /// so Courant numbers computed with `target_dx` stay bounded.
    pub fn nodes_for_spacing(low: f64, high: f64, target_dx: f64) -> usize {
        let cells = ((high - low) / target_dx * (1.0 + 1e-12)).floor() as usize;
        cells.max(1) + 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn bounds(&self, axis: usize) -> (f64, f64) {
        (self.lower[axis], self.upper[axis])
    }

    pub fn nodes_per_axis(&self, axis: usize) -> usize {
        self.nodes[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    /// `n`, the number of nodes of one mode.
    pub fn nodes_per_mode(&self) -> usize {
        self.nodes[..self.dim].iter().product()
    }

    /// `n·m`, the length of a value vector.
    pub fn len(&self) -> usize {
        self.nodes_per_mode() * self.modes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 1-based flat position `(k-1)·n + i` of node `i` in mode `k` (both
    /// 1-based).
    pub fn flat_index(&self, node: usize, mode: usize) -> Result<usize> {
        let n = self.nodes_per_mode();
        if node == 0 || node > n {
            return Err(Error::IndexOutOfRange(format!("node {node} not in 1..={n}")));
        }
        if mode == 0 || mode > self.modes {
            return Err(Error::IndexOutOfRange(format!("mode {mode} not in 1..={}", self.modes)));
        }
        Ok((mode - 1) * n + node)
    }

    /// 0-based storage offset of node `i` in mode `k` (both 0-based).
    #[inline]
    pub fn offset(&self, node: usize, mode: usize) -> usize {
        mode * self.nodes_per_mode() + node
    }

    /// Inverse of [`Grid::offset`]: `(node, mode)`.
    #[inline]
    pub fn split_offset(&self, offset: usize) -> (usize, usize) {
        let n = self.nodes_per_mode();
        (offset % n, offset / n)
    }

    /// Per-axis indices of a node (0-based).
    pub fn axis_indices(&self, node: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rest = node;
        for a in 0..self.dim {
            idx[a] = rest % self.nodes[a];
            rest /= self.nodes[a];
        }
        idx
    }

    pub fn coordinate(&self, axis: usize, index: usize) -> f64 {
        if index + 1 == self.nodes[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + self.spacing[axis] * index as f64
        }
    }

    /// Coordinates of a node; entries past `dim` are zero.
    pub fn node_coords(&self, node: usize) -> [f64; MAX_DIM] {
        let idx = self.axis_indices(node);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = self.coordinate(a, idx[a]);
        }
        x
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lower[a] && x[a] <= self.upper[a])
    }

    /// Componentwise projection onto the grid box; the flag reports whether
    /// the point moved.
    pub fn clamp_to_domain(&self, x: &[f64]) -> ([f64; MAX_DIM], bool) {
        let mut out = [0.0; MAX_DIM];
        let mut moved = false;
        for a in 0..self.dim {
            let c = x[a].clamp(self.lower[a], self.upper[a]);
            moved |= c != x[a];
            out[a] = c;
        }
        (out, moved)
    }

    fn axis_cell(&self, axis: usize, x: f64) -> (usize, f64) {
        let n = self.nodes[axis];
        let mut t = (x - self.lower[axis]) / self.spacing[axis];
        let r = t.round();
        if (t - r).abs() < SNAP {
            t = r;
        }
        let t = t.clamp(0.0, (n - 1) as f64);
        let j = (t.floor() as usize).min(n - 2);
        (j, t - j as f64)
    }

    /// Interpolation stencil (mode-local node indices) of a point inside the
    /// box. Weights are nonnegative and sum to one.
    pub fn stencil(&self, x: &[f64]) -> Stencil {
        let mut s = Stencil {
            len: 0,
            nodes: [0; 1 << MAX_DIM],
            weights: [0.0; 1 << MAX_DIM],
        };
        match self.dim {
            1 => {
                let (j, w) = self.axis_cell(0, x[0]);
                if w == 0.0 {
                    s.len = 1;
                    s.nodes[0] = j;
                    s.weights[0] = 1.0;
                } else {
                    s.len = 2;
                    s.nodes[0] = j;
                    s.nodes[1] = j + 1;
                    s.weights[0] = 1.0 - w;
                    s.weights[1] = w;
                }
            }
            _ => {
                let (j0, w0) = self.axis_cell(0, x[0]);
                let (j1, w1) = self.axis_cell(1, x[1]);
                let nx = self.nodes[0];
                let base = j1 * nx + j0;
                s.len = 4;
                s.nodes = [base, base + 1, base + nx, base + nx + 1];
                s.weights = [(1.0 - w0) * (1.0 - w1), w0 * (1.0 - w1), (1.0 - w0) * w1, w0 * w1];
            }
        }
        s
    }
}

/// Flat value vector `(v^(1), …, v^(m))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub values: Vec<f64>,
}

impl ValueField {
    pub fn new(values: Vec<f64>) -> Self {
        ValueField { values }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        ValueField {
            values: vec![value; grid.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Node values of one mode (0-based).
    pub fn mode_values<'a>(&'a self, grid: &Grid, mode: usize) -> &'a [f64] {
        let n = grid.nodes_per_mode();
        &self.values[mode * n..(mode + 1) * n]
    }

    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the CSV layout `mode, i_1..i_d, x_1..x_d, value` with 1-based
    /// indices, one row per node in flat order.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut w: W) -> Result<()> {
        let d = grid.dim();
        let mut header = vec!["mode".to_string()];
        header.extend((1..=d).map(|a| format!("i{a}")));
        header.extend((1..=d).map(|a| format!("x{a}")));
        header.push("value".into());
        writeln!(w, "{}", header.join(","))?;
        let n = grid.nodes_per_mode();
        for (off, v) in self.values.iter().enumerate() {
            let (node, mode) = (off % n, off / n);
            let idx = grid.axis_indices(node);
            let x = grid.node_coords(node);
            let mut row = vec![(mode + 1).to_string()];
            row.extend((0..d).map(|a| (idx[a] + 1).to_string()));
            row.extend((0..d).map(|a| fmt_f64(x[a])));
            row.push(fmt_f64(*v));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Interpolated value of mode `q` at `x`; fails outside the grid box.
pub fn interpolate(field: &ValueField, grid: &Grid, x: &[f64], q: usize) -> Result<f64> {
    if x.len() < grid.dim() || !grid.contains(x) {
        return Err(Error::OutsideDomain { point: x.to_vec() });
    }
    if q >= grid.modes() {
        return Err(Error::IndexOutOfRange(format!("mode {q}")));
    }
    Ok(grid.stencil(x).apply(field.mode_values(grid, q)))
}

/// Round-trip float formatting (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line() -> Grid {
        Grid::uniform(&[(0.0, 1.0)], &[11], 2).unwrap()
    }

    #[test]
    fn flat_index_matches_layout() {
        let g = Grid::uniform(&[(0.0, 1.0)], &[100], 2).unwrap();
        assert_eq!(g.flat_index(5, 1).unwrap(), 5);
        assert_eq!(g.flat_index(5, 2).unwrap(), 105);
        assert_eq!(g.flat_index(100, 2).unwrap(), 200);
        assert!(g.flat_index(0, 1).is_err());
        assert!(g.flat_index(101, 1).is_err());
        assert!(g.flat_index(1, 3).is_err());
    }

    #[test]
    fn reproduces_node_values() {
        let g = line();
        let mut f = ValueField::constant(&g, 0.0);
        f.values[4] = 3.7;
        let x = g.node_coords(4);
        assert_eq!(interpolate(&f, &g, &x[..1], 0).unwrap(), 3.7);
    }

    #[test]
    fn linear_midpoint() {
        let g = Grid::uniform(&[(0.0, 1.0)], &[2], 1).unwrap();
        let f = ValueField::new(vec![0.0, 1.0]);
        assert_eq!(interpolate(&f, &g, &[0.5], 0).unwrap(), 0.5);
    }

    #[test]
    fn bilinear_cell_center() {
        let g = Grid::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[2, 2], 1).unwrap();
        // (0,0)=0, (1,0)=1, (0,1)=1, (1,1)=2
        let f = ValueField::new(vec![0.0, 1.0, 1.0, 2.0]);
        assert_eq!(interpolate(&f, &g, &[0.5, 0.5], 0).unwrap(), 1.0);
    }

    #[test]
    fn outside_point_is_rejected() {
        let g = line();
        let f = ValueField::constant(&g, 1.0);
        assert!(matches!(
            interpolate(&f, &g, &[1.5], 0),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn clamping() {
        let g = Grid::uniform(&[(-1.0, 1.0)], &[5], 1).unwrap();
        assert_eq!(g.clamp_to_domain(&[0.3]), ([0.3, 0.0], false));
        assert_eq!(g.clamp_to_domain(&[1.3]), ([1.0, 0.0], true));
        let g2 = Grid::uniform(&[(0.0, 2.0), (0.0, 2.0)], &[3, 3], 1).unwrap();
        assert_eq!(g2.clamp_to_domain(&[2.5, -0.1]), ([2.0, 0.0], true));
    }

    #[test]
    fn last_node_sits_on_upper_bound() {
        let g = Grid::uniform(&[(-1.0, 1.0)], &[100], 1).unwrap();
        assert_eq!(g.node_coords(99)[0], 1.0);
        assert_eq!(g.node_coords(0)[0], -1.0);
    }

    #[test]
    fn spacing_rule_never_shrinks_below_target() {
        let n = Grid::nodes_for_spacing(-1.0, 1.0, 0.0067 * 3.0);
        assert_eq!(n, 100);
        assert!(2.0 / (n - 1) as f64 >= 0.0201);
        assert_eq!(Grid::nodes_for_spacing(0.0, 1.0, 0.1), 11);
    }

    #[test]
    fn csv_rows_follow_flat_order() {
        let g = Grid::uniform(&[(0.0, 1.0)], &[3], 2).unwrap();
        let f = ValueField::new((0..6).map(|v| v as f64).collect());
        let mut buf = Vec::new();
        f.write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "mode,i1,x1,value");
        assert_eq!(lines.len(), 7);
        assert!(lines[4].starts_with("2,1,"));
    }

    fn grid2() -> Grid {
        Grid::uniform(&[(-1.0, 2.0), (0.0, 1.0)], &[6, 5], 2).unwrap()
    }

    proptest! {
        #[test]
        fn weights_are_convex(x in -1.0f64..=2.0, y in 0.0f64..=1.0) {
            let s = grid2().stencil(&[x, y]);
            let sum: f64 = s.weights[..s.len].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-14);
            prop_assert!(s.weights[..s.len].iter().all(|w| *w >= 0.0));
        }

        #[test]
        fn monotone_and_shift_invariant(
            base in proptest::collection::vec(-5.0f64..5.0, 60),
            bump in proptest::collection::vec(0.0f64..1.0, 60),
            shift in -10.0f64..10.0,
            x in -1.0f64..=2.0,
            y in 0.0f64..=1.0,
            q in 0usize..2,
        ) {
            let g = grid2();
            let lo = ValueField::new(base.clone());
            let hi = ValueField::new(base.iter().zip(&bump).map(|(a, b)| a + b).collect());
            let shifted = ValueField::new(base.iter().map(|a| a + shift).collect());
            let p = [x, y];
            let vlo = interpolate(&lo, &g, &p, q).unwrap();
            let vhi = interpolate(&hi, &g, &p, q).unwrap();
            let vsh = interpolate(&shifted, &g, &p, q).unwrap();
            prop_assert!(vlo <= vhi + 1e-12);
            prop_assert!((vsh - (vlo + shift)).abs() < 1e-12);
        }
    }
}
