//! Time grids and the continuous piecewise-linear (cG(1)) time discretization.
//!
//! Trial functions vanish at `t = 0`; the Galerkin test space is the same
//! set of hat functions `N_1..N_N`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Fnv;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    pub id: u64,
    pub parent: Option<u64>,
    pub nodes: Vec<f64>,
}

/// Time setting of a discretization.
#[derive(Clone, Debug)]
pub enum TimeDisc {
    Steady,
    Grid(Arc<TimeGrid>),
}

impl TimeDisc {
    pub fn grid(&self) -> Option<&Arc<TimeGrid>> {
        match self {
            TimeDisc::Steady => None,
            TimeDisc::Grid(g) => Some(g),
        }
    }

    pub fn is_steady(&self) -> bool {
        matches!(self, TimeDisc::Steady)
    }

    pub fn n_steps(&self) -> usize {
        self.grid().map_or(0, |g| g.n_steps())
    }
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::InvalidProblem("time grid needs horizon > 0 and steps >= 1".into()));
        }
        let nodes = (0..=steps).map(|n| horizon * n as f64 / steps as f64).collect();
        Self::from_nodes(nodes, None)
    }

    pub fn from_nodes(nodes: Vec<f64>, parent: Option<u64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidProblem("time nodes must start at 0 and increase".into()));
        }
        let mut h = Fnv::new();
        for t in &nodes {
            h.write_u64(t.to_bits());
        }
        Ok(TimeGrid { id: h.finish(), parent, nodes })
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn dt_max(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Splits every step into `factor` equal sub-steps.
    pub fn refine(&self, factor: usize) -> TimeGrid {
        let factor = factor.max(1);
        let mut nodes = Vec::with_capacity(self.n_steps() * factor + 1);
        nodes.push(0.0);
        for w in self.nodes.windows(2) {
            for k in 1..=factor {
                if k == factor {
                    nodes.push(w[1]);
                } else {
                    nodes.push(w[0] + (w[1] - w[0]) * k as f64 / factor as f64);
                }
            }
        }
        TimeGrid::from_nodes(nodes, Some(self.id)).expect("refined nodes increase")
    }

    pub fn is_nested_in(&self, coarse: &TimeGrid) -> bool {
        let tol = 1e-12 * coarse.horizon();
        if (self.horizon() - coarse.horizon()).abs() > tol {
            return false;
        }
        coarse.nodes.iter().all(|&t| {
            let k = self.nodes.partition_point(|&s| s < t - tol);
            k < self.nodes.len() && (self.nodes[k] - t).abs() <= tol
        })
    }

    /// Index `k` of the step `[t_k, t_{k+1}]` containing `t`.
    pub fn locate(&self, t: f64) -> usize {
        let n = self.n_steps();
        self.nodes.partition_point(|&s| s <= t).saturating_sub(1).min(n - 1)
    }

    pub fn eval(&self, v: &[f64], t: f64) -> f64 {
        let k = self.locate(t);
        let (t0, t1) = (self.nodes[k], self.nodes[k + 1]);
        let w = (t - t0) / (t1 - t0);
        v[k] * (1.0 - w) + v[k + 1] * w
    }

    pub fn eval_derivative(&self, v: &[f64], t: f64) -> f64 {
        let k = self.locate(t);
        (v[k + 1] - v[k]) / (self.nodes[k + 1] - self.nodes[k])
    }

    /// Exact transfer of a nodal time function to a nested finer grid.
    pub fn transfer(&self, v: &[f64], fine: &TimeGrid) -> Result<Vec<f64>> {
        if v.len() != self.nodes.len() {
            return Err(Error::InvalidArgument("time function length differs from grid".into()));
        }
        if fine.id == self.id {
            return Ok(v.to_vec());
        }
        if !fine.is_nested_in(self) {
            return Err(Error::NotNested(format!("time grid {:016x} not a refinement of {:016x}", fine.id, self.id)));
        }
        Ok(fine.nodes.iter().map(|&t| self.eval(v, t)).collect())
    }

    /// `Mt v` with `Mt[n][m] = int N_n N_m`, over all nodes.
    pub fn mass_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (k, w) in self.nodes.windows(2).enumerate() {
            let h = w[1] - w[0];
            out[k] += h / 3.0 * v[k] + h / 6.0 * v[k + 1];
            out[k + 1] += h / 6.0 * v[k] + h / 3.0 * v[k + 1];
        }
        out
    }

    /// `D v` with `D[n][m] = int N_m' N_n`, over all nodes.
    pub fn deriv_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for k in 0..self.n_steps() {
            let dv = v[k + 1] - v[k];
            out[k] += 0.5 * dv;
            out[k + 1] += 0.5 * dv;
        }
        out
    }

    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        dot(v, &self.mass_apply(v)).max(0.0).sqrt()
    }

    /// `int g N_n dt` for all nodes, integrated piecewise between `breaks`.
    pub fn moments(&self, g: &dyn Fn(f64) -> f64, breaks: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        let q = TimeQuadrature::new(&merge_breaks(&self.nodes, breaks), 0.0, self.horizon());
        for (&t, &w) in q.points.iter().zip(&q.weights) {
            let k = self.locate(t);
            let (t0, t1) = (self.nodes[k], self.nodes[k + 1]);
            let s = (t - t0) / (t1 - t0);
            let gv = g(t) * w;
            out[k] += gv * (1.0 - s);
            out[k + 1] += gv * s;
        }
        out
    }

    /// L2 projection onto continuous piecewise-linear functions (all nodes).
    pub fn project(&self, g: &dyn Fn(f64) -> f64, breaks: &[f64]) -> Vec<f64> {
        let rhs = self.moments(g, breaks);
        let n = self.nodes.len();
        let mut sub = vec![0.0; n - 1];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n - 1];
        for (k, w) in self.nodes.windows(2).enumerate() {
            let h = w[1] - w[0];
            diag[k] += h / 3.0;
            diag[k + 1] += h / 3.0;
            sub[k] += h / 6.0;
            sup[k] += h / 6.0;
        }
        tridiag_solve(&sub, &diag, &sup, &rhs).expect("time mass matrix is SPD")
    }

    /// Projection of the piecewise-constant derivative of a nodal function.
    pub fn project_derivative(&self, v: &[f64]) -> Vec<f64> {
        let g = |t: f64| self.eval_derivative(v, t);
        self.project(&g, &[])
    }

    /// L2 projection onto the hats `N_1..N_N` (value 0 at `t = 0`), i.e. the
    /// trial space of the time scheme. Moments against those hats are kept.
    pub fn project_pinned(&self, g: &dyn Fn(f64) -> f64, breaks: &[f64]) -> Vec<f64> {
        let rhs = self.moments(g, breaks);
        let n = self.nodes.len() - 1;
        let mut sub = vec![0.0; n - 1];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n - 1];
        for (k, w) in self.nodes.windows(2).enumerate() {
            let h = w[1] - w[0];
            if k > 0 {
                diag[k - 1] += h / 3.0;
                sub[k - 1] += h / 6.0;
                sup[k - 1] += h / 6.0;
            }
            diag[k] += h / 3.0;
        }
        let mut out = vec![0.0];
        out.extend(tridiag_solve(&sub, &diag, &sup, &rhs[1..]).expect("time mass matrix is SPD"));
        out
    }

    pub fn project_derivative_pinned(&self, v: &[f64]) -> Vec<f64> {
        let g = |t: f64| self.eval_derivative(v, t);
        self.project_pinned(&g, &[])
    }
}

/// Solves `a int lam' lam* + b int lam lam* = <rhs, lam*>` for all test hats
/// `N_1..N_N`, with `lam(0) = 0`. `rhs` holds the tested load for every node
/// (entry 0 is ignored). Returns nodal values including `lam_0 = 0`.
pub fn solve_time_ode(grid: &TimeGrid, a: f64, b: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = grid.n_steps();
    if rhs.len() != n + 1 {
        return Err(Error::InvalidArgument("time load length differs from grid".into()));
    }
    let mut sub = vec![0.0; n.saturating_sub(1)];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n.saturating_sub(1)];
    // Row r corresponds to node r + 1.
    for (k, w) in grid.nodes.windows(2).enumerate() {
        let h = w[1] - w[0];
        // element nodes k, k+1; local matrix a*[[-1/2, 1/2], [-1/2, 1/2]] + b*h/6*[[2, 1], [1, 2]]
        let loc = [[-0.5 * a + b * h / 3.0, 0.5 * a + b * h / 6.0], [-0.5 * a + b * h / 6.0, 0.5 * a + b * h / 3.0]];
        for (li, ni) in [k, k + 1].into_iter().enumerate() {
            if ni == 0 {
                continue;
            }
            for (lj, nj) in [k, k + 1].into_iter().enumerate() {
                if nj == 0 {
                    continue;
                }
                let (r, c) = (ni - 1, nj - 1);
                let v = loc[li][lj];
                if r == c {
                    diag[r] += v;
                } else if c == r + 1 {
                    sup[r] += v;
                } else {
                    sub[c] += v;
                }
            }
        }
    }
    let x = tridiag_solve(&sub, &diag, &sup, &rhs[1..])?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    out.extend(x);
    Ok(out)
}

/// Same as [`solve_time_ode`] with a forcing function `f(t)` tested against the hats.
pub fn solve_time_ode_forcing(grid: &TimeGrid, a: f64, b: f64, f: &dyn Fn(f64) -> f64) -> Result<Vec<f64>> {
    let rhs = grid.moments(f, &[]);
    solve_time_ode(grid, a, b, &rhs)
}

/// Tridiagonal solve with partial pivoting. `sub[i] = A[i+1][i]`,
/// `sup[i] = A[i][i+1]`.
pub fn tridiag_solve(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(vec![]);
    }
    let mut u0 = diag.to_vec();
    let mut u1 = vec![0.0; n];
    u1[..n - 1].copy_from_slice(sup);
    let mut u2 = vec![0.0; n];
    let mut b = rhs.to_vec();
    let scale = diag.iter().chain(sub).chain(sup).fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = scale * 1e-15;
    for i in 0..n - 1 {
        let mut row = [sub[i], u0[i + 1], u1[i + 1]];
        if row[0].abs() > u0[i].abs() {
            let old = [u0[i], u1[i], u2[i]];
            u0[i] = row[0];
            u1[i] = row[1];
            u2[i] = row[2];
            row = old;
            b.swap(i, i + 1);
        }
        if u0[i].abs() <= tiny {
            return Err(Error::Singular("tridiagonal pivot vanished".into()));
        }
        let f = row[0] / u0[i];
        u0[i + 1] = row[1] - f * u1[i];
        u1[i + 1] = row[2] - f * u2[i];
        b[i + 1] -= f * b[i];
    }
    if u0[n - 1].abs() <= tiny {
        return Err(Error::Singular("tridiagonal pivot vanished".into()));
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        if i + 1 < n {
            s -= u1[i] * x[i + 1];
        }
        if i + 2 < n {
            s -= u2[i] * x[i + 2];
        }
        x[i] = s / u0[i];
    }
    Ok(x)
}

/// Composite Gauss rule over `[t0, t1]` split at the given break points.
#[derive(Clone, Debug)]
pub struct TimeQuadrature {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

impl TimeQuadrature {
    pub fn new(breaks: &[f64], t0: f64, t1: f64) -> Self {
        let mut b: Vec<f64> = breaks.iter().copied().filter(|&t| t > t0 && t < t1).collect();
        b.push(t0);
        b.push(t1);
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let tol = 1e-13 * (t1 - t0).abs().max(1.0);
        b.dedup_by(|x, y| (*x - *y).abs() <= tol);
        let mut points = Vec::with_capacity(4 * b.len());
        let mut weights = Vec::with_capacity(4 * b.len());
        for w in b.windows(2) {
            let (c, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            for (x, wt) in GAUSS4 {
                points.push(c + h * x);
                weights.push(h * wt);
            }
        }
        TimeQuadrature { points, weights }
    }

    /// Single point of unit weight, used for steady problems.
    pub fn steady() -> Self {
        TimeQuadrature { points: vec![0.0], weights: vec![1.0] }
    }
}

pub fn merge_breaks(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = a.iter().chain(b).copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v.dedup();
    v
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
