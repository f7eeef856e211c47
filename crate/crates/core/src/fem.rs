//! P1/Q1 finite element operators with homogeneous Dirichlet conditions and
//! hanging-node constraints condensed out.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{SparseSym, SpdSolver};
use crate::mesh::SpaceMesh;
use crate::problem::{Load, Problem};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss(n: usize) -> &'static [(f64, f64)] {
    const G1: [(f64, f64); 1] = [(0.0, 2.0)];
    const G2: [(f64, f64); 2] = [(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)];
    const G3: [(f64, f64); 3] = [
        (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
        (0.0, 0.888_888_888_888_888_9),
        (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    ];
    const G4: [(f64, f64); 4] = [
        (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    ];
    match n {
        1 => &G1,
        2 => &G2,
        3 => &G3,
        _ => &G4,
    }
}

/// Tensor Gauss points `(x, y, weight)` on a box `[x0, x1] x [y0, y1]`
/// (1D when `dim == 1`).
pub fn box_quadrature(dim: usize, b: [f64; 4], n: usize) -> Vec<(f64, f64, f64)> {
    let g = gauss(n);
    let (cx, ax) = (0.5 * (b[0] + b[1]), 0.5 * (b[1] - b[0]));
    if dim == 1 {
        return g.iter().map(|&(s, w)| (cx + ax * s, 0.0, w * ax)).collect();
    }
    let (cy, ay) = (0.5 * (b[2] + b[3]), 0.5 * (b[3] - b[2]));
    let mut out = Vec::with_capacity(g.len() * g.len());
    for &(t, wt) in g {
        for &(s, ws) in g {
            out.push((cx + ax * s, cy + ay * t, ws * wt * ax * ay));
        }
    }
    out
}

/// Shape values and gradients of element `e` at `(x, y)`.
pub fn shape(mesh: &SpaceMesh, e: usize, x: f64, y: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let b = mesh.bounds[e];
    let hx = b[1] - b[0];
    let s = (x - b[0]) / hx;
    if mesh.dim() == 1 {
        return ([1.0 - s, s, 0.0, 0.0], [[-1.0 / hx, 0.0], [1.0 / hx, 0.0], [0.0; 2], [0.0; 2]]);
    }
    let hy = b[3] - b[2];
    let t = (y - b[2]) / hy;
    let n = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
    let g = [
        [-(1.0 - t) / hx, -(1.0 - s) / hy],
        [(1.0 - t) / hx, -s / hy],
        [t / hx, s / hy],
        [-t / hx, (1.0 - s) / hy],
    ];
    (n, g)
}

/// Map from mesh nodes to free degrees of freedom. Dirichlet nodes are zero,
/// hanging nodes are the mean of their (recursively resolved) parents.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub n_dofs: usize,
    pub node_dof: Vec<Option<usize>>,
    pub expand: Vec<Vec<(usize, f64)>>,
}

impl DofMap {
    pub fn new(mesh: &SpaceMesh) -> Self {
        let n = mesh.n_nodes();
        let mut is_hanging = vec![None; n];
        for h in &mesh.hanging {
            is_hanging[h.node] = Some(h.parents);
        }
        let mut node_dof = vec![None; n];
        let mut n_dofs = 0;
        for i in 0..n {
            if !mesh.dirichlet[i] && is_hanging[i].is_none() {
                node_dof[i] = Some(n_dofs);
                n_dofs += 1;
            }
        }
        fn resolve(i: usize, mesh: &SpaceMesh, hang: &[Option<[usize; 2]>], dof: &[Option<usize>], w: f64, out: &mut Vec<(usize, f64)>) {
            if mesh.dirichlet[i] {
                return;
            }
            match hang[i] {
                Some([a, b]) => {
                    resolve(a, mesh, hang, dof, 0.5 * w, out);
                    resolve(b, mesh, hang, dof, 0.5 * w, out);
                }
                None => out.push((dof[i].expect("free node"), w)),
            }
        }
        let mut expand = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = Vec::new();
            resolve(i, mesh, &is_hanging, &node_dof, 1.0, &mut v);
            v.sort_by_key(|p| p.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(v.len());
            for (d, w) in v {
                match merged.last_mut() {
                    Some(last) if last.0 == d => last.1 += w,
                    _ => merged.push((d, w)),
                }
            }
            expand.push(merged);
        }
        DofMap { n_dofs, node_dof, expand }
    }

    /// Nodal field from dof values.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.expand.iter().map(|row| row.iter().map(|&(d, w)| w * x[d]).sum()).collect()
    }

    /// Transpose of [`DofMap::expand`]: tested nodal vector to dof space.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs];
        for (row, vi) in self.expand.iter().zip(v) {
            for &(d, w) in row {
                out[d] += w * vi;
            }
        }
        out
    }
}

/// Mass, stiffness and load operators on one mesh.
pub struct SpaceOperators {
    pub mesh: Arc<SpaceMesh>,
    pub dofs: DofMap,
    /// Unconstrained node-by-node matrices.
    pub m_full: SparseSym,
    pub k_full: SparseSym,
    /// Condensed matrices on free dofs (same sparsity pattern).
    pub m: SparseSym,
    pub k: SparseSym,
    /// Tested load vectors `L_s(phi_n)` for every node.
    pub loads: Vec<Vec<f64>>,
    k_solver: SpdSolver,
}

impl SpaceOperators {
    pub fn new(problem: &Problem, mesh: Arc<SpaceMesh>) -> Result<Self> {
        let dofs = DofMap::new(&mesh);
        let n = mesh.n_nodes();
        let npe = mesh.nodes_per_element();
        let mut tm = Vec::new();
        let mut tk = Vec::new();
        for e in 0..mesh.n_elements() {
            let nodes = mesh.element_nodes(e);
            let mut me = [[0.0; 4]; 4];
            let mut ke = [[0.0; 4]; 4];
            for (x, y, w) in box_quadrature(mesh.dim(), mesh.bounds[e], 2) {
                let (nv, g) = shape(&mesh, e, x, y);
                for a in 0..npe {
                    for b in 0..npe {
                        me[a][b] += w * nv[a] * nv[b];
                        ke[a][b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    }
                }
            }
            for a in 0..npe {
                for b in 0..npe {
                    tm.push((nodes[a], nodes[b], me[a][b]));
                    tk.push((nodes[a], nodes[b], ke[a][b]));
                }
            }
        }
        let m_full = SparseSym::from_triplets(n, tm);
        let k_full = SparseSym::from_triplets(n, tk);
        let m = condense(&m_full, &dofs);
        let k = condense(&k_full, &dofs);
        let k_solver = SpdSolver::new(&k)?;
        let loads = problem.loads.iter().map(|l| assemble_load(problem, &mesh, l)).collect();
        Ok(SpaceOperators { mesh, dofs, m_full, k_full, m, k, loads, k_solver })
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    /// Solves `(a M + b K) psi = rhs` where `rhs` is a tested nodal vector.
    pub fn solve_space(&self, a: f64, b: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        if !(a >= 0.0 && b > 0.0) && !(a > 0.0 && b >= 0.0) {
            return Err(Error::Singular(format!("space operator {a} M + {b} K is not SPD")));
        }
        let r = self.dofs.restrict(rhs);
        let x = if a == 0.0 {
            self.k_solver.solve(&r).iter().map(|v| v / b).collect()
        } else {
            SpdSolver::new(&self.m.lincomb(a, &self.k, b))?.solve(&r)
        };
        Ok(self.dofs.expand(&x))
    }

    /// Steady solve `K w = rhs`.
    pub fn solve_k(&self, rhs: &[f64]) -> Vec<f64> {
        self.dofs.expand(&self.k_solver.solve(&self.dofs.restrict(rhs)))
    }

    pub fn m_apply(&self, v: &[f64]) -> Vec<f64> {
        self.m_full.matvec(v)
    }

    pub fn k_apply(&self, v: &[f64]) -> Vec<f64> {
        self.k_full.matvec(v)
    }

    /// `max_i |rhs_i - (aM + bK) psi|_i` over free dofs.
    pub fn residual_inf(&self, a: f64, b: f64, psi: &[f64], rhs: &[f64]) -> f64 {
        let mv = self.m_full.matvec(psi);
        let kv = self.k_full.matvec(psi);
        let r: Vec<f64> = rhs.iter().zip(mv.iter().zip(&kv)).map(|(f, (m, k))| f - a * m - b * k).collect();
        self.dofs.restrict(&r).iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

fn condense(a: &SparseSym, dofs: &DofMap) -> SparseSym {
    let mut t = Vec::with_capacity(a.vals.len());
    for i in 0..a.n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            let j = a.col_idx[k];
            for &(di, wi) in &dofs.expand[i] {
                for &(dj, wj) in &dofs.expand[j] {
                    t.push((di, dj, wi * wj * a.vals[k]));
                }
            }
        }
    }
    SparseSym::from_triplets(dofs.n_dofs, t)
}

/// Tested load vector of one load term for every node.
pub fn assemble_load(problem: &Problem, mesh: &SpaceMesh, load: &Load) -> Vec<f64> {
    let mut f = vec![0.0; mesh.n_nodes()];
    if let Some(body) = &load.body {
        add_body(mesh, &mut f, &|x, y| body.at_xy(x, y));
    }
    if let Some(q) = &load.prestress {
        add_prestress(mesh, &mut f, &|x, y| [q[0].at_xy(x, y), q[1].at_xy(x, y)]);
    }
    for part in &load.flux {
        for be in mesh.edges_with_tags(&part.tags) {
            add_edge(mesh, &mut f, be.nodes, &|x, y| part.density.at_xy(x, y));
        }
    }
    let _ = problem;
    f
}

/// Adds `int f phi_n` for all nodes.
pub fn add_body(mesh: &SpaceMesh, out: &mut [f64], f: &dyn Fn(f64, f64) -> f64) {
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        for (x, y, w) in box_quadrature(mesh.dim(), mesh.bounds[e], 4) {
            let fv = f(x, y) * w;
            if fv == 0.0 {
                continue;
            }
            let (nv, _) = shape(mesh, e, x, y);
            for (a, &n) in nodes.iter().enumerate() {
                out[n] += fv * nv[a];
            }
        }
    }
}

/// Adds `int q . grad phi_n` for all nodes.
pub fn add_prestress(mesh: &SpaceMesh, out: &mut [f64], q: &dyn Fn(f64, f64) -> [f64; 2]) {
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element_nodes(e);
        for (x, y, w) in box_quadrature(mesh.dim(), mesh.bounds[e], 4) {
            let qv = q(x, y);
            let (_, g) = shape(mesh, e, x, y);
            for (a, &n) in nodes.iter().enumerate() {
                out[n] += w * (qv[0] * g[a][0] + qv[1] * g[a][1]);
            }
        }
    }
}

/// Adds `int_edge g phi_n` for one boundary edge (a point in 1D).
pub fn add_edge(mesh: &SpaceMesh, out: &mut [f64], nodes: [usize; 2], g: &dyn Fn(f64, f64) -> f64) {
    let (pa, pb) = (mesh.nodes[nodes[0]], mesh.nodes[nodes[1]]);
    if nodes[0] == nodes[1] {
        out[nodes[0]] += g(pa[0], pa[1]);
        return;
    }
    let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
    for &(s, w) in gauss(4) {
        let u = 0.5 * (s + 1.0);
        let (x, y) = (pa[0] + u * (pb[0] - pa[0]), pa[1] + u * (pb[1] - pa[1]));
        let gv = g(x, y) * w * 0.5 * len;
        out[nodes[0]] += gv * (1.0 - u);
        out[nodes[1]] += gv * u;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ProblemSpec;

    fn square(n: usize) -> Problem {
        let h = 1.0 / n as f64;
        Problem::new(
            ProblemSpec::from_json_str(&format!(
                r#"{{
            "domain": {{"kind": "quads", "cell": [{h}, {h}], "cells": [{n}, {n}], "dirichlet": ["left", "right", "bottom", "top"]}},
            "time": {{"steady": true}},
            "coefficients": {{"k": {{"base": 1.0}}}},
            "loads": [{{"body": 1.0}}]
        }}"#
            ))
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn mass_sums_to_area_and_stiffness_kills_constants() {
        let p = square(4);
        let ops = SpaceOperators::new(&p, Arc::new(p.base_mesh())).unwrap();
        let ones = vec![1.0; ops.n_nodes()];
        assert!((ops.m_full.quad(&ones, &ones) - 1.0).abs() < 1e-13);
        assert!(ops.k_apply(&ones).iter().all(|v| v.abs() < 1e-13));
        assert!((ops.loads[0].iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn hanging_mesh_reproduces_bilinear_data() {
        // Interpolating a global bilinear function is exact on any nested mesh,
        // so the constrained field must match it at hanging nodes.
        let p = square(2);
        let base = p.base_mesh();
        let mut marks = vec![false; base.n_elements()];
        marks[0] = true;
        let mesh = base.refine(&marks).unwrap();
        assert!(!mesh.hanging.is_empty());
        let dofs = DofMap::new(&mesh);
        let f = |x: f64, y: f64| x * (1.0 - x) * y;
        let x: Vec<f64> = (0..mesh.n_nodes())
            .filter_map(|i| dofs.node_dof[i].map(|_| f(mesh.nodes[i][0], mesh.nodes[i][1])))
            .collect();
        let nodal = dofs.expand(&x);
        for h in &mesh.hanging {
            let [a, b] = h.parents;
            assert!((nodal[h.node] - 0.5 * (nodal[a] + nodal[b])).abs() < 1e-15);
        }
    }

    #[test]
    fn poisson_solution_converges() {
        // -lap u = 2 pi^2 sin(pi x) sin(pi y)
        let err = |n: usize| {
            let p = square(n);
            let mesh = Arc::new(p.base_mesh());
            let ops = SpaceOperators::new(&p, mesh.clone()).unwrap();
            let pi = std::f64::consts::PI;
            let mut f = vec![0.0; mesh.n_nodes()];
            add_body(&mesh, &mut f, &|x, y| 2.0 * pi * pi * (pi * x).sin() * (pi * y).sin());
            let u = ops.solve_k(&f);
            mesh.nodes.iter().zip(&u).map(|(p, v)| (v - (pi * p[0]).sin() * (pi * p[1]).sin()).abs()).fold(0.0, f64::max)
        };
        let (a, b) = (err(8), err(16));
        assert!(a / b > 3.5, "ratio {}", a / b);
    }
}
