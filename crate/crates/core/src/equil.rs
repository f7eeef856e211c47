//! Dual fields: FE-equilibrated fluxes of the loads and modes, their
//! element-equilibrated (fully admissible) counterparts, and the time
//! projection used by the truncation indicator.
//!
//! Element equilibration works in two steps. Edge tractions are found from
//! the extension condition: for every element `E` and corner hat `phi_i`,
//! `int_dE (tau . n) phi_i = int_E tau_h . grad phi_i - int_E f phi_i`, with
//! the unknowns being the moments of the traction against the end-point hats
//! of every edge segment (an element side, or half of one next to a hanging
//! node). Then each element receives a Raviart-Thomas field of degree one
//! (per sub-rectangle when a neighbour is finer) that carries those
//! tractions, has divergence `-f` projected onto Q1, and is closest to
//! `tau_h` in L2.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use crate::disc::Discretization;
use crate::error::{Error, Result};
use crate::expr::Function;
use crate::fem::{box_quadrature, gauss, shape};
use crate::linalg::{pinv_solve, ConstrainedLsq};
use crate::mesh::{SpaceMesh, BOTTOM, LEFT, RIGHT, TOP};
use crate::pgd::LiftedMode;
use crate::problem::Problem;
use crate::time::{dot, TimeDisc};

/// Polynomial flux on one (sub-)rectangle. In 2D, with local coordinates
/// `s, t` in `[-1, 1]`, `tau_x = sum c[2a+b] s^a t^b` (`a < 3, b < 2`) and
/// `tau_y = sum c[6+3a+b] s^a t^b` (`a < 2, b < 3`). In 1D only
/// `tau = c0 + c1 s + c2 s^2` is used.
#[derive(Clone, Debug)]
pub struct FluxCell {
    pub bounds: [f64; 4],
    pub coef: [f64; 12],
}

impl FluxCell {
    fn local(&self, x: f64, y: f64) -> (f64, f64, f64, f64) {
        let b = self.bounds;
        let (ax, ay) = (0.5 * (b[1] - b[0]), 0.5 * (b[3] - b[2]));
        let s = (x - 0.5 * (b[0] + b[1])) / ax;
        let t = if ay > 0.0 { (y - 0.5 * (b[2] + b[3])) / ay } else { 0.0 };
        (s, t, ax, ay)
    }

    fn contains(&self, x: f64, y: f64, dim: usize) -> bool {
        let b = self.bounds;
        let tol = 1e-12 * (b[1] - b[0]).abs().max(1e-300);
        x >= b[0] - tol && x <= b[1] + tol && (dim == 1 || (y >= b[2] - tol && y <= b[3] + tol))
    }

    pub fn eval(&self, dim: usize, x: f64, y: f64) -> [f64; 2] {
        let (s, t, _, _) = self.local(x, y);
        let c = &self.coef;
        if dim == 1 {
            return [c[0] + c[1] * s + c[2] * s * s, 0.0];
        }
        let sp = [1.0, s, s * s];
        let tp = [1.0, t, t * t];
        let mut tx = 0.0;
        let mut ty = 0.0;
        for a in 0..3 {
            for b in 0..2 {
                tx += c[2 * a + b] * sp[a] * tp[b];
            }
        }
        for a in 0..2 {
            for b in 0..3 {
                ty += c[6 + 3 * a + b] * sp[a] * tp[b];
            }
        }
        [tx, ty]
    }

    pub fn div(&self, dim: usize, x: f64, y: f64) -> f64 {
        let (s, t, ax, ay) = self.local(x, y);
        let c = &self.coef;
        if dim == 1 {
            return (c[1] + 2.0 * c[2] * s) / ax;
        }
        (c[2] + c[3] * t + 2.0 * c[4] * s + 2.0 * c[5] * s * t) / ax + (c[7] + 2.0 * c[8] * t + c[10] * s + 2.0 * c[11] * s * t) / ay
    }
}

/// Element-wise polynomial vector field, plus an optional smooth offset
/// (the prestress of a load) added pointwise.
#[derive(Clone, Debug)]
pub struct FluxField {
    pub dim: usize,
    pub cells: Vec<Vec<FluxCell>>,
    pub offset: Option<[Function; 2]>,
}

impl FluxField {
    fn cell(&self, e: usize, x: f64, y: f64) -> &FluxCell {
        let cs = &self.cells[e];
        cs.iter().find(|c| c.contains(x, y, self.dim)).unwrap_or(&cs[0])
    }

    /// Value at a point of element `e`.
    pub fn eval(&self, e: usize, x: f64, y: f64) -> [f64; 2] {
        let mut v = self.cell(e, x, y).eval(self.dim, x, y);
        if let Some(q) = &self.offset {
            v[0] += q[0].at_xy(x, y);
            v[1] += q[1].at_xy(x, y);
        }
        v
    }

    /// Divergence of the polynomial part.
    pub fn div(&self, e: usize, x: f64, y: f64) -> f64 {
        self.cell(e, x, y).div(self.dim, x, y)
    }
}

/// Body density of a load handed to the equilibration.
#[derive(Clone, Debug)]
pub enum Body<'a> {
    Zero,
    Func(&'a Function),
    /// Nodal field on the mesh, interpolated element-wise.
    Nodal(Vec<f64>),
}

impl Body<'_> {
    fn at(&self, mesh: &SpaceMesh, e: usize, x: f64, y: f64) -> f64 {
        match self {
            Body::Zero => 0.0,
            Body::Func(f) => f.at_xy(x, y),
            Body::Nodal(v) => mesh.eval_nodal(v, e, x, y),
        }
    }
}

/// Load `L(v) = int f v + int_{Neumann} g v + int q . grad v` in the form the
/// equilibration needs.
#[derive(Clone, Debug)]
pub struct EetLoad<'a> {
    pub body: Body<'a>,
    /// Neumann densities by boundary tag (summed when repeated).
    pub neumann: Vec<(String, &'a Function)>,
    pub prestress: Option<&'a [Function; 2]>,
}

impl<'a> EetLoad<'a> {
    pub fn zero() -> Self {
        EetLoad { body: Body::Zero, neumann: vec![], prestress: None }
    }

    /// Load term `s` of the problem.
    pub fn of_load(problem: &'a Problem, s: usize) -> Self {
        let l = &problem.loads[s];
        let mut neumann = Vec::new();
        for part in &l.flux {
            for t in &part.tags {
                neumann.push((t.clone(), &part.density));
            }
        }
        EetLoad { body: l.body.as_ref().map_or(Body::Zero, Body::Func), neumann, prestress: l.prestress.as_ref() }
    }

    fn g(&self, tag: &str, x: f64, y: f64) -> f64 {
        self.neumann.iter().filter(|(t, _)| t == tag).map(|(_, f)| f.at_xy(x, y)).sum()
    }

    fn q(&self, x: f64, y: f64) -> [f64; 2] {
        match self.prestress {
            Some(q) => [q[0].at_xy(x, y), q[1].at_xy(x, y)],
            None => [0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum SegKind {
    Interior,
    Dirichlet,
    Neumann(String),
}

#[derive(Clone, Debug)]
struct Segment {
    /// End nodes in increasing coordinate (equal in 1D).
    ends: [usize; 2],
    /// Normal along x (always in 1D).
    vertical: bool,
    elems: Vec<(usize, f64)>,
    kind: SegKind,
}

impl Segment {
    fn length(&self, mesh: &SpaceMesh) -> f64 {
        let (a, b) = (mesh.nodes[self.ends[0]], mesh.nodes[self.ends[1]]);
        (b[0] - a[0]).abs() + (b[1] - a[1]).abs()
    }
}

/// Edge segments of a mesh and their incidence.
struct Topology {
    segs: Vec<Segment>,
    /// Per element and side: segment ids ordered along the side.
    sides: Vec<[Vec<usize>; 4]>,
}

fn side_corners(side: usize) -> (usize, usize) {
    match side {
        BOTTOM => (0, 1),
        RIGHT => (1, 2),
        TOP => (3, 2),
        _ => (0, 3),
    }
}

impl Topology {
    fn new(mesh: &SpaceMesh) -> Self {
        let dim = mesh.dim();
        let lay = &mesh.layout;
        let scale = [lay.cell[0] / (1u64 << mesh.max_level) as f64, lay.cell[1] / (1u64 << mesh.max_level) as f64];
        let key = |p: [f64; 2]| -> (i64, i64) {
            let x = ((p[0] - lay.origin[0]) / scale[0]).round() as i64;
            let y = if dim == 1 { 0 } else { ((p[1] - lay.origin[1]) / scale[1]).round() as i64 };
            (x, y)
        };
        let node_at: HashMap<(i64, i64), usize> = mesh.nodes.iter().enumerate().map(|(n, p)| (key(*p), n)).collect();
        let mut segs: Vec<Segment> = Vec::new();
        let mut index: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        let mut sides = vec![[vec![], vec![], vec![], vec![]]; mesh.n_elements()];
        let mut add = |ends: [usize; 2], vertical: bool, e: usize, eta: f64, segs: &mut Vec<Segment>| -> usize {
            let id = *index.entry(ends).or_insert_with(|| {
                segs.push(Segment { ends, vertical, elems: vec![], kind: SegKind::Interior });
                segs.len() - 1
            });
            segs[id].elems.push((e, eta));
            id
        };
        for e in 0..mesh.n_elements() {
            let nodes = mesh.element_nodes(e);
            if dim == 1 {
                sides[e][LEFT].push(add([nodes[0], nodes[0]], true, e, -1.0, &mut segs));
                sides[e][RIGHT].push(add([nodes[1], nodes[1]], true, e, 1.0, &mut segs));
                continue;
            }
            for side in [BOTTOM, RIGHT, TOP, LEFT] {
                let (ca, cb) = side_corners(side);
                let (a, b) = (nodes[ca], nodes[cb]);
                let (ka, kb) = (key(mesh.nodes[a]), key(mesh.nodes[b]));
                let vertical = side == LEFT || side == RIGHT;
                let eta = if side == RIGHT || side == TOP { 1.0 } else { -1.0 };
                let mid = if (ka.0 + kb.0) % 2 == 0 && (ka.1 + kb.1) % 2 == 0 {
                    node_at.get(&((ka.0 + kb.0) / 2, (ka.1 + kb.1) / 2)).copied()
                } else {
                    None
                };
                match mid {
                    Some(h) => {
                        let s0 = add([a, h], vertical, e, eta, &mut segs);
                        let s1 = add([h, b], vertical, e, eta, &mut segs);
                        sides[e][side] = vec![s0, s1];
                    }
                    None => sides[e][side] = vec![add([a, b], vertical, e, eta, &mut segs)],
                }
            }
        }
        for be in &mesh.boundary {
            for &s in &sides[be.element][be.side] {
                segs[s].kind = if mesh.dirichlet_tags().contains(&be.tag) { SegKind::Dirichlet } else { SegKind::Neumann(be.tag.clone()) };
            }
        }
        Topology { segs, sides }
    }
}

/// Diagnostics of one equilibration.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct EetReport {
    /// Largest residual of the traction systems relative to their data.
    pub traction_residual: f64,
    /// Largest residual of the element constraints relative to their data.
    pub element_residual: f64,
}

type LsqKey = (usize, usize, usize, u64, u64);

/// Element equilibration of `tau_h = grad w - q` for the given load; `w`
/// must satisfy the FE equilibrium `int grad w . grad v = L(v)`.
pub fn eet_equilibrate(mesh: &SpaceMesh, w: &[f64], load: &EetLoad) -> Result<(FluxField, EetReport)> {
    let dim = mesh.dim();
    let topo = Topology::new(mesh);
    let npe = mesh.nodes_per_element();
    let ne = mesh.n_elements();
    let tau_h = |e: usize, x: f64, y: f64| -> [f64; 2] {
        let g = mesh.grad_nodal(w, e, x, y);
        let q = load.q(x, y);
        [g[0] - q[0], g[1] - q[1]]
    };

    // Element data: Q1/P1 projection of the body load and the extension rhs.
    let mut fbar = vec![[0.0; 4]; ne];
    let mut ext = vec![[0.0; 4]; ne];
    for e in 0..ne {
        let mut mom = [0.0; 4];
        let mut mass = DMatrix::<f64>::zeros(npe, npe);
        let mut work = [0.0; 4];
        for (x, y, wq) in box_quadrature(dim, mesh.bounds[e], 4) {
            let (n, g) = shape(mesh, e, x, y);
            let f = load.body.at(mesh, e, x, y);
            let t = tau_h(e, x, y);
            for a in 0..npe {
                mom[a] += wq * f * n[a];
                work[a] += wq * (t[0] * g[a][0] + t[1] * g[a][1]);
                for b in 0..npe {
                    mass[(a, b)] += wq * n[a] * n[b];
                }
            }
        }
        let sol = mass.cholesky().expect("element mass is SPD").solve(&DVector::from_column_slice(&mom[..npe]));
        for a in 0..npe {
            fbar[e][a] = sol[a];
            ext[e][a] = work[a] - mom[a];
        }
    }

    // Traction unknowns: moments against the end hats of each segment.
    let per = if dim == 1 { 1 } else { 2 };
    let nu = topo.segs.len() * per;
    let mut bhat = vec![0.0; nu];
    let mut free = vec![true; nu];
    for (si, s) in topo.segs.iter().enumerate() {
        let len = s.length(mesh);
        let (pa, pb) = (mesh.nodes[s.ends[0]], mesh.nodes[s.ends[1]]);
        let along = |u: f64| [pa[0] + u * (pb[0] - pa[0]), pa[1] + u * (pb[1] - pa[1])];
        let nref = |v: [f64; 2]| if s.vertical { v[0] } else { v[1] };
        match &s.kind {
            SegKind::Neumann(tag) => {
                let eta = s.elems[0].1;
                if dim == 1 {
                    bhat[si] = eta * load.g(tag, pa[0], pa[1]);
                } else {
                    for &(gs, gw) in gauss(4) {
                        let u = 0.5 * (gs + 1.0);
                        let p = along(u);
                        let g = eta * load.g(tag, p[0], p[1]) * gw * 0.5 * len;
                        bhat[2 * si] += g * (1.0 - u);
                        bhat[2 * si + 1] += g * u;
                    }
                }
                for k in 0..per {
                    free[per * si + k] = false;
                }
            }
            _ => {
                // Mean FE normal flux over the adjacent elements.
                let ne_s = s.elems.len() as f64;
                for &(e, _) in &s.elems {
                    if dim == 1 {
                        bhat[si] += nref(tau_h(e, pa[0], pa[1])) / ne_s;
                    } else {
                        for &(gs, gw) in gauss(4) {
                            let u = 0.5 * (gs + 1.0);
                            let p = along(u);
                            let f = nref(tau_h(e, p[0], p[1])) * gw * 0.5 * len / ne_s;
                            bhat[2 * si] += f * (1.0 - u);
                            bhat[2 * si + 1] += f * u;
                        }
                    }
                }
            }
        }
    }

    // Extension-condition rows: (element, corner) -> [(unknown, coefficient)].
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::with_capacity(ne * npe);
    for e in 0..ne {
        let nodes = mesh.element_nodes(e);
        for i in 0..npe {
            let mut row = Vec::new();
            let ci = nodes[i];
            for side in 0..4 {
                let segs = &topo.sides[e][side];
                if segs.is_empty() {
                    continue;
                }
                let on_side = if dim == 1 {
                    (side == LEFT && i == 0) || (side == RIGHT && i == 1)
                } else {
                    let (a, b) = side_corners(side);
                    a == i || b == i
                };
                if !on_side {
                    continue;
                }
                for &si in segs {
                    let s = &topo.segs[si];
                    let eta = s.elems.iter().find(|(el, _)| *el == e).map(|x| x.1).unwrap();
                    for k in 0..per {
                        let node = s.ends[k];
                        let v = if node == ci {
                            1.0
                        } else if segs.len() == 2 && node == topo.segs[segs[0]].ends[1] {
                            0.5
                        } else {
                            0.0
                        };
                        if v != 0.0 {
                            row.push((per * si + k, eta * v));
                        }
                    }
                }
            }
            rows.push((row, ext[e][i]));
        }
    }

    // Connected components of the free unknowns.
    let mut parent: Vec<usize> = (0..nu).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (row, _) in &rows {
        let fr: Vec<usize> = row.iter().map(|r| r.0).filter(|&u| free[u]).collect();
        for w2 in fr.windows(2) {
            let (a, b) = (find(&mut parent, w2[0]), find(&mut parent, w2[1]));
            if a != b {
                parent[a] = b;
            }
        }
    }
    let mut comp_rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut comp_cols: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for u in 0..nu {
        if free[u] {
            let r = find(&mut parent, u);
            comp_cols.entry(r).or_default().push(u);
        }
    }
    for (ri, (row, _)) in rows.iter().enumerate() {
        if let Some(&(u, _)) = row.iter().find(|(u, _)| free[*u]) {
            let r = find(&mut parent, u);
            comp_rows.entry(r).or_default().push(ri);
        }
    }
    let data_scale = rows.iter().map(|r| r.1.abs()).chain(bhat.iter().map(|v| v.abs())).fold(1e-300, f64::max);
    let mut report = EetReport::default();
    for (root, cols) in &comp_cols {
        let rids = comp_rows.get(root).cloned().unwrap_or_default();
        if rids.is_empty() {
            continue;
        }
        let col_of: HashMap<usize, usize> = cols.iter().enumerate().map(|(k, &u)| (u, k)).collect();
        let mut a = DMatrix::zeros(rids.len(), cols.len());
        let mut r = DVector::zeros(rids.len());
        for (k, &ri) in rids.iter().enumerate() {
            let (row, rhs) = &rows[ri];
            r[k] = *rhs;
            for &(u, v) in row {
                match col_of.get(&u) {
                    Some(&c) => a[(k, c)] += v,
                    None => r[k] -= v * bhat[u],
                }
            }
        }
        let b0 = DVector::from_iterator(cols.len(), cols.iter().map(|&u| bhat[u]));
        let corr = pinv_solve(&a, &(&r - &a * &b0));
        let b = b0 + corr;
        report.traction_residual = report.traction_residual.max((&a * &b - &r).amax() / data_scale);
        for (k, &u) in cols.iter().enumerate() {
            bhat[u] = b[k];
        }
    }
    if report.traction_residual > 1e-8 {
        return Err(Error::Equilibration(format!(
            "extension condition not solvable (relative residual {:.3e}); the FE flux is not equilibrated",
            report.traction_residual
        )));
    }

    // Linear tractions at the segment ends.
    let traction: Vec<[f64; 2]> = topo
        .segs
        .iter()
        .enumerate()
        .map(|(si, s)| {
            if dim == 1 {
                [bhat[si], bhat[si]]
            } else {
                let len = s.length(mesh);
                let (b0, b1) = (bhat[2 * si], bhat[2 * si + 1]);
                [2.0 / len * (2.0 * b0 - b1), 2.0 / len * (2.0 * b1 - b0)]
            }
        })
        .collect();

    // Element solves.
    let mut cache: HashMap<LsqKey, ConstrainedLsq> = HashMap::new();
    let mut cells = Vec::with_capacity(ne);
    let mut elem_scale: f64 = 1e-300;
    for e in 0..ne {
        let b = mesh.bounds[e];
        let cut_x = dim == 2 && (topo.sides[e][BOTTOM].len() == 2 || topo.sides[e][TOP].len() == 2);
        let cut_y = dim == 2 && (topo.sides[e][LEFT].len() == 2 || topo.sides[e][RIGHT].len() == 2);
        let xs = if cut_x { vec![b[0], 0.5 * (b[0] + b[1]), b[1]] } else { vec![b[0], b[1]] };
        let ys = if cut_y { vec![b[2], 0.5 * (b[2] + b[3]), b[3]] } else { vec![b[2], b[3]] };
        let (nx, ny) = (xs.len() - 1, ys.len() - 1);
        let sub: Vec<[f64; 4]> = (0..ny).flat_map(|ky| (0..nx).map(move |kx| (kx, ky))).map(|(kx, ky)| [xs[kx], xs[kx + 1], ys[ky], ys[ky + 1]]).collect();
        let hx = b[1] - b[0];
        let hy = b[3] - b[2];
        let key = (dim, nx, ny, hx.to_bits(), hy.to_bits());
        if !cache.contains_key(&key) {
            let (c, g) = element_system(dim, &sub, nx, ny);
            cache.insert(key, ConstrainedLsq::new(c, g)?);
        }
        let lsq = &cache[&key];
        let nodes = mesh.element_nodes(e);
        // Traction at a boundary point of the element, reference normal.
        let trac = |side: usize, half: usize, x: f64, y: f64| -> f64 {
            let segs = &topo.sides[e][side];
            let si = segs[if segs.len() == 2 { half } else { 0 }];
            let s = &topo.segs[si];
            let tv = traction[si];
            if dim == 1 {
                return tv[0];
            }
            let (pa, pb) = (mesh.nodes[s.ends[0]], mesh.nodes[s.ends[1]]);
            let u = if s.vertical { (y - pa[1]) / (pb[1] - pa[1]) } else { (x - pa[0]) / (pb[0] - pa[0]) };
            tv[0] * (1.0 - u) + tv[1] * u
        };
        let fb = |x: f64, y: f64| -> f64 {
            let (n, _) = shape(mesh, e, x, y);
            (0..npe).map(|a| n[a] * fbar[e][a]).sum()
        };
        let mut d = Vec::new();
        let mut h = Vec::new();
        if dim == 1 {
            let _ = nodes;
            d.push(trac(LEFT, 0, b[0], 0.0));
            d.push(trac(RIGHT, 0, b[1], 0.0));
            let (fl, fr) = (fb(b[0], 0.0), fb(b[1], 0.0));
            d.push(-0.5 * (fl + fr));
            d.push(-0.5 * (fr - fl));
            let cell = FluxCell { bounds: b, coef: [0.0; 12] };
            for k in 0..3 {
                let mut v = 0.0;
                for (x, y, wq) in box_quadrature(1, b, 4) {
                    let (s, _, _, _) = cell.local(x, y);
                    v += wq * tau_h(e, x, y)[0] * s.powi(k as i32);
                }
                h.push(v);
            }
        } else {
            for (k, sb) in sub.iter().enumerate() {
                let (kx, ky) = (k % nx, k / nx);
                let corners = |s0: f64, t0: f64| -> (f64, f64) { (0.5 * (sb[0] + sb[1]) + s0 * 0.5 * (sb[1] - sb[0]), 0.5 * (sb[2] + sb[3]) + t0 * 0.5 * (sb[3] - sb[2])) };
                if kx == 0 {
                    for t0 in [-1.0, 1.0] {
                        let (x, y) = corners(-1.0, t0);
                        d.push(trac(LEFT, ky, x, y));
                    }
                }
                if kx == nx - 1 {
                    for t0 in [-1.0, 1.0] {
                        let (x, y) = corners(1.0, t0);
                        d.push(trac(RIGHT, ky, x, y));
                    }
                }
                if ky == 0 {
                    for s0 in [-1.0, 1.0] {
                        let (x, y) = corners(s0, -1.0);
                        d.push(trac(BOTTOM, kx, x, y));
                    }
                }
                if ky == ny - 1 {
                    for s0 in [-1.0, 1.0] {
                        let (x, y) = corners(s0, 1.0);
                        d.push(trac(TOP, kx, x, y));
                    }
                }
            }
            let n_cut = if nx == 2 { 2 * ny } else { 0 } + if ny == 2 { 2 * nx } else { 0 };
            d.extend(std::iter::repeat(0.0).take(n_cut));
            for sb in &sub {
                let g = |s0: f64, t0: f64| fb(0.5 * (sb[0] + sb[1]) + s0 * 0.5 * (sb[1] - sb[0]), 0.5 * (sb[2] + sb[3]) + t0 * 0.5 * (sb[3] - sb[2]));
                let (g00, g10, g11, g01) = (g(-1.0, -1.0), g(1.0, -1.0), g(1.0, 1.0), g(-1.0, 1.0));
                d.push(-(g00 + g10 + g11 + g01) / 4.0);
                d.push(-(-g00 + g10 + g11 - g01) / 4.0);
                d.push(-(-g00 - g10 + g11 + g01) / 4.0);
                d.push(-(g00 - g10 + g11 - g01) / 4.0);
            }
            for sb in &sub {
                let cell = FluxCell { bounds: *sb, coef: [0.0; 12] };
                let mut hv = [0.0; 12];
                for (x, y, wq) in box_quadrature(2, *sb, 4) {
                    let (s, t, _, _) = cell.local(x, y);
                    let th = tau_h(e, x, y);
                    let sp = [1.0, s, s * s];
                    let tp = [1.0, t, t * t];
                    for a in 0..3 {
                        for bb in 0..2 {
                            hv[2 * a + bb] += wq * th[0] * sp[a] * tp[bb];
                        }
                    }
                    for a in 0..2 {
                        for bb in 0..3 {
                            hv[6 + 3 * a + bb] += wq * th[1] * sp[a] * tp[bb];
                        }
                    }
                }
                h.extend_from_slice(&hv);
            }
        }
        let dv = DVector::from_vec(d);
        let (x, res) = lsq.solve(&dv, &DVector::from_vec(h));
        elem_scale = elem_scale.max(dv.amax());
        report.element_residual = report.element_residual.max(res);
        let per_cell = if dim == 1 { 3 } else { 12 };
        let ecells: Vec<FluxCell> = sub
            .iter()
            .enumerate()
            .map(|(k, sb)| {
                let mut coef = [0.0; 12];
                coef[..per_cell].copy_from_slice(&x.as_slice()[k * per_cell..(k + 1) * per_cell]);
                FluxCell { bounds: if dim == 1 { b } else { *sb }, coef }
            })
            .collect();
        cells.push(ecells);
    }
    report.element_residual /= elem_scale;
    if report.element_residual > 1e-8 {
        return Err(Error::Equilibration(format!("element constraints violated (relative residual {:.3e})", report.element_residual)));
    }
    let offset = load.prestress.cloned();
    Ok((FluxField { dim, cells, offset }, report))
}

/// Constraint matrix and Gram matrix of the element flux space.
fn element_system(dim: usize, sub: &[[f64; 4]], nx: usize, ny: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mono = |k: usize| -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            2.0 / (k as f64 + 1.0)
        }
    };
    if dim == 1 {
        let b = sub[0];
        let a = 0.5 * (b[1] - b[0]);
        let c = DMatrix::from_row_slice(4, 3, &[1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0 / a, 0.0, 0.0, 0.0, 2.0 / a]);
        let g = DMatrix::from_fn(3, 3, |i, j| a * mono(i + j));
        return (c, g);
    }
    let n = 12 * sub.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let pw = |v: f64, k: usize| v.powi(k as i32);
    // Normal trace of cell k at a side point: x-part for vertical sides.
    let trace_x = |k: usize, s0: f64, t0: f64, sign: f64, row: &mut Vec<f64>| {
        for a in 0..3 {
            for b in 0..2 {
                row[12 * k + 2 * a + b] += sign * pw(s0, a) * pw(t0, b);
            }
        }
    };
    let trace_y = |k: usize, s0: f64, t0: f64, sign: f64, row: &mut Vec<f64>| {
        for a in 0..2 {
            for b in 0..3 {
                row[12 * k + 6 + 3 * a + b] += sign * pw(s0, a) * pw(t0, b);
            }
        }
    };
    for k in 0..sub.len() {
        let (kx, ky) = (k % nx, k / nx);
        if kx == 0 {
            for t0 in [-1.0, 1.0] {
                let mut r = vec![0.0; n];
                trace_x(k, -1.0, t0, 1.0, &mut r);
                rows.push(r);
            }
        }
        if kx == nx - 1 {
            for t0 in [-1.0, 1.0] {
                let mut r = vec![0.0; n];
                trace_x(k, 1.0, t0, 1.0, &mut r);
                rows.push(r);
            }
        }
        if ky == 0 {
            for s0 in [-1.0, 1.0] {
                let mut r = vec![0.0; n];
                trace_y(k, s0, -1.0, 1.0, &mut r);
                rows.push(r);
            }
        }
        if ky == ny - 1 {
            for s0 in [-1.0, 1.0] {
                let mut r = vec![0.0; n];
                trace_y(k, s0, 1.0, 1.0, &mut r);
                rows.push(r);
            }
        }
    }
    if nx == 2 {
        for ky in 0..ny {
            for t0 in [-1.0, 1.0] {
                let mut r = vec![0.0; n];
                trace_x(ky * nx, 1.0, t0, 1.0, &mut r);
                trace_x(ky * nx + 1, -1.0, t0, -1.0, &mut r);
                rows.push(r);
            }
        }
    }
    if ny == 2 {
        for kx in 0..nx {
            for s0 in [-1.0, 1.0] {
                let mut r = vec![0.0; n];
                trace_y(kx, s0, 1.0, 1.0, &mut r);
                trace_y(nx + kx, s0, -1.0, -1.0, &mut r);
                rows.push(r);
            }
        }
    }
    for (k, sb) in sub.iter().enumerate() {
        let (ax, ay) = (0.5 * (sb[1] - sb[0]), 0.5 * (sb[3] - sb[2]));
        let o = 12 * k;
        // Monomials 1, s, t, st of the divergence.
        let entries: [[(usize, f64); 2]; 4] = [
            [(o + 2, 1.0 / ax), (o + 7, 1.0 / ay)],
            [(o + 4, 2.0 / ax), (o + 10, 1.0 / ay)],
            [(o + 3, 1.0 / ax), (o + 8, 2.0 / ay)],
            [(o + 5, 2.0 / ax), (o + 11, 2.0 / ay)],
        ];
        for ent in entries {
            let mut r = vec![0.0; n];
            for (i, v) in ent {
                r[i] = v;
            }
            rows.push(r);
        }
    }
    let c = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let mut g = DMatrix::zeros(n, n);
    for (k, sb) in sub.iter().enumerate() {
        let jac = 0.25 * (sb[1] - sb[0]) * (sb[3] - sb[2]);
        let o = 12 * k;
        for a in 0..3 {
            for b in 0..2 {
                for a2 in 0..3 {
                    for b2 in 0..2 {
                        g[(o + 2 * a + b, o + 2 * a2 + b2)] = jac * mono(a + a2) * mono(b + b2);
                    }
                }
            }
        }
        for a in 0..2 {
            for b in 0..3 {
                for a2 in 0..2 {
                    for b2 in 0..3 {
                        g[(o + 6 + 3 * a + b, o + 6 + 3 * a2 + b2)] = jac * mono(a + a2) * mono(b + b2);
                    }
                }
            }
        }
    }
    (c, g)
}

/// How the mode fluxes were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FluxRoute {
    /// Forward substitution in the lower-triangular system built from the
    /// last space solve of every mode.
    Triangular,
    /// One steady solve `K chi_i = -M psi_i` per mode (modes lifted from
    /// coarser discretizations no longer satisfy the triangular system).
    Direct,
    /// Steady problem without reaction: no mode flux is needed.
    None,
}

/// FE-equilibrated fluxes: `grad w_s` per load and `grad chi_i` per mode,
/// where `K w_s = F_s` and `K chi_i = -M psi_i`.
#[derive(Clone, Debug)]
pub struct FeFluxSet {
    pub w: Vec<Vec<f64>>,
    pub chi: Vec<Vec<f64>>,
    pub a_matrix: Option<DMatrix<f64>>,
    pub route: FluxRoute,
}

/// Steady load solves `K w_s = F_s`.
pub fn steady_load_fluxes(disc: &Discretization) -> Vec<Vec<f64>> {
    disc.ops.loads.iter().map(|f| disc.ops.solve_k(f)).collect()
}

fn pint_all(problem: &Problem, coef: &crate::problem::Coefficient, g1: &[Vec<f64>], g2: &[Vec<f64>]) -> f64 {
    let mut v = coef.base;
    for (j, ax) in problem.axes.iter().enumerate() {
        v *= crate::pgd::pint(ax, &coef.tables[j], &g1[j], &g2[j]);
    }
    v
}

fn load_pint(problem: &Problem, s: usize, g: &[Vec<f64>]) -> f64 {
    let l = &problem.loads[s];
    problem.axes.iter().enumerate().map(|(j, ax)| crate::pgd::pint(ax, &l.tables[j], &g[j], &vec![1.0; ax.len()])).product()
}

/// Mode fluxes for the lifted modes on `disc`.
pub fn mode_fluxes(problem: &Problem, disc: &Discretization, modes: &[LiftedMode], w: Vec<Vec<f64>>) -> Result<FeFluxSet> {
    let transient = !disc.time.is_steady();
    if !transient && problem.r.is_zero() {
        return Ok(FeFluxSet { w, chi: vec![], a_matrix: None, route: FluxRoute::None });
    }
    let m = modes.len();
    if modes.iter().all(|md| md.native) && m > 0 {
        let mut a = DMatrix::zeros(m, m);
        for m0 in 0..m {
            let g0 = &modes[m0].gammas;
            for i in 0..=m0 {
                let gi = &modes[i].gammas;
                let dl = dot(&modes[m0].lam, &modes[i].dlam);
                let ml = dot(&modes[m0].lam, &modes[i].mlam);
                a[(m0, i)] = pint_all(problem, &problem.c, gi, g0) * if transient { dl } else { 0.0 } + pint_all(problem, &problem.r, gi, g0) * ml;
            }
        }
        let diag_ok = (0..m).all(|i| a[(i, i)].abs() > 1e-12 * a.row(i).amax().max(1e-300));
        if diag_ok {
            let n = disc.ops.n_nodes();
            let mut chi: Vec<Vec<f64>> = Vec::with_capacity(m);
            for m0 in 0..m {
                let g0 = &modes[m0].gammas;
                let mut b = vec![0.0; n];
                for i in 0..=m0 {
                    let kk = pint_all(problem, &problem.k, &modes[i].gammas, g0) * dot(&modes[m0].lam, &modes[i].mlam);
                    for (x, p) in b.iter_mut().zip(&modes[i].psi) {
                        *x += kk * p;
                    }
                }
                for s in 0..problem.loads.len() {
                    let f = load_pint(problem, s, g0) * dot(&disc.alpha_moments[s], &modes[m0].lam);
                    for (x, v) in b.iter_mut().zip(&w[s]) {
                        *x -= f * v;
                    }
                }
                for i in 0..m0 {
                    for (x, c) in b.iter_mut().zip(&chi[i]) {
                        *x -= a[(m0, i)] * c;
                    }
                }
                let d = a[(m0, m0)];
                chi.push(b.iter().map(|v| v / d).collect());
            }
            // The recursion inherits the fixed-point accuracy of each mode;
            // fall back to direct solves if it lost the FE equilibrium.
            let exact = chi.iter().zip(modes).all(|(c, md)| {
                let kc = disc.ops.dofs.restrict(&disc.ops.k_apply(c));
                let mp = disc.ops.dofs.restrict(&md.mpsi);
                let scale = mp.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
                let r = kc.iter().zip(&mp).fold(0.0f64, |a, (x, y)| a.max((x + y).abs())) / scale;
                r <= 1e-9
            });
            if exact {
                return Ok(FeFluxSet { w, chi, a_matrix: Some(a), route: FluxRoute::Triangular });
            }
        }
    }
    let chi = modes.iter().map(|md| disc.ops.solve_k(&md.mpsi.iter().map(|v| -v).collect::<Vec<_>>())).collect();
    Ok(FeFluxSet { w, chi, a_matrix: None, route: FluxRoute::Direct })
}

/// Fully admissible counterparts of the FE flux set.
#[derive(Clone, Debug)]
pub struct AdmissibleFlux {
    pub loads: Vec<FluxField>,
    pub modes: Vec<FluxField>,
    pub report: EetReport,
}

pub fn admissible_flux(problem: &Problem, disc: &Discretization, modes: &[LiftedMode], fe: &FeFluxSet) -> Result<AdmissibleFlux> {
    let mesh = disc.mesh();
    let mut report = EetReport::default();
    let mut merge = |r: EetReport| {
        report.traction_residual = report.traction_residual.max(r.traction_residual);
        report.element_residual = report.element_residual.max(r.element_residual);
    };
    let mut loads = Vec::with_capacity(problem.loads.len());
    for s in 0..problem.loads.len() {
        let (f, r) = eet_equilibrate(mesh, &fe.w[s], &EetLoad::of_load(problem, s))?;
        merge(r);
        loads.push(f);
    }
    let mut out = Vec::with_capacity(fe.chi.len());
    for (i, chi) in fe.chi.iter().enumerate() {
        let body = Body::Nodal(modes[i].psi.iter().map(|v| -v).collect());
        let (f, r) = eet_equilibrate(mesh, chi, &EetLoad { body, neumann: vec![], prestress: None })?;
        merge(r);
        out.push(f);
    }
    Ok(AdmissibleFlux { loads, modes: out, report })
}

/// Nodal L2(I) projections of the load amplitudes and of the mode time
/// derivatives onto continuous piecewise-linear functions.
#[derive(Clone, Debug)]
pub struct ProjectedFlux {
    pub alpha: Vec<Vec<f64>>,
    pub dlam: Vec<Vec<f64>>,
}

pub fn project_time(problem: &Problem, disc: &Discretization, modes: &[LiftedMode]) -> ProjectedFlux {
    match &disc.time {
        TimeDisc::Steady => ProjectedFlux {
            alpha: problem.loads.iter().map(|l| vec![l.alpha.as_constant().unwrap_or(0.0)]).collect(),
            dlam: modes.iter().map(|_| vec![0.0]).collect(),
        },
        TimeDisc::Grid(g) => ProjectedFlux {
            alpha: problem.loads.iter().map(|l| g.project_pinned(&|t| l.alpha.at_t(t), l.alpha.breakpoints())).collect(),
            dlam: modes.iter().map(|m| g.project_derivative_pinned(&m.lam)).collect(),
        },
    }
}

/// Largest FE-equilibrium residual of `q_h(t, p)` over the free dofs,
/// relative to the largest of its terms: `K (sum alpha beta w_s + sum a_i chi_i) + M (c u' + r u)
/// - sum alpha beta F_s`.
pub fn fe_equilibrium_residual(problem: &Problem, disc: &Discretization, modes: &[LiftedMode], fe: &FeFluxSet, t: f64, p: &[f64]) -> f64 {
    let ops = &disc.ops;
    let n = ops.n_nodes();
    let (c, r) = (problem.c.value(p), problem.r.value(p));
    let mut comb = vec![0.0; n];
    let mut load = vec![0.0; n];
    let mut react = vec![0.0; n];
    for (s, l) in problem.loads.iter().enumerate() {
        let f = l.alpha.at_t(t) * l.factor(p);
        for k in 0..n {
            comb[k] += f * fe.w[s][k];
            load[k] += f * ops.loads[s][k];
        }
    }
    for (i, m) in modes.iter().enumerate() {
        let g = crate::pgd::gamma_product(&problem.axes, &m.gammas, p);
        let (lv, dv) = match &disc.time {
            TimeDisc::Steady => (m.lam[0], 0.0),
            TimeDisc::Grid(gr) => (gr.eval(&m.lam, t), gr.eval_derivative(&m.lam, t)),
        };
        let a = (c * dv + r * lv) * g;
        if let Some(chi) = fe.chi.get(i) {
            for k in 0..n {
                comb[k] += a * chi[k];
            }
        }
        for k in 0..n {
            react[k] += a * m.psi[k];
        }
    }
    let kc = ops.k_apply(&comb);
    let mr = ops.m_apply(&react);
    let res: Vec<f64> = (0..n).map(|k| kc[k] + mr[k] - load[k]).collect();
    let rr = ops.dofs.restrict(&res);
    let inf = |v: &[f64]| ops.dofs.restrict(v).iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let scale = inf(&load).max(inf(&kc)).max(inf(&mr)).max(1e-300);
    rr.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale
}

/// Audit of an equilibrated field against its load: largest element
/// residual `int_E tau . grad phi_i - int_E f phi_i - int_dE (tau . n) phi_i`
/// and largest traction jump across interior sides (or misfit with the
/// Neumann data), both relative to the largest element load work.
pub fn audit_flux(mesh: &SpaceMesh, field: &FluxField, load: &EetLoad) -> (f64, f64) {
    let dim = mesh.dim();
    let npe = mesh.nodes_per_element();
    let topo = Topology::new(mesh);
    let tau = |e: usize, x: f64, y: f64| {
        // Polynomial part only: the offset is equilibrated analytically.
        field.cell(e, x, y).eval(dim, x, y)
    };
    let mut scale: f64 = 1e-300;
    let mut worst_elem: f64 = 0.0;
    for e in 0..mesh.n_elements() {
        let b = mesh.bounds[e];
        let mut r = [0.0; 4];
        let pts: Vec<(f64, f64, f64)> = field.cells[e].iter().flat_map(|c| box_quadrature(dim, if dim == 1 { b } else { c.bounds }, 4)).collect();
        for (x, y, w) in pts {
            let (n, g) = shape(mesh, e, x, y);
            let t = tau(e, x, y);
            let f = load.body.at(mesh, e, x, y);
            for a in 0..npe {
                r[a] += w * (t[0] * g[a][0] + t[1] * g[a][1] - f * n[a]);
                scale = scale.max((w * f * n[a]).abs());
            }
        }
        if dim == 1 {
            let (n0, _) = shape(mesh, e, b[0], 0.0);
            let (n1, _) = shape(mesh, e, b[1], 0.0);
            let (t0, t1) = (tau(e, b[0], 0.0)[0], tau(e, b[1], 0.0)[0]);
            for a in 0..npe {
                r[a] -= -t0 * n0[a] + t1 * n1[a];
            }
        } else {
            let sides: [([f64; 2], [f64; 2], [f64; 2]); 4] = [
                ([b[0], b[2]], [b[1], b[2]], [0.0, -1.0]),
                ([b[1], b[2]], [b[1], b[3]], [1.0, 0.0]),
                ([b[0], b[3]], [b[1], b[3]], [0.0, 1.0]),
                ([b[0], b[2]], [b[0], b[3]], [-1.0, 0.0]),
            ];
            for (pa, pb, nrm) in sides {
                let len = (pb[0] - pa[0]).abs() + (pb[1] - pa[1]).abs();
                // Integrate on both halves so that kinks at cut lines are resolved.
                for half in 0..2 {
                    for &(gs, gw) in gauss(4) {
                        let u = 0.5 * (half as f64 + 0.5 * (gs + 1.0));
                        let (x, y) = (pa[0] + u * (pb[0] - pa[0]), pa[1] + u * (pb[1] - pa[1]));
                        let t = tau(e, x, y);
                        let tn = t[0] * nrm[0] + t[1] * nrm[1];
                        let (n, _) = shape(mesh, e, x, y);
                        for a in 0..npe {
                            r[a] -= gw * 0.25 * len * tn * n[a];
                        }
                    }
                }
            }
        }
        for v in &r[..npe] {
            worst_elem = worst_elem.max(v.abs());
        }
    }
    let mut worst_jump: f64 = 0.0;
    let mut tscale: f64 = 1e-300;
    for s in &topo.segs {
        let (pa, pb) = (mesh.nodes[s.ends[0]], mesh.nodes[s.ends[1]]);
        let pts: Vec<[f64; 2]> = if dim == 1 {
            vec![pa]
        } else {
            [0.1, 0.5, 0.9].iter().map(|&u| [pa[0] + u * (pb[0] - pa[0]), pa[1] + u * (pb[1] - pa[1])]).collect()
        };
        for p in pts {
            let vals: Vec<f64> = s
                .elems
                .iter()
                .map(|&(e, _)| {
                    let t = tau(e, p[0], p[1]);
                    if s.vertical {
                        t[0]
                    } else {
                        t[1]
                    }
                })
                .collect();
            for v in &vals {
                tscale = tscale.max(v.abs());
            }
            match &s.kind {
                SegKind::Interior => worst_jump = worst_jump.max((vals[0] - vals[1]).abs()),
                SegKind::Neumann(tag) => {
                    let g = s.elems[0].1 * load.g(tag, p[0], p[1]);
                    worst_jump = worst_jump.max((vals[0] - g).abs());
                }
                SegKind::Dirichlet => {}
            }
        }
    }
    (worst_elem / scale, worst_jump / tscale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::SpaceOperators;
    use crate::problem::ProblemSpec;
    use std::sync::Arc;

    fn problem(json: &str) -> Problem {
        Problem::new(ProblemSpec::from_json_str(json).unwrap()).unwrap()
    }

    fn square(n: usize, body: &str, extra: &str) -> Problem {
        let h = 1.0 / n as f64;
        problem(&format!(
            r#"{{
            "domain": {{"kind": "quads", "cell": [{h}, {h}], "cells": [{n}, {n}], "dirichlet": ["left", "bottom"], "neumann": ["right", "top"]}},
            "time": {{"steady": true}},
            "coefficients": {{"k": {{"base": 1.0}}}},
            "loads": [{{"body": {body}{extra}}}]
        }}"#
        ))
    }

    #[test]
    fn one_dimensional_flux_is_exact() {
        let p = problem(
            r#"{
            "domain": {"kind": "interval", "length": 1.0, "elements": 7, "dirichlet": ["left", "right"]},
            "time": {"steady": true},
            "coefficients": {"k": {"base": 1.0}},
            "loads": [{"body": 1.0}]
        }"#,
        );
        let disc = Discretization::base(&p).unwrap();
        let w = steady_load_fluxes(&disc);
        let (f, rep) = eet_equilibrate(disc.mesh(), &w[0], &EetLoad::of_load(&p, 0)).unwrap();
        assert!(rep.traction_residual < 1e-12 && rep.element_residual < 1e-12);
        for e in 0..7 {
            let b = disc.mesh().bounds[e];
            for x in [b[0], 0.5 * (b[0] + b[1]), b[1] - 1e-9] {
                let exact = 0.5 - x;
                assert!((f.eval(e, x, 0.0)[0] - exact).abs() < 1e-8, "{x}");
            }
        }
    }

    #[test]
    fn patch_test_reproduces_linear_flux() {
        // u = x with unit outflow on the right: the FE flux is already exact.
        let p = problem(
            r#"{
            "domain": {"kind": "quads", "cell": [0.25, 0.25], "cells": [4, 4], "dirichlet": ["left"], "neumann": ["right", "top", "bottom"]},
            "time": {"steady": true},
            "coefficients": {"k": {"base": 1.0}},
            "loads": [{"flux": [{"tags": ["right"], "density": 1.0}]}]
        }"#,
        );
        let disc = Discretization::base(&p).unwrap();
        let w = steady_load_fluxes(&disc);
        let (f, _) = eet_equilibrate(disc.mesh(), &w[0], &EetLoad::of_load(&p, 0)).unwrap();
        for e in 0..16 {
            let b = disc.mesh().bounds[e];
            let v = f.eval(e, 0.3 * b[0] + 0.7 * b[1], 0.6 * b[2] + 0.4 * b[3]);
            assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn bilinear_load_is_equilibrated_on_conforming_and_hanging_meshes() {
        for refine in [false, true] {
            let p = square(4, r#"{"expr": "200*x*y"}"#, r#", "flux": [{"tags": ["top"], "density": {"expr": "1 + x"}}]"#);
            let mut mesh = p.base_mesh();
            if refine {
                let mut marks = vec![false; mesh.n_elements()];
                marks[5] = true;
                marks[6] = true;
                mesh = mesh.refine(&marks).unwrap();
                assert!(!mesh.hanging.is_empty());
            }
            let ops = SpaceOperators::new(&p, Arc::new(mesh)).unwrap();
            let w = ops.solve_k(&ops.loads[0]);
            let load = EetLoad::of_load(&p, 0);
            let (f, rep) = eet_equilibrate(&ops.mesh, &w, &load).unwrap();
            assert!(rep.traction_residual < 1e-10, "{rep:?}");
            let (elem, jump) = audit_flux(&ops.mesh, &f, &load);
            assert!(elem < 1e-10 && jump < 1e-10, "refine={refine}: {elem} {jump}");
        }
    }

    #[test]
    fn checkerboard_tractions_are_reciprocal() {
        let p = square(2, r#"{"expr": "(2*x - 1)*(2*y - 1)"}"#, "");
        let disc = Discretization::base(&p).unwrap();
        let w = steady_load_fluxes(&disc);
        let load = EetLoad::of_load(&p, 0);
        let (f, _) = eet_equilibrate(disc.mesh(), &w[0], &load).unwrap();
        let (_, jump) = audit_flux(disc.mesh(), &f, &load);
        assert!(jump < 1e-12);
    }

    #[test]
    fn projection_keeps_linears_and_matches_dense_solve() {
        let g = crate::time::TimeGrid::uniform(2.0, 2).unwrap();
        let p = g.project(&|t| 3.0 * t - 1.0, &[]);
        for (x, t) in p.iter().zip(&g.nodes) {
            assert!((x - (3.0 * t - 1.0)).abs() < 1e-13);
        }
        // Derivative {1, -1} on two unit intervals.
        let lam = [0.0, 1.0, 0.0];
        let pd = g.project_derivative(&lam);
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 2.0]) / 6.0;
        let rhs = DVector::from_vec(vec![0.5, 0.0, -0.5]);
        let exact = m.lu().solve(&rhs).unwrap();
        for k in 0..3 {
            assert!((pd[k] - exact[k]).abs() < 1e-13);
        }
        // Pinned variant: same system without the first row and column.
        let pp = g.project_derivative_pinned(&lam);
        let m1 = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]) / 6.0;
        let e1 = m1.lu().solve(&DVector::from_vec(vec![0.0, -0.5])).unwrap();
        assert_eq!(pp[0], 0.0);
        assert!((pp[1] - e1[0]).abs() < 1e-13 && (pp[2] - e1[1]).abs() < 1e-13);
        let q = g.project_pinned(&|t| 3.0 * t, &[]);
        assert!((q[2] - 6.0).abs() < 1e-13);
    }

    #[test]
    fn mode_flux_routes_agree_and_are_fe_equilibrated() {
        let p = crate::pgd::tests::beam();
        let disc = Discretization::base(&p).unwrap();
        let mut sol = crate::pgd::SeparatedSolution::default();
        crate::pgd::extend(&p, &disc, &mut sol, 2).unwrap();
        let lifted = crate::pgd::lift(&sol, &disc).unwrap();
        let tri = mode_fluxes(&p, &disc, &lifted, steady_load_fluxes(&disc)).unwrap();
        assert_eq!(tri.route, FluxRoute::Triangular);
        let mut foreign = lifted.clone();
        foreign.iter_mut().for_each(|m| m.native = false);
        let direct = mode_fluxes(&p, &disc, &foreign, steady_load_fluxes(&disc)).unwrap();
        assert_eq!(direct.route, FluxRoute::Direct);
        let scale = direct.chi.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in tri.chi.iter().zip(&direct.chi) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-8 * scale, "{x} {y}");
            }
        }
        for t in [0.0, 0.35, 1.0] {
            for k in [1.0, 42.0] {
                let r = fe_equilibrium_residual(&p, &disc, &lifted, &direct, t, &[k]);
                assert!(r < 1e-9, "t={t} k={k}: {r}");
            }
        }
        // The recursion amplifies round-off mode after mode; once it drifts
        // the direct solves take over.
        crate::pgd::extend(&p, &disc, &mut sol, 6).unwrap();
        let lifted = crate::pgd::lift(&sol, &disc).unwrap();
        let fe = mode_fluxes(&p, &disc, &lifted, steady_load_fluxes(&disc)).unwrap();
        assert_eq!(fe.route, FluxRoute::Direct);
        assert!(fe_equilibrium_residual(&p, &disc, &lifted, &fe, 0.5, &[3.0]) < 1e-9);
    }
}
