//! Constitutive relation error of a separated solution and its split into
//! truncation and discretization indicators.
//!
//! Every quantity here is `(1/k) int_I int_Omega |sum_a c_a(p) T_a(t) S_a(x)|^2`
//! for a short list of atoms `a` (space field, time factor, parameter
//! coefficient). The space and time Gram matrices are assembled once, after
//! which one parameter point costs a small quadratic form.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::disc::Discretization;
use crate::equil::{admissible_flux, mode_fluxes, project_time, steady_load_fluxes, AdmissibleFlux, EetReport, FeFluxSet, FluxField, FluxRoute};
use crate::error::Result;
use crate::expr::Function;
use crate::fem::gauss;
use crate::mesh::SpaceMesh;
use crate::pgd::{gamma_at_grid, gamma_product, grid_indices, lift, LiftedMode, SeparatedSolution};
use crate::problem::Problem;
use crate::time::{merge_breaks, TimeDisc, TimeGrid, TimeQuadrature};

/// A parameter point, either on the grid (exact tabulated factors) or
/// anywhere in the box (interpolated factors).
#[derive(Clone, Copy, Debug)]
pub enum At<'a> {
    Grid(&'a [usize]),
    Point(&'a [f64]),
}

impl At<'_> {
    pub fn coords(&self, problem: &Problem) -> Vec<f64> {
        match self {
            At::Grid(i) => problem.grid_point(i),
            At::Point(p) => p.to_vec(),
        }
    }

    fn c(&self, problem: &Problem) -> f64 {
        match self {
            At::Grid(i) => problem.c.at_grid(i),
            At::Point(p) => problem.c.value(p),
        }
    }

    fn k(&self, problem: &Problem) -> f64 {
        match self {
            At::Grid(i) => problem.k.at_grid(i),
            At::Point(p) => problem.k.value(p),
        }
    }

    fn r(&self, problem: &Problem) -> f64 {
        match self {
            At::Grid(i) => problem.r.at_grid(i),
            At::Point(p) => problem.r.value(p),
        }
    }

    fn beta(&self, problem: &Problem, s: usize) -> f64 {
        match self {
            At::Grid(i) => problem.loads[s].factor_at_grid(i),
            At::Point(p) => problem.loads[s].factor(p),
        }
    }

    fn gamma(&self, problem: &Problem, g: &[Vec<f64>]) -> f64 {
        match self {
            At::Grid(i) => gamma_at_grid(g, i),
            At::Point(p) => gamma_product(&problem.axes, g, p),
        }
    }
}

/// Space part of an atom.
#[derive(Clone, Debug)]
pub enum SpaceField {
    Flux(Arc<FluxField>),
    Grad(Arc<Vec<f64>>),
    FluxMinusGrad(Arc<FluxField>, Arc<Vec<f64>>),
}

impl SpaceField {
    fn eval(&self, mesh: &SpaceMesh, e: usize, x: f64, y: f64) -> [f64; 2] {
        match self {
            SpaceField::Flux(f) => f.eval(e, x, y),
            SpaceField::Grad(w) => mesh.grad_nodal(w, e, x, y),
            SpaceField::FluxMinusGrad(f, w) => {
                let a = f.eval(e, x, y);
                let b = mesh.grad_nodal(w, e, x, y);
                [a[0] - b[0], a[1] - b[1]]
            }
        }
    }
}

/// Time part of an atom.
#[derive(Clone, Debug)]
pub enum TimeFactor {
    Value(f64),
    Func(Function),
    Nodal(Arc<TimeGrid>, Vec<f64>),
    /// Derivative of a nodal function (piecewise constant).
    Slope(Arc<TimeGrid>, Vec<f64>),
}

impl TimeFactor {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFactor::Value(v) => *v,
            TimeFactor::Func(f) => f.at_t(t),
            TimeFactor::Nodal(g, v) => g.eval(v, t),
            TimeFactor::Slope(g, v) => g.eval_derivative(v, t),
        }
    }

    fn breaks(&self) -> Vec<f64> {
        match self {
            TimeFactor::Value(_) => vec![],
            TimeFactor::Func(f) => f.breakpoints().to_vec(),
            TimeFactor::Nodal(g, _) | TimeFactor::Slope(g, _) => g.nodes.clone(),
        }
    }
}

/// Parameter part of an atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoefKind {
    /// `beta_s(p)`.
    Load(usize),
    /// `c(p) prod gamma_i(p)`.
    C(usize),
    /// `r(p) prod gamma_i(p)`.
    R(usize),
    /// `k(p) prod gamma_i(p)`.
    K(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct Atom {
    pub space: usize,
    pub time: usize,
    pub kind: CoefKind,
    pub sign: f64,
}

/// Quadrature points of a mesh, fine enough to integrate the element-wise
/// flux polynomials (also on the sub-rectangles next to hanging nodes).
pub fn space_points(mesh: &SpaceMesh) -> Vec<(usize, f64, f64, f64)> {
    let dim = mesh.dim();
    let g = gauss(3);
    let mut out = Vec::new();
    for e in 0..mesh.n_elements() {
        let b = mesh.bounds[e];
        let (hx, hy) = (0.5 * (b[1] - b[0]), 0.5 * (b[3] - b[2]));
        for ky in 0..(if dim == 1 { 1 } else { 2 }) {
            for kx in 0..2 {
                let cx = b[0] + hx * (kx as f64 + 0.5);
                let cy = b[2] + hy * (ky as f64 + 0.5);
                if dim == 1 {
                    for &(s, w) in g {
                        out.push((e, cx + 0.5 * hx * s, 0.0, w * 0.5 * hx));
                    }
                } else {
                    for &(t, wt) in g {
                        for &(s, ws) in g {
                            out.push((e, cx + 0.5 * hx * s, cy + 0.5 * hy * t, ws * wt * 0.25 * hx * hy));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Values of every space field at the shared quadrature points.
#[derive(Clone, Debug)]
pub struct SpaceSamples {
    pub points: Vec<(usize, f64, f64, f64)>,
    pub values: Vec<Vec<[f64; 2]>>,
}

impl SpaceSamples {
    pub fn new(mesh: &SpaceMesh, fields: &[SpaceField]) -> Self {
        let points = space_points(mesh);
        let values = fields.par_iter().map(|f| points.iter().map(|&(e, x, y, _)| f.eval(mesh, e, x, y)).collect()).collect();
        SpaceSamples { points, values }
    }

    /// `int a . b` for every pair of fields of `self` and `other` (same points).
    pub fn gram(&self, other: &SpaceSamples) -> DMatrix<f64> {
        let (na, nb) = (self.values.len(), other.values.len());
        let rows: Vec<Vec<f64>> = (0..na)
            .into_par_iter()
            .map(|a| {
                (0..nb)
                    .map(|b| {
                        let (va, vb) = (&self.values[a], &other.values[b]);
                        self.points.iter().enumerate().map(|(q, p)| p.3 * (va[q][0] * vb[q][0] + va[q][1] * vb[q][1])).sum()
                    })
                    .collect()
            })
            .collect();
        DMatrix::from_fn(na, nb, |a, b| rows[a][b])
    }
}

/// `int_I a(t) b(t) dt`, or `int_I a(t) b(T - t) dt` when `reverse` is set,
/// for every pair of factors. Steady problems use a single unit point.
pub fn time_gram(a: &[TimeFactor], b: &[TimeFactor], steady: bool, horizon: f64, reverse: bool) -> DMatrix<f64> {
    let quad = if steady {
        TimeQuadrature::steady()
    } else {
        let mut br = vec![];
        for f in a {
            br = merge_breaks(&br, &f.breaks());
        }
        for f in b {
            let fb: Vec<f64> = f.breaks().iter().map(|&t| if reverse { horizon - t } else { t }).collect();
            br = merge_breaks(&br, &fb);
        }
        TimeQuadrature::new(&br, 0.0, horizon)
    };
    let va: Vec<Vec<f64>> = a.iter().map(|f| quad.points.iter().map(|&t| f.eval(t)).collect()).collect();
    let vb: Vec<Vec<f64>> = b
        .iter()
        .map(|f| quad.points.iter().map(|&t| f.eval(if reverse && !steady { horizon - t } else { t })).collect())
        .collect();
    DMatrix::from_fn(a.len(), b.len(), |i, j| quad.weights.iter().enumerate().map(|(q, w)| w * va[i][q] * vb[j][q]).sum())
}

/// Gram matrix of two atom lists.
pub fn atom_gram(sa: &[Atom], sb: &[Atom], space: &DMatrix<f64>, time: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(sa.len(), sb.len(), |i, j| {
        let (a, b) = (&sa[i], &sb[j]);
        a.sign * b.sign * space[(a.space, b.space)] * time[(a.time, b.time)]
    })
}

/// Per-element contributions, relative to the global value they sum to.
#[derive(Clone, Debug, Default, Serialize)]
pub struct LocalMaps {
    pub e2: Vec<f64>,
    pub eta_pgd2: Vec<f64>,
    pub eta_h2: Vec<f64>,
}

/// Squared indicators at one parameter point. `eta_dis2` and `eta_dt2` are
/// the raw differences, so the split identities hold exactly; use the
/// accessors for clamped values.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorBreakdown {
    pub p: Vec<f64>,
    pub e2: f64,
    pub eta_pgd2: f64,
    pub eta_dis2: f64,
    pub eta_h2: f64,
    pub eta_dt2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local: Option<LocalMaps>,
}

impl ErrorBreakdown {
    pub fn e_cre(&self) -> f64 {
        self.e2.max(0.0).sqrt()
    }
    pub fn eta_pgd(&self) -> f64 {
        self.eta_pgd2.max(0.0).sqrt()
    }
    pub fn eta_dis(&self) -> f64 {
        self.eta_dis2.max(0.0).sqrt()
    }
    pub fn eta_h(&self) -> f64 {
        self.eta_h2.max(0.0).sqrt()
    }
    pub fn eta_dt(&self) -> f64 {
        self.eta_dt2.max(0.0).sqrt()
    }
    /// Whether a subtraction-defined indicator came out negative.
    pub fn clamped(&self) -> bool {
        self.eta_dis2 < 0.0 || self.eta_dt2 < 0.0
    }
}

/// Everything needed to evaluate the bound and its indicators anywhere in
/// the parameter domain, for one solution on one discretization.
pub struct Certificate {
    pub mesh: Arc<SpaceMesh>,
    pub time: TimeDisc,
    pub horizon: f64,
    pub lifted: Vec<LiftedMode>,
    pub fe: FeFluxSet,
    pub flux: AdmissibleFlux,
    pub space_fields: Vec<SpaceField>,
    pub time_factors: Vec<TimeFactor>,
    pub samples: SpaceSamples,
    pub tgram: DMatrix<f64>,
    /// `q_hat - k grad u_m`.
    pub atoms_e: Vec<Atom>,
    /// `q_hat^{h, dt} - k grad u_m`.
    pub atoms_pgd: Vec<Atom>,
    /// `q_hat - q_hat^h`.
    pub atoms_h: Vec<Atom>,
    g_e: DMatrix<f64>,
    g_pgd: DMatrix<f64>,
    g_h: DMatrix<f64>,
}

impl Certificate {
    pub fn new(problem: &Problem, disc: &Discretization, sol: &SeparatedSolution) -> Result<Self> {
        let lifted = lift(sol, disc)?;
        Self::from_lifted(problem, disc, lifted)
    }

    pub fn from_lifted(problem: &Problem, disc: &Discretization, lifted: Vec<LiftedMode>) -> Result<Self> {
        let fe = mode_fluxes(problem, disc, &lifted, steady_load_fluxes(disc))?;
        let flux = admissible_flux(problem, disc, &lifted, &fe)?;
        let proj = project_time(problem, disc, &lifted);
        let steady = disc.time.is_steady();
        let mut space = Vec::new();
        let mut time = Vec::new();
        let push_s = |f: SpaceField, v: &mut Vec<SpaceField>| {
            v.push(f);
            v.len() - 1
        };
        let push_t = |f: TimeFactor, v: &mut Vec<TimeFactor>| {
            v.push(f);
            v.len() - 1
        };
        let (mut ae, mut ap, mut ah) = (vec![], vec![], vec![]);
        let atom = |space, time, kind, sign| Atom { space, time, kind, sign };
        for (s, l) in problem.loads.iter().enumerate() {
            let req = Arc::new(flux.loads[s].clone());
            let w = Arc::new(fe.w[s].clone());
            let s_eq = push_s(SpaceField::Flux(req.clone()), &mut space);
            let s_h = push_s(SpaceField::Grad(w.clone()), &mut space);
            let s_d = push_s(SpaceField::FluxMinusGrad(req, w), &mut space);
            let (t_a, t_pa) = match &disc.time {
                TimeDisc::Steady => {
                    let v = l.alpha.as_constant().unwrap_or(0.0);
                    (push_t(TimeFactor::Value(v), &mut time), push_t(TimeFactor::Value(v), &mut time))
                }
                TimeDisc::Grid(g) => (
                    push_t(TimeFactor::Func(l.alpha.clone()), &mut time),
                    push_t(TimeFactor::Nodal(g.clone(), proj.alpha[s].clone()), &mut time),
                ),
            };
            ae.push(atom(s_eq, t_a, CoefKind::Load(s), 1.0));
            ap.push(atom(s_h, t_pa, CoefKind::Load(s), 1.0));
            ah.push(atom(s_d, t_a, CoefKind::Load(s), 1.0));
        }
        let use_c = !steady && !problem.c.is_zero();
        let use_r = !problem.r.is_zero();
        for (i, m) in lifted.iter().enumerate() {
            let s_psi = push_s(SpaceField::Grad(Arc::new(m.psi.clone())), &mut space);
            let (t_l, t_dl, t_pdl) = match &disc.time {
                TimeDisc::Steady => (
                    push_t(TimeFactor::Value(m.lam[0]), &mut time),
                    push_t(TimeFactor::Value(0.0), &mut time),
                    push_t(TimeFactor::Value(0.0), &mut time),
                ),
                TimeDisc::Grid(g) => (
                    push_t(TimeFactor::Nodal(g.clone(), m.lam.clone()), &mut time),
                    push_t(TimeFactor::Slope(g.clone(), m.lam.clone()), &mut time),
                    push_t(TimeFactor::Nodal(g.clone(), proj.dlam[i].clone()), &mut time),
                ),
            };
            if fe.route != FluxRoute::None {
                let phi = Arc::new(flux.modes[i].clone());
                let chi = Arc::new(fe.chi[i].clone());
                let s_eq = push_s(SpaceField::Flux(phi.clone()), &mut space);
                let s_h = push_s(SpaceField::Grad(chi.clone()), &mut space);
                let s_d = push_s(SpaceField::FluxMinusGrad(phi, chi), &mut space);
                if use_c {
                    ae.push(atom(s_eq, t_dl, CoefKind::C(i), 1.0));
                    ap.push(atom(s_h, t_pdl, CoefKind::C(i), 1.0));
                    ah.push(atom(s_d, t_dl, CoefKind::C(i), 1.0));
                }
                if use_r {
                    ae.push(atom(s_eq, t_l, CoefKind::R(i), 1.0));
                    ap.push(atom(s_h, t_l, CoefKind::R(i), 1.0));
                    ah.push(atom(s_d, t_l, CoefKind::R(i), 1.0));
                }
            }
            ae.push(atom(s_psi, t_l, CoefKind::K(i), -1.0));
            ap.push(atom(s_psi, t_l, CoefKind::K(i), -1.0));
        }
        let mesh = disc.mesh().clone();
        let samples = SpaceSamples::new(&mesh, &space);
        let sgram = samples.gram(&samples);
        let horizon = if steady { 0.0 } else { problem.horizon };
        let tgram = time_gram(&time, &time, steady, horizon, false);
        let g_e = atom_gram(&ae, &ae, &sgram, &tgram);
        let g_pgd = atom_gram(&ap, &ap, &sgram, &tgram);
        let g_h = atom_gram(&ah, &ah, &sgram, &tgram);
        Ok(Certificate {
            mesh,
            time: disc.time.clone(),
            horizon,
            lifted,
            fe,
            flux,
            space_fields: space,
            time_factors: time,
            samples,
            tgram,
            atoms_e: ae,
            atoms_pgd: ap,
            atoms_h: ah,
            g_e,
            g_pgd,
            g_h,
        })
    }

    pub fn m(&self) -> usize {
        self.lifted.len()
    }

    pub fn route(&self) -> FluxRoute {
        self.fe.route
    }

    pub fn eet_report(&self) -> EetReport {
        self.flux.report
    }

    /// Parameter coefficients of a list of atoms.
    pub fn coefs(&self, problem: &Problem, atoms: &[Atom], at: At) -> Vec<f64> {
        let (c, k, r) = (at.c(problem), at.k(problem), at.r(problem));
        let g: Vec<f64> = self.lifted.iter().map(|m| at.gamma(problem, &m.gammas)).collect();
        atoms
            .iter()
            .map(|a| match a.kind {
                CoefKind::Load(s) => at.beta(problem, s),
                CoefKind::C(i) => c * g[i],
                CoefKind::R(i) => r * g[i],
                CoefKind::K(i) => k * g[i],
            })
            .collect()
    }

    fn form(g: &DMatrix<f64>, ca: &[f64], cb: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, a) in ca.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in cb.iter().enumerate() {
                s += a * b * g[(i, j)];
            }
        }
        s
    }

    /// `E_CRE^2`.
    pub fn e2(&self, problem: &Problem, at: At) -> f64 {
        let ce = self.coefs(problem, &self.atoms_e, at);
        Self::form(&self.g_e, &ce, &ce) / at.k(problem)
    }

    pub fn breakdown(&self, problem: &Problem, at: At) -> ErrorBreakdown {
        let k = at.k(problem);
        let ce = self.coefs(problem, &self.atoms_e, at);
        let cp = self.coefs(problem, &self.atoms_pgd, at);
        let ch = self.coefs(problem, &self.atoms_h, at);
        let e2 = Self::form(&self.g_e, &ce, &ce) / k;
        let eta_pgd2 = Self::form(&self.g_pgd, &cp, &cp) / k;
        let eta_h2 = Self::form(&self.g_h, &ch, &ch) / k;
        let eta_dis2 = e2 - eta_pgd2;
        ErrorBreakdown { p: at.coords(problem), e2, eta_pgd2, eta_dis2, eta_h2, eta_dt2: eta_dis2 - eta_h2, local: None }
    }

    /// Element-wise contributions of one atom list, `(1/k) int_E int_I |.|^2`.
    pub fn local_map(&self, problem: &Problem, atoms: &[Atom], at: At) -> Vec<f64> {
        let k = at.k(problem);
        let c = self.coefs(problem, atoms, at);
        let n = atoms.len();
        let w = DMatrix::from_fn(n, n, |i, j| c[i] * c[j] * atoms[i].sign * atoms[j].sign * self.tgram[(atoms[i].time, atoms[j].time)] / k);
        let mut out = vec![0.0; self.mesh.n_elements()];
        for (q, &(e, _, _, wq)) in self.samples.points.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                let vi = self.samples.values[atoms[i].space][q];
                for j in 0..n {
                    let vj = self.samples.values[atoms[j].space][q];
                    s += w[(i, j)] * (vi[0] * vj[0] + vi[1] * vj[1]);
                }
            }
            out[e] += wq * s;
        }
        out
    }

    pub fn local(&self, problem: &Problem, at: At) -> LocalMaps {
        LocalMaps {
            e2: self.local_map(problem, &self.atoms_e, at),
            eta_pgd2: self.local_map(problem, &self.atoms_pgd, at),
            eta_h2: self.local_map(problem, &self.atoms_h, at),
        }
    }

    /// Indicators at every point of the sweep grid; `density` caps the
    /// points per axis (all points when `None` and at most two axes,
    /// otherwise 20).
    pub fn sweep(&self, problem: &Problem, density: Option<usize>) -> Sweep {
        let idx = sweep_indices(problem, density);
        let rows: Vec<ErrorBreakdown> = idx.par_iter().map(|i| self.breakdown(problem, At::Grid(i))).collect();
        let mut argmax = 0;
        for (k, r) in rows.iter().enumerate() {
            if r.e2 > rows[argmax].e2 {
                argmax = k;
            }
        }
        let mut rows = rows;
        if let Some(i) = idx.get(argmax) {
            rows[argmax].local = Some(self.local(problem, At::Grid(i)));
        }
        Sweep { indices: idx, rows, argmax }
    }
}

/// Sweep results in lexicographic grid order.
#[derive(Clone, Debug)]
pub struct Sweep {
    pub indices: Vec<Vec<usize>>,
    pub rows: Vec<ErrorBreakdown>,
    /// First point of largest `E_CRE` (carries the local maps).
    pub argmax: usize,
}

impl Sweep {
    pub fn worst(&self) -> &ErrorBreakdown {
        &self.rows[self.argmax]
    }

    pub fn p_max_index(&self) -> &[usize] {
        &self.indices[self.argmax]
    }
}

/// Grid indices of the sweep: evenly spread sub-sample of each axis.
pub fn sweep_indices(problem: &Problem, density: Option<usize>) -> Vec<Vec<usize>> {
    let n_p = problem.axes.len();
    let per_axis: Vec<Vec<usize>> = problem
        .axes
        .iter()
        .map(|a| {
            let n = a.len();
            let d = match density {
                Some(d) => d.max(1),
                None if n_p <= 2 => n,
                None => 20,
            };
            if d >= n {
                (0..n).collect()
            } else if d == 1 {
                vec![0]
            } else {
                let mut v: Vec<usize> = (0..d).map(|k| ((k as f64) * (n - 1) as f64 / (d - 1) as f64).round() as usize).collect();
                v.dedup();
                v
            }
        })
        .collect();
    grid_indices(&per_axis.iter().map(|v| v.len()).collect::<Vec<_>>())
        .into_iter()
        .map(|pos| pos.iter().zip(&per_axis).map(|(&k, v)| v[k]).collect())
        .collect()
}
