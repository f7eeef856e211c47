//! Goal-oriented bounds for a linear quantity of interest
//! `Q(u) = int_I w(t) (int f_S u + int q_S . grad u) dt`.
//!
//! The adjoint problem is posed in the reversed time `tau = T - t`, which
//! turns it into a forward problem of the same kind; it is then solved and
//! certified by the primal machinery.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::disc::Discretization;
use crate::error::{Error, Result};
use crate::estimate::{atom_gram, sweep_indices, time_gram, At, Atom, Certificate, CoefKind};
use crate::expr::{Function, FunctionSpec, Table, Var};
use crate::pgd::{extend, SeparatedSolution};
use crate::problem::{LoadSpec, Problem, SpaceExtractorSpec, TimeExtractorSpec};
use crate::time::{dot, TimeDisc, TimeGrid};

/// Replaces the identifier `t` by `(T - t)` in an expression.
fn reverse_expr(expr: &str, horizon: f64) -> String {
    let mut out = String::with_capacity(expr.len() + 16);
    let chars: Vec<char> = expr.chars().collect();
    let ident = |c: char| c.is_ascii_alphanumeric() || c == '_';
    for (i, &c) in chars.iter().enumerate() {
        let alone = c == 't' && (i == 0 || !ident(chars[i - 1])) && (i + 1 == chars.len() || !ident(chars[i + 1]));
        if alone {
            out.push_str(&format!("({horizon:?}-t)"));
        } else {
            out.push(c);
        }
    }
    out
}

fn reverse_fn(f: &FunctionSpec, horizon: f64) -> FunctionSpec {
    match f {
        FunctionSpec::Const(v) => FunctionSpec::Const(*v),
        FunctionSpec::Expr { expr } => FunctionSpec::Expr { expr: reverse_expr(expr, horizon) },
        FunctionSpec::Table { table } => {
            let t: Vec<f64> = table.t.iter().rev().map(|t| horizon - t).collect();
            let v: Vec<f64> = table.v.iter().rev().copied().collect();
            FunctionSpec::Table { table: Table { t, v } }
        }
    }
}

/// Everything the QoI needs on the primal side.
pub struct GoalSetup {
    /// Adjoint problem in reversed time.
    pub adjoint: Problem,
    /// Primal time weight `w(t)` (`None` when steady).
    pub weight: Option<Function>,
}

/// Builds the adjoint problem. A terminal extractor is replaced by the
/// ramp `w(t) = 2 (t - T + dt) / dt^2` on the last step of the base grid
/// (unit integral), used identically by the QoI and the adjoint loading.
pub fn build_adjoint(problem: &Problem) -> Result<GoalSetup> {
    let qoi = problem.spec.qoi.as_ref().ok_or_else(|| Error::InvalidArgument("problem has no qoi".into()))?;
    let horizon = problem.horizon;
    let (alpha, weight) = if problem.steady {
        (FunctionSpec::Const(1.0), None)
    } else {
        let w = match &qoi.time {
            TimeExtractorSpec::Terminal => {
                let dt = horizon / problem.steps as f64;
                FunctionSpec::Table { table: Table { t: vec![horizon - dt, horizon], v: vec![0.0, 2.0 / dt] } }
            }
            TimeExtractorSpec::Weight { weight } => weight.clone(),
        };
        let wf = Function::compile(&w, &[Var::T], "qoi weight")?;
        (reverse_fn(&w, horizon), Some(wf))
    };
    let mut load = LoadSpec { alpha, ..Default::default() };
    match &qoi.space {
        SpaceExtractorSpec::RegionAverage { region } => {
            let ind = |v: &str, a: f64, b: f64| format!("(signum({v}-({a:?}))-signum({v}-({b:?})))/2");
            let (expr, meas) = if region.len() == 2 {
                (ind("x", region[0], region[1]), region[1] - region[0])
            } else {
                (format!("{}*{}", ind("x", region[0], region[1]), ind("y", region[2], region[3])), (region[1] - region[0]) * (region[3] - region[2]))
            };
            load.body = Some(FunctionSpec::Expr { expr: format!("{expr}/{meas:?}") });
        }
        SpaceExtractorSpec::Density { f, q } => {
            load.body = f.clone();
            load.prestress = q.clone();
        }
    }
    let mut spec = problem.spec.clone();
    spec.name = format!("{}-adjoint", spec.name);
    spec.qoi = None;
    spec.loads = if load.body.is_none() && load.prestress.is_none() { vec![] } else { vec![load] };
    Ok(GoalSetup { adjoint: Problem::new(spec)?, weight })
}

/// The adjoint discretization: same mesh, reversed time grid.
pub fn adjoint_disc(adjoint: &Problem, primal: &Discretization) -> Result<Discretization> {
    let time = match &primal.time {
        TimeDisc::Steady => TimeDisc::Steady,
        TimeDisc::Grid(g) => {
            let t = *g.nodes.last().unwrap();
            let nodes: Vec<f64> = g.nodes.iter().rev().map(|s| t - s).collect();
            TimeDisc::Grid(Arc::new(TimeGrid::from_nodes(nodes, None)?))
        }
    };
    Discretization::new(adjoint, primal.mesh().clone(), time)
}

/// Per-parameter goal-oriented record.
#[derive(Clone, Debug, Serialize)]
pub struct GoalBounds {
    pub p: Vec<f64>,
    pub q_value: f64,
    pub q_corr: f64,
    /// `E~ E / 2`.
    pub half_width: f64,
    /// `E~ E`, the plain Cauchy-Schwarz width.
    pub first_width: f64,
    pub lower: f64,
    pub upper: f64,
    pub rho: f64,
    pub rho_pgd: f64,
    pub rho_dis: f64,
    pub e_cre: f64,
    pub e_cre_adjoint: f64,
}

/// Goal-oriented certificate: the adjoint solution and the cross Grams
/// coupling it to the primal certificate.
pub struct GoalCertificate {
    pub adjoint_sol: SeparatedSolution,
    pub adjoint: Certificate,
    /// `l(psi_i) int w lambda_i` per primal mode.
    mode_q: Vec<f64>,
    star_e: Vec<Atom>,
    star_pgd: Vec<Atom>,
    g_corr: DMatrix<f64>,
    g_corr_pgd: DMatrix<f64>,
}

fn star(atoms: &[Atom]) -> Vec<Atom> {
    atoms.iter().map(|a| Atom { sign: if matches!(a.kind, CoefKind::K(_)) { 0.5 } else { 0.5 * a.sign }, ..*a }).collect()
}

impl GoalCertificate {
    /// Solves the adjoint with `m_adjoint` modes on the primal mesh and
    /// the reversed grid, and certifies it.
    pub fn new(setup: &GoalSetup, disc: &Discretization, primal: &Certificate, m_adjoint: usize) -> Result<Self> {
        let adisc = adjoint_disc(&setup.adjoint, disc)?;
        let mut adjoint_sol = SeparatedSolution::default();
        extend(&setup.adjoint, &adisc, &mut adjoint_sol, m_adjoint)?;
        let adjoint = Certificate::new(&setup.adjoint, &adisc, &adjoint_sol)?;

        // Primal QoI per mode.
        let ell = adisc.ops.loads.first().cloned().unwrap_or_else(|| vec![0.0; adisc.ops.n_nodes()]);
        let wm = match (&disc.time, &setup.weight) {
            (TimeDisc::Grid(g), Some(w)) => Some(g.moments(&|t| w.at_t(t), w.breakpoints())),
            _ => None,
        };
        let mode_q = primal
            .lifted
            .iter()
            .map(|m| {
                let l = dot(&ell, &m.psi);
                match &wm {
                    Some(w) => l * dot(w, &m.lam),
                    None => l * m.lam[0],
                }
            })
            .collect();

        let steady = disc.time.is_steady();
        let sgram = primal.samples.gram(&adjoint.samples);
        let tgram = time_gram(&primal.time_factors, &adjoint.time_factors, steady, primal.horizon, true);
        let star_e = star(&adjoint.atoms_e);
        let star_pgd = star(&adjoint.atoms_pgd);
        let g_corr = atom_gram(&primal.atoms_e, &star_e, &sgram, &tgram);
        let g_corr_pgd = atom_gram(&primal.atoms_pgd, &star_pgd, &sgram, &tgram);
        Ok(GoalCertificate { adjoint_sol, adjoint, mode_q, star_e, star_pgd, g_corr, g_corr_pgd })
    }

    /// `Q(u_m)`.
    pub fn q_value(&self, problem: &Problem, primal: &Certificate, at: At) -> f64 {
        primal
            .lifted
            .iter()
            .zip(&self.mode_q)
            .map(|(m, q)| q * match at {
                At::Grid(i) => crate::pgd::gamma_at_grid(&m.gammas, i),
                At::Point(p) => crate::pgd::gamma_product(&problem.axes, &m.gammas, p),
            })
            .sum()
    }

    fn cross(g: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                s += x * y * g[(i, j)];
            }
        }
        s
    }

    /// `(Q_corr, Q_corr^{h, dt})`.
    pub fn corrections(&self, problem: &Problem, adjoint: &Problem, primal: &Certificate, at: At) -> (f64, f64) {
        let kv = match at {
            At::Grid(i) => problem.k.at_grid(i),
            At::Point(p) => problem.k.value(p),
        };
        let ce = primal.coefs(problem, &primal.atoms_e, at);
        let cp = primal.coefs(problem, &primal.atoms_pgd, at);
        let se = self.adjoint.coefs(adjoint, &self.star_e, at);
        let sp = self.adjoint.coefs(adjoint, &self.star_pgd, at);
        (Self::cross(&self.g_corr, &ce, &se) / kv, Self::cross(&self.g_corr_pgd, &cp, &sp) / kv)
    }

    pub fn bounds(&self, problem: &Problem, adjoint: &Problem, primal: &Certificate, at: At) -> GoalBounds {
        let b = primal.breakdown(problem, at);
        let ba = self.adjoint.breakdown(adjoint, at);
        let q_value = self.q_value(problem, primal, at);
        let (q_corr, q_corr_h) = self.corrections(problem, adjoint, primal, at);
        let first_width = b.e_cre() * ba.e_cre();
        let half_width = 0.5 * first_width;
        let rho = q_corr.abs() + half_width;
        let rho_pgd = q_corr_h.abs() + 0.5 * b.eta_pgd() * ba.eta_pgd();
        GoalBounds {
            p: at.coords(problem),
            q_value,
            q_corr,
            half_width,
            first_width,
            lower: q_value + q_corr - half_width,
            upper: q_value + q_corr + half_width,
            rho,
            rho_pgd,
            rho_dis: (rho - rho_pgd).max(0.0),
            e_cre: b.e_cre(),
            e_cre_adjoint: ba.e_cre(),
        }
    }

    /// Bounds over the sweep grid, in lexicographic order.
    pub fn sweep(&self, problem: &Problem, adjoint: &Problem, primal: &Certificate, density: Option<usize>) -> (Vec<Vec<usize>>, Vec<GoalBounds>) {
        let idx = sweep_indices(problem, density);
        let rows = idx.par_iter().map(|i| self.bounds(problem, adjoint, primal, At::Grid(i))).collect();
        (idx, rows)
    }
}

/// Index of the first sweep row with the largest `rho`.
pub fn worst(rows: &[GoalBounds]) -> usize {
    let mut k = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.rho > rows[k].rho {
            k = i;
        }
    }
    k
}
