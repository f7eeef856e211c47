//! Progressive PGD: greedy rank-one corrections `psi(x) lam(t) prod_j
//! gamma_j(p_j)`, each obtained by a fixed number of alternating sweeps over
//! the time, parameter and space factors.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::disc::Discretization;
use crate::error::{Error, Result};
use crate::mesh::SpaceMesh;
use crate::problem::{ParamAxis, Problem};
use crate::time::{dot, solve_time_ode, TimeDisc};

/// One rank-one term. `lam` has unit L2(I) norm (it is `[1]` when steady),
/// every `gammas[j]` has unit norm for the trapezoidal rule of its axis.
#[derive(Clone, Debug)]
pub struct Mode {
    pub psi: Vec<f64>,
    pub mesh: Arc<SpaceMesh>,
    pub lam: Vec<f64>,
    pub time: TimeDisc,
    pub gammas: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct SeparatedSolution {
    pub modes: Vec<Mode>,
}

impl SeparatedSolution {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Leading `m` modes.
    pub fn truncated(&self, m: usize) -> Self {
        SeparatedSolution { modes: self.modes[..m.min(self.modes.len())].to_vec() }
    }

    /// Point value `u_m(x, t, p)`.
    pub fn evaluate(&self, problem: &Problem, x: f64, y: f64, t: f64, p: &[f64]) -> Result<f64> {
        let mut u = 0.0;
        for m in &self.modes {
            let e = m
                .mesh
                .locate(x, y)
                .ok_or_else(|| Error::InvalidArgument(format!("point ({x}, {y}) is outside the domain")))?;
            let s = m.mesh.eval_nodal(&m.psi, e, x, y);
            let l = match &m.time {
                TimeDisc::Steady => 1.0,
                TimeDisc::Grid(g) => g.eval(&m.lam, t),
            };
            u += s * l * gamma_product(&problem.axes, &m.gammas, p);
        }
        Ok(u)
    }

    pub fn to_json(&self, problem: &Problem) -> serde_json::Value {
        let modes: Vec<serde_json::Value> = self
            .modes
            .iter()
            .map(|m| {
                let mut o = json!({
                    "mesh": format!("{:016x}", m.mesh.id),
                    "grid": m.time.grid().map(|g| format!("{:016x}", g.id)),
                    "psi": m.psi,
                    "lam": m.lam,
                });
                for (j, g) in m.gammas.iter().enumerate() {
                    o[format!("gamma_{}", j + 1)] = json!(g);
                }
                o
            })
            .collect();
        let mut meshes = serde_json::Map::new();
        let mut grids = serde_json::Map::new();
        for m in &self.modes {
            meshes.entry(format!("{:016x}", m.mesh.id)).or_insert_with(|| m.mesh.to_json());
            if let Some(g) = m.time.grid() {
                grids.entry(format!("{:016x}", g.id)).or_insert_with(|| json!({"nodes": g.nodes}));
            }
        }
        json!({
            "name": problem.spec.name,
            "m": self.modes.len(),
            "parameters": problem.axes.iter().map(|a| json!({"name": a.name, "points": a.points})).collect::<Vec<_>>(),
            "modes": modes,
            "meshes": meshes,
            "grids": grids,
        })
    }
}

/// `prod_j gamma_j(p_j)` with linear interpolation along each axis.
pub fn gamma_product(axes: &[ParamAxis], gammas: &[Vec<f64>], p: &[f64]) -> f64 {
    axes.iter().zip(gammas).zip(p).map(|((a, g), &v)| a.interp(g, v)).product()
}

/// `prod_j gamma_j` at grid indices.
pub fn gamma_at_grid(gammas: &[Vec<f64>], idx: &[usize]) -> f64 {
    gammas.iter().zip(idx).map(|(g, &i)| g[i]).product()
}

/// Trapezoidal `int chi g1 g2 dp` on one axis.
pub fn pint(axis: &ParamAxis, chi: &[f64], g1: &[f64], g2: &[f64]) -> f64 {
    (0..axis.len()).map(|k| axis.weights[k] * chi[k] * g1[k] * g2[k]).sum()
}

/// All grid multi-indices in lexicographic order (first axis slowest).
pub fn grid_indices(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in sizes {
        let mut next = Vec::with_capacity(out.len() * n);
        for idx in &out {
            for k in 0..n {
                let mut v = idx.clone();
                v.push(k);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// A mode transferred to a finer discretization, with the operator products
/// reused by the sub-problems.
#[derive(Clone, Debug)]
pub struct LiftedMode {
    pub psi: Vec<f64>,
    pub lam: Vec<f64>,
    pub gammas: Vec<Vec<f64>>,
    pub mpsi: Vec<f64>,
    pub kpsi: Vec<f64>,
    pub dlam: Vec<f64>,
    pub mlam: Vec<f64>,
    /// Whether the mode was computed on exactly this discretization.
    pub native: bool,
}

impl LiftedMode {
    fn new(disc: &Discretization, psi: Vec<f64>, lam: Vec<f64>, gammas: Vec<Vec<f64>>, native: bool) -> Self {
        let mpsi = disc.ops.m_apply(&psi);
        let kpsi = disc.ops.k_apply(&psi);
        let dlam = disc.tderiv_apply(&lam);
        let mlam = disc.tmass_apply(&lam);
        LiftedMode { psi, lam, gammas, mpsi, kpsi, dlam, mlam, native }
    }
}

/// Transfers every mode onto `disc` (meshes and grids must be nested).
pub fn lift(sol: &SeparatedSolution, disc: &Discretization) -> Result<Vec<LiftedMode>> {
    sol.modes.iter().map(|m| lift_mode(m, disc)).collect()
}

pub fn lift_mode(m: &Mode, disc: &Discretization) -> Result<LiftedMode> {
    let same_mesh = m.mesh.id == disc.mesh().id;
    let psi = if same_mesh { m.psi.clone() } else { m.mesh.transfer_nodal(&m.psi, disc.mesh())? };
    let (lam, same_time) = match (&m.time, &disc.time) {
        (TimeDisc::Steady, TimeDisc::Steady) => (m.lam.clone(), true),
        (TimeDisc::Grid(a), TimeDisc::Grid(b)) if a.id == b.id => (m.lam.clone(), true),
        (TimeDisc::Grid(a), TimeDisc::Grid(b)) => (a.transfer(&m.lam, b)?, false),
        _ => return Err(Error::NotNested("steady and transient discretizations mixed".into())),
    };
    Ok(LiftedMode::new(disc, psi, lam, m.gammas.clone(), same_mesh && same_time))
}

/// Outcome of a greedy step.
#[derive(Clone, Debug)]
pub enum Step {
    Mode(Mode),
    /// The residual vanished: the new mode would carry no energy.
    Converged,
}

/// Per-axis tabulated coefficient factors.
struct Coefs<'a> {
    problem: &'a Problem,
}

impl Coefs<'_> {
    /// `base * prod_{j != skip} int chi_j g1_j g2_j`.
    fn integral(&self, which: char, g1: &[Vec<f64>], g2: &[Vec<f64>], skip: Option<usize>) -> f64 {
        let c = match which {
            'c' => &self.problem.c,
            'k' => &self.problem.k,
            _ => &self.problem.r,
        };
        let mut v = c.base;
        for (j, ax) in self.problem.axes.iter().enumerate() {
            if Some(j) != skip {
                v *= pint(ax, &c.tables[j], &g1[j], &g2[j]);
            }
        }
        v
    }

    fn table(&self, which: char, j: usize) -> &[f64] {
        match which {
            'c' => &self.problem.c.tables[j],
            'k' => &self.problem.k.tables[j],
            _ => &self.problem.r.tables[j],
        }
    }

    /// `prod_{j != skip} int beta_sj g_j`.
    fn load_integral(&self, s: usize, g: &[Vec<f64>], skip: Option<usize>) -> f64 {
        let l = &self.problem.loads[s];
        let mut v = 1.0;
        for (j, ax) in self.problem.axes.iter().enumerate() {
            if Some(j) != skip {
                let ones = vec![1.0; ax.len()];
                v *= pint(ax, &l.tables[j], &g[j], &ones);
            }
        }
        v
    }
}

fn normalize_gamma(axis: &ParamAxis, g: &mut Vec<f64>) {
    let n = pint(axis, &vec![1.0; axis.len()], g, g).sqrt();
    if n > 1e-300 && n.is_finite() {
        g.iter_mut().for_each(|v| *v /= n);
    } else {
        *g = vec![1.0; axis.len()];
        let n = pint(axis, &vec![1.0; axis.len()], g, g).sqrt();
        g.iter_mut().for_each(|v| *v /= n);
    }
}

/// Computes mode number `prev.len() + 1` on `disc` by `k_max` fixed-point
/// sweeps (time, each parameter axis, space), always ending on the space solve.
pub fn compute_next_mode(problem: &Problem, disc: &Discretization, prev: &[LiftedMode], k_max: usize, seed: u64) -> Result<Step> {
    if problem.has_zero_loading() {
        return Ok(Step::Converged);
    }
    let ops = &disc.ops;
    let coefs = Coefs { problem };
    let nax = problem.axes.len();
    let mut gammas: Vec<Vec<f64>> = problem.axes.iter().map(|a| vec![1.0; a.len()]).collect();
    for (g, a) in gammas.iter_mut().zip(&problem.axes) {
        normalize_gamma(a, g);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(prev.len() as u64));
    let x0: Vec<f64> = (0..ops.dofs.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut psi = ops.dofs.expand(&x0);
    let e0 = ops.k_full.quad(&psi, &psi).sqrt();
    if e0 > 0.0 {
        psi.iter_mut().for_each(|v| *v /= e0);
    }
    let mut lam = match &disc.time {
        TimeDisc::Steady => vec![1.0],
        TimeDisc::Grid(g) => {
            let v: Vec<f64> = g.nodes.clone();
            let n = g.l2_norm(&v);
            v.iter().map(|x| x / n).collect()
        }
    };
    let nload = problem.loads.len();

    for _ in 0..k_max {
        let mpsi = ops.m_apply(&psi);
        let kpsi = ops.k_apply(&psi);
        let pm = dot(&psi, &mpsi);
        let pk = dot(&psi, &kpsi);
        let pf: Vec<f64> = ops.loads.iter().map(|f| dot(&psi, f)).collect();
        let pmi: Vec<f64> = prev.iter().map(|m| dot(&psi, &m.mpsi)).collect();
        let pki: Vec<f64> = prev.iter().map(|m| dot(&psi, &m.kpsi)).collect();

        // Time problem.
        if let TimeDisc::Grid(g) = &disc.time {
            let a_c = coefs.integral('c', &gammas, &gammas, None) * pm;
            let a_k = coefs.integral('k', &gammas, &gammas, None) * pk;
            let a_r = coefs.integral('r', &gammas, &gammas, None) * pm;
            let mut rhs = vec![0.0; g.nodes.len()];
            for s in 0..nload {
                let f = coefs.load_integral(s, &gammas, None) * pf[s];
                for (r, a) in rhs.iter_mut().zip(&disc.alpha_moments[s]) {
                    *r += f * a;
                }
            }
            for (i, m) in prev.iter().enumerate() {
                let cc = coefs.integral('c', &m.gammas, &gammas, None) * pmi[i];
                let kk = coefs.integral('k', &m.gammas, &gammas, None) * pki[i];
                let rr = coefs.integral('r', &m.gammas, &gammas, None) * pmi[i];
                for n in 0..rhs.len() {
                    rhs[n] -= cc * m.dlam[n] + (kk + rr) * m.mlam[n];
                }
            }
            lam = solve_time_ode(g, a_c, a_k + a_r, &rhs)?;
            let n = g.l2_norm(&lam);
            if n > 1e-300 && n.is_finite() {
                lam.iter_mut().for_each(|v| *v /= n);
            } else {
                let v: Vec<f64> = g.nodes.clone();
                let n = g.l2_norm(&v);
                lam = v.iter().map(|x| x / n).collect();
            }
        }
        let dl = disc.tderiv(&lam, &lam);
        let ml = disc.tmass(&lam, &lam);
        let al: Vec<f64> = disc.alpha_moments.iter().map(|a| dot(a, &lam)).collect();
        let dli: Vec<f64> = prev.iter().map(|m| dot(&lam, &m.dlam)).collect();
        let mli: Vec<f64> = prev.iter().map(|m| dot(&lam, &m.mlam)).collect();

        // Parameter problems, pointwise on each grid.
        for j in 0..nax {
            let ax = &problem.axes[j];
            let cj = coefs.integral('c', &gammas, &gammas, Some(j)) * pm * dl;
            let kj = coefs.integral('k', &gammas, &gammas, Some(j)) * pk * ml;
            let rj = coefs.integral('r', &gammas, &gammas, Some(j)) * pm * ml;
            let lj: Vec<f64> = (0..nload).map(|s| coefs.load_integral(s, &gammas, Some(j)) * pf[s] * al[s]).collect();
            let mut ci = Vec::with_capacity(prev.len());
            for (i, m) in prev.iter().enumerate() {
                ci.push((
                    coefs.integral('c', &m.gammas, &gammas, Some(j)) * pmi[i] * dli[i],
                    coefs.integral('k', &m.gammas, &gammas, Some(j)) * pki[i] * mli[i],
                    coefs.integral('r', &m.gammas, &gammas, Some(j)) * pmi[i] * mli[i],
                ));
            }
            let (tc, tk, tr) = (coefs.table('c', j), coefs.table('k', j), coefs.table('r', j));
            let mut g = vec![0.0; ax.len()];
            for k in 0..ax.len() {
                let den = tc[k] * cj + tk[k] * kj + tr[k] * rj;
                let mut num: f64 = (0..nload).map(|s| problem.loads[s].tables[j][k] * lj[s]).sum();
                for (i, m) in prev.iter().enumerate() {
                    let (a, b, c) = ci[i];
                    num -= m.gammas[j][k] * (tc[k] * a + tk[k] * b + tr[k] * c);
                }
                g[k] = if den.abs() > 0.0 { num / den } else { 0.0 };
            }
            normalize_gamma(ax, &mut g);
            gammas[j] = g;
        }

        // Space problem.
        let a_m = coefs.integral('c', &gammas, &gammas, None) * dl + coefs.integral('r', &gammas, &gammas, None) * ml;
        let a_k = coefs.integral('k', &gammas, &gammas, None) * ml;
        let mut rhs = vec![0.0; ops.n_nodes()];
        for s in 0..nload {
            let f = coefs.load_integral(s, &gammas, None) * al[s];
            for (r, v) in rhs.iter_mut().zip(&ops.loads[s]) {
                *r += f * v;
            }
        }
        for (i, m) in prev.iter().enumerate() {
            let cm = coefs.integral('c', &m.gammas, &gammas, None) * dli[i] + coefs.integral('r', &m.gammas, &gammas, None) * mli[i];
            let ck = coefs.integral('k', &m.gammas, &gammas, None) * mli[i];
            for n in 0..rhs.len() {
                rhs[n] -= cm * m.mpsi[n] + ck * m.kpsi[n];
            }
        }
        psi = ops.solve_space(a_m.max(0.0), a_k, &rhs)?;
    }

    let energy = ops.k_full.quad(&psi, &psi);
    let reference = prev.first().map(|m| dot(&m.psi, &m.kpsi)).unwrap_or(energy);
    if !(energy > 1e-12 * reference) || energy == 0.0 {
        return Ok(Step::Converged);
    }
    Ok(Step::Mode(Mode { psi, mesh: disc.mesh().clone(), lam, time: disc.time.clone(), gammas }))
}

/// Appends modes on `disc` until `sol` has `m_target` modes or the residual
/// vanishes. Returns `true` when the greedy loop stopped on a zero residual.
pub fn extend(problem: &Problem, disc: &Discretization, sol: &mut SeparatedSolution, m_target: usize) -> Result<bool> {
    let mut lifted = lift(sol, disc)?;
    while sol.len() < m_target {
        match compute_next_mode(problem, disc, &lifted, problem.spec.solver.k_max, problem.spec.solver.seed)? {
            Step::Converged => return Ok(true),
            Step::Mode(m) => {
                lifted.push(lift_mode(&m, disc)?);
                sol.modes.push(m);
            }
        }
    }
    Ok(false)
}

/// Greedy PGD on the base discretization.
pub fn run_pgd(problem: &Problem, m_max: usize) -> Result<SeparatedSolution> {
    if m_max == 0 {
        return Err(Error::InvalidArgument("m_max must be >= 1".into()));
    }
    let disc = Discretization::base(problem)?;
    let mut sol = SeparatedSolution::default();
    extend(problem, &disc, &mut sol, m_max)?;
    Ok(sol)
}

/// Norm of the discrete weak residual: trapezoidal L2 over the parameter
/// grid of the Euclidean norm over (free space dof, time test function).
pub fn residual_norm(problem: &Problem, disc: &Discretization, lifted: &[LiftedMode]) -> f64 {
    let ops = &disc.ops;
    let r = |v: &[f64]| ops.dofs.restrict(v);
    let tt = |v: &[f64]| -> Vec<f64> {
        match disc.time {
            TimeDisc::Steady => v.to_vec(),
            TimeDisc::Grid(_) => v[1..].to_vec(),
        }
    };
    // (space, time, kind) with kind: Load(s) or mode coefficient.
    enum Kind {
        Load(usize),
        C(usize),
        K(usize),
        R(usize),
    }
    let mut terms: Vec<(Vec<f64>, Vec<f64>, Kind)> = Vec::new();
    for s in 0..problem.loads.len() {
        terms.push((r(&ops.loads[s]), tt(&disc.alpha_moments[s]), Kind::Load(s)));
    }
    for (i, m) in lifted.iter().enumerate() {
        let mp = r(&m.mpsi);
        if !disc.time.is_steady() {
            terms.push((mp.clone(), tt(&m.dlam), Kind::C(i)));
        }
        terms.push((r(&m.kpsi), tt(&m.mlam), Kind::K(i)));
        if !problem.r.is_zero() {
            terms.push((mp, tt(&m.mlam), Kind::R(i)));
        }
    }
    let n = terms.len();
    let mut g = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let v = dot(&terms[a].0, &terms[b].0) * dot(&terms[a].1, &terms[b].1);
            g[a * n + b] = v;
            g[b * n + a] = v;
        }
    }
    let sizes: Vec<usize> = problem.axes.iter().map(|a| a.len()).collect();
    let mut total = 0.0;
    for idx in grid_indices(&sizes) {
        let w: f64 = problem.axes.iter().zip(&idx).map(|(a, &k)| a.weights[k]).product();
        let coef: Vec<f64> = terms
            .iter()
            .map(|t| match t.2 {
                Kind::Load(s) => problem.loads[s].factor_at_grid(&idx),
                Kind::C(i) => -problem.c.at_grid(&idx) * gamma_at_grid(&lifted[i].gammas, &idx),
                Kind::K(i) => -problem.k.at_grid(&idx) * gamma_at_grid(&lifted[i].gammas, &idx),
                Kind::R(i) => -problem.r.at_grid(&idx) * gamma_at_grid(&lifted[i].gammas, &idx),
            })
            .collect();
        let mut q = 0.0;
        for a in 0..n {
            for b in 0..n {
                q += coef[a] * coef[b] * g[a * n + b];
            }
        }
        total += w * q;
    }
    total.max(0.0).sqrt()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::problem::ProblemSpec;

    fn steady_k() -> Problem {
        Problem::new(
            ProblemSpec::from_json_str(
                r#"{
            "domain": {"kind": "interval", "length": 1.0, "elements": 20, "dirichlet": ["left", "right"]},
            "time": {"steady": true},
            "coefficients": {"k": {"base": 1.0, "factors": {"k": {"expr": "p"}}}},
            "loads": [{"body": 1.0}],
            "parameters": [{"name": "k", "range": [1, 10], "count": 30}]
        }"#,
            )
            .unwrap(),
        )
        .unwrap()
    }

    pub(crate) fn beam() -> Problem {
        Problem::new(
            ProblemSpec::from_json_str(
                r#"{
            "domain": {"kind": "interval", "length": 1.0, "elements": 20, "dirichlet": ["left", "right"]},
            "time": {"horizon": 1.0, "steps": 10},
            "coefficients": {"k": {"base": 1.0, "factors": {"k": {"expr": "p"}}}},
            "loads": [{"alpha": {"expr": "sin(3*t)"}, "body": {"expr": "x"}}],
            "parameters": [{"name": "k", "range": [0, 100], "count": 40}]
        }"#,
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn grid_indices_are_lexicographic() {
        assert_eq!(grid_indices(&[2, 2]), vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(grid_indices(&[]), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn separable_steady_problem_is_rank_one() {
        let p = steady_k();
        let sol = run_pgd(&p, 3).unwrap();
        assert!(!sol.is_empty());
        let m = &sol.modes[0];
        // gamma is proportional to 1/k.
        let ax = &p.axes[0];
        let ratio: Vec<f64> = ax.points.iter().zip(&m.gammas[0]).map(|(k, g)| g * k).collect();
        for r in &ratio {
            assert!((r - ratio[0]).abs() < 1e-10 * ratio[0].abs());
        }
        let disc = Discretization::base(&p).unwrap();
        let k1 = disc.ops.k_full.quad(&m.psi, &m.psi);
        for extra in &sol.modes[1..] {
            assert!(disc.ops.k_full.quad(&extra.psi, &extra.psi) <= 1e-6 * k1);
        }
        let lifted = lift(&sol.truncated(1), &disc).unwrap();
        let r1 = residual_norm(&p, &disc, &lifted);
        let r0 = residual_norm(&p, &disc, &[]);
        // The Gram form of the norm cancels, so it resolves about sqrt(eps).
        assert!(r1 < 1e-6 * r0, "{r1} vs {r0}");
    }

    #[test]
    fn modes_are_normalized_and_residual_decreases() {
        let p = beam();
        let disc = Discretization::base(&p).unwrap();
        let mut sol = SeparatedSolution::default();
        extend(&p, &disc, &mut sol, 4).unwrap();
        assert_eq!(sol.len(), 4);
        let g = disc.grid().unwrap();
        let mut last = residual_norm(&p, &disc, &[]);
        for i in 0..sol.len() {
            let m = &sol.modes[i];
            assert!((g.l2_norm(&m.lam) - 1.0).abs() < 1e-12);
            assert_eq!(m.lam[0], 0.0);
            assert!((pint(&p.axes[0], &vec![1.0; 40], &m.gammas[0], &m.gammas[0]) - 1.0).abs() < 1e-12);
            assert_eq!(m.psi[0], 0.0);
            let r = residual_norm(&p, &disc, &lift(&sol.truncated(i + 1), &disc).unwrap());
            assert!(r <= 1.01 * last, "mode {}: {r} > {last}", i + 1);
            last = r;
        }
    }

    #[test]
    fn zero_loading_converges_immediately() {
        let mut spec = steady_k().spec.clone();
        spec.loads[0].body = Some(crate::expr::FunctionSpec::Const(0.0));
        let p = Problem::new(spec).unwrap();
        assert!(run_pgd(&p, 3).unwrap().is_empty());
    }

    #[test]
    fn evaluate_matches_brute_force_sum() {
        let p = beam();
        let sol = run_pgd(&p, 2).unwrap();
        let (x, t, k) = (0.33, 0.47, 12.5);
        let mut direct = 0.0;
        for m in &sol.modes {
            let e = m.mesh.locate(x, 0.0).unwrap();
            let s = m.mesh.eval_nodal(&m.psi, e, x, 0.0);
            let g = m.time.grid().unwrap();
            let l = g.eval(&m.lam, t);
            let ax = &p.axes[0];
            let j = ax.points.iter().position(|&q| q > k).unwrap();
            let w = (k - ax.points[j - 1]) / (ax.points[j] - ax.points[j - 1]);
            direct += s * l * ((1.0 - w) * m.gammas[0][j - 1] + w * m.gammas[0][j]);
        }
        let v = sol.evaluate(&p, x, 0.0, t, &[k]).unwrap();
        assert!((v - direct).abs() < 1e-14 * direct.abs().max(1e-300));
        assert_eq!(sol.evaluate(&p, x, 0.0, 0.0, &[k]).unwrap(), 0.0);
    }
}
