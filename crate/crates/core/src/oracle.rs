//! Full-order reference solutions for fixed parameter values, used to audit
//! the error bounds.
//!
//! The space-time Galerkin system (Q1 in space, cG(1) in time) is
//! diagonalized by the generalized eigenvectors of `(K, M)` on the free
//! dofs, which turns it into one scalar time problem per eigenvector. The
//! factorization is shared by every parameter value.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::disc::Discretization;
use crate::error::{Error, Result};
use crate::expr::Function;
use crate::mesh::SpaceMesh;
use crate::pgd::{gamma_product, LiftedMode};
use crate::problem::Problem;
use crate::time::{dot, solve_time_ode, TimeDisc};

/// Nodal values of a space-time field: `values[(node, time node)]`.
#[derive(Clone, Debug)]
pub struct SpaceTimeField {
    pub mesh: Arc<SpaceMesh>,
    pub time: TimeDisc,
    pub values: DMatrix<f64>,
}

pub struct ModalOracle {
    pub disc: Discretization,
    /// Generalized eigenvalues of `K phi = mu M phi`.
    pub mu: Vec<f64>,
    /// M-orthonormal eigenvectors on the free dofs (columns).
    pub phi: DMatrix<f64>,
    /// `phi_j . F_s` per load (rows j).
    load_coef: Vec<Vec<f64>>,
}

impl ModalOracle {
    pub fn new(disc: Discretization) -> Result<Self> {
        let m = disc.ops.m.to_dense();
        let k = disc.ops.k.to_dense();
        let chol = m.cholesky().ok_or_else(|| Error::Singular("mass matrix is not SPD".into()))?;
        let l = chol.l();
        let a1 = l.solve_lower_triangular(&k).ok_or_else(|| Error::Singular("triangular solve".into()))?;
        let a = l.solve_lower_triangular(&a1.transpose()).ok_or_else(|| Error::Singular("triangular solve".into()))?;
        let a = (&a + a.transpose()) * 0.5;
        let eig = a.symmetric_eigen();
        let phi = l.transpose().solve_upper_triangular(&eig.eigenvectors).ok_or_else(|| Error::Singular("triangular solve".into()))?;
        let mu: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let load_coef = disc
            .ops
            .loads
            .iter()
            .map(|f| {
                let r = DVector::from_vec(disc.ops.dofs.restrict(f));
                (phi.transpose() * r).iter().copied().collect()
            })
            .collect();
        Ok(ModalOracle { disc, mu, phi, load_coef })
    }

    pub fn n_modes(&self) -> usize {
        self.mu.len()
    }

    /// Modal time histories `y_j` (one value when steady).
    pub fn modal_solution(&self, problem: &Problem, p: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (c, k, r) = (problem.c.value(p), problem.k.value(p), problem.r.value(p));
        let betas: Vec<f64> = problem.loads.iter().map(|l| l.factor(p)).collect();
        let nt = self.disc.n_time();
        let mut out = Vec::with_capacity(self.n_modes());
        for j in 0..self.n_modes() {
            let mut rhs = vec![0.0; nt];
            for (s, b) in betas.iter().enumerate() {
                let f = b * self.load_coef[s][j];
                for (x, a) in rhs.iter_mut().zip(&self.disc.alpha_moments[s]) {
                    *x += f * a;
                }
            }
            let stiff = k * self.mu[j] + r;
            out.push(match &self.disc.time {
                TimeDisc::Steady => vec![rhs[0] / stiff],
                TimeDisc::Grid(g) => solve_time_ode(g, c, stiff, &rhs)?,
            });
        }
        Ok(out)
    }

    /// Nodal reference field.
    pub fn field(&self, problem: &Problem, p: &[f64]) -> Result<SpaceTimeField> {
        let y = self.modal_solution(problem, p)?;
        let nt = self.disc.n_time();
        let ymat = DMatrix::from_fn(self.n_modes(), nt, |j, t| y[j][t]);
        let dofs = &self.phi * ymat;
        let ops = &self.disc.ops;
        let mut values = DMatrix::zeros(ops.n_nodes(), nt);
        for t in 0..nt {
            let col: Vec<f64> = dofs.column(t).iter().copied().collect();
            values.set_column(t, &DVector::from_vec(ops.dofs.expand(&col)));
        }
        Ok(SpaceTimeField { mesh: self.disc.mesh().clone(), time: self.disc.time.clone(), values })
    }

    /// Modal coordinates of nodal fields lying in the discrete space.
    fn project(&self, mpsi: &[f64]) -> Vec<f64> {
        let r = DVector::from_vec(self.disc.ops.dofs.restrict(mpsi));
        (self.phi.transpose() * r).iter().copied().collect()
    }

    /// `|||u_ref - u_m|||(p)`: k- and r-energy over `I` plus the c-weighted
    /// L2 norm at the final time. `modes` must be lifted to this oracle's
    /// discretization.
    pub fn error_norm(&self, problem: &Problem, modes: &[LiftedMode], p: &[f64]) -> Result<f64> {
        let y = self.modal_solution(problem, p)?;
        let (c, k, r) = (problem.c.value(p), problem.k.value(p), problem.r.value(p));
        let coords: Vec<Vec<f64>> = modes.iter().map(|m| self.project(&m.mpsi)).collect();
        let g: Vec<f64> = modes.iter().map(|m| gamma_product(&problem.axes, &m.gammas, p)).collect();
        let mut total = 0.0;
        for j in 0..self.n_modes() {
            let mut e = y[j].clone();
            for (i, m) in modes.iter().enumerate() {
                let f = coords[i][j] * g[i];
                for (x, l) in e.iter_mut().zip(&m.lam) {
                    *x -= f * l;
                }
            }
            let w = k * self.mu[j] + r;
            total += match &self.disc.time {
                TimeDisc::Steady => w * e[0] * e[0],
                TimeDisc::Grid(gr) => {
                    let last = *e.last().unwrap();
                    w * dot(&e, &gr.mass_apply(&e)) + c * last * last
                }
            };
        }
        Ok(total.max(0.0).sqrt())
    }

    /// `int w(t) l(u_ref(t)) dt` for a tested nodal extractor `ell` and a
    /// time weight (ignored when steady).
    pub fn qoi(&self, problem: &Problem, ell: &[f64], weight: Option<&Function>, p: &[f64]) -> Result<f64> {
        let y = self.modal_solution(problem, p)?;
        let coef = self.project(ell);
        let wm = match (&self.disc.time, weight) {
            (TimeDisc::Grid(g), Some(w)) => g.moments(&|t| w.at_t(t), w.breakpoints()),
            (TimeDisc::Grid(_), None) => return Err(Error::InvalidArgument("transient qoi needs a time weight".into())),
            (TimeDisc::Steady, _) => vec![1.0],
        };
        Ok((0..self.n_modes()).map(|j| coef[j] * dot(&wm, &y[j])).sum())
    }
}

/// Reference solution at one parameter point on the given discretization.
pub fn reference_solve(problem: &Problem, p: &[f64], mesh: Arc<SpaceMesh>, time: TimeDisc) -> Result<SpaceTimeField> {
    let disc = Discretization::new(problem, mesh, time)?;
    ModalOracle::new(disc)?.field(problem, p)
}

/// Reference discretization `factor` times finer in space (uniform
/// bisection, so `factor` must be a power of two) and in time.
pub fn refined_disc(problem: &Problem, disc: &Discretization, factor: usize) -> Result<Discretization> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("oracle refinement {factor} is not a power of two")));
    }
    let mesh = Arc::new(disc.mesh().refine_uniform_times(factor.trailing_zeros() as usize));
    let time = match &disc.time {
        TimeDisc::Grid(g) => TimeDisc::Grid(Arc::new(g.refine(factor))),
        t => t.clone(),
    };
    Discretization::new(problem, mesh, time)
}

/// `count` grid points spread evenly over the lexicographically ordered
/// parameter grid (all of them when the grid is smaller).
pub fn sample_indices(problem: &Problem, count: usize) -> Vec<Vec<usize>> {
    let all = crate::pgd::grid_indices(&problem.axes.iter().map(|a| a.len()).collect::<Vec<_>>());
    if count >= all.len() || count == 0 {
        return all;
    }
    if count == 1 {
        return vec![all[all.len() - 1].clone()];
    }
    let n = all.len() - 1;
    let mut picks: Vec<usize> = (0..count).map(|k| ((k as f64) * n as f64 / (count - 1) as f64).round() as usize).collect();
    picks.dedup();
    picks.into_iter().map(|k| all[k].clone()).collect()
}

/// One line of a bound audit.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BoundAudit {
    pub p: Vec<f64>,
    pub e_cre: f64,
    pub error: f64,
}

impl BoundAudit {
    pub fn effectivity(&self) -> f64 {
        self.e_cre / self.error
    }
}

/// Compares `E_CRE` with the oracle error of the reduced solution.
pub fn audit_global(problem: &Problem, cert: &crate::estimate::Certificate, sol: &crate::pgd::SeparatedSolution, oracle: &ModalOracle, samples: &[Vec<usize>]) -> Result<Vec<BoundAudit>> {
    let lifted = crate::pgd::lift(sol, &oracle.disc)?;
    samples
        .iter()
        .map(|idx| {
            let p = problem.grid_point(idx);
            let error = oracle.error_norm(problem, &lifted, &p)?;
            Ok(BoundAudit { e_cre: cert.e2(problem, crate::estimate::At::Grid(idx)).max(0.0).sqrt(), error, p })
        })
        .collect()
}

/// Reference value of the quantity of interest on the oracle discretization.
pub fn qoi_reference(problem: &Problem, setup: &crate::goal::GoalSetup, oracle: &ModalOracle, p: &[f64]) -> Result<f64> {
    let ell = crate::fem::SpaceOperators::new(&setup.adjoint, oracle.disc.mesh().clone())?.loads[0].clone();
    oracle.qoi(problem, &ell, setup.weight.as_ref(), p)
}

/// `E_CRE^2` at a grid point by direct space-time quadrature of
/// `|q_hat - k grad u_m|^2 / k`, bypassing the separated Gram algebra.
pub fn brute_force_e2(problem: &Problem, cert: &crate::estimate::Certificate, idx: &[usize]) -> f64 {
    use crate::time::{merge_breaks, TimeQuadrature};
    let pt = problem.grid_point(idx);
    let (c, k, r) = (problem.c.value(&pt), problem.k.value(&pt), problem.r.value(&pt));
    let grid = cert.time.grid();
    let times: Vec<(f64, f64)> = match grid {
        None => vec![(0.0, 1.0)],
        Some(g) => {
            let mut br = g.nodes.clone();
            for l in &problem.loads {
                br = merge_breaks(&br, l.alpha.breakpoints());
            }
            let q = TimeQuadrature::new(&br, 0.0, g.horizon());
            q.points.into_iter().zip(q.weights).collect()
        }
    };
    let gam: Vec<f64> = cert.lifted.iter().map(|m| gamma_product(&problem.axes, &m.gammas, &pt)).collect();
    let beta: Vec<f64> = problem.loads.iter().map(|l| l.factor(&pt)).collect();
    let mut total = 0.0;
    for &(t, wt) in &times {
        let alpha: Vec<f64> = problem.loads.iter().map(|l| if grid.is_some() { l.alpha.at_t(t) } else { l.alpha.as_constant().unwrap_or(0.0) }).collect();
        let lam: Vec<(f64, f64)> = cert
            .lifted
            .iter()
            .map(|m| match grid {
                Some(g) => (g.eval(&m.lam, t), g.eval_derivative(&m.lam, t)),
                None => (m.lam[0], 0.0),
            })
            .collect();
        for &(e, x, y, wx) in &cert.samples.points {
            let mut q = [0.0; 2];
            for s in 0..problem.loads.len() {
                let f = cert.flux.loads[s].eval(e, x, y);
                for d in 0..2 {
                    q[d] += alpha[s] * beta[s] * f[d];
                }
            }
            for (i, m) in cert.lifted.iter().enumerate() {
                let a = (c * lam[i].1 + r * lam[i].0) * gam[i];
                let grad = cert.mesh.grad_nodal(&m.psi, e, x, y);
                let f = cert.flux.modes.get(i).map(|f| f.eval(e, x, y)).unwrap_or([0.0; 2]);
                for d in 0..2 {
                    q[d] += a * f[d] - k * lam[i].0 * gam[i] * grad[d];
                }
            }
            total += wt * wx * (q[0] * q[0] + q[1] * q[1]) / k;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgd::{extend, lift, SeparatedSolution};
    use crate::problem::ProblemSpec;

    fn beam(steps: usize) -> Problem {
        Problem::new(
            ProblemSpec::from_json_str(&format!(
                r#"{{
            "domain": {{"kind": "interval", "length": 1.0, "elements": 8, "dirichlet": ["left", "right"]}},
            "time": {{"horizon": 1.0, "steps": {steps}}},
            "coefficients": {{"c": {{"base": 2.0}}, "k": {{"base": 1.0, "factors": {{"k": {{"expr": "p"}}}}}}, "r": {{"base": 0.5}}}},
            "loads": [{{"alpha": {{"expr": "t"}}, "body": {{"expr": "x"}}}}, {{"alpha": 1.0, "body": 1.0}}],
            "parameters": [{{"name": "k", "range": [1, 5], "count": 5}}]
        }}"#
            ))
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn reference_is_galerkin_orthogonal() {
        let p = beam(6);
        let disc = Discretization::base(&p).unwrap();
        let field = reference_solve(&p, &[2.0], disc.mesh().clone(), disc.time.clone()).unwrap();
        let g = disc.grid().unwrap();
        let ops = &disc.ops;
        let (c, k, r) = (2.0, 2.0, 0.5);
        let nt = g.nodes.len();
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        // Residual row for every (space dof, time test 1..N).
        let u: Vec<Vec<f64>> = (0..nt).map(|t| field.values.column(t).iter().copied().collect()).collect();
        let mu: Vec<Vec<f64>> = u.iter().map(|v| ops.m_apply(v)).collect();
        let ku: Vec<Vec<f64>> = u.iter().map(|v| ops.k_apply(v)).collect();
        for node in 0..ops.n_nodes() {
            let mrow: Vec<f64> = (0..nt).map(|t| mu[t][node]).collect();
            let krow: Vec<f64> = (0..nt).map(|t| ku[t][node]).collect();
            let d = g.deriv_apply(&mrow);
            let mm = g.mass_apply(&mrow);
            let km = g.mass_apply(&krow);
            for n in 1..nt {
                let load: f64 = (0..2).map(|s| ops.loads[s][node] * disc.alpha_moments[s][n]).sum();
                scale = scale.max(load.abs());
                if p.base_mesh().dirichlet[node] {
                    continue;
                }
                worst = worst.max((c * d[n] + k * km[n] + r * mm[n] - load).abs());
            }
        }
        assert!(worst <= 1e-10 * scale, "{worst} vs {scale}");
    }

    #[test]
    fn error_of_the_oracle_itself_is_zero_and_pgd_error_decreases() {
        let p = beam(6);
        let disc = Discretization::base(&p).unwrap();
        let mut sol = SeparatedSolution::default();
        extend(&p, &disc, &mut sol, 4).unwrap();
        let oracle = ModalOracle::new(Discretization::base(&p).unwrap()).unwrap();
        let e0 = oracle.error_norm(&p, &[], &[3.0]).unwrap();
        let mut last = e0;
        for m in 1..=sol.len() {
            let lifted = lift(&sol.truncated(m), &disc).unwrap();
            let e = oracle.error_norm(&p, &lifted, &[3.0]).unwrap();
            assert!(e < last * 1.01);
            last = e;
        }
        assert!(last < 0.05 * e0);
    }

    #[test]
    fn samples_spread_over_the_grid() {
        let p = beam(2);
        let s = sample_indices(&p, 3);
        assert_eq!(s, vec![vec![0], vec![2], vec![4]]);
        assert_eq!(sample_indices(&p, 50).len(), 5);
        assert!(refined_disc(&p, &Discretization::base(&p).unwrap(), 3).is_err());
    }

    #[test]
    fn eigenvectors_are_mass_orthonormal() {
        let p = beam(2);
        let oracle = ModalOracle::new(Discretization::base(&p).unwrap()).unwrap();
        let m = oracle.disc.ops.m.to_dense();
        let g = oracle.phi.transpose() * m * &oracle.phi;
        assert!((g - DMatrix::identity(oracle.n_modes(), oracle.n_modes())).amax() < 1e-12);
    }
}
