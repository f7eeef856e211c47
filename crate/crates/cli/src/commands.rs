use pgd_certify::adapt::{greedy, HistoryRow, Settings};
use pgd_certify::disc::Discretization;
use pgd_certify::equil::fe_equilibrium_residual;
use pgd_certify::estimate::Certificate;
use pgd_certify::goal::{build_adjoint, worst, GoalCertificate};
use pgd_certify::oracle::{audit_global, qoi_reference, refined_disc, sample_indices, ModalOracle};
use pgd_certify::pgd::{extend, SeparatedSolution};
use pgd_certify::report::{goal_csv, history_csv, sweep_csv, write};
use pgd_certify::time::TimeDisc;
use pgd_certify::{Error, Problem, ProblemSpec, Result};
use rand::{Rng, SeedableRng};
use serde_json::json;

use crate::Common;

pub enum Outcome {
    Ok,
    VerifyFailed,
}

fn load(c: &Common) -> Result<Problem> {
    let mut spec = ProblemSpec::from_file(&c.input)?;
    if let Some(m) = c.m {
        if m == 0 {
            return Err(Error::InvalidArgument("--m must be >= 1".into()));
        }
        spec.solver.m_max = m;
    }
    if let Some(k) = c.k_max {
        spec.solver.k_max = k;
    }
    if let Some(s) = c.seed {
        spec.solver.seed = s;
    }
    if let Some(a) = c.alpha {
        spec.adaptivity.alpha = a;
    }
    if let Some(g) = c.gamma_tol {
        if !(g > 0.0) {
            return Err(Error::InvalidArgument("--gamma-tol must be positive".into()));
        }
        spec.adaptivity.gamma_tol = Some(g);
    }
    if c.sweep_density == Some(0) {
        return Err(Error::InvalidArgument("--sweep-density must be >= 1".into()));
    }
    Problem::new(spec)
}

fn seed(p: &Problem) -> u64 {
    p.spec.solver.seed
}

fn solve_base(p: &Problem) -> Result<(Discretization, SeparatedSolution)> {
    let disc = Discretization::base(p)?;
    let mut sol = SeparatedSolution::default();
    extend(p, &disc, &mut sol, p.spec.solver.m_max)?;
    Ok((disc, sol))
}

fn write_solution(c: &Common, p: &Problem, sol: &SeparatedSolution) -> Result<()> {
    write(&c.out, "solution.json", &serde_json::to_string_pretty(&sol.to_json(p))?)
}

fn print(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).unwrap());
}

pub fn solve(c: &Common) -> Result<Outcome> {
    let p = load(c)?;
    let (_, sol) = solve_base(&p)?;
    write_solution(c, &p, &sol)?;
    print(json!({"command": "solve", "m": sol.len(), "out": c.out}));
    Ok(Outcome::Ok)
}

pub fn certify(c: &Common) -> Result<Outcome> {
    let p = load(c)?;
    let (disc, sol) = solve_base(&p)?;
    let cert = Certificate::new(&p, &disc, &sol)?;
    let sw = cert.sweep(&p, c.sweep_density);
    write(&c.out, "sweep.csv", &sweep_csv(&sw.rows, p.n_params(), seed(&p)))?;
    write_solution(c, &p, &sol)?;
    let w = sw.worst();
    print(json!({
        "command": "certify",
        "m": sol.len(),
        "p_max": w.p,
        "e_cre": w.e_cre(),
        "eta_pgd": w.eta_pgd(),
        "eta_dis": w.eta_dis(),
        "eta_h": w.eta_h(),
        "eta_dt": w.eta_dt(),
        "flux_route": format!("{:?}", cert.route()),
        "eet": cert.eet_report(),
    }));
    Ok(Outcome::Ok)
}

pub fn sweep(c: &Common) -> Result<Outcome> {
    let p = load(c)?;
    let disc = Discretization::base(&p)?;
    let mut sol = SeparatedSolution::default();
    let mut rows = Vec::new();
    let mut last = None;
    for m in 1..=p.spec.solver.m_max {
        let exhausted = extend(&p, &disc, &mut sol, m)?;
        if exhausted && sol.len() < m {
            break;
        }
        let cert = Certificate::new(&p, &disc, &sol)?;
        let sw = cert.sweep(&p, c.sweep_density);
        let w = sw.worst();
        rows.push(HistoryRow {
            step: m - 1,
            action: if m == p.spec.solver.m_max { "m_max".into() } else { "add_mode".into() },
            m,
            n_elements: disc.mesh().n_elements(),
            n_timesteps: disc.time.n_steps(),
            p_max: w.p.clone(),
            e2_max: w.e2,
            eta_pgd2: w.eta_pgd2,
            eta_dis2: w.eta_dis2,
            eta_h2: w.eta_h2,
            eta_dt2: w.eta_dt2,
            goal: None,
        });
        last = Some(sw);
    }
    write(&c.out, "history.csv", &history_csv(&rows, seed(&p)))?;
    if let Some(sw) = &last {
        write(&c.out, "sweep.csv", &sweep_csv(&sw.rows, p.n_params(), seed(&p)))?;
    }
    write_solution(c, &p, &sol)?;
    print(json!({"command": "sweep", "m": sol.len(), "history": rows}));
    Ok(Outcome::Ok)
}

pub fn goal(c: &Common) -> Result<Outcome> {
    let p = load(c)?;
    let setup = build_adjoint(&p)?;
    let (disc, sol) = solve_base(&p)?;
    let cert = Certificate::new(&p, &disc, &sol)?;
    let m_adj = c.m_adjoint.unwrap_or(sol.len() + 2);
    let gc = GoalCertificate::new(&setup, &disc, &cert, m_adj)?;
    let (_, rows) = gc.sweep(&p, &setup.adjoint, &cert, c.sweep_density);
    write(&c.out, "goal.csv", &goal_csv(&rows, p.n_params(), seed(&p)))?;
    write_solution(c, &p, &sol)?;
    let w = &rows[worst(&rows)];
    print(json!({"command": "goal", "m": sol.len(), "m_adjoint": gc.adjoint.m(), "worst": w}));
    Ok(Outcome::Ok)
}

pub fn adapt(c: &Common) -> Result<Outcome> {
    let p = load(c)?;
    let mut s = Settings::from_problem(&p);
    s.sweep_density = c.sweep_density;
    s.goal = c.goal;
    if c.goal && p.qoi.is_none() {
        return Err(Error::InvalidProblem("--goal needs a qoi in the problem file".into()));
    }
    let st = greedy(&p, &s)?;
    write(&c.out, "history.csv", &history_csv(&st.history, seed(&p)))?;
    if let Some(sw) = &st.last_sweep {
        write(&c.out, "sweep.csv", &sweep_csv(&sw.rows, p.n_params(), seed(&p)))?;
    }
    write_solution(c, &p, &st.sol)?;
    print(json!({
        "command": "adapt",
        "converged": st.converged,
        "m": st.sol.len(),
        "n_elements": st.disc.mesh().n_elements(),
        "n_timesteps": st.disc.time.n_steps(),
        "steps": st.history.len(),
    }));
    Ok(Outcome::Ok)
}

pub fn verify(c: &Common) -> Result<Outcome> {
    let p = load(c)?;
    let (disc, sol) = solve_base(&p)?;
    let cert = Certificate::new(&p, &disc, &sol)?;
    let oracle = ModalOracle::new(refined_disc(&p, &disc, c.oracle_refine)?)?;
    let samples = sample_indices(&p, 10);
    let mut ok = true;
    let mut line = |pass: bool, what: String| {
        ok &= pass;
        println!("{} {what}", if pass { "PASS" } else { "FAIL" });
    };

    for a in audit_global(&p, &cert, &sol, &oracle, &samples)? {
        line(a.e_cre >= 0.98 * a.error, format!("bound p={:?} E_CRE={:.6e} oracle_error={:.6e} effectivity={:.3}", a.p, a.e_cre, a.error, a.effectivity()));
    }

    let sw = cert.sweep(&p, c.sweep_density);
    let split = sw.rows.iter().fold(0.0f64, |acc, r| {
        let a = (r.eta_pgd2 + r.eta_dis2 - r.e2).abs() / r.e2.abs().max(1e-300);
        let b = (r.eta_h2 + r.eta_dt2 - r.eta_dis2).abs() / r.e2.abs().max(1e-300);
        acc.max(a).max(b)
    });
    line(split <= 1e-12, format!("split identities max relative defect {split:.3e}"));

    let lifted = &cert.lifted;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed(&p));
    let mut fe: f64 = 0.0;
    for _ in 0..20 {
        let t = match &disc.time {
            TimeDisc::Grid(g) => rng.gen_range(0.0..g.horizon()),
            TimeDisc::Steady => 0.0,
        };
        let idx: Vec<usize> = p.axes.iter().map(|a| rng.gen_range(0..a.len())).collect();
        fe = fe.max(fe_equilibrium_residual(&p, &disc, lifted, &cert.fe, t, &p.grid_point(&idx)));
    }
    line(fe <= 1e-10, format!("FE equilibrium residual {fe:.3e}"));
    let eet = cert.eet_report();
    line(eet.traction_residual.max(eet.element_residual) <= 1e-10, format!("EET traction {:.3e} element {:.3e}", eet.traction_residual, eet.element_residual));

    if p.qoi.is_some() {
        let setup = build_adjoint(&p)?;
        let gc = GoalCertificate::new(&setup, &disc, &cert, c.m_adjoint.unwrap_or(sol.len() + 2))?;
        for idx in sample_indices(&p, 5) {
            let pt = p.grid_point(&idx);
            let q = qoi_reference(&p, &setup, &oracle, &pt)?;
            let b = gc.bounds(&p, &setup.adjoint, &cert, pgd_certify::estimate::At::Grid(&idx));
            let slack = 0.02 * q.abs();
            line(
                b.lower - slack <= q && q <= b.upper + slack && b.half_width <= b.first_width,
                format!("goal p={pt:?} Q_ref={q:.6e} in [{:.6e}, {:.6e}]", b.lower, b.upper),
            );
        }
    }
    Ok(if ok { Outcome::Ok } else { Outcome::VerifyFailed })
}
