//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use pgd_certify::adapt::{greedy, Action, Settings};
use pgd_certify::disc::Discretization;
use pgd_certify::equil::{fe_equilibrium_residual, FluxRoute};
use pgd_certify::estimate::{At, Certificate, ErrorBreakdown};
use pgd_certify::goal::{build_adjoint, GoalCertificate};
use pgd_certify::oracle::{audit_global, brute_force_e2, qoi_reference, refined_disc, sample_indices, ModalOracle};
use pgd_certify::pgd::{extend, SeparatedSolution};
use pgd_certify::time::TimeDisc;
use pgd_certify::{Problem, ProblemSpec};
use rand::{Rng, SeedableRng};

fn case(name: &str) -> Problem {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(name);
    Problem::from_file(&path).expect("case file")
}

fn inline(json: &str) -> Problem {
    Problem::new(ProblemSpec::from_json_str(json).unwrap()).unwrap()
}

struct Report {
    failed: usize,
    rows: Vec<ErrorBreakdown>,
}

impl Report {
    fn line(&mut self, id: usize, title: &str, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {id:>2} {title}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64());
    }
}

fn max_by(rows: &[ErrorBreakdown], f: impl Fn(&ErrorBreakdown) -> f64) -> f64 {
    rows.iter().map(f).fold(0.0, f64::max)
}

/// Criteria 1 and 2 on the beam.
fn beam(r: &mut Report) {
    let t0 = Instant::now();
    let p = case("beam1d.json");
    let disc = Discretization::base(&p).unwrap();
    let mut sol = SeparatedSolution::default();
    extend(&p, &disc, &mut sol, 5).unwrap();
    let oracle = ModalOracle::new(refined_disc(&p, &disc, 8).unwrap()).unwrap();
    let samples = sample_indices(&p, 10);
    let mut worst = f64::INFINITY;
    let mut pgd = vec![];
    let mut dis = vec![];
    for m in 1..=5 {
        let part = sol.truncated(m);
        let cert = Certificate::new(&p, &disc, &part).unwrap();
        for a in audit_global(&p, &cert, &part, &oracle, &samples).unwrap() {
            worst = worst.min(a.effectivity());
        }
        let sw = cert.sweep(&p, None);
        pgd.push(max_by(&sw.rows, |b| b.eta_pgd()));
        dis.push(max_by(&sw.rows, |b| b.eta_dis()));
        r.rows.extend(sw.rows);
    }
    let secs = t0.elapsed().as_secs_f64();
    r.line(
        1,
        "guaranteed global bound (beam, 10 k, m=1..5, oracle 8x/8x)",
        worst >= 0.98 && secs <= 60.0,
        format!("min E_CRE/error = {worst:.4} (>= 0.98), {secs:.1}s (<= 60s)"),
        t0,
    );
    let t1 = Instant::now();
    let ratio = pgd[3] / pgd[0];
    r.line(
        2,
        "1D convergence plateau",
        pgd[3] <= dis[3] && ratio <= 0.1,
        format!("max eta_PGD(4) = {:.3e} vs max eta_dis(4) = {:.3e}; eta_PGD(4)/eta_PGD(1) = {ratio:.3} (<= 0.1); eta_PGD(m) = {}", pgd[3], dis[3], pgd.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" ")),
        t1,
    );
}

/// Criteria 3 and 8 on the 2D thermal case.
fn thermal(r: &mut Report) {
    let t0 = Instant::now();
    let p = case("thermal2d.json");
    let disc = Discretization::base(&p).unwrap();
    let mut sol = SeparatedSolution::default();
    let mut first = None;
    let mut trace = vec![];
    for m in 1..=6 {
        extend(&p, &disc, &mut sol, m).unwrap();
        let cert = Certificate::new(&p, &disc, &sol).unwrap();
        let sw = cert.sweep(&p, None);
        let w = sw.worst().clone();
        trace.push(format!("m={m}: {:.2e}/{:.2e}", w.eta_pgd(), w.eta_dis()));
        if first.is_none() && w.eta_dis() > w.eta_pgd() {
            first = Some(m);
        }
        r.rows.extend(sw.rows);
    }
    let secs = t0.elapsed().as_secs_f64();
    r.line(
        3,
        "2D crossover eta_dis > eta_PGD at p_max",
        matches!(first, Some(2..=4)) && secs <= 600.0,
        format!("first m = {first:?} (want 2..4); eta_PGD/eta_dis {}", trace.join(", ")),
        t0,
    );

    let t1 = Instant::now();
    let part = sol.truncated(5);
    let cert = Certificate::new(&p, &disc, &part).unwrap();
    let setup = build_adjoint(&p).unwrap();
    let gc = GoalCertificate::new(&setup, &disc, &cert, 7).unwrap();
    let oracle = ModalOracle::new(refined_disc(&p, &disc, 4).unwrap()).unwrap();
    let (_, rows) = gc.sweep(&p, &setup.adjoint, &cert, None);
    let ordered = rows.iter().all(|b| b.half_width <= b.first_width);
    let mut inside = true;
    let mut detail = vec![];
    for idx in sample_indices(&p, 5) {
        let pt = p.grid_point(&idx);
        let q = qoi_reference(&p, &setup, &oracle, &pt).unwrap();
        let b = gc.bounds(&p, &setup.adjoint, &cert, At::Grid(&idx));
        let slack = 0.02 * q.abs();
        inside &= b.lower - slack <= q && q <= b.upper + slack;
        detail.push(format!("{pt:?}: {q:.4} in [{:.4}, {:.4}]", b.lower, b.upper));
    }
    let secs = t1.elapsed().as_secs_f64();
    r.line(
        8,
        "goal bound containment (m=5, m'=7, 5 points, oracle 4x/4x)",
        inside && ordered && secs <= 900.0,
        format!("half_width <= first width on all {} points: {ordered}; {}", rows.len(), detail.join("; ")),
        t1,
    );
}

fn split(r: &mut Report) {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for b in &r.rows {
        let s = b.e2.abs().max(1e-300);
        worst = worst.max((b.eta_pgd2 + b.eta_dis2 - b.e2).abs() / s).max((b.eta_h2 + b.eta_dt2 - b.eta_dis2).abs() / s);
    }
    let n = r.rows.len();
    r.line(4, "split identities", worst <= 1e-12, format!("max relative defect {worst:.2e} over {n} breakdowns"), t0);
}

fn exact_1d(r: &mut Report) {
    let t0 = Instant::now();
    let p = inline(
        r#"{"domain": {"kind": "interval", "length": 1.0, "elements": 20, "dirichlet": ["left", "right"]},
            "time": {"steady": true}, "coefficients": {"k": {"base": 1.0}},
            "loads": [{"body": 1.0}]}"#,
    );
    let disc = Discretization::base(&p).unwrap();
    let mut sol = SeparatedSolution::default();
    extend(&p, &disc, &mut sol, 1).unwrap();
    let cert = Certificate::new(&p, &disc, &sol).unwrap();
    let e2 = cert.e2(&p, At::Grid(&[]));
    let h: f64 = 0.05;
    let exact = h * h / 12.0;
    let eff = e2.sqrt() / exact.sqrt();
    r.line(5, "exact effectivity, 1D steady f=1", (e2 - exact).abs() <= 1e-8 && (eff - 1.0).abs() <= 1e-6, format!("E^2 = {e2:.6e} vs h^2/12 = {exact:.6e}, effectivity {eff:.9}"), t0);
}

fn rank_one(r: &mut Report) {
    let t0 = Instant::now();
    let p = inline(
        r#"{"domain": {"kind": "interval", "length": 1.0, "elements": 20, "dirichlet": ["left", "right"]},
            "time": {"steady": true}, "coefficients": {"k": {"base": 1.0, "factors": {"k": {"expr": "p"}}}},
            "loads": [{"body": 1.0}], "parameters": [{"name": "k", "range": [1, 10], "count": 10}]}"#,
    );
    let disc = Discretization::base(&p).unwrap();
    let mut sol = SeparatedSolution::default();
    extend(&p, &disc, &mut sol, 3).unwrap();
    let cert = Certificate::new(&p, &disc, &sol.truncated(1)).unwrap();
    let sw = cert.sweep(&p, None);
    let ratio = sw.rows.iter().map(|b| b.eta_pgd() / b.e_cre()).fold(0.0, f64::max);
    let energy = |i: usize| -> f64 {
        sol.modes.get(i).map(|m| {
            let ops = &disc.ops;
            m.psi.iter().zip(ops.k_apply(&m.psi)).map(|(a, b)| a * b).sum::<f64>()
                * m.lam.iter().map(|v| v * v).sum::<f64>().max(1e-300) * m.gammas.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).product::<f64>()
        })
        .unwrap_or(0.0)
    };
    let rel = (1..3).map(|i| energy(i) / energy(0)).fold(0.0, f64::max);
    r.line(6, "rank-one exactness", ratio <= 1e-6 && rel <= 1e-6, format!("max eta_PGD/E_CRE = {ratio:.2e}, modes 2-3 energy ratio {rel:.2e} ({} modes kept)", sol.len()), t0);
}

fn equilibrium(r: &mut Report) {
    let t0 = Instant::now();
    let mut fe: f64 = 0.0;
    let mut eet: f64 = 0.0;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    for name in ["beam1d.json", "thermal2d.json"] {
        let p = case(name);
        let disc = Discretization::base(&p).unwrap();
        let mut sol = SeparatedSolution::default();
        extend(&p, &disc, &mut sol, 5).unwrap();
        let cert = Certificate::new(&p, &disc, &sol).unwrap();
        for _ in 0..20 {
            let t = rng.gen_range(0.0..p.horizon);
            let idx: Vec<usize> = p.axes.iter().map(|a| rng.gen_range(0..a.len())).collect();
            fe = fe.max(fe_equilibrium_residual(&p, &disc, &cert.lifted, &cert.fe, t, &p.grid_point(&idx)));
        }
        let rep = cert.eet_report();
        eet = eet.max(rep.traction_residual).max(rep.element_residual);
    }
    // Patch test: u = x on the unit square, flux 1 on the right side.
    let p = inline(
        r#"{"domain": {"kind": "quads", "cell": [0.25, 0.25], "cells": [4, 4], "dirichlet": ["left"], "neumann": ["right", "top", "bottom"]},
            "time": {"steady": true}, "coefficients": {"k": {"base": 1.0}},
            "loads": [{"flux": [{"tags": ["right"], "density": 1.0}]}]}"#,
    );
    let base = Discretization::base(&p).unwrap();
    let mut marks = vec![false; base.mesh().n_elements()];
    marks[5] = true;
    let disc = Discretization::new(&p, Arc::new(base.mesh().refine(&marks).unwrap()), TimeDisc::Steady).unwrap();
    let mut sol = SeparatedSolution::default();
    extend(&p, &disc, &mut sol, 1).unwrap();
    let patch = Certificate::new(&p, &disc, &sol).unwrap().e2(&p, At::Grid(&[])).max(0.0).sqrt();
    r.line(
        7,
        "equilibrium audits",
        fe <= 1e-10 && eet <= 1e-10 && patch <= 1e-12,
        format!("FE residual {fe:.2e}, EET residual {eet:.2e}, patch-test E_CRE {patch:.2e} (hanging mesh)"),
        t0,
    );
}

fn adaptive(r: &mut Report) {
    let t0 = Instant::now();
    let p = case("beam1d.json");
    let disc = Discretization::base(&p).unwrap();
    let mut sol = SeparatedSolution::default();
    extend(&p, &disc, &mut sol, 1).unwrap();
    let e1 = Certificate::new(&p, &disc, &sol).unwrap().sweep(&p, None).worst().e_cre();
    let mut s = Settings::from_problem(&p);
    s.gamma_tol = Some(0.5 * e1);
    let st = greedy(&p, &s).unwrap();
    let refine_ok = st.history.iter().all(|h| !h.action.starts_with("refine") || h.eta_dis2 > h.eta_pgd2);
    let last = st.history.last().unwrap();
    let final_e = last.e2_max.sqrt();
    let actions: Vec<&str> = st.history.iter().map(|h| h.action.as_str()).collect();
    let _ = Action::Stop;
    r.line(
        9,
        "adaptive mechanism (gamma_tol = E(m=1)/2)",
        st.converged && st.history.len() <= 20 && refine_ok && final_e <= 0.5 * e1,
        format!("{} steps {:?}, final max E_CRE {final_e:.4e} <= {:.4e}, {} elements x {} steps", st.history.len(), actions, 0.5 * e1, st.disc.mesh().n_elements(), st.disc.time.n_steps()),
        t0,
    );
}

fn brute_force(r: &mut Report) {
    let t0 = Instant::now();
    let p = inline(
        r#"{"domain": {"kind": "interval", "length": 1.0, "elements": 5, "dirichlet": ["left"], "neumann": ["right"]},
            "time": {"horizon": 1.0, "steps": 3},
            "coefficients": {"c": {"base": 1.0, "factors": {"c": {"expr": "p"}}}, "k": {"base": 2.0}, "r": {"base": 0.5}},
            "loads": [{"alpha": {"expr": "sin(2*t)"}, "body": {"expr": "1 + x"}}, {"alpha": 1.0, "flux": [{"tags": ["right"], "density": 0.5}]}],
            "parameters": [{"name": "c", "range": [1, 4], "count": 4}]}"#,
    );
    let disc = Discretization::base(&p).unwrap();
    let mut sol = SeparatedSolution::default();
    extend(&p, &disc, &mut sol, 2).unwrap();
    let cert = Certificate::new(&p, &disc, &sol).unwrap();
    let mut worst: f64 = 0.0;
    for gi in 0..4 {
        let fast = cert.e2(&p, At::Grid(&[gi]));
        let slow = brute_force_e2(&p, &cert, &[gi]);
        worst = worst.max((fast - slow).abs() / slow);
    }
    r.line(10, "separated algebra vs brute-force quadrature", worst <= 1e-10, format!("max relative difference {worst:.2e} (route {:?})", cert.route()), t0);
    let _ = FluxRoute::None;
}

fn main() {
    let mut r = Report { failed: 0, rows: vec![] };
    beam(&mut r);
    thermal(&mut r);
    split(&mut r);
    exact_1d(&mut r);
    rank_one(&mut r);
    equilibrium(&mut r);
    adaptive(&mut r);
    brute_force(&mut r);
    println!("{} criteria failed", r.failed);
    if r.failed > 0 {
        std::process::exit(1);
    }
}
