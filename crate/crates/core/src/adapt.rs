//! Greedy adaptive driver: at the worst parameter point, add a mode while
//! the truncation indicator dominates, refine space and/or time otherwise.

use std::sync::Arc;

use serde::Serialize;

use crate::disc::Discretization;
use crate::error::Result;
use crate::estimate::{At, Certificate, ErrorBreakdown, Sweep};
use crate::goal::{build_adjoint, worst, GoalBounds, GoalCertificate, GoalSetup};
use crate::pgd::{extend, SeparatedSolution};
use crate::problem::Problem;
use crate::time::TimeDisc;

#[derive(Clone, Debug, Serialize)]
pub struct Settings {
    pub alpha: f64,
    pub gamma_tol: Option<f64>,
    pub theta: f64,
    pub time_factor: usize,
    pub local_2d: bool,
    pub max_steps: usize,
    pub m_max: usize,
    pub sweep_density: Option<usize>,
    /// Drive the loop by the goal-oriented bounds.
    pub goal: bool,
    /// Adjoint modes in excess of the primal ones.
    pub adjoint_extra: usize,
}

impl Settings {
    pub fn from_problem(problem: &Problem) -> Self {
        let a = &problem.spec.adaptivity;
        Settings {
            alpha: a.alpha,
            gamma_tol: a.gamma_tol,
            theta: a.theta,
            time_factor: a.time_factor.max(2),
            local_2d: a.local_2d,
            max_steps: a.max_steps,
            m_max: problem.spec.solver.m_max,
            sweep_density: None,
            goal: false,
            adjoint_extra: 2,
        }
    }
}

/// Refinement plan: per-element number of dyadic splits and the number of
/// time-grid refinements.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Refinement {
    pub space_levels: Vec<u32>,
    pub time_halvings: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Action {
    AddMode,
    Refine(Refinement),
    Stop,
}

impl Action {
    pub fn label(&self) -> &'static str {
        match self {
            Action::AddMode => "add_mode",
            Action::Stop => "stop",
            Action::Refine(r) => match (r.space_levels.iter().any(|&l| l > 0), r.time_halvings > 0) {
                (true, true) => "refine_space_time",
                (true, false) => "refine_space",
                _ => "refine_time",
            },
        }
    }
}

/// Smallest set of elements carrying at least `theta` of the total
/// (largest first, ties by index).
pub fn dorfler(local: &[f64], theta: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..local.len()).collect();
    order.sort_by(|&a, &b| local[b].partial_cmp(&local[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let total: f64 = local.iter().map(|v| v.max(0.0)).sum();
    let mut marks = vec![false; local.len()];
    let mut acc = 0.0;
    for &e in &order {
        if acc >= theta * total && acc > 0.0 {
            break;
        }
        marks[e] = true;
        acc += local[e].max(0.0);
    }
    marks
}

/// Plans dyadic refinements until the predicted discretization indicator
/// `scale * (sum(space) + time)` drops to `target`, assuming every split of
/// an element divides its contribution by 4 and every time halving divides
/// the time part by 4 (first-order rates of the energy norm, squared).
pub fn plan_refinement(space: &[f64], time: f64, scale: f64, target: f64, theta: f64, local: bool, transient: bool) -> Refinement {
    let mut s: Vec<f64> = space.iter().map(|v| v.max(0.0)).collect();
    let mut d = if transient { time.max(0.0) } else { 0.0 };
    let mut levels = vec![0u32; s.len()];
    let mut halvings = 0;
    for _ in 0..12 {
        let total: f64 = s.iter().sum();
        if scale * (total + d) <= target {
            break;
        }
        if total >= d {
            let marks = if local { dorfler(&s, theta) } else { vec![true; s.len()] };
            for (e, m) in marks.iter().enumerate() {
                if *m {
                    levels[e] += 1;
                    s[e] /= 4.0;
                }
            }
        } else {
            halvings += 1;
            d /= 4.0;
        }
    }
    if levels.iter().all(|&l| l == 0) && halvings == 0 {
        // The prediction is already met; refine the dominant part once.
        if transient && d > s.iter().sum::<f64>() {
            halvings = 1;
        } else {
            let marks = if local { dorfler(&s, theta) } else { vec![true; s.len()] };
            levels = marks.iter().map(|&m| m as u32).collect();
        }
    }
    Refinement { space_levels: levels, time_halvings: halvings }
}

/// Decision for the global bound at `p_max`.
pub fn decide(b: &ErrorBreakdown, settings: &Settings, local: bool, transient: bool) -> Action {
    if let Some(tol) = settings.gamma_tol {
        if b.e_cre() <= tol {
            return Action::Stop;
        }
    }
    if b.eta_pgd() >= b.eta_dis() {
        return Action::AddMode;
    }
    let space = b.local.as_ref().map(|l| l.eta_h2.clone()).unwrap_or_default();
    let target = (settings.alpha * b.eta_pgd()).powi(2);
    Action::Refine(plan_refinement(&space, b.eta_dt2, 1.0, target, settings.theta, local, transient))
}

/// Decision for the goal-oriented bounds; `space` holds the element-wise
/// products of primal and adjoint discretization contributions.
pub fn decide_goal(g: &GoalBounds, space: &[f64], time: f64, settings: &Settings, local: bool, transient: bool) -> Action {
    if let Some(tol) = settings.gamma_tol {
        if g.rho <= tol {
            return Action::Stop;
        }
    }
    if g.rho_pgd >= g.rho_dis {
        return Action::AddMode;
    }
    let total: f64 = space.iter().map(|v| v.max(0.0)).sum::<f64>() + time.max(0.0);
    let scale = if total > 0.0 { g.rho_dis / total } else { 1.0 };
    Action::Refine(plan_refinement(space, time, scale, settings.alpha * g.rho_pgd, settings.theta, local, transient))
}

/// Applies a refinement plan to a discretization.
pub fn refine_disc(problem: &Problem, disc: &Discretization, plan: &Refinement, time_factor: usize) -> Result<Discretization> {
    let mut mesh = disc.mesh().as_ref().clone();
    let base = disc.mesh().clone();
    let max = plan.space_levels.iter().copied().max().unwrap_or(0);
    for level in 1..=max {
        let anc = mesh.ancestors_in(&base)?;
        let marks: Vec<bool> = anc.iter().map(|&a| plan.space_levels[a] >= level).collect();
        mesh = mesh.refine(&marks)?;
    }
    let time = match (&disc.time, plan.time_halvings) {
        (TimeDisc::Grid(g), h) if h > 0 => TimeDisc::Grid(Arc::new(g.refine(time_factor.pow(h)))),
        (t, _) => t.clone(),
    };
    if max == 0 {
        return Ok(Discretization::with_ops(problem, disc.ops.clone(), time));
    }
    Discretization::new(problem, Arc::new(mesh), time)
}

#[derive(Clone, Debug, Serialize)]
pub struct HistoryRow {
    pub step: usize,
    pub action: String,
    pub m: usize,
    pub n_elements: usize,
    pub n_timesteps: usize,
    pub p_max: Vec<f64>,
    pub e2_max: f64,
    pub eta_pgd2: f64,
    pub eta_dis2: f64,
    pub eta_h2: f64,
    pub eta_dt2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal: Option<GoalRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GoalRow {
    pub rho: f64,
    pub rho_pgd: f64,
    pub rho_dis: f64,
}

pub struct AdaptState {
    pub sol: SeparatedSolution,
    pub disc: Discretization,
    pub history: Vec<HistoryRow>,
    pub converged: bool,
    pub last_sweep: Option<Sweep>,
}

/// Runs the greedy loop from the base discretization.
pub fn greedy(problem: &Problem, settings: &Settings) -> Result<AdaptState> {
    let mut disc = Discretization::base(problem)?;
    let mut sol = SeparatedSolution::default();
    let mut history = Vec::new();
    let setup: Option<GoalSetup> = if settings.goal { Some(build_adjoint(problem)?) } else { None };
    let dim = disc.mesh().dim();
    let local = dim == 1 || settings.local_2d;
    let mut converged = false;
    let mut last_sweep = None;
    for step in 0..settings.max_steps {
        let target = (sol.len() + 1).min(settings.m_max);
        let exhausted = extend(problem, &disc, &mut sol, target)?;
        let cert = Certificate::new(problem, &disc, &sol)?;
        let sweep = cert.sweep(problem, settings.sweep_density);
        let transient = !disc.time.is_steady();
        let mut row = HistoryRow {
            step,
            action: String::new(),
            m: sol.len(),
            n_elements: disc.mesh().n_elements(),
            n_timesteps: disc.time.n_steps(),
            p_max: sweep.worst().p.clone(),
            e2_max: sweep.worst().e2,
            eta_pgd2: sweep.worst().eta_pgd2,
            eta_dis2: sweep.worst().eta_dis2,
            eta_h2: sweep.worst().eta_h2,
            eta_dt2: sweep.worst().eta_dt2,
            goal: None,
        };
        let mut action = match &setup {
            None => decide(sweep.worst(), settings, local, transient),
            Some(setup) => {
                let goal = GoalCertificate::new(setup, &disc, &cert, sol.len() + settings.adjoint_extra)?;
                let (idx, rows) = goal.sweep(problem, &setup.adjoint, &cert, settings.sweep_density);
                let k = worst(&rows);
                let g = &rows[k];
                row.goal = Some(GoalRow { rho: g.rho, rho_pgd: g.rho_pgd, rho_dis: g.rho_dis });
                row.p_max = g.p.clone();
                let pl = cert.local(problem, At::Grid(&idx[k]));
                let al = goal.adjoint.local(&setup.adjoint, At::Grid(&idx[k]));
                let space: Vec<f64> = pl.eta_h2.iter().zip(&al.eta_h2).map(|(a, b)| (a.max(0.0) * b.max(0.0)).sqrt()).collect();
                let pb = cert.breakdown(problem, At::Grid(&idx[k]));
                let ab = goal.adjoint.breakdown(&setup.adjoint, At::Grid(&idx[k]));
                decide_goal(g, &space, pb.eta_dt() * ab.eta_dt(), settings, local, transient)
            }
        };
        if action == Action::AddMode && (sol.len() >= settings.m_max || exhausted) {
            action = Action::Stop;
        }
        converged = action == Action::Stop
            && match (&row.goal, settings.gamma_tol) {
                (Some(g), Some(t)) => g.rho <= t,
                (None, Some(t)) => row.e2_max.sqrt() <= t,
                _ => exhausted,
            };
        row.action = action.label().to_string();
        history.push(row);
        last_sweep = Some(sweep);
        match action {
            Action::Stop => break,
            Action::AddMode => {}
            Action::Refine(plan) => {
                // Existing modes are kept as they are and lifted on demand.
                disc = refine_disc(problem, &disc, &plan, settings.time_factor)?;
            }
        }
    }
    Ok(AdaptState { sol, disc, history, converged, last_sweep })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::LocalMaps;

    fn settings() -> Settings {
        Settings {
            alpha: 0.5,
            gamma_tol: Some(0.2),
            theta: 0.5,
            time_factor: 2,
            local_2d: false,
            max_steps: 20,
            m_max: 10,
            sweep_density: None,
            goal: false,
            adjoint_extra: 2,
        }
    }

    fn breakdown(e2: f64, pgd2: f64, h2: f64) -> ErrorBreakdown {
        ErrorBreakdown {
            p: vec![],
            e2,
            eta_pgd2: pgd2,
            eta_dis2: e2 - pgd2,
            eta_h2: h2,
            eta_dt2: e2 - pgd2 - h2,
            local: Some(LocalMaps { e2: vec![], eta_pgd2: vec![], eta_h2: vec![0.5 * h2, 0.3 * h2, 0.2 * h2] }),
        }
    }

    #[test]
    fn decision_branches() {
        let s = settings();
        assert_eq!(decide(&breakdown(0.01, 0.005, 0.004), &s, true, true), Action::Stop);
        assert_eq!(decide(&breakdown(10.0, 9.0, 0.5), &s, true, true), Action::AddMode);
        // eta_pgd = 1, eta_dis = 3, eta_h = 2.8, eta_dt ~ 1.08.
        let b = breakdown(10.0, 1.0, 7.84);
        match decide(&b, &s, false, true) {
            Action::Refine(r) => {
                // Target 0.25: space needs 3 uniform halvings (7.84/64 = 0.1225)
                // and time 2 (1.16/16 = 0.0725); total 0.195.
                assert_eq!(r.space_levels, vec![3, 3, 3]);
                assert_eq!(r.time_halvings, 2);
            }
            a => panic!("{a:?}"),
        }
    }

    #[test]
    fn dorfler_marks_the_bulk() {
        assert_eq!(dorfler(&[0.1, 0.5, 0.2, 0.2], 0.5), vec![false, true, false, false]);
        assert_eq!(dorfler(&[0.1, 0.4, 0.25, 0.25], 0.5), vec![false, true, true, false]);
    }

    #[test]
    fn tolerance_above_initial_error_stops_after_one_mode() {
        let p = crate::pgd::tests::beam();
        let mut s = Settings::from_problem(&p);
        s.gamma_tol = Some(1e6);
        let st = greedy(&p, &s).unwrap();
        assert_eq!(st.history.len(), 1);
        assert_eq!(st.sol.len(), 1);
        assert!(st.converged);
    }
}
