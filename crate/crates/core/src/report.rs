//! Plot-ready CSV tables. Every file starts with a `# seed=...` comment line;
//! numbers use the shortest round-trip formatting so reruns are
//! byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use crate::adapt::HistoryRow;
use crate::error::Result;
use crate::estimate::ErrorBreakdown;
use crate::goal::GoalBounds;

fn header(seed: u64, np: usize, tail: &[&str]) -> String {
    let mut cols: Vec<String> = (1..=np).map(|j| format!("p_{j}")).collect();
    cols.extend(tail.iter().map(|s| s.to_string()));
    format!("# seed={seed}\n{}\n", cols.join(","))
}

fn row(out: &mut String, p: &[f64], vals: &[f64]) {
    let cells: Vec<String> = p.iter().chain(vals).map(|v| v.to_string()).collect();
    writeln!(out, "{}", cells.join(",")).unwrap();
}

pub const SWEEP_COLUMNS: [&str; 5] = ["E2", "eta_pgd2", "eta_dis2", "eta_h2", "eta_dt2"];
pub const GOAL_COLUMNS: [&str; 7] = ["Q", "Qcorr", "half_width", "lower", "upper", "rho_pgd", "rho_dis"];

pub fn sweep_csv(rows: &[ErrorBreakdown], np: usize, seed: u64) -> String {
    let mut out = header(seed, np, &SWEEP_COLUMNS);
    for r in rows {
        row(&mut out, &r.p, &[r.e2, r.eta_pgd2, r.eta_dis2, r.eta_h2, r.eta_dt2]);
    }
    out
}

pub fn goal_csv(rows: &[GoalBounds], np: usize, seed: u64) -> String {
    let mut out = header(seed, np, &GOAL_COLUMNS);
    for g in rows {
        row(&mut out, &g.p, &[g.q_value, g.q_corr, g.half_width, g.lower, g.upper, g.rho_pgd, g.rho_dis]);
    }
    out
}

pub fn history_csv(rows: &[HistoryRow], seed: u64) -> String {
    let goal = rows.iter().any(|r| r.goal.is_some());
    let mut out = format!("# seed={seed}\nstep,action,m,n_elements,n_timesteps,E2_max,eta_pgd2,eta_dis2,eta_h2,eta_dt2");
    if goal {
        out.push_str(",rho,rho_pgd,rho_dis");
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{},{},{},{},{},{},{},{}", r.step, r.action, r.m, r.n_elements, r.n_timesteps, r.e2_max, r.eta_pgd2, r.eta_dis2, r.eta_h2, r.eta_dt2).unwrap();
        if goal {
            let g = r.goal.as_ref();
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            write!(out, ",{},{},{}", f(g.map(|g| g.rho)), f(g.map(|g| g.rho_pgd)), f(g.map(|g| g.rho_dis))).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), content)?;
    Ok(())
}
