//! A space-time discretization: space operators on one mesh plus a time grid
//! (or the steady marker), with the time moments of every load amplitude.

use std::sync::Arc;

use crate::error::Result;
use crate::fem::SpaceOperators;
use crate::mesh::SpaceMesh;
use crate::problem::Problem;
use crate::time::{dot, merge_breaks, TimeDisc, TimeGrid};

pub struct Discretization {
    pub ops: Arc<SpaceOperators>,
    pub time: TimeDisc,
    /// `int alpha_s N_n dt` per load (the constant amplitude when steady).
    pub alpha_moments: Vec<Vec<f64>>,
}

impl Discretization {
    pub fn new(problem: &Problem, mesh: Arc<SpaceMesh>, time: TimeDisc) -> Result<Self> {
        let ops = Arc::new(SpaceOperators::new(problem, mesh)?);
        Ok(Self::with_ops(problem, ops, time))
    }

    pub fn with_ops(problem: &Problem, ops: Arc<SpaceOperators>, time: TimeDisc) -> Self {
        let alpha_moments = problem
            .loads
            .iter()
            .map(|l| match &time {
                TimeDisc::Steady => vec![l.alpha.as_constant().unwrap_or(0.0)],
                TimeDisc::Grid(g) => g.moments(&|t| l.alpha.at_t(t), l.alpha.breakpoints()),
            })
            .collect();
        Discretization { ops, time, alpha_moments }
    }

    pub fn base(problem: &Problem) -> Result<Self> {
        Self::new(problem, Arc::new(problem.base_mesh()), problem.base_time())
    }

    pub fn mesh(&self) -> &Arc<SpaceMesh> {
        &self.ops.mesh
    }

    pub fn grid(&self) -> Option<&Arc<TimeGrid>> {
        self.time.grid()
    }

    /// Number of time nodal values of a mode (1 when steady).
    pub fn n_time(&self) -> usize {
        match &self.time {
            TimeDisc::Steady => 1,
            TimeDisc::Grid(g) => g.nodes.len(),
        }
    }

    /// `Mt v`.
    pub fn tmass_apply(&self, v: &[f64]) -> Vec<f64> {
        match &self.time {
            TimeDisc::Steady => v.to_vec(),
            TimeDisc::Grid(g) => g.mass_apply(v),
        }
    }

    /// `D v`, i.e. `int v' N_n`.
    pub fn tderiv_apply(&self, v: &[f64]) -> Vec<f64> {
        match &self.time {
            TimeDisc::Steady => vec![0.0; v.len()],
            TimeDisc::Grid(g) => g.deriv_apply(v),
        }
    }

    /// `int a b dt`.
    pub fn tmass(&self, a: &[f64], b: &[f64]) -> f64 {
        dot(a, &self.tmass_apply(b))
    }

    /// `int a' b dt`.
    pub fn tderiv(&self, a: &[f64], b: &[f64]) -> f64 {
        dot(b, &self.tderiv_apply(a))
    }

    /// Break points for time quadrature: grid nodes and table abscissae.
    pub fn time_breaks(&self, problem: &Problem) -> Vec<f64> {
        let mut b = match &self.time {
            TimeDisc::Steady => vec![],
            TimeDisc::Grid(g) => g.nodes.clone(),
        };
        for l in &problem.loads {
            b = merge_breaks(&b, l.alpha.breakpoints());
        }
        b
    }

    pub fn n_dofs(&self) -> usize {
        self.ops.dofs.n_dofs
    }

    /// Refined copy: `marks` selects elements (`None` keeps the mesh), and
    /// the time grid is split `time_factor` times per step (1 keeps it).
    pub fn refined(&self, problem: &Problem, marks: Option<&[bool]>, time_factor: usize) -> Result<Self> {
        let ops = match marks {
            Some(m) if m.iter().any(|&b| b) => Arc::new(SpaceOperators::new(problem, Arc::new(self.mesh().refine(m)?))?),
            _ => self.ops.clone(),
        };
        let time = match (&self.time, time_factor) {
            (TimeDisc::Grid(g), f) if f > 1 => TimeDisc::Grid(Arc::new(g.refine(f))),
            (t, _) => t.clone(),
        };
        Ok(Self::with_ops(problem, ops, time))
    }
}
