//! Problem description: JSON schema ([`ProblemSpec`]) and its validated,
//! compiled form ([`Problem`]).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Function, FunctionSpec, Var};
use crate::mesh::{Layout, SpaceMesh};
use crate::time::{TimeDisc, TimeGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub domain: DomainSpec,
    pub time: TimeSpec,
    pub coefficients: CoefficientsSpec,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub parameters: Vec<ParameterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qoi: Option<QoiSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub adaptivity: AdaptivitySpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    #[serde(flatten)]
    pub geometry: Geometry,
    pub dirichlet: Vec<String>,
    #[serde(default)]
    pub neumann: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Tags: `left`, `right`.
    Interval {
        #[serde(default)]
        origin: f64,
        length: f64,
        elements: usize,
    },
    /// Tags: `left`, `right`, `bottom`, `top`, `hole0`, `hole1`, ...
    Quads {
        #[serde(default)]
        origin: [f64; 2],
        cell: [f64; 2],
        cells: [usize; 2],
        #[serde(default)]
        holes: Vec<[usize; 4]>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSpec {
    #[serde(default, skip_serializing_if = "is_false")]
    pub steady: bool,
    #[serde(default)]
    pub horizon: f64,
    #[serde(default)]
    pub steps: usize,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsSpec {
    #[serde(default = "CoefSpec::one")]
    pub c: CoefSpec,
    pub k: CoefSpec,
    #[serde(default = "CoefSpec::zero")]
    pub r: CoefSpec,
}

/// `base * prod_j factor_j(p_j)`; factors are keyed by parameter name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefSpec {
    pub base: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub factors: BTreeMap<String, FunctionSpec>,
}

impl CoefSpec {
    pub fn one() -> Self {
        CoefSpec { base: 1.0, factors: BTreeMap::new() }
    }

    pub fn zero() -> Self {
        CoefSpec { base: 0.0, factors: BTreeMap::new() }
    }

    pub fn constant(v: f64) -> Self {
        CoefSpec { base: v, factors: BTreeMap::new() }
    }

    pub fn with_factor(mut self, param: &str, f: FunctionSpec) -> Self {
        self.factors.insert(param.to_string(), f);
        self
    }
}

/// One separated loading term `alpha(t) * prod_j beta_j(p_j) * L_s(v)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    #[serde(default)]
    pub alpha: FunctionSpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub factors: BTreeMap<String, FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flux: Vec<FluxSpec>,
    /// Vector field `q_s` entering as `int q_s . grad v`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prestress: Option<[FunctionSpec; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxSpec {
    pub tags: Vec<String>,
    pub density: FunctionSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// First grid point; defaults to the lower bound, or to 1% of the upper
    /// bound when the lower bound is not positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoiSpec {
    pub space: SpaceExtractorSpec,
    pub time: TimeExtractorSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceExtractorSpec {
    /// Average over the box `[x0, x1]` (1D) or `[x0, x1, y0, y1]` (2D).
    RegionAverage { region: Vec<f64> },
    Density {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f: Option<FunctionSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<[FunctionSpec; 2]>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeExtractorSpec {
    /// Value at the final time, mollified over the last primal time step.
    Terminal,
    Weight { weight: FunctionSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    #[serde(default = "d_m_max")]
    pub m_max: usize,
    #[serde(default = "d_k_max")]
    pub k_max: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
}

fn d_m_max() -> usize {
    10
}
fn d_k_max() -> usize {
    4
}
fn d_seed() -> u64 {
    42
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec { m_max: d_m_max(), k_max: d_k_max(), seed: d_seed() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptivitySpec {
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_tol: Option<f64>,
    #[serde(default = "d_theta")]
    pub theta: f64,
    #[serde(default = "d_time_factor")]
    pub time_factor: usize,
    /// Quad-tree marking with hanging nodes in 2D (uniform otherwise).
    #[serde(default)]
    pub local_2d: bool,
    #[serde(default = "d_max_steps")]
    pub max_steps: usize,
}

fn d_alpha() -> f64 {
    0.5
}
fn d_theta() -> f64 {
    0.5
}
fn d_time_factor() -> usize {
    2
}
fn d_max_steps() -> usize {
    20
}

impl Default for AdaptivitySpec {
    fn default() -> Self {
        AdaptivitySpec {
            alpha: d_alpha(),
            gamma_tol: None,
            theta: d_theta(),
            time_factor: d_time_factor(),
            local_2d: false,
            max_steps: d_max_steps(),
        }
    }
}

impl ProblemSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidProblem(format!("parse error: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// Scalar coefficient `base * prod_j factor_j(p_j)`, uniform in space.
#[derive(Clone, Debug)]
pub struct Coefficient {
    pub base: f64,
    /// One factor per parameter axis (constant 1 when absent).
    pub factors: Vec<Function>,
    /// Factor values on each axis grid.
    pub tables: Vec<Vec<f64>>,
}

impl Coefficient {
    pub fn value(&self, p: &[f64]) -> f64 {
        self.base * self.factors.iter().zip(p).map(|(f, &v)| f.at_p(v)).product::<f64>()
    }

    /// Value at a grid point given by per-axis indices.
    pub fn at_grid(&self, idx: &[usize]) -> f64 {
        self.base * self.tables.iter().zip(idx).map(|(t, &i)| t[i]).product::<f64>()
    }

    pub fn is_zero(&self) -> bool {
        self.base == 0.0
    }
}

#[derive(Clone, Debug)]
pub struct FluxPart {
    pub tags: BTreeSet<String>,
    pub density: Function,
}

#[derive(Clone, Debug)]
pub struct Load {
    pub alpha: Function,
    pub factors: Vec<Function>,
    pub tables: Vec<Vec<f64>>,
    pub body: Option<Function>,
    pub flux: Vec<FluxPart>,
    pub prestress: Option<[Function; 2]>,
}

impl Load {
    pub fn factor(&self, p: &[f64]) -> f64 {
        self.factors.iter().zip(p).map(|(f, &v)| f.at_p(v)).product()
    }

    pub fn factor_at_grid(&self, idx: &[usize]) -> f64 {
        self.tables.iter().zip(idx).map(|(t, &i)| t[i]).product()
    }

    pub fn is_trivial(&self) -> bool {
        let zero = |f: &Function| f.as_constant() == Some(0.0);
        zero(&self.alpha)
            || (self.body.as_ref().map_or(true, zero)
                && self.flux.iter().all(|p| zero(&p.density))
                && self.prestress.as_ref().map_or(true, |q| zero(&q[0]) && zero(&q[1])))
    }
}

/// Parameter axis with trapezoidal quadrature weights on its grid.
#[derive(Clone, Debug)]
pub struct ParamAxis {
    pub name: String,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ParamAxis {
    pub fn new(name: &str, points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.windows(2).any(|w| !(w[1] > w[0])) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidProblem(format!("parameter '{name}': grid must be finite and increasing")));
        }
        let n = points.len();
        let mut weights = vec![0.0; n];
        if n == 1 {
            weights[0] = 1.0;
        }
        for k in 0..n.saturating_sub(1) {
            let h = points[k + 1] - points[k];
            weights[k] += 0.5 * h;
            weights[k + 1] += 0.5 * h;
        }
        Ok(ParamAxis { name: name.to_string(), points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Weighted inner product on this axis.
    pub fn integral(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.weights.iter().enumerate().map(|(g, w)| w * f(g)).sum()
    }

    /// Linear interpolation of grid values at `p` (clamped).
    pub fn interp(&self, values: &[f64], p: f64) -> f64 {
        crate::expr::interp(&self.points, values, p)
    }
}

#[derive(Clone, Debug)]
pub enum SpaceExtractor {
    RegionAverage { region: [f64; 4], measure: f64 },
    Density { f: Option<Function>, q: Option<[Function; 2]> },
}

#[derive(Clone, Debug)]
pub enum TimeExtractor {
    Terminal,
    Weight(Function),
}

#[derive(Clone, Debug)]
pub struct Qoi {
    pub space: SpaceExtractor,
    pub time: TimeExtractor,
}

/// Validated problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub layout: Arc<Layout>,
    pub dirichlet: BTreeSet<String>,
    pub neumann: BTreeSet<String>,
    pub steady: bool,
    pub horizon: f64,
    pub steps: usize,
    pub c: Coefficient,
    pub k: Coefficient,
    pub r: Coefficient,
    pub loads: Vec<Load>,
    pub axes: Vec<ParamAxis>,
    pub qoi: Option<Qoi>,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        let layout = Arc::new(match &spec.domain.geometry {
            Geometry::Interval { origin, length, elements } => Layout::interval(*origin, *length, *elements)?,
            Geometry::Quads { origin, cell, cells, holes } => Layout::quads(*origin, *cell, *cells, holes.clone())?,
        });
        let dim = layout.dim;
        let dirichlet: BTreeSet<String> = spec.domain.dirichlet.iter().cloned().collect();
        let neumann: BTreeSet<String> = spec.domain.neumann.iter().cloned().collect();
        let present = layout.tags();
        if let Some(t) = dirichlet.intersection(&neumann).next() {
            return Err(Error::BoundaryPartition(format!("tag '{t}' is both Dirichlet and Neumann")));
        }
        for t in dirichlet.union(&neumann) {
            if !present.contains(t) {
                return Err(Error::BoundaryPartition(format!("unknown boundary tag '{t}' (present: {present:?})")));
            }
        }
        for t in &present {
            if !dirichlet.contains(t) && !neumann.contains(t) {
                return Err(Error::BoundaryPartition(format!("boundary tag '{t}' is neither Dirichlet nor Neumann")));
            }
        }
        if dirichlet.is_empty() {
            return Err(Error::Singular("empty Dirichlet boundary; the steady operator would be singular".into()));
        }

        let steady = spec.time.steady;
        if !steady && (!(spec.time.horizon > 0.0) || spec.time.steps == 0) {
            return Err(Error::InvalidProblem("transient problems need horizon > 0 and steps >= 1".into()));
        }

        let mut axes = Vec::new();
        let mut names = BTreeSet::new();
        for ps in &spec.parameters {
            if !names.insert(ps.name.clone()) {
                return Err(Error::InvalidProblem(format!("duplicate parameter '{}'", ps.name)));
            }
            let [lo, hi] = ps.range;
            if !(hi > lo) {
                return Err(Error::InvalidProblem(format!("parameter '{}': empty range", ps.name)));
            }
            let points = match &ps.points {
                Some(p) => p.clone(),
                None => {
                    let n = ps.count.unwrap_or(100);
                    if n == 0 {
                        return Err(Error::InvalidProblem(format!("parameter '{}': count must be >= 1", ps.name)));
                    }
                    let start = ps.start.unwrap_or(if lo > 0.0 { lo } else { 0.01 * hi });
                    if n == 1 {
                        vec![start]
                    } else {
                        (0..n).map(|i| start + (hi - start) * i as f64 / (n - 1) as f64).collect()
                    }
                }
            };
            if points.iter().any(|&p| p < lo - 1e-12 * hi.abs() || p > hi + 1e-12 * hi.abs()) {
                return Err(Error::InvalidProblem(format!("parameter '{}': grid outside range", ps.name)));
            }
            axes.push(ParamAxis::new(&ps.name, points)?);
        }

        let compile_factors = |factors: &BTreeMap<String, FunctionSpec>, what: &str| -> Result<(Vec<Function>, Vec<Vec<f64>>)> {
            for key in factors.keys() {
                if !names.contains(key) {
                    return Err(Error::InvalidProblem(format!("{what}: factor for unknown parameter '{key}'")));
                }
            }
            let mut fs = Vec::new();
            let mut tables = Vec::new();
            for ax in &axes {
                let f = match factors.get(&ax.name) {
                    Some(spec) => Function::compile(spec, &[Var::P], &format!("{what}[{}]", ax.name))?,
                    None => Function::constant(1.0),
                };
                tables.push(ax.points.iter().map(|&p| f.at_p(p)).collect());
                fs.push(f);
            }
            Ok((fs, tables))
        };
        let coef = |cs: &CoefSpec, what: &str, positive: bool| -> Result<Coefficient> {
            let (factors, tables) = compile_factors(&cs.factors, what)?;
            let c = Coefficient { base: cs.base, factors, tables };
            let ok = |v: f64| if positive { v > 0.0 } else { v >= 0.0 };
            if !cs.base.is_finite() || !ok(cs.base) || c.tables.iter().flatten().any(|&v| !v.is_finite() || !ok(v)) {
                let sign = if positive { "positive" } else { "non-negative" };
                return Err(Error::InvalidProblem(format!("coefficient {what} must be {sign} on the parameter grid")));
            }
            Ok(c)
        };
        let c = coef(&spec.coefficients.c, "c", !steady)?;
        let k = coef(&spec.coefficients.k, "k", true)?;
        let r = coef(&spec.coefficients.r, "r", false)?;

        let space_vars: &[Var] = if dim == 1 { &[Var::X] } else { &[Var::X, Var::Y] };
        let mut loads = Vec::new();
        for (s, ls) in spec.loads.iter().enumerate() {
            let what = format!("load[{s}]");
            let alpha = Function::compile(&ls.alpha, &[Var::T], &format!("{what}.alpha"))?;
            if steady && alpha.as_constant().is_none() {
                return Err(Error::InvalidProblem(format!("{what}: steady problems need a constant alpha")));
            }
            let (factors, tables) = compile_factors(&ls.factors, &what)?;
            let body = ls.body.as_ref().map(|b| Function::compile(b, space_vars, &format!("{what}.body"))).transpose()?;
            let mut flux = Vec::new();
            for fp in &ls.flux {
                let tags: BTreeSet<String> = fp.tags.iter().cloned().collect();
                for t in &tags {
                    if !neumann.contains(t) {
                        return Err(Error::BoundaryPartition(format!("{what}: flux on non-Neumann tag '{t}'")));
                    }
                }
                flux.push(FluxPart { tags, density: Function::compile(&fp.density, space_vars, &format!("{what}.flux"))? });
            }
            let prestress = match &ls.prestress {
                Some([a, b]) => Some([
                    Function::compile(a, space_vars, &format!("{what}.prestress"))?,
                    Function::compile(b, space_vars, &format!("{what}.prestress"))?,
                ]),
                None => None,
            };
            loads.push(Load { alpha, factors, tables, body, flux, prestress });
        }

        let qoi = match &spec.qoi {
            None => None,
            Some(q) => {
                let space = match &q.space {
                    SpaceExtractorSpec::RegionAverage { region } => {
                        let reg = match (dim, region.len()) {
                            (1, 2) => [region[0], region[1], f64::NEG_INFINITY, f64::INFINITY],
                            (2, 4) => [region[0], region[1], region[2], region[3]],
                            _ => return Err(Error::InvalidProblem("qoi region has the wrong number of bounds".into())),
                        };
                        if !(reg[1] > reg[0]) || !(reg[3] > reg[2]) {
                            return Err(Error::InvalidProblem("qoi region is empty".into()));
                        }
                        let measure = if dim == 1 { reg[1] - reg[0] } else { (reg[1] - reg[0]) * (reg[3] - reg[2]) };
                        SpaceExtractor::RegionAverage { region: reg, measure }
                    }
                    SpaceExtractorSpec::Density { f, q } => SpaceExtractor::Density {
                        f: f.as_ref().map(|f| Function::compile(f, space_vars, "qoi.f")).transpose()?,
                        q: match q {
                            Some([a, b]) => Some([Function::compile(a, space_vars, "qoi.q")?, Function::compile(b, space_vars, "qoi.q")?]),
                            None => None,
                        },
                    },
                };
                let time = match &q.time {
                    TimeExtractorSpec::Terminal => TimeExtractor::Terminal,
                    TimeExtractorSpec::Weight { weight } => TimeExtractor::Weight(Function::compile(weight, &[Var::T], "qoi.weight")?),
                };
                if steady && matches!(time, TimeExtractor::Weight(_)) {
                    return Err(Error::InvalidProblem("steady problems only support the terminal time extractor".into()));
                }
                Some(Qoi { space, time })
            }
        };

        if spec.solver.k_max == 0 {
            return Err(Error::InvalidProblem("solver.k_max must be >= 1".into()));
        }
        let a = &spec.adaptivity;
        if !(a.alpha > 0.0 && a.alpha <= 1.0) || !(a.theta > 0.0 && a.theta <= 1.0) || a.time_factor < 2 {
            return Err(Error::InvalidProblem("adaptivity: need alpha, theta in (0, 1] and time_factor >= 2".into()));
        }

        Ok(Problem {
            layout,
            dirichlet,
            neumann,
            steady,
            horizon: if steady { 0.0 } else { spec.time.horizon },
            steps: spec.time.steps,
            c,
            k,
            r,
            loads,
            axes,
            qoi,
            spec,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::new(ProblemSpec::from_file(path)?)
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn n_params(&self) -> usize {
        self.axes.len()
    }

    pub fn base_mesh(&self) -> SpaceMesh {
        SpaceMesh::base(self.layout.clone(), &self.dirichlet)
    }

    pub fn base_time(&self) -> TimeDisc {
        if self.steady {
            TimeDisc::Steady
        } else {
            TimeDisc::Grid(Arc::new(TimeGrid::uniform(self.horizon, self.steps).expect("validated")))
        }
    }

    /// Parameter values at per-axis grid indices.
    pub fn grid_point(&self, idx: &[usize]) -> Vec<f64> {
        self.axes.iter().zip(idx).map(|(a, &i)| a.points[i]).collect()
    }

    /// Whether every load term is identically zero.
    pub fn has_zero_loading(&self) -> bool {
        self.loads.iter().all(Load::is_trivial)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beam() -> ProblemSpec {
        ProblemSpec::from_json_str(
            r#"{
            "domain": {"kind": "interval", "length": 1.0, "elements": 20, "dirichlet": ["left", "right"]},
            "time": {"horizon": 1.0, "steps": 10},
            "coefficients": {"k": {"base": 1.0, "factors": {"k": {"expr": "p"}}}},
            "loads": [{"body": 1.0}, {"alpha": {"expr": "t"}, "body": {"expr": "2*x"}}],
            "parameters": [{"name": "k", "range": [0, 100]}]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn default_grid_starts_at_one_percent() {
        let p = Problem::new(beam()).unwrap();
        assert_eq!(p.axes[0].len(), 100);
        assert!((p.axes[0].points[0] - 1.0).abs() < 1e-12);
        assert!((p.axes[0].points[99] - 100.0).abs() < 1e-12);
        let total: f64 = p.axes[0].weights.iter().sum();
        assert!((total - 99.0).abs() < 1e-10);
        assert_eq!(p.c.base, 1.0);
        assert!(p.r.is_zero());
    }

    #[test]
    fn roundtrip() {
        let s = beam();
        let back = ProblemSpec::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn rejects_negative_diffusivity() {
        let mut s = beam();
        s.coefficients.k.factors.insert("k".into(), FunctionSpec::expr("p - 50"));
        assert!(matches!(Problem::new(s), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn rejects_bad_partition() {
        let mut s = beam();
        s.domain.dirichlet = vec!["left".into()];
        assert!(matches!(Problem::new(s), Err(Error::BoundaryPartition(_))));
        let mut s = beam();
        s.domain.neumann = vec!["left".into()];
        assert!(matches!(Problem::new(s), Err(Error::BoundaryPartition(_))));
    }

    #[test]
    fn zero_loading_detected() {
        let mut s = beam();
        s.loads = vec![LoadSpec { body: Some(FunctionSpec::Const(0.0)), ..Default::default() }];
        assert!(Problem::new(s).unwrap().has_zero_loading());
    }
}
