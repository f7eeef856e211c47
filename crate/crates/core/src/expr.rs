//! Scalar functions used in problem files.
//!
//! A function is either a constant, an expression over a subset of the
//! variables `x`, `y`, `t`, `p`, or a piecewise-linear table.

use exmex::{Express, FlatEx};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionSpec {
    Const(f64),
    Expr { expr: String },
    Table { table: Table },
}

impl FunctionSpec {
    pub fn constant(v: f64) -> Self {
        FunctionSpec::Const(v)
    }

    pub fn expr(s: &str) -> Self {
        FunctionSpec::Expr { expr: s.to_string() }
    }
}

impl Default for FunctionSpec {
    fn default() -> Self {
        FunctionSpec::Const(1.0)
    }
}

/// Piecewise-linear table, held constant outside its abscissae.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    #[serde(alias = "p", alias = "x")]
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    T,
    P,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::T => "t",
            Var::P => "p",
        }
    }
}

/// Evaluation point; unused coordinates are ignored.
#[derive(Clone, Copy, Debug, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub p: f64,
}

impl Point {
    fn get(&self, v: Var) -> f64 {
        match v {
            Var::X => self.x,
            Var::Y => self.y,
            Var::T => self.t,
            Var::P => self.p,
        }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Const(f64),
    Expr { ex: FlatEx<f64>, slots: Vec<Var> },
    Table { t: Vec<f64>, v: Vec<f64>, var: Var },
}

#[derive(Clone, Debug)]
pub struct Function {
    kind: Kind,
}

impl Function {
    pub fn constant(v: f64) -> Self {
        Function { kind: Kind::Const(v) }
    }

    /// Compiles `spec`, allowing only the variables in `allowed`.
    /// Tables are interpreted as functions of `allowed[0]`.
    pub fn compile(spec: &FunctionSpec, allowed: &[Var], what: &str) -> Result<Self> {
        match spec {
            FunctionSpec::Const(v) => {
                if !v.is_finite() {
                    return Err(Error::InvalidFunction(format!("{what}: non-finite constant")));
                }
                Ok(Function::constant(*v))
            }
            FunctionSpec::Expr { expr } => {
                let ex = exmex::parse::<f64>(expr)
                    .map_err(|e| Error::InvalidFunction(format!("{what}: '{expr}': {e}")))?;
                let mut slots = Vec::new();
                for name in ex.var_names() {
                    let var = [Var::X, Var::Y, Var::T, Var::P]
                        .into_iter()
                        .find(|v| v.name() == name && allowed.contains(v))
                        .ok_or_else(|| {
                            Error::InvalidFunction(format!(
                                "{what}: variable '{name}' not allowed here"
                            ))
                        })?;
                    slots.push(var);
                }
                if slots.is_empty() {
                    let v = ex
                        .eval(&[])
                        .map_err(|e| Error::InvalidFunction(format!("{what}: {e}")))?;
                    return Ok(Function::constant(v));
                }
                Ok(Function { kind: Kind::Expr { ex, slots } })
            }
            FunctionSpec::Table { table } => {
                let var = *allowed
                    .first()
                    .ok_or_else(|| Error::InvalidFunction(format!("{what}: tables not allowed")))?;
                if table.t.is_empty() || table.t.len() != table.v.len() {
                    return Err(Error::InvalidFunction(format!("{what}: table length mismatch")));
                }
                if table.t.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidFunction(format!(
                        "{what}: table abscissae must increase"
                    )));
                }
                if table.t.iter().chain(&table.v).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidFunction(format!("{what}: non-finite table entry")));
                }
                Ok(Function { kind: Kind::Table { t: table.t.clone(), v: table.v.clone(), var } })
            }
        }
    }

    pub fn eval(&self, pt: Point) -> f64 {
        match &self.kind {
            Kind::Const(v) => *v,
            Kind::Expr { ex, slots } => {
                let mut args = [0.0; 4];
                for (a, s) in args.iter_mut().zip(slots) {
                    *a = pt.get(*s);
                }
                ex.eval(&args[..slots.len()]).unwrap_or(f64::NAN)
            }
            Kind::Table { t, v, var } => interp(t, v, pt.get(*var)),
        }
    }

    pub fn at_t(&self, t: f64) -> f64 {
        self.eval(Point { t, ..Point::default() })
    }

    pub fn at_p(&self, p: f64) -> f64 {
        self.eval(Point { p, ..Point::default() })
    }

    pub fn at_xy(&self, x: f64, y: f64) -> f64 {
        self.eval(Point { x, y, ..Point::default() })
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.kind {
            Kind::Const(v) => Some(v),
            _ => None,
        }
    }

    /// Abscissae where the function has kinks (tables only).
    pub fn breakpoints(&self) -> &[f64] {
        match &self.kind {
            Kind::Table { t, .. } => t,
            _ => &[],
        }
    }
}

/// Linear interpolation with constant extension.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x).clamp(1, n - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let w = (x - x0) / (x1 - x0);
    ys[i - 1] * (1.0 - w) + ys[i] * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expression_with_several_variables() {
        let f = Function::compile(&FunctionSpec::expr("1 + 2*x*t"), &[Var::X, Var::Y, Var::T], "f")
            .unwrap();
        let v = f.eval(Point { x: 0.5, t: 0.25, ..Point::default() });
        assert!((v - 1.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_foreign_variables() {
        let e = Function::compile(&FunctionSpec::expr("x + p"), &[Var::X], "f");
        assert!(matches!(e, Err(Error::InvalidFunction(_))));
    }

    #[test]
    fn constant_folding_and_division() {
        let f = Function::compile(&FunctionSpec::expr("1/2 + exp(0)"), &[Var::T], "a").unwrap();
        assert_eq!(f.as_constant(), Some(1.5));
    }

    #[test]
    fn table_interpolates_and_clamps() {
        let spec = FunctionSpec::Table { table: Table { t: vec![0.0, 1.0, 3.0], v: vec![0.0, 2.0, 0.0] } };
        let f = Function::compile(&spec, &[Var::T], "a").unwrap();
        assert_eq!(f.at_t(0.5), 1.0);
        assert_eq!(f.at_t(2.0), 1.0);
        assert_eq!(f.at_t(-1.0), 0.0);
        assert_eq!(f.at_t(4.0), 0.0);
        assert_eq!(f.breakpoints(), &[0.0, 1.0, 3.0]);
    }

    #[test]
    fn spec_json_forms() {
        let a: FunctionSpec = serde_json::from_str(r#"{"expr": "t"}"#).unwrap();
        let b: FunctionSpec = serde_json::from_str(r#"{"table": {"t": [0, 1], "v": [1, 2]}}"#).unwrap();
        let c: FunctionSpec = serde_json::from_str("3.5").unwrap();
        assert_eq!(a, FunctionSpec::expr("t"));
        assert!(matches!(b, FunctionSpec::Table { .. }));
        assert_eq!(c, FunctionSpec::Const(3.5));
    }
}
