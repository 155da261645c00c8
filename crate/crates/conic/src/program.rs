//! Canonical convex program: a linear objective to maximize over named scalar
//! variables, subject to affine, second-order-cone and exponential-cone
//! constraints.

use std::fmt::{self, Write as _};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::KernelError;

/// Handle to a scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Affine expression `Σ coeff·var + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub(crate) terms: Vec<(usize, f64)>,
    pub(crate) constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(v: Var, coeff: f64) -> Self {
        Self {
            terms: vec![(v.0, coeff)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, v: Var, coeff: f64) -> &mut Self {
        self.terms.push((v.0, coeff));
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    /// Evaluate at a full variable assignment.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(i, c)| acc + c * x[i])
    }

    /// Merge duplicate variables and drop exact zeros. Term order is by
    /// variable index so that assembly is deterministic.
    pub(crate) fn canonical(&self) -> Vec<(usize, f64)> {
        let mut t = self.terms.clone();
        t.sort_by_key(|&(i, _)| i);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(t.len());
        for (i, c) in t {
            match out.last_mut() {
                Some((j, acc)) if *j == i => *acc += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        out
    }
}

impl From<Var> for LinExpr {
    fn from(v: Var) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl<T: Into<LinExpr>> Add<T> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: T) -> LinExpr {
        let rhs = rhs.into();
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
        self
    }
}

impl<T: Into<LinExpr>> AddAssign<T> for LinExpr {
    fn add_assign(&mut self, rhs: T) {
        let rhs = rhs.into();
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl<T: Into<LinExpr>> Sub<T> for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: T) -> LinExpr {
        self + (-rhs.into())
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, k: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }
}

impl<T: Into<LinExpr>> Add<T> for Var {
    type Output = LinExpr;
    fn add(self, rhs: T) -> LinExpr {
        LinExpr::from(self) + rhs
    }
}

impl<T: Into<LinExpr>> Sub<T> for Var {
    type Output = LinExpr;
    fn sub(self, rhs: T) -> LinExpr {
        LinExpr::from(self) - rhs
    }
}

impl Mul<f64> for Var {
    type Output = LinExpr;
    fn mul(self, k: f64) -> LinExpr {
        LinExpr::term(self, k)
    }
}

impl Mul<Var> for f64 {
    type Output = LinExpr;
    fn mul(self, v: Var) -> LinExpr {
        LinExpr::term(v, self)
    }
}

/// One constraint of the canonical form.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `expr == 0`
    Eq(LinExpr),
    /// `expr <= 0`
    Le(LinExpr),
    /// `‖x‖₂ <= t`
    Soc { t: LinExpr, x: Vec<LinExpr> },
    /// `y·exp(x/y) <= z`, `y > 0` (closure included).
    Exp { x: LinExpr, y: LinExpr, z: LinExpr },
}

impl Constraint {
    fn exprs(&self) -> Vec<&LinExpr> {
        match self {
            Constraint::Eq(e) | Constraint::Le(e) => vec![e],
            Constraint::Soc { t, x } => std::iter::once(t).chain(x.iter()).collect(),
            Constraint::Exp { x, y, z } => vec![x, y, z],
        }
    }

    /// Absolute violation at `v`, normalised by the magnitude of the
    /// quantities being compared so that large-valued rows are judged on the
    /// same footing as O(1) rows.
    pub fn violation(&self, v: &[f64]) -> f64 {
        match self {
            Constraint::Eq(e) => e.eval(v).abs() / (1.0 + e.constant.abs()),
            Constraint::Le(e) => e.eval(v).max(0.0) / (1.0 + e.constant.abs()),
            Constraint::Soc { t, x } => {
                let tv = t.eval(v);
                let nx = x.iter().map(|e| e.eval(v).powi(2)).sum::<f64>().sqrt();
                (nx - tv).max(0.0) / (1.0 + tv.abs())
            }
            Constraint::Exp { x, y, z } => {
                let (xv, yv, zv) = (x.eval(v), y.eval(v), z.eval(v));
                let scale = 1.0 + zv.abs();
                if yv > 0.0 {
                    // compare in log space to stay finite for large x/y
                    let lhs = yv * (xv / yv).exp();
                    if lhs.is_finite() {
                        ((lhs - zv).max(0.0) / scale).max((-yv).max(0.0))
                    } else {
                        f64::INFINITY
                    }
                } else {
                    // y = 0 boundary: x <= 0, z >= 0
                    (-yv).max(0.0) + xv.max(0.0) + (-zv).max(0.0)
                }
            }
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Constraint::Eq(_) => "eq",
            Constraint::Le(_) => "le",
            Constraint::Soc { .. } => "soc",
            Constraint::Exp { .. } => "exp",
        }
    }
}

/// A convex program in canonical maximisation form.
#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    names: Vec<String>,
    objective: LinExpr,
    constraints: Vec<Constraint>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> Var {
        self.names.push(name.into());
        Var(self.names.len() - 1)
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.names[v.0]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn maximize(&mut self, obj: impl Into<LinExpr>) {
        self.objective = obj.into();
    }

    pub fn add_eq(&mut self, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.constraints
            .push(Constraint::Eq(lhs.into() - rhs.into()));
    }

    pub fn add_le(&mut self, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.constraints
            .push(Constraint::Le(lhs.into() - rhs.into()));
    }

    pub fn add_ge(&mut self, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.constraints
            .push(Constraint::Le(rhs.into() - lhs.into()));
    }

    /// `‖x‖₂ <= t`
    pub fn add_soc(&mut self, t: impl Into<LinExpr>, x: Vec<LinExpr>) {
        self.constraints.push(Constraint::Soc { t: t.into(), x });
    }

    /// `Σ xᵢ² <= s`, encoded as `‖(2x, s − 1)‖ <= s + 1`.
    pub fn add_sum_squares_le(&mut self, x: Vec<LinExpr>, s: impl Into<LinExpr>) {
        let s = s.into();
        let mut parts: Vec<LinExpr> = x.into_iter().map(|e| e * 2.0).collect();
        parts.push(s.clone() - 1.0);
        self.add_soc(s + 1.0, parts);
    }

    /// `y·exp(x/y) <= z`
    pub fn add_exp_cone(
        &mut self,
        x: impl Into<LinExpr>,
        y: impl Into<LinExpr>,
        z: impl Into<LinExpr>,
    ) {
        self.constraints.push(Constraint::Exp {
            x: x.into(),
            y: y.into(),
            z: z.into(),
        });
    }

    /// `v <= ln(w)`, i.e. `(v, 1, w)` in the exponential cone.
    pub fn add_log_ge(&mut self, w: impl Into<LinExpr>, v: impl Into<LinExpr>) {
        self.add_exp_cone(v, 1.0, w);
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let n = self.names.len();
        let check = |e: &LinExpr, ctx: &str| -> Result<(), KernelError> {
            if !e.constant.is_finite() {
                return Err(KernelError::Malformed(format!("non-finite constant in {ctx}")));
            }
            for &(i, c) in &e.terms {
                if i >= n {
                    return Err(KernelError::Malformed(format!(
                        "{ctx} references undeclared variable #{i}"
                    )));
                }
                if !c.is_finite() {
                    return Err(KernelError::Malformed(format!(
                        "non-finite coefficient on `{}` in {ctx}",
                        self.names[i]
                    )));
                }
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for (k, c) in self.constraints.iter().enumerate() {
            let ctx = format!("constraint {k} ({})", c.kind());
            for e in c.exprs() {
                check(e, &ctx)?;
            }
            if let Constraint::Soc { x, .. } = c {
                if x.is_empty() {
                    return Err(KernelError::Malformed(format!("{ctx} has an empty cone")));
                }
            }
        }
        Ok(())
    }

    /// Largest normalised constraint violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(0.0, f64::max)
    }

    /// Plain-text dump, one constraint per line, for offline debugging.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vars {}", self.names.len());
        for (i, n) in self.names.iter().enumerate() {
            let _ = writeln!(s, "  x{i} {n}");
        }
        let _ = writeln!(s, "maximize {}", ExprDisplay(&self.objective));
        for c in &self.constraints {
            match c {
                Constraint::Eq(e) => {
                    let _ = writeln!(s, "eq  {} == 0", ExprDisplay(e));
                }
                Constraint::Le(e) => {
                    let _ = writeln!(s, "le  {} <= 0", ExprDisplay(e));
                }
                Constraint::Soc { t, x } => {
                    let _ = write!(s, "soc ||");
                    for (k, e) in x.iter().enumerate() {
                        let sep = if k == 0 { "" } else { ", " };
                        let _ = write!(s, "{sep}{}", ExprDisplay(e));
                    }
                    let _ = writeln!(s, "|| <= {}", ExprDisplay(t));
                }
                Constraint::Exp { x, y, z } => {
                    let _ = writeln!(
                        s,
                        "exp ({}, {}, {})",
                        ExprDisplay(x),
                        ExprDisplay(y),
                        ExprDisplay(z)
                    );
                }
            }
        }
        s
    }
}

struct ExprDisplay<'a>(&'a LinExpr);

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms = self.0.canonical();
        for (i, c) in &terms {
            write!(f, "{c:+e}*x{i} ")?;
        }
        write!(f, "{:+e}", self.0.constant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_merges_duplicates() {
        let mut p = ConvexProgram::new();
        let a = p.add_var("a");
        let b = p.add_var("b");
        let e = a * 2.0 + b + a * -2.0 + 3.0;
        assert_eq!(e.canonical(), vec![(1, 1.0)]);
        assert_eq!(e.eval(&[5.0, 7.0]), 10.0);
    }

    #[test]
    fn validate_rejects_foreign_variable() {
        let mut p = ConvexProgram::new();
        let _ = p.add_var("a");
        p.add_le(LinExpr::term(Var(3), 1.0), 1.0);
        assert!(matches!(p.validate(), Err(KernelError::Malformed(_))));
    }

    #[test]
    fn violation_of_sum_squares() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x");
        let s = p.add_var("s");
        p.add_sum_squares_le(vec![x.into()], s);
        assert_eq!(p.max_violation(&[2.0, 4.0]), 0.0);
        assert!(p.max_violation(&[2.0, 3.0]) > 0.0);
    }

    #[test]
    fn dump_mentions_every_constraint() {
        let mut p = ConvexProgram::new();
        let x = p.add_var("x");
        p.maximize(x);
        p.add_le(x, 3.0);
        p.add_log_ge(x + 1.0, x);
        let d = p.dump();
        assert!(d.contains("le "));
        assert!(d.contains("exp "));
    }
}
