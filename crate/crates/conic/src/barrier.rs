//! Dense primal log-barrier method.
//!
//! Equalities are eliminated through a null-space parametrisation
//! `v = v₀ + N·w`; a phase-I problem finds a strictly feasible `w`, then a
//! standard barrier path-following loop with damped Newton centering solves
//! the program. Everything is dense, so this backend is only meant for small
//! programs and for cross-checking [`crate::InteriorPoint`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::program::{Constraint, ConvexProgram, LinExpr};
use crate::{Backend, KernelError, SolveReport, SolveStatus, OPTIMAL_RESIDUAL_MAX};

#[derive(Debug, Clone)]
pub struct DenseBarrier {
    /// Barrier parameter growth factor between centering steps.
    pub mu: f64,
    pub max_newton: u32,
    /// Every variable is confined to `|v| ≤ bound`, which keeps the
    /// centering problems bounded. A solution touching the box is reported
    /// as `MaxIters`.
    pub bound: f64,
}

impl Default for DenseBarrier {
    fn default() -> Self {
        Self {
            mu: 12.0,
            max_newton: 4000,
            bound: 1e6,
        }
    }
}

const CENTER_MAX_STEPS: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Le,
    Soc,
    Exp,
}

/// One inequality block in reduced coordinates: components `e = G·w + h`.
#[derive(Debug, Clone)]
struct Block {
    kind: Kind,
    g: DMatrix<f64>,
    h: DVector<f64>,
}

impl Block {
    fn degree(&self) -> f64 {
        match self.kind {
            Kind::Le => 1.0,
            Kind::Soc => 2.0,
            Kind::Exp => 3.0,
        }
    }

    fn eval(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.g * w + &self.h
    }

    /// Barrier value, or `None` outside the open domain.
    fn value(e: &DVector<f64>, kind: Kind) -> Option<f64> {
        match kind {
            Kind::Le => (e[0] < 0.0).then(|| -(-e[0]).ln()),
            Kind::Soc => {
                let t = e[0];
                let q = t * t - e.rows(1, e.len() - 1).norm_squared();
                (t > 0.0 && q > 0.0).then(|| -q.ln())
            }
            Kind::Exp => {
                let (x, y, z) = (e[0], e[1], e[2]);
                if y <= 0.0 || z <= 0.0 {
                    return None;
                }
                let u = y * (z / y).ln() - x;
                (u > 0.0).then(|| -u.ln() - y.ln() - z.ln())
            }
        }
    }

    /// Gradient and Hessian of the barrier in component space.
    fn derivs(e: &DVector<f64>, kind: Kind) -> (DVector<f64>, DMatrix<f64>) {
        match kind {
            Kind::Le => {
                let v = e[0];
                (DVector::from_element(1, -1.0 / v), DMatrix::from_element(1, 1, 1.0 / (v * v)))
            }
            Kind::Soc => {
                let d = e.len();
                let t = e[0];
                let q = t * t - e.rows(1, d - 1).norm_squared();
                let mut dq = e.clone() * -2.0;
                dq[0] = 2.0 * t;
                let mut d2q = DMatrix::from_diagonal_element(d, d, -2.0);
                d2q[(0, 0)] = 2.0;
                let grad = &dq * (-1.0 / q);
                let hess = &dq * dq.transpose() / (q * q) - d2q / q;
                (grad, hess)
            }
            Kind::Exp => {
                let (x, y, z) = (e[0], e[1], e[2]);
                let _ = x;
                let u = y * (z / y).ln() - e[0];
                let du = DVector::from_vec(vec![-1.0, (z / y).ln() - 1.0, y / z]);
                let mut d2u = DMatrix::zeros(3, 3);
                d2u[(1, 1)] = -1.0 / y;
                d2u[(1, 2)] = 1.0 / z;
                d2u[(2, 1)] = 1.0 / z;
                d2u[(2, 2)] = -y / (z * z);
                let mut grad = &du * (-1.0 / u);
                grad[1] -= 1.0 / y;
                grad[2] -= 1.0 / z;
                let mut hess = &du * du.transpose() / (u * u) - d2u / u;
                hess[(1, 1)] += 1.0 / (y * y);
                hess[(2, 2)] += 1.0 / (z * z);
                (grad, hess)
            }
        }
    }
}

struct Reduced {
    v0: DVector<f64>,
    basis: DMatrix<f64>,
    blocks: Vec<Block>,
    /// Objective to *minimise* in reduced coordinates (constant dropped).
    cost: DVector<f64>,
}

fn row_of(e: &LinExpr, n: usize) -> (DVector<f64>, f64) {
    let mut a = DVector::zeros(n);
    for (i, c) in e.canonical() {
        a[i] += c;
    }
    (a, e.constant_part())
}

fn reduce(prog: &ConvexProgram, bound: f64) -> Result<Reduced, ()> {
    let n = prog.num_vars();
    let eqs: Vec<(DVector<f64>, f64)> = prog
        .constraints()
        .iter()
        .filter_map(|c| match c {
            Constraint::Eq(e) => Some(row_of(e, n)),
            _ => None,
        })
        .collect();

    let (v0, basis) = if eqs.is_empty() {
        (DVector::zeros(n), DMatrix::identity(n, n))
    } else {
        let m = eqs.len();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for (r, (row, c)) in eqs.iter().enumerate() {
            a.set_row(r, &row.transpose());
            b[r] = -c;
        }
        let svd = a.clone().svd(true, true);
        let v0 = svd.solve(&b, 1e-12).map_err(|_| ())?;
        if (&a * &v0 - &b).norm() > 1e-9 * (1.0 + b.norm()) {
            return Err(());
        }
        let ata = a.transpose() * &a;
        let eig = SymmetricEigen::new(ata);
        let scale = eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(1e-300);
        let cols: Vec<DVector<f64>> = (0..n)
            .filter(|&i| eig.eigenvalues[i] <= 1e-12 * scale)
            .map(|i| eig.eigenvectors.column(i).into_owned())
            .collect();
        let mut basis = DMatrix::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            basis.set_column(j, c);
        }
        (v0, basis)
    };

    let k = basis.ncols();
    let to_block = |kind: Kind, exprs: &[&LinExpr]| {
        let mut g = DMatrix::zeros(exprs.len(), k);
        let mut h = DVector::zeros(exprs.len());
        for (r, e) in exprs.iter().enumerate() {
            let (row, c) = row_of(e, n);
            g.set_row(r, &(row.transpose() * &basis));
            h[r] = row.dot(&v0) + c;
        }
        Block { kind, g, h }
    };
    let mut blocks = Vec::new();
    for c in prog.constraints() {
        match c {
            Constraint::Eq(_) => {}
            Constraint::Le(e) => blocks.push(to_block(Kind::Le, &[e])),
            Constraint::Soc { t, x } => {
                let mut v = vec![t];
                v.extend(x.iter());
                blocks.push(to_block(Kind::Soc, &v));
            }
            Constraint::Exp { x, y, z } => blocks.push(to_block(Kind::Exp, &[x, y, z])),
        }
    }
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut e = LinExpr::constant(-bound);
            e.add_term(crate::program::Var(i), sign);
            blocks.push(to_block(Kind::Le, &[&e]));
        }
    }
    let (c, _) = row_of(prog.objective(), n);
    let cost = -(basis.transpose() * c);
    Ok(Reduced {
        v0,
        basis,
        blocks,
        cost,
    })
}

/// Centering problem `min t·cᵀw + Σ φ(G w + h)`.
struct Centering<'a> {
    blocks: &'a [Block],
    cost: &'a DVector<f64>,
}

impl Centering<'_> {
    fn value(&self, w: &DVector<f64>, t: f64) -> Option<f64> {
        let mut f = t * self.cost.dot(w);
        for b in self.blocks {
            f += Block::value(&b.eval(w), b.kind)?;
        }
        Some(f)
    }

    fn newton_step(&self, w: &DVector<f64>, t: f64) -> (DVector<f64>, f64) {
        let k = w.len();
        let mut grad = self.cost * t;
        let mut hess = DMatrix::zeros(k, k);
        for b in self.blocks {
            let (ge, he) = Block::derivs(&b.eval(w), b.kind);
            grad += b.g.transpose() * ge;
            hess += b.g.transpose() * he * &b.g;
        }
        let mut reg = 0.0;
        loop {
            let mut h = hess.clone();
            if reg > 0.0 {
                for i in 0..k {
                    h[(i, i)] += reg;
                }
            }
            if let Some(ch) = h.cholesky() {
                let dx = -ch.solve(&grad);
                let dec = -grad.dot(&dx);
                return (dx, dec.max(0.0));
            }
            reg = if reg == 0.0 { 1e-12 * (1.0 + hess.amax()) } else { reg * 10.0 };
        }
    }

    /// Damped Newton to the central point. `stop` allows early exit.
    fn center(
        &self,
        w: &mut DVector<f64>,
        t: f64,
        budget: &mut u32,
        stop: &dyn Fn(&DVector<f64>) -> bool,
    ) -> bool {
        let mut f = match self.value(w, t) {
            Some(f) => f,
            None => return false,
        };
        let mut steps = 0;
        while *budget > 0 && steps < CENTER_MAX_STEPS {
            *budget -= 1;
            steps += 1;
            let (dx, dec) = self.newton_step(w, t);
            if dec / 2.0 <= 1e-10 {
                return true;
            }
            let mut alpha = 1.0;
            loop {
                let trial = &*w + &dx * alpha;
                if let Some(ft) = self.value(&trial, t) {
                    if ft <= f - 0.25 * alpha * dec {
                        *w = trial;
                        f = ft;
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    return true;
                }
            }
            if stop(w) {
                return true;
            }
        }
        *budget > 0
    }
}

fn relaxed_blocks(blocks: &[Block]) -> Vec<Block> {
    // Append a slack column `s` to every block: Le: e − s; Soc: t + s;
    // Exp: (x − s, y + s, z + s). Plus the bound −1 − s ≤ 0.
    let mut out = Vec::with_capacity(blocks.len() + 1);
    for b in blocks {
        let (r, k) = b.g.shape();
        let mut g = b.g.clone().insert_column(k, 0.0);
        match b.kind {
            Kind::Le => g[(0, k)] = -1.0,
            Kind::Soc => g[(0, k)] = 1.0,
            Kind::Exp => {
                g[(0, k)] = -1.0;
                g[(1, k)] = 1.0;
                g[(2, k)] = 1.0;
            }
        }
        let _ = r;
        out.push(Block {
            kind: b.kind,
            g,
            h: b.h.clone(),
        });
    }
    let k = blocks.first().map(|b| b.g.ncols()).unwrap_or(0);
    let mut g = DMatrix::zeros(1, k + 1);
    g[(0, k)] = -1.0;
    out.push(Block {
        kind: Kind::Le,
        g,
        h: DVector::from_element(1, -1.0),
    });
    out
}

impl DenseBarrier {
    fn report(
        &self,
        prog: &ConvexProgram,
        status: SolveStatus,
        v: Vec<f64>,
        gap: f64,
        iters: u32,
    ) -> SolveReport {
        let primal_residual = prog.max_violation(&v);
        let status = if status == SolveStatus::Optimal && primal_residual > OPTIMAL_RESIDUAL_MAX {
            SolveStatus::MaxIters
        } else {
            status
        };
        SolveReport {
            status,
            objective_value: prog.objective().eval(&v),
            solution: v,
            primal_residual,
            dual_residual: gap,
            iterations: iters,
        }
    }
}

impl Backend for DenseBarrier {
    fn solve(&self, prog: &ConvexProgram, tol: f64) -> Result<SolveReport, KernelError> {
        prog.validate()?;
        let n = prog.num_vars();
        let red = match reduce(prog, self.bound) {
            Ok(r) => r,
            Err(()) => {
                return Ok(self.report(prog, SolveStatus::Infeasible, vec![0.0; n], f64::INFINITY, 0))
            }
        };
        let k = red.basis.ncols();
        let lift = |w: &DVector<f64>| -> Vec<f64> {
            (&red.v0 + &red.basis * w).iter().cloned().collect()
        };
        if red.blocks.is_empty() {
            let status = if red.cost.amax() == 0.0 {
                SolveStatus::Optimal
            } else {
                SolveStatus::MaxIters
            };
            let w = DVector::zeros(k);
            return Ok(self.report(prog, status, lift(&w), 0.0, 0));
        }
        let mut budget = self.max_newton;

        // ── phase I ──────────────────────────────────────────────────────
        let relaxed = relaxed_blocks(&red.blocks);
        let mut w1 = DVector::zeros(k + 1);
        let mut s0: f64 = 1.0;
        for b in &red.blocks {
            let e = b.eval(&DVector::zeros(k));
            let need = match b.kind {
                Kind::Le => e[0],
                Kind::Soc => e.rows(1, e.len() - 1).norm() - e[0],
                Kind::Exp => e[0].abs() + (-e[1]).max(0.0) + (-e[2]).max(0.0),
            };
            s0 = s0.max(need + 1.0);
        }
        loop {
            w1[k] = s0;
            if relaxed
                .iter()
                .all(|b| Block::value(&b.eval(&w1), b.kind).is_some())
            {
                break;
            }
            s0 *= 2.0;
            if !s0.is_finite() {
                return Err(KernelError::Backend("phase I start not found".into()));
            }
        }
        let mut cost1 = DVector::zeros(k + 1);
        cost1[k] = 1.0;
        let phase1 = Centering {
            blocks: &relaxed,
            cost: &cost1,
        };
        let nu1: f64 = relaxed.iter().map(Block::degree).sum();
        let margin = 1e-7;
        let feasible = |w: &DVector<f64>| w[w.len() - 1] < -margin;
        let mut t = 1.0;
        loop {
            if !phase1.center(&mut w1, t, &mut budget, &feasible) {
                return Ok(self.report(prog, SolveStatus::MaxIters, lift(&w1.rows(0, k).into_owned()), f64::INFINITY, self.max_newton - budget));
            }
            if feasible(&w1) {
                break;
            }
            if w1[k] - nu1 / t > 0.0 || nu1 / t < 1e-10 {
                // optimum of phase I has s* ≥ 0: no strictly feasible point
                return Ok(self.report(
                    prog,
                    SolveStatus::Infeasible,
                    lift(&w1.rows(0, k).into_owned()),
                    f64::INFINITY,
                    self.max_newton - budget,
                ));
            }
            t *= self.mu;
        }
        let mut w: DVector<f64> = w1.rows(0, k).into_owned();

        // ── phase II ─────────────────────────────────────────────────────
        let phase2 = Centering {
            blocks: &red.blocks,
            cost: &red.cost,
        };
        let nu: f64 = red.blocks.iter().map(Block::degree).sum();
        let never = |_: &DVector<f64>| false;
        let mut t = 1.0 / (1.0 + red.cost.norm());
        loop {
            if !phase2.center(&mut w, t, &mut budget, &never) {
                return Ok(self.report(prog, SolveStatus::MaxIters, lift(&w), nu / t, self.max_newton - budget));
            }
            let scale = 1.0 + red.cost.dot(&w).abs();
            if nu / t <= tol.max(1e-11) * scale {
                break;
            }
            t *= self.mu;
        }
        let v = lift(&w);
        let status = if v.iter().any(|x| x.abs() > 0.99 * self.bound) {
            SolveStatus::MaxIters
        } else {
            SolveStatus::Optimal
        };
        Ok(self.report(prog, status, v, nu / t, self.max_newton - budget))
    }
}
