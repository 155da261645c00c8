use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::program::{Constraint, ConvexProgram, LinExpr};
use crate::{Backend, KernelError, SolveReport, SolveStatus, OPTIMAL_RESIDUAL_MAX};

/// Primal-dual interior-point backend (Clarabel).
#[derive(Debug, Clone)]
pub struct InteriorPoint {
    pub max_iter: u32,
}

impl Default for InteriorPoint {
    fn default() -> Self {
        Self { max_iter: 200 }
    }
}

#[derive(PartialEq, Eq, Clone, Copy)]
enum Block {
    Zero,
    NonNeg,
}

struct Assembly {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    open: Option<(Block, usize)>,
}

impl Assembly {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            b: Vec::new(),
            cones: Vec::new(),
            open: None,
        }
    }

    /// Append a row `s = sign·expr` (sign = −1 for `expr ≤ 0` / `expr = 0`
    /// rows, +1 for cone members).
    fn row(&mut self, e: &LinExpr, sign: f64) {
        let r = self.b.len();
        for (i, c) in e.canonical() {
            self.rows.push(r);
            self.cols.push(i);
            self.vals.push(-sign * c);
        }
        self.b.push(sign * e.constant_part());
    }

    fn flush(&mut self) {
        if let Some((blk, n)) = self.open.take() {
            self.cones.push(match blk {
                Block::Zero => SupportedConeT::ZeroConeT(n),
                Block::NonNeg => SupportedConeT::NonnegativeConeT(n),
            });
        }
    }

    fn scalar(&mut self, blk: Block, e: &LinExpr) {
        match self.open {
            Some((b, ref mut n)) if b == blk => *n += 1,
            _ => {
                self.flush();
                self.open = Some((blk, 1));
            }
        }
        self.row(e, -1.0);
    }
}

fn map_status(s: SolverStatus) -> SolveStatus {
    match s {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        _ => SolveStatus::MaxIters,
    }
}

impl Backend for InteriorPoint {
    fn solve(&self, prog: &ConvexProgram, tol: f64) -> Result<SolveReport, KernelError> {
        prog.validate()?;
        let n = prog.num_vars();
        let mut asm = Assembly::new();
        for c in prog.constraints() {
            match c {
                Constraint::Eq(e) => asm.scalar(Block::Zero, e),
                Constraint::Le(e) => asm.scalar(Block::NonNeg, e),
                Constraint::Soc { t, x } => {
                    asm.flush();
                    asm.row(t, 1.0);
                    for e in x {
                        asm.row(e, 1.0);
                    }
                    asm.cones.push(SupportedConeT::SecondOrderConeT(1 + x.len()));
                }
                Constraint::Exp { x, y, z } => {
                    asm.flush();
                    asm.row(x, 1.0);
                    asm.row(y, 1.0);
                    asm.row(z, 1.0);
                    asm.cones.push(SupportedConeT::ExponentialConeT());
                }
            }
        }
        asm.flush();
        let m = asm.b.len();

        let mut q = vec![0.0; n];
        for (i, c) in prog.objective().canonical() {
            q[i] = -c;
        }
        let p = CscMatrix::<f64>::zeros((n, n));
        let a = CscMatrix::new_from_triplets(m, n, asm.rows, asm.cols, asm.vals);

        let tol = tol.clamp(1e-12, 1e-4);
        let settings = DefaultSettings {
            verbose: false,
            max_iter: self.max_iter,
            tol_gap_abs: tol,
            tol_gap_rel: tol,
            tol_feas: tol,
            tol_ktratio: tol.min(1e-6),
            max_threads: 1,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &q, &a, &asm.b, &asm.cones, settings)
            .map_err(|e| KernelError::Backend(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;

        let mut status = map_status(sol.status);
        let x: Vec<f64> = sol.x.clone();
        let primal_residual = if status == SolveStatus::Infeasible {
            f64::INFINITY
        } else {
            prog.max_violation(&x)
        };
        if status == SolveStatus::Optimal
            && !(primal_residual <= OPTIMAL_RESIDUAL_MAX && x.iter().all(|v| v.is_finite()))
        {
            status = SolveStatus::MaxIters;
        }
        Ok(SolveReport {
            status,
            objective_value: prog.objective().eval(&x),
            solution: x,
            primal_residual,
            dual_residual: sol.r_dual,
            iterations: sol.iterations,
        })
    }
}
