//! Joint bandwidth and power allocation for one cluster by successive convex
//! approximation.
//!
//! Each step solves, over the associated entries,
//!
//! ```text
//! max Γ  s.t.  ψ ≤ log2(1 + Ψ)                      (exponential cone)
//!              g·p/N_o ≥ B̂·Ψ + Ψ̂·B − B̂·Ψ̂           (bilinear Ψ·B linearised)
//!              Σ_t 2(B̂+ψ̂)(B+ψ) − (B̂+ψ̂)² ≥ Σ_t (B² + ψ²) + 2·T_l·Γ
//!              per-slot bandwidth and power budgets
//! ```
//!
//! in MHz / mW / Mbit/s. After every step the slacks are tightened to the
//! achieved SNR so the reported rates are those of the actual `(B, p)`.

use serde::{Deserialize, Serialize};
use uavopt_conic::{ConvexProgram, LinExpr, SolveStatus, Var};

use crate::channel;
use crate::scenario::ScenarioConfig;

/// Bandwidth floor for associated users inside the solver, Hz.
pub const BANDWIDTH_FLOOR: f64 = 1e3;
/// Slack floor for the SNR scaling.
const SNR_SCALE_FLOOR: f64 = 1e-3;

const HZ_PER_MHZ: f64 = 1e6;
const W_PER_MW: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationTable {
    /// Hz, `b[n][t]`
    pub b: Vec<Vec<f64>>,
    /// W, `p[n][t]`
    pub p: Vec<Vec<f64>>,
}

impl AllocationTable {
    pub fn zeros(n: usize, t: usize) -> Self {
        Self {
            b: vec![vec![0.0; t]; n],
            p: vec![vec![0.0; t]; n],
        }
    }

    pub fn n_users(&self) -> usize {
        self.b.len()
    }

    pub fn n_slots(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }

    /// Per-slot rates in bits/s for the given effective gains.
    pub fn slot_rates(&self, gains: &[Vec<f64>], noise_psd: f64) -> Vec<Vec<f64>> {
        self.b
            .iter()
            .zip(&self.p)
            .zip(gains)
            .map(|((bn, pn), gn)| {
                bn.iter()
                    .zip(pn)
                    .zip(gn)
                    .map(|((&b, &p), &g)| channel::rate(b, p, g, noise_psd))
                    .collect()
            })
            .collect()
    }

    /// Per-user average rate over the `T_l` serving slots.
    pub fn user_rates(&self, gains: &[Vec<f64>], noise_psd: f64) -> Vec<f64> {
        let t = self.n_slots().max(1) as f64;
        self.slot_rates(gains, noise_psd)
            .iter()
            .map(|r| r.iter().sum::<f64>() / t)
            .collect()
    }

    pub fn min_rate(&self, gains: &[Vec<f64>], noise_psd: f64) -> f64 {
        self.user_rates(gains, noise_psd)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest violation of the per-user caps, the per-slot budgets, the
    /// association mask and nonnegativity, in relative units.
    pub fn budget_violation(&self, cfg: &ScenarioConfig, j: &[Vec<bool>]) -> f64 {
        let mut worst: f64 = 0.0;
        let (bmax, pmax, ptot) = (cfg.b_total_max, cfg.p_user_max, cfg.p_total_max);
        for t in 0..self.n_slots() {
            let mut sb = 0.0;
            let mut sp = 0.0;
            for n in 0..self.n_users() {
                let (b, p) = (self.b[n][t], self.p[n][t]);
                worst = worst.max(-b / bmax).max(-p / pmax);
                if j[n][t] {
                    worst = worst.max(b / bmax - 1.0).max(p / pmax - 1.0);
                } else {
                    worst = worst.max(b.abs() / bmax).max(p.abs() / pmax);
                }
                sb += b;
                sp += p;
            }
            worst = worst.max(sb / bmax - 1.0).max(sp / ptot - 1.0);
        }
        worst
    }
}

/// Equal split among the users associated in each slot.
pub fn init_allocation(j: &[Vec<bool>], cfg: &ScenarioConfig) -> AllocationTable {
    let n = j.len();
    let tt = j.first().map_or(0, Vec::len);
    let mut a = AllocationTable::zeros(n, tt);
    for t in 0..tt {
        let k = j.iter().filter(|r| r[t]).count();
        if k == 0 {
            continue;
        }
        let b = cfg.b_total_max / k as f64;
        let p = cfg.p_user_max.min(cfg.p_total_max / k as f64);
        for u in 0..n {
            if j[u][t] {
                a.b[u][t] = b;
                a.p[u][t] = p;
            }
        }
    }
    a
}

/// Slack variables and the expansion point of one SCA step.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackState {
    /// SNR slack Ψ
    pub snr: Vec<Vec<f64>>,
    /// spectral-efficiency slack ψ, bits/s/Hz
    pub se: Vec<Vec<f64>>,
    /// expansion bandwidth B̂, Hz
    pub b_hat: Vec<Vec<f64>>,
    /// expansion power P̂, W
    pub p_hat: Vec<Vec<f64>>,
}

impl SlackState {
    /// Tight slacks at `alloc`: `Ψ = p·g/(B·N_o)`, `ψ = log2(1 + Ψ)`.
    pub fn tight(alloc: &AllocationTable, gains: &[Vec<f64>], noise_psd: f64) -> Self {
        let snr: Vec<Vec<f64>> = alloc
            .b
            .iter()
            .zip(&alloc.p)
            .zip(gains)
            .map(|((bn, pn), gn)| {
                bn.iter()
                    .zip(pn)
                    .zip(gn)
                    .map(|((&b, &p), &g)| if b > 0.0 { p * g / (b * noise_psd) } else { 0.0 })
                    .collect()
            })
            .collect();
        let se = snr
            .iter()
            .map(|r| r.iter().map(|&s| s.ln_1p() / std::f64::consts::LN_2).collect())
            .collect();
        Self {
            snr,
            se,
            b_hat: alloc.b.clone(),
            p_hat: alloc.p.clone(),
        }
    }
}

/// `lhs − rhs` of the linearised per-user bandwidth constraint, with `b` and
/// `b_hat` in any fixed unit and `gamma` in that unit times bits/s/Hz.
pub fn dc_margin(b_hat: &[f64], se_hat: &[f64], b: &[f64], se: &[f64], t_l: usize, gamma: f64) -> f64 {
    let mut lhs = 0.0;
    let mut rhs = 2.0 * t_l as f64 * gamma;
    for i in 0..b.len() {
        let s = b_hat[i] + se_hat[i];
        lhs += 2.0 * s * (b[i] + se[i]) - s * s;
        rhs += b[i] * b[i] + se[i] * se[i];
    }
    lhs - rhs
}

/// `g·p/N_o − (B̂·Ψ + Ψ̂·B − B̂·Ψ̂)`, in Hz.
pub fn product_margin(g: f64, p: f64, noise_psd: f64, b_hat: f64, snr_hat: f64, b: f64, snr: f64) -> f64 {
    g * p / noise_psd - (b_hat * snr + snr_hat * b - b_hat * snr_hat)
}

/// Outcome of one convex step.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocStep {
    pub alloc: AllocationTable,
    pub state: SlackState,
    /// True min average rate after tightening, bits/s.
    pub gamma: f64,
    /// Surrogate optimum, bits/s.
    pub gamma_surrogate: f64,
    /// The kernel did not return an optimal point; `alloc` is the expansion.
    pub stalled: bool,
}

struct EntryVars {
    n: usize,
    t: usize,
    b: Var,
    p: Var,
    x: Var,
    se: Var,
    /// Ψ = scale·x
    scale: f64,
}

/// One convex step around `state`.
pub fn solve_allocation_step(
    state: &SlackState,
    j: &[Vec<bool>],
    gains: &[Vec<f64>],
    cfg: &ScenarioConfig,
) -> AllocStep {
    let n_users = j.len();
    let tt = j.first().map_or(0, Vec::len);
    let n0 = cfg.noise_psd;
    let floor_m = BANDWIDTH_FLOOR / HZ_PER_MHZ;
    let bmax_m = cfg.b_total_max / HZ_PER_MHZ;
    let pmax_m = cfg.p_user_max / W_PER_MW;
    let ptot_m = cfg.p_total_max / W_PER_MW;

    let mut prog = ConvexProgram::new();
    let gamma = prog.add_var("gamma");
    prog.maximize(gamma);
    let mut entries: Vec<EntryVars> = Vec::new();
    for t in 0..tt {
        for n in 0..n_users {
            if !j[n][t] {
                continue;
            }
            let e = EntryVars {
                n,
                t,
                b: prog.add_var(format!("b{n}_{t}")),
                p: prog.add_var(format!("p{n}_{t}")),
                x: prog.add_var(format!("snr{n}_{t}")),
                se: prog.add_var(format!("se{n}_{t}")),
                scale: state.snr[n][t].max(SNR_SCALE_FLOOR),
            };
            prog.add_ge(e.b, floor_m);
            prog.add_le(e.b, bmax_m);
            prog.add_ge(e.p, 0.0);
            prog.add_le(e.p, pmax_m);
            prog.add_ge(e.x, 0.0);
            prog.add_ge(e.se, 0.0);

            // ψ·ln2 − ln s ≤ ln(1/s + x)
            let mut lhs = LinExpr::term(e.se, std::f64::consts::LN_2);
            lhs.add_constant(-e.scale.ln());
            let mut arg = LinExpr::term(e.x, 1.0);
            arg.add_constant(1.0 / e.scale);
            prog.add_log_ge(arg, lhs);

            // κ·p ≥ B̂·s·x + Ψ̂·B − B̂·Ψ̂, divided through by D = B̂·s
            let b_hat_m = (state.b_hat[n][t] / HZ_PER_MHZ).max(floor_m);
            let snr_hat = state.snr[n][t];
            let kappa = gains[n][t] * W_PER_MW / (n0 * HZ_PER_MHZ);
            let d = b_hat_m * e.scale;
            let mut lin = LinExpr::term(e.x, 1.0);
            lin.add_term(e.b, snr_hat / e.scale / b_hat_m);
            lin.add_constant(-snr_hat / e.scale);
            prog.add_ge(LinExpr::term(e.p, kappa / d), lin);
            entries.push(e);
        }
    }
    for t in 0..tt {
        let mut sb = LinExpr::zero();
        let mut sp = LinExpr::zero();
        let mut any = false;
        for e in entries.iter().filter(|e| e.t == t) {
            sb.add_term(e.b, 1.0);
            sp.add_term(e.p, 1.0);
            any = true;
        }
        if any {
            prog.add_le(sb, bmax_m);
            prog.add_le(sp, ptot_m);
        }
    }
    for n in 0..n_users {
        let mine: Vec<&EntryVars> = entries.iter().filter(|e| e.n == n).collect();
        if mine.is_empty() {
            // A user with no slot has zero rate, which caps Γ at zero.
            prog.add_le(gamma, 0.0);
            continue;
        }
        let mut rhs = LinExpr::term(gamma, -2.0 * tt as f64);
        let mut squares = Vec::with_capacity(2 * mine.len());
        for e in &mine {
            let s = state.b_hat[n][e.t] / HZ_PER_MHZ + state.se[n][e.t];
            rhs.add_term(e.b, 2.0 * s);
            rhs.add_term(e.se, 2.0 * s);
            rhs.add_constant(-s * s);
            squares.push(LinExpr::term(e.b, 1.0));
            squares.push(LinExpr::term(e.se, 1.0));
        }
        prog.add_sum_squares_le(squares, rhs);
    }

    let expansion = AllocationTable {
        b: state.b_hat.clone(),
        p: state.p_hat.clone(),
    };
    let stall = |state: &SlackState| AllocStep {
        gamma: expansion.min_rate(gains, n0),
        gamma_surrogate: f64::NAN,
        alloc: expansion.clone(),
        state: state.clone(),
        stalled: true,
    };
    let report = match uavopt_conic::solve(&prog, 1e-8) {
        Ok(r) if r.status == SolveStatus::Optimal => r,
        _ => return stall(state),
    };

    let mut alloc = AllocationTable::zeros(n_users, tt);
    for e in &entries {
        alloc.b[e.n][e.t] = report.value(e.b).clamp(floor_m, bmax_m) * HZ_PER_MHZ;
        alloc.p[e.n][e.t] = report.value(e.p).clamp(0.0, pmax_m) * W_PER_MW;
    }
    project_budgets(&mut alloc, cfg);
    let new_state = SlackState::tight(&alloc, gains, n0);
    AllocStep {
        gamma: alloc.min_rate(gains, n0),
        gamma_surrogate: report.value(gamma) * HZ_PER_MHZ,
        alloc,
        state: new_state,
        stalled: false,
    }
}

/// Scale each slot down onto its budgets; the solver's residual can leave a
/// sum a hair above the cap.
fn project_budgets(a: &mut AllocationTable, cfg: &ScenarioConfig) {
    for t in 0..a.n_slots() {
        let sb: f64 = a.b.iter().map(|r| r[t]).sum();
        let sp: f64 = a.p.iter().map(|r| r[t]).sum();
        if sb > cfg.b_total_max {
            let f = cfg.b_total_max / sb;
            a.b.iter_mut().for_each(|r| r[t] *= f);
        }
        if sp > cfg.p_total_max {
            let f = cfg.p_total_max / sp;
            a.p.iter_mut().for_each(|r| r[t] *= f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocOutcome {
    pub alloc: AllocationTable,
    /// True min average rate of `alloc`, bits/s.
    pub gamma: f64,
    /// True min rate after each step, starting with the initial point.
    pub history: Vec<f64>,
    pub iterations: u32,
    pub stalled: bool,
}

/// SCA from `start` (the equal split when `None`). Iterates until the
/// relative change of the true min rate drops below `sca_tol`, a step would
/// lower it, or `sca_max_iters` steps; returns the best iterate. `history`
/// holds the accepted iterates only.
pub fn sca_allocation(
    j: &[Vec<bool>],
    gains: &[Vec<f64>],
    cfg: &ScenarioConfig,
    start: Option<&AllocationTable>,
) -> AllocOutcome {
    let init = start.cloned().unwrap_or_else(|| init_allocation(j, cfg));
    let mut best = init.clone();
    let mut best_gamma = init.min_rate(gains, cfg.noise_psd);
    let mut state = SlackState::tight(&init, gains, cfg.noise_psd);
    let mut history = vec![best_gamma];
    let mut prev = best_gamma;
    let mut iterations = 0;
    let mut stalled = false;
    for _ in 0..cfg.sca_max_iters {
        iterations += 1;
        let step = solve_allocation_step(&state, j, gains, cfg);
        if step.stalled {
            stalled = true;
            break;
        }
        if step.gamma < prev {
            break;
        }
        history.push(step.gamma);
        if step.gamma > best_gamma {
            best_gamma = step.gamma;
            best = step.alloc.clone();
        }
        let change = (step.gamma - prev).abs();
        prev = step.gamma;
        state = step.state;
        if change <= cfg.sca_tol * prev.abs().max(1.0) {
            break;
        }
    }
    release_floor(&mut best);
    AllocOutcome {
        gamma: best.min_rate(gains, cfg.noise_psd),
        alloc: best,
        history,
        iterations,
        stalled,
    }
}

/// Entries left at the solver's bandwidth floor carry no power worth keeping.
fn release_floor(a: &mut AllocationTable) {
    for (bn, pn) in a.b.iter_mut().zip(a.p.iter_mut()) {
        for (b, p) in bn.iter_mut().zip(pn.iter_mut()) {
            if *b > 0.0 && *b <= BANDWIDTH_FLOOR * (1.0 + 1e-9) && *p <= 0.0 {
                *b = 0.0;
            }
        }
    }
}
