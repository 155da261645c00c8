//! Exact per-cluster user association.
//!
//! Maximises `Γ = min_n (1/T_l)·Σ_t j[n,t]·r[n,t]` over binary `j` with at
//! least `τ` slots per user and at most `C_max` users per slot, by
//! depth-first branch-and-bound on the LP relaxation. Branching takes the
//! first fractional entry in slot-major order and tries `1` before `0`;
//! incumbents come from a greedy schedule and from rounding each node's
//! relaxation, and are only replaced on strict improvement, so the result
//! is deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use microlp::{ComparisonOp, Error as LpError, LinearExpr, OptimizationDirection, Problem, Solution, SolveOutcome, Variable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssocError {
    #[error("connectivity: tau = {tau} slots exceeds the {slots} available slots")]
    Connectivity { tau: u32, slots: usize },
    #[error("capacity: {users} users x tau = {tau} exceeds C_max = {c_max} x {slots} slots")]
    Capacity {
        users: usize,
        tau: u32,
        c_max: usize,
        slots: usize,
    },
    #[error("association needs at least one user and one slot")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    /// `j[n][t]`
    pub j: Vec<Vec<bool>>,
    pub tau_req: u32,
    /// Optimal min average rate, bits/s.
    pub gamma: f64,
    /// `Γ·τ·δ ≥ r_on`.
    pub qos_met: bool,
    /// Search nodes expanded.
    pub nodes: usize,
    /// Optimum of the root LP relaxation, bits/s; an upper bound on `gamma`.
    pub root_bound: f64,
    /// False when the node limit stopped the search before the tree closed.
    pub proven_optimal: bool,
}

impl Association {
    pub fn n_users(&self) -> usize {
        self.j.len()
    }

    pub fn n_slots(&self) -> usize {
        self.j.first().map_or(0, Vec::len)
    }

    pub fn users_in_slot(&self, t: usize) -> usize {
        self.j.iter().filter(|row| row[t]).count()
    }

    pub fn slots_of(&self, n: usize) -> usize {
        self.j[n].iter().filter(|&&b| b).count()
    }

    pub fn all_ones(n: usize, t: usize, tau: u32) -> Self {
        Self {
            j: vec![vec![true; t]; n],
            tau_req: tau,
            gamma: 0.0,
            qos_met: false,
            nodes: 0,
            root_bound: f64::INFINITY,
            proven_optimal: false,
        }
    }
}

/// Per-user average associated rate.
pub fn user_rates(j: &[Vec<bool>], rates: &[Vec<f64>]) -> Vec<f64> {
    j.iter()
        .zip(rates)
        .map(|(jr, rr)| {
            let t = jr.len().max(1) as f64;
            jr.iter().zip(rr).filter(|(b, _)| **b).map(|(_, r)| *r).sum::<f64>() / t
        })
        .collect()
}

pub fn min_rate(j: &[Vec<bool>], rates: &[Vec<f64>]) -> f64 {
    user_rates(j, rates).into_iter().fold(f64::INFINITY, f64::min)
}

struct Search<'a> {
    rates: &'a [Vec<f64>],
    tau: usize,
    c_max: usize,
    scale: f64,
    /// Slot-major: `x[t·N + n]`.
    x: Vec<Variable>,
    best_value: f64,
    best: Option<Vec<Vec<bool>>>,
    nodes: usize,
    node_limit: usize,
    truncated: bool,
    gap: f64,
}

const INTEGRAL: f64 = 1e-6;

/// Relaxation with `x[t·N + n]` pinned where `fix` says so.
fn build_lp(rates: &[Vec<f64>], tau: usize, c_max: usize, scale: f64, fix: &[Option<bool>]) -> (Problem, Vec<Variable>) {
    let n = rates.len();
    let tt = rates[0].len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let g = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let x: Vec<Variable> = fix
        .iter()
        .map(|f| match f {
            Some(true) => lp.add_var(0.0, (1.0, 1.0)),
            Some(false) => lp.add_var(0.0, (0.0, 0.0)),
            None => lp.add_var(0.0, (0.0, 1.0)),
        })
        .collect();
    for u in 0..n {
        let mut served = LinearExpr::empty();
        let mut count = LinearExpr::empty();
        for t in 0..tt {
            served.add(x[t * n + u], rates[u][t] / scale);
            count.add(x[t * n + u], 1.0);
        }
        served.add(g, -1.0);
        lp.add_constraint(served, ComparisonOp::Ge, 0.0);
        lp.add_constraint(count, ComparisonOp::Ge, tau as f64);
    }
    for t in 0..tt {
        let col: Vec<(Variable, f64)> = (0..n).map(|u| (x[t * n + u], 1.0)).collect();
        lp.add_constraint(col.as_slice(), ComparisonOp::Le, c_max as f64);
    }
    (lp, x)
}

enum Node {
    Solved(Solution),
    Infeasible,
    Failed,
}

fn node(o: Result<SolveOutcome, LpError>) -> Node {
    match o {
        Ok(o) => match o.into_solution() {
            Ok(s) => Node::Solved(s),
            Err(_) => Node::Failed,
        },
        Err(LpError::Infeasible) => Node::Infeasible,
        Err(_) => Node::Failed,
    }
}

impl Search<'_> {
    fn n(&self) -> usize {
        self.rates.len()
    }

    fn t_total(&self) -> usize {
        self.rates[0].len()
    }

    fn improves(&self, v: f64, rel: f64) -> bool {
        self.best_value == f64::NEG_INFINITY || v > self.best_value + rel * self.best_value.abs()
    }

    fn offer(&mut self, j: Vec<Vec<bool>>) {
        let tt = self.t_total();
        if (0..tt).any(|t| j.iter().filter(|r| r[t]).count() > self.c_max) {
            return;
        }
        if j.iter().any(|r| r.iter().filter(|&&b| b).count() < self.tau) {
            return;
        }
        let v = min_rate(&j, self.rates);
        if self.improves(v, 1e-12) {
            self.best_value = v;
            self.best = Some(j);
        }
    }

    /// Per slot fill up to `C_max` users by decreasing relaxed value, lower
    /// user index first on ties.
    fn round(&self, x: &[f64]) -> Vec<Vec<bool>> {
        let n = self.n();
        let tt = self.t_total();
        let mut j = vec![vec![false; tt]; n];
        for t in 0..tt {
            let mut order: Vec<usize> = (0..n).filter(|&u| x[t * n + u] > INTEGRAL).collect();
            order.sort_by(|&a, &b| x[t * n + b].total_cmp(&x[t * n + a]).then(a.cmp(&b)));
            for &u in order.iter().take(self.c_max) {
                j[u][t] = true;
            }
        }
        j
    }

    /// Integral seat-count bound. Per-slot capacities are pooled, but each
    /// user's served amount with `k` seats is at most its fixed rates plus its
    /// `k` best free slots, with `k` integral.
    fn seat_bound(&self, fix: &[Option<bool>]) -> Option<f64> {
        let n = self.n();
        let tt = self.t_total();
        let mut seats = 0usize;
        for t in 0..tt {
            let ones = (0..n).filter(|&u| fix[t * n + u] == Some(true)).count();
            let free = (0..n).filter(|&u| fix[t * n + u].is_none()).count();
            if ones > self.c_max {
                return None;
            }
            seats += free.min(self.c_max - ones);
        }
        // prefix[u][k]: fixed rate sum plus the k best free rates
        let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut k_min = vec![0usize; n];
        for u in 0..n {
            let mut base = 0.0;
            let mut forced = 0usize;
            let mut free = Vec::new();
            for t in 0..tt {
                match fix[t * n + u] {
                    Some(true) => {
                        base += self.rates[u][t];
                        forced += 1;
                    }
                    None => free.push(self.rates[u][t]),
                    Some(false) => {}
                }
            }
            free.sort_by(|a, b| b.total_cmp(a));
            k_min[u] = self.tau.saturating_sub(forced);
            if k_min[u] > free.len() {
                return None;
            }
            let mut p = Vec::with_capacity(free.len() + 1);
            p.push(base);
            for r in free {
                p.push(p.last().unwrap() + r);
            }
            prefix.push(p);
        }
        let need = |gamma: f64| -> usize {
            let mut total = 0usize;
            for u in 0..n {
                let p = &prefix[u];
                match (k_min[u]..p.len()).find(|&k| p[k] >= gamma) {
                    Some(k) => total += k,
                    None => return usize::MAX,
                }
            }
            total
        };
        if need(f64::NEG_INFINITY) > seats {
            return None;
        }
        let mut cands: Vec<f64> = prefix
            .iter()
            .zip(&k_min)
            .flat_map(|(p, &k)| p[k..].iter().copied())
            .collect();
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        // need() is nondecreasing in gamma; find the largest feasible candidate.
        let (mut lo, mut hi) = (0usize, cands.len());
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if need(cands[mid]) <= seats {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(cands[lo] / tt as f64)
    }

    fn branch(&mut self, sol: Solution, fix: &mut Vec<Option<bool>>) {
        self.nodes += 1;
        let lp = sol.objective() * self.scale / self.t_total() as f64;
        if !self.improves(lp, self.gap) {
            return;
        }
        let Some(seat) = self.seat_bound(fix) else {
            return;
        };
        let bound = lp.min(seat);
        if !self.improves(bound, self.gap) {
            return;
        }
        let x: Vec<f64> = self.x.iter().map(|v| sol[*v]).collect();
        let rounded = self.round(&x);
        self.offer(rounded);
        if !self.improves(bound, self.gap) {
            return;
        }
        if self.nodes >= self.node_limit {
            self.truncated = true;
            return;
        }
        // Most fractional entry, first in slot-major order on ties.
        let mut pick = None;
        let mut frac = INTEGRAL;
        for (i, &xi) in x.iter().enumerate() {
            let f = (xi - xi.round()).abs();
            if f > frac + 1e-12 {
                frac = f;
                pick = Some(i);
            }
        }
        let Some(i) = pick else {
            return;
        };
        let var = self.x[i];
        for b in [true, false] {
            fix[i] = Some(b);
            let child = match node(sol.clone().fix_var(var, f64::from(u8::from(b)))) {
                Node::Solved(c) => Some(c),
                Node::Infeasible => None,
                // Warm start broke down numerically; solve this node afresh.
                Node::Failed => match node(build_lp(self.rates, self.tau, self.c_max, self.scale, fix).0.solve()) {
                    Node::Solved(c) => Some(c),
                    Node::Infeasible => None,
                    Node::Failed => {
                        self.truncated = true;
                        None
                    }
                },
            };
            if let Some(child) = child {
                self.branch(child, fix);
            }
        }
        fix[i] = None;
    }
}

/// Each slot goes to the users furthest behind, with users still short of
/// `τ` first.
fn greedy(rates: &[Vec<f64>], tau: usize, c_max: usize) -> Vec<Vec<bool>> {
    let n = rates.len();
    let tt = rates[0].len();
    let mut acc = vec![0.0f64; n];
    let mut cnt = vec![0usize; n];
    let mut j = vec![vec![false; tt]; n];
    for t in 0..tt {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let short_a = tau.saturating_sub(cnt[a]);
            let short_b = tau.saturating_sub(cnt[b]);
            short_b
                .cmp(&short_a)
                .then(acc[a].total_cmp(&acc[b]))
                .then(a.cmp(&b))
        });
        for &u in order.iter().take(c_max) {
            acc[u] += rates[u][t];
            cnt[u] += 1;
            j[u][t] = true;
        }
    }
    j
}

pub fn check_counts(n: usize, t: usize, tau: u32, c_max: usize) -> Result<(), AssocError> {
    if n == 0 || t == 0 || c_max == 0 {
        return Err(AssocError::Empty);
    }
    if tau as usize > t {
        return Err(AssocError::Connectivity { tau, slots: t });
    }
    if n * tau as usize > c_max * t {
        return Err(AssocError::Capacity {
            users: n,
            tau,
            c_max,
            slots: t,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssocOptions {
    /// Relative optimality gap below which a subtree is pruned.
    pub gap: f64,
    /// Search nodes after which branching stops and the incumbent is kept.
    pub node_limit: usize,
}

impl Default for AssocOptions {
    fn default() -> Self {
        Self {
            gap: 1e-9,
            node_limit: usize::MAX,
        }
    }
}

/// `rates[n][t]` in bits/s; `r_on` in bits; `slot` in seconds.
pub fn solve_association(
    rates: &[Vec<f64>],
    tau: u32,
    c_max: usize,
    r_on: f64,
    slot: f64,
) -> Result<Association, AssocError> {
    solve_association_with(rates, tau, c_max, r_on, slot, AssocOptions::default())
}

pub fn solve_association_with(
    rates: &[Vec<f64>],
    tau: u32,
    c_max: usize,
    r_on: f64,
    slot: f64,
    opts: AssocOptions,
) -> Result<Association, AssocError> {
    let n = rates.len();
    let tt = rates.first().map_or(0, Vec::len);
    check_counts(n, tt, tau, c_max)?;

    let (j, nodes, root_bound, proven_optimal) = if n <= c_max {
        let j = vec![vec![true; tt]; n];
        let g = min_rate(&j, rates);
        (j, 1, g, true)
    } else {
        let scale = rates
            .iter()
            .flatten()
            .fold(0.0f64, |m, r| m.max(*r))
            .max(1e-300);
        let (lp, x) = build_lp(rates, tau as usize, c_max, scale, &vec![None; n * tt]);
        let mut s = Search {
            rates,
            tau: tau as usize,
            c_max,
            scale,
            x,
            best_value: f64::NEG_INFINITY,
            best: None,
            nodes: 0,
            node_limit: opts.node_limit,
            truncated: false,
            gap: opts.gap,
        };
        s.offer(greedy(rates, tau as usize, c_max));
        let mut root_bound = f64::INFINITY;
        match node(lp.solve()) {
            Node::Solved(root) => {
                root_bound = root.objective() * scale / tt as f64;
                s.branch(root, &mut vec![None; n * tt]);
            }
            Node::Infeasible => {}
            Node::Failed => s.truncated = true,
        }
        (
            s.best.expect("count check guarantees a feasible association"),
            s.nodes,
            root_bound,
            !s.truncated,
        )
    };
    let gamma = min_rate(&j, rates);
    Ok(Association {
        j,
        tau_req: tau,
        gamma,
        qos_met: gamma * tau as f64 * slot >= r_on * (1.0 - 1e-12),
        nodes,
        root_bound,
        proven_optimal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_user_takes_every_slot() {
        let rates = vec![vec![5.0, 1.0, 3.0]];
        // τ is a lower bound on connected slots, so the rate-1 slot still helps.
        let a = solve_association(&rates, 2, 1, 0.0, 1.0).unwrap();
        assert_eq!(a.j, vec![vec![true, true, true]]);
        assert!((a.gamma - 3.0).abs() < 1e-12);
    }

    #[test]
    fn equal_rates_are_shared_evenly() {
        let rates = vec![vec![2.0; 6]; 3];
        let a = solve_association(&rates, 2, 3, 0.0, 1.0).unwrap();
        assert!(a.j.iter().all(|r| r.iter().all(|&b| b)));
        assert!((a.gamma - 2.0).abs() < 1e-12);
        let rates = vec![vec![2.0; 6]; 3];
        let a = solve_association(&rates, 2, 1, 0.0, 1.0).unwrap();
        for n in 0..3 {
            assert_eq!(a.slots_of(n), 2);
        }
        assert!((a.gamma - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_counts_are_named() {
        let rates = vec![vec![1.0; 3]; 4];
        assert!(matches!(
            solve_association(&rates, 2, 2, 0.0, 1.0),
            Err(AssocError::Capacity { .. })
        ));
        assert!(matches!(
            solve_association(&rates, 4, 2, 0.0, 1.0),
            Err(AssocError::Connectivity { .. })
        ));
    }

    #[test]
    fn qos_flag() {
        let rates = vec![vec![10.0; 4]; 2];
        let a = solve_association(&rates, 4, 2, 40.0, 1.0).unwrap();
        assert!(a.qos_met);
        let a = solve_association(&rates, 4, 2, 41.0, 1.0).unwrap();
        assert!(!a.qos_met);
    }
}
