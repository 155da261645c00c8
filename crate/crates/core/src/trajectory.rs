//! Per-cluster 3D trajectory design by successive convex approximation.
//!
//! The rate of an associated user-slot is `B·f(d²)` with
//! `f(d²) = log2(1 + 𝒞₂/d²)`, `d² = ‖w − Q‖² + H²` and `𝒞₂ = p·‖h‖²/(η·K·B·N_o)`.
//! `f` is convex in `d²`, so its tangent at the current iterate is a global
//! lower bound; with `u ≥ ‖w − Q‖²` and `v ≥ H²` as epigraph variables each
//! step is a second-order cone program. The LoS/NLoS regime is frozen at
//! the expansion point.

use serde::{Deserialize, Serialize};
use uavopt_conic::{ConvexProgram, LinExpr, SolveStatus, Var};

use crate::allocation::AllocationTable;
use crate::channel::{self, Regime};
use crate::geom::{UavPose, Vec2};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<UavPose>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn last(&self) -> Option<UavPose> {
        self.poses.last().copied()
    }

    /// Horizontal speed per slot, m/s, measured from `prev` for slot 0.
    pub fn speeds(&self, prev: UavPose, slot: f64) -> Vec<f64> {
        let mut last = prev;
        self.poses
            .iter()
            .map(|p| {
                let v = p.xy.dist(last.xy).hypot(p.h - last.h) / slot;
                last = *p;
                v
            })
            .collect()
    }
}

/// Boundary conditions of one cluster's flight.
#[derive(Debug, Clone, Copy)]
pub struct FlightContext<'a> {
    pub cfg: &'a ScenarioConfig,
    /// Pose one slot before the first serving slot.
    pub prev: UavPose,
    /// Pose the last slot must equal (return to the mission start).
    pub home: Option<UavPose>,
    /// Keep every altitude at its value in the expansion trajectory.
    pub fixed_altitude: bool,
}

/// Feasibility audit with relative tolerance `tol` on the step limits.
pub fn check_trajectory(traj: &Trajectory, ctx: &FlightContext, tol: f64) -> Result<(), String> {
    let cfg = ctx.cfg;
    let area = cfg.area();
    let mut last = ctx.prev;
    for (t, p) in traj.poses.iter().enumerate() {
        let inside = p.xy.x >= area.x.0 - tol
            && p.xy.x <= area.x.1 + tol
            && p.xy.y >= area.y.0 - tol
            && p.xy.y <= area.y.1 + tol
            && p.h >= cfg.h_min() - tol
            && p.h <= cfg.h_max() + tol;
        if !inside {
            return Err(format!("slot {t}: pose ({}, {}, {}) outside the box", p.xy.x, p.xy.y, p.h));
        }
        let dxy = p.xy.dist(last.xy);
        if dxy > cfg.s_xy_max * (1.0 + tol) + tol {
            return Err(format!("slot {t}: horizontal step {dxy} m exceeds {}", cfg.s_xy_max));
        }
        let dh = (p.h - last.h).abs();
        if dh > cfg.s_h_max * (1.0 + tol) + tol {
            return Err(format!("slot {t}: vertical step {dh} m exceeds {}", cfg.s_h_max));
        }
        last = *p;
    }
    if let (Some(home), Some(end)) = (ctx.home, traj.last()) {
        if end.xy.dist(home.xy) > tol || (end.h - home.h).abs() > tol {
            return Err("final pose does not return to the start".into());
        }
    }
    Ok(())
}

/// `T` waypoints on the circle of radius `rho` about `center`, angles
/// `2π·t/(T − 1)`.
pub fn circle_waypoints(center: Vec2, rho: f64, t_l: usize) -> Vec<Vec2> {
    let denom = (t_l.max(2) - 1) as f64;
    (0..t_l)
        .map(|t| center + Vec2::from_polar(rho, 2.0 * std::f64::consts::PI * t as f64 / denom))
        .collect()
}

/// Largest chord between consecutive circle waypoints.
pub fn circle_chord(rho: f64, t_l: usize) -> f64 {
    if t_l < 2 {
        return 0.0;
    }
    2.0 * rho * (std::f64::consts::PI / (t_l - 1) as f64).sin()
}

/// One step from `from` toward `to`, at most `limit` long.
fn step_toward(from: Vec2, to: Vec2, limit: f64) -> Vec2 {
    let d = to - from;
    let n = d.norm();
    if n <= limit {
        to
    } else {
        from + d * (limit / n)
    }
}

fn step_toward_1d(from: f64, to: f64, limit: f64) -> f64 {
    from + (to - from).clamp(-limit, limit)
}

/// Track `targets` under the step limits, starting next to `ctx.prev`, and
/// steer toward `ctx.home` whenever it would otherwise become unreachable.
pub fn track_targets(targets: &[UavPose], ctx: &FlightContext) -> Trajectory {
    let cfg = ctx.cfg;
    let area = cfg.area();
    let t_l = targets.len();
    let mut last = ctx.prev;
    let mut poses = Vec::with_capacity(t_l);
    for (t, target) in targets.iter().enumerate() {
        let mut xy = step_toward(last.xy, area.clamp(target.xy), cfg.s_xy_max);
        let mut h = step_toward_1d(last.h, target.h.clamp(cfg.h_min(), cfg.h_max()), cfg.s_h_max);
        if let Some(home) = ctx.home {
            let k = (t_l - 1 - t) as f64;
            if xy.dist(home.xy) > k * cfg.s_xy_max {
                xy = step_toward(last.xy, home.xy, cfg.s_xy_max);
            }
            if (h - home.h).abs() > k * cfg.s_h_max {
                h = step_toward_1d(last.h, home.h, cfg.s_h_max);
            }
        }
        let pose = UavPose { xy, h };
        poses.push(pose);
        last = pose;
    }
    Trajectory { poses }
}

/// Circular initial trajectory about the users' geometric centre.
///
/// `users` are the cluster members' positions at the first serving slot.
/// The radius is `min(V·T_l·δ/(2π), ρ_u/2)` and shrinks to a hover when the
/// circle's chord exceeds the horizontal step limit.
pub fn initial_trajectory(users: &[Vec2], ctx: &FlightContext, t_l: usize) -> Trajectory {
    let cfg = ctx.cfg;
    let n = users.len().max(1) as f64;
    let center = users.iter().fold(Vec2::ZERO, |a, &u| a + u) * (1.0 / n);
    let rho_u = users.iter().map(|u| u.dist(center)).fold(0.0, f64::max);
    let rho_max = cfg.v_xy_max() * t_l as f64 * cfg.slot_duration / (2.0 * std::f64::consts::PI);
    let mut rho = rho_max.min(rho_u / 2.0);
    if circle_chord(rho, t_l) > cfg.s_xy_max {
        rho = 0.0;
    }
    let altitude = cfg.mid_altitude();
    let targets: Vec<UavPose> = circle_waypoints(center, rho, t_l)
        .into_iter()
        .map(|xy| UavPose { xy, h: altitude })
        .collect();
    track_targets(&targets, ctx)
}

/// First-order expansion of `f` at one associated user-slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorExpansion {
    /// 𝒞₁ = ‖w₀ − Q‖² + H₀², m²
    pub c1: f64,
    /// 𝒞₂, m²
    pub c2: f64,
    /// ∂f/∂d² at 𝒞₁, per m²
    pub grad: f64,
    /// f(𝒞₁), bits/s/Hz
    pub f0: f64,
    pub regime: Regime,
}

impl TaylorExpansion {
    pub fn new(cfg: &ScenarioConfig, pose: UavPose, user: Vec2, b: f64, p: f64, h2: f64) -> Self {
        let geom = channel::geometry(pose, user);
        let regime = channel::regime(cfg, geom.elevation_deg);
        let c1 = geom.dist_3d * geom.dist_3d;
        let c2 = if b > 0.0 && p > 0.0 {
            p * h2 / (channel::eta(cfg, regime) * cfg.free_space_factor() * b * cfg.noise_psd)
        } else {
            0.0
        };
        Self::from_constants(c1, c2, regime)
    }

    pub fn from_constants(c1: f64, c2: f64, regime: Regime) -> Self {
        let ln2 = std::f64::consts::LN_2;
        Self {
            c1,
            c2,
            grad: -c2 / (ln2 * c1 * (c1 + c2)),
            f0: (c2 / c1).ln_1p() / ln2,
            regime,
        }
    }

    /// `f(d²)` under the frozen regime.
    pub fn exact(&self, d_sq: f64) -> f64 {
        (self.c2 / d_sq).ln_1p() / std::f64::consts::LN_2
    }

    /// Tangent of `f` at 𝒞₁, evaluated at `d²`.
    pub fn surrogate(&self, d_sq: f64) -> f64 {
        self.f0 + self.grad * (d_sq - self.c1)
    }
}

/// Expansions for every associated entry; `None` where `j` is zero.
pub fn taylor_bound(
    traj: &Trajectory,
    users: &[Vec<Vec2>],
    j: &[Vec<bool>],
    alloc: &AllocationTable,
    h2: &[Vec<f64>],
    cfg: &ScenarioConfig,
) -> Vec<Vec<Option<TaylorExpansion>>> {
    (0..users.len())
        .map(|n| {
            (0..traj.len())
                .map(|t| {
                    j[n][t].then(|| {
                        TaylorExpansion::new(cfg, traj.poses[t], users[n][t], alloc.b[n][t], alloc.p[n][t], h2[n][t])
                    })
                })
                .collect()
        })
        .collect()
}

/// Per-user average rate of a trajectory under the exact link model.
pub fn model_user_rates(
    traj: &Trajectory,
    users: &[Vec<Vec2>],
    j: &[Vec<bool>],
    alloc: &AllocationTable,
    h2: &[Vec<f64>],
    cfg: &ScenarioConfig,
) -> Vec<f64> {
    let t_l = traj.len().max(1) as f64;
    (0..users.len())
        .map(|n| {
            (0..traj.len())
                .filter(|&t| j[n][t])
                .map(|t| channel::link_rate(cfg, traj.poses[t], users[n][t], h2[n][t], alloc.b[n][t], alloc.p[n][t]))
                .sum::<f64>()
                / t_l
        })
        .collect()
}

pub fn model_min_rate(
    traj: &Trajectory,
    users: &[Vec<Vec2>],
    j: &[Vec<bool>],
    alloc: &AllocationTable,
    h2: &[Vec<f64>],
    cfg: &ScenarioConfig,
) -> f64 {
    model_user_rates(traj, users, j, alloc, h2, cfg)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajStep {
    pub traj: Trajectory,
    /// Surrogate optimum, bits/s.
    pub gamma_lb: f64,
    pub stalled: bool,
}

struct SlotVars {
    x: Var,
    y: Var,
    h: Option<Var>,
    v: Option<Var>,
}

/// One convex step around `traj0`.
pub fn solve_trajectory_step(
    traj0: &Trajectory,
    users: &[Vec<Vec2>],
    j: &[Vec<bool>],
    alloc: &AllocationTable,
    h2: &[Vec<f64>],
    ctx: &FlightContext,
) -> TrajStep {
    let cfg = ctx.cfg;
    let t_l = traj0.len();
    let stall = || TrajStep {
        traj: traj0.clone(),
        gamma_lb: f64::NAN,
        stalled: true,
    };
    if t_l == 0 {
        return stall();
    }
    // Lengths in units of `lu` metres keep every coefficient near one.
    let area = cfg.area();
    let lu = area.diagonal().max(cfg.h_max());
    let exps = taylor_bound(traj0, users, j, alloc, h2, cfg);

    let mut prog = ConvexProgram::new();
    let gamma = prog.add_var("gamma");
    prog.maximize(gamma);
    let slots: Vec<SlotVars> = (0..t_l)
        .map(|t| {
            let x = prog.add_var(format!("x{t}"));
            let y = prog.add_var(format!("y{t}"));
            let (h, v) = if ctx.fixed_altitude {
                (None, None)
            } else {
                (Some(prog.add_var(format!("h{t}"))), Some(prog.add_var(format!("v{t}"))))
            };
            SlotVars { x, y, h, v }
        })
        .collect();
    let h_expr = |t: usize| -> LinExpr {
        match slots[t].h {
            Some(h) => LinExpr::term(h, 1.0),
            None => LinExpr::constant(traj0.poses[t].h / lu),
        }
    };
    let v_expr = |t: usize| -> LinExpr {
        match slots[t].v {
            Some(v) => LinExpr::term(v, 1.0),
            None => LinExpr::constant((traj0.poses[t].h / lu).powi(2)),
        }
    };
    for (t, s) in slots.iter().enumerate() {
        prog.add_ge(s.x, area.x.0 / lu);
        prog.add_le(s.x, area.x.1 / lu);
        prog.add_ge(s.y, area.y.0 / lu);
        prog.add_le(s.y, area.y.1 / lu);
        if let (Some(h), Some(v)) = (s.h, s.v) {
            prog.add_ge(h, cfg.h_min() / lu);
            prog.add_le(h, cfg.h_max() / lu);
            prog.add_sum_squares_le(vec![LinExpr::term(h, 1.0)], v);
        }
        let (px, py, ph) = if t == 0 {
            (
                LinExpr::constant(ctx.prev.xy.x / lu),
                LinExpr::constant(ctx.prev.xy.y / lu),
                LinExpr::constant(ctx.prev.h / lu),
            )
        } else {
            (LinExpr::term(slots[t - 1].x, 1.0), LinExpr::term(slots[t - 1].y, 1.0), h_expr(t - 1))
        };
        let dx = LinExpr::term(s.x, 1.0) - px;
        let dy = LinExpr::term(s.y, 1.0) - py;
        prog.add_soc(LinExpr::constant(cfg.s_xy_max / lu), vec![dx, dy]);
        if s.h.is_some() {
            let dh = h_expr(t) - ph;
            prog.add_le(dh.clone(), cfg.s_h_max / lu);
            prog.add_ge(dh, -cfg.s_h_max / lu);
        }
    }
    if let Some(home) = ctx.home {
        let s = &slots[t_l - 1];
        prog.add_eq(s.x, home.xy.x / lu);
        prog.add_eq(s.y, home.xy.y / lu);
        if let Some(h) = s.h {
            prog.add_eq(h, home.h / lu);
        }
    }

    // Γ in Mbit/s; each user's surrogate rate must reach it.
    let mut any_user = false;
    for (n, row) in exps.iter().enumerate() {
        let mut total = LinExpr::zero();
        let mut has_slot = false;
        for (t, e) in row.iter().enumerate() {
            let Some(e) = e else {
                continue;
            };
            has_slot = true;
            let b_m = alloc.b[n][t] / 1e6;
            if b_m <= 0.0 || e.c2 <= 0.0 {
                continue;
            }
            // u ≥ ‖w − Q‖², in lu²
            let u = prog.add_var(format!("u{n}_{t}"));
            let q = users[n][t];
            prog.add_sum_squares_le(
                vec![
                    LinExpr::term(slots[t].x, 1.0) - LinExpr::constant(q.x / lu),
                    LinExpr::term(slots[t].y, 1.0) - LinExpr::constant(q.y / lu),
                ],
                u,
            );
            // B·(f0 + ∇f·(d² − 𝒞₁)) with d² = lu²·(u + v)
            let g = e.grad * lu * lu;
            total.add_constant(b_m * (e.f0 - e.grad * e.c1));
            total.add_term(u, b_m * g);
            total = total + v_expr(t) * (b_m * g);
        }
        if has_slot {
            any_user = true;
            prog.add_ge(total, LinExpr::term(gamma, t_l as f64));
        }
    }
    if !any_user {
        return stall();
    }

    let report = match uavopt_conic::solve(&prog, 1e-9) {
        Ok(r) if r.status == SolveStatus::Optimal => r,
        _ => return stall(),
    };
    let raw: Vec<UavPose> = slots
        .iter()
        .enumerate()
        .map(|(t, s)| UavPose {
            xy: Vec2::new(report.value(s.x) * lu, report.value(s.y) * lu),
            h: match s.h {
                Some(h) => report.value(h) * lu,
                None => traj0.poses[t].h,
            },
        })
        .collect();
    let traj = project(raw, ctx);
    if check_trajectory(&traj, ctx, 1e-9).is_err() {
        return stall();
    }
    TrajStep {
        traj,
        gamma_lb: report.value(gamma) * 1e6,
        stalled: false,
    }
}

/// Clamp to the box and pull steps that overshoot by solver tolerance back
/// onto the limits; pin the final pose to `home` when it is within 1e-7 of
/// the feasible region.
fn project(mut poses: Vec<UavPose>, ctx: &FlightContext) -> Trajectory {
    let cfg = ctx.cfg;
    let area = cfg.area();
    let mut last = ctx.prev;
    let n = poses.len();
    for (t, p) in poses.iter_mut().enumerate() {
        p.xy = area.clamp(p.xy);
        p.h = p.h.clamp(cfg.h_min(), cfg.h_max());
        if t + 1 == n {
            if let Some(home) = ctx.home {
                if p.xy.dist(home.xy) <= 1e-7 * cfg.s_xy_max.max(1.0) && (p.h - home.h).abs() <= 1e-7 * cfg.s_h_max.max(1.0) {
                    *p = home;
                }
            }
        }
        let d = p.xy.dist(last.xy);
        if d > cfg.s_xy_max && d <= cfg.s_xy_max * (1.0 + 1e-7) + 1e-7 {
            p.xy = step_toward(last.xy, p.xy, cfg.s_xy_max);
        }
        let dh = p.h - last.h;
        if dh.abs() > cfg.s_h_max && dh.abs() <= cfg.s_h_max * (1.0 + 1e-7) + 1e-7 {
            p.h = last.h + cfg.s_h_max * dh.signum();
        }
        last = *p;
    }
    Trajectory { poses }
}

/// Convex combination `(1 − a)·p + a·q`; the feasible set is convex.
fn blend(p: &Trajectory, q: &Trajectory, a: f64) -> Trajectory {
    Trajectory {
        poses: p
            .poses
            .iter()
            .zip(&q.poses)
            .map(|(x, y)| UavPose {
                xy: x.xy * (1.0 - a) + y.xy * a,
                h: x.h * (1.0 - a) + y.h * a,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajOutcome {
    pub traj: Trajectory,
    /// Exact-model min rate of `traj`, bits/s.
    pub gamma: f64,
    /// Exact-model min rate of each accepted iterate, initial point first.
    pub history: Vec<f64>,
    pub iterations: u32,
    pub stalled: bool,
}

/// SCA from `init`. A step whose exact-model min rate falls below the
/// current one is shortened by halving (up to four times) before the
/// iteration stops; otherwise the loop ends when the relative change drops
/// below `sca_tol` or after `sca_max_iters` steps.
pub fn sca_trajectory(
    init: &Trajectory,
    users: &[Vec<Vec2>],
    j: &[Vec<bool>],
    alloc: &AllocationTable,
    h2: &[Vec<f64>],
    ctx: &FlightContext,
) -> TrajOutcome {
    let cfg = ctx.cfg;
    let eval = |tr: &Trajectory| model_min_rate(tr, users, j, alloc, h2, cfg);
    let mut cur = init.clone();
    let mut cur_gamma = eval(&cur);
    let mut history = vec![cur_gamma];
    let mut iterations = 0;
    let mut stalled = false;
    for _ in 0..cfg.sca_max_iters {
        iterations += 1;
        let step = solve_trajectory_step(&cur, users, j, alloc, h2, ctx);
        if step.stalled {
            stalled = true;
            break;
        }
        let full = step.traj;
        let mut cand = full.clone();
        let mut cand_gamma = eval(&cand);
        let mut a = 1.0;
        while cand_gamma < cur_gamma && a > 0.1 {
            a *= 0.5;
            cand = blend(&cur, &full, a);
            cand_gamma = eval(&cand);
        }
        if cand_gamma < cur_gamma || check_trajectory(&cand, ctx, 1e-9).is_err() {
            break;
        }
        let change = cand_gamma - cur_gamma;
        cur = cand;
        cur_gamma = cand_gamma;
        history.push(cur_gamma);
        if change <= cfg.sca_tol * cur_gamma.abs().max(1.0) {
            break;
        }
    }
    TrajOutcome {
        traj: cur,
        gamma: cur_gamma,
        history,
        iterations,
        stalled,
    }
}
