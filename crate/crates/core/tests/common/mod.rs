//! Independent oracles shared by the oracle suites and the acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavopt_conic::{Backend, ConvexProgram, DenseBarrier, InteriorPoint, LinExpr, Var};
use uavopt_core::allocation::dc_margin;
use uavopt_core::assoc::solve_association;
use uavopt_core::channel::{self, Regime};
use uavopt_core::geom::{UavPose, Vec2};
use uavopt_core::predict::{evolve, StateDistribution, TransitionTensor};
use uavopt_core::scenario::ScenarioConfig;
use uavopt_core::trajectory::TaylorExpansion;

pub type Suite = Result<String, String>;

/// Best min row-average over every binary matrix with ≥ τ ones per row and
/// ≤ c_max ones per column.
pub fn brute_force_gamma(rates: &[Vec<f64>], tau: usize, c_max: usize) -> Option<f64> {
    let n = rates.len();
    let t = rates[0].len();
    let bits = n * t;
    let mut best: Option<f64> = None;
    'mask: for mask in 0u64..(1u64 << bits) {
        let on = |u: usize, s: usize| mask >> (u * t + s) & 1 == 1;
        for s in 0..t {
            if (0..n).filter(|&u| on(u, s)).count() > c_max {
                continue 'mask;
            }
        }
        let mut worst = f64::INFINITY;
        for u in 0..n {
            if (0..t).filter(|&s| on(u, s)).count() < tau {
                continue 'mask;
            }
            let avg = (0..t).filter(|&s| on(u, s)).map(|s| rates[u][s]).sum::<f64>() / t as f64;
            worst = worst.min(avg);
        }
        if best.is_none_or(|b| worst > b) {
            best = Some(worst);
        }
    }
    best
}

pub fn assoc_matches_enumeration() -> Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for n in 1..=5usize {
        for t in 1..=(20 / n) {
            for c_max in 1..=n.min(3) {
                for tau in 1..=t.min(3) {
                    let rates: Vec<Vec<f64>> =
                        (0..n).map(|_| (0..t).map(|_| rng.gen_range(0.1..10.0)).collect()).collect();
                    let oracle = brute_force_gamma(&rates, tau, c_max);
                    let got = solve_association(&rates, tau as u32, c_max, 0.0, 1.0);
                    match (oracle, got) {
                        (None, Err(_)) => {}
                        (Some(v), Ok(a)) if (a.gamma - v).abs() <= 1e-9 * v.max(1.0) => {}
                        (o, g) => {
                            return Err(format!(
                                "n={n} t={t} c={c_max} tau={tau}: oracle {o:?}, solver {:?}",
                                g.map(|a| a.gamma)
                            ))
                        }
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} instances with N·T ≤ 20"))
}

/// `π'[k] = Σ_j π[j]·Ω[prev][j][k]` over a full K×K×K array.
fn dense_evolve(dense: &[Vec<Vec<f64>>], pi: &[f64], prev: usize) -> Option<Vec<f64>> {
    let k = pi.len();
    let mut out = vec![0.0; k];
    for j in 0..k {
        for kk in 0..k {
            out[kk] += pi[j] * dense[prev][j][kk];
        }
    }
    let s: f64 = out.iter().sum();
    (s > 0.0).then(|| out.iter().map(|v| v / s).collect())
}

pub fn sparse_matches_dense() -> Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut max_err: f64 = 0.0;
    for case in 0..100 {
        let k = rng.gen_range(2..=12);
        let density = rng.gen_range(0.05..0.6);
        let mut entries = Vec::new();
        let mut dense = vec![vec![vec![0.0; k]; k]; k];
        for i in 0..k {
            for j in 0..k {
                let row: Vec<f64> = (0..k)
                    .map(|_| if rng.gen_bool(density) { rng.gen_range(0.01..1.0) } else { 0.0 })
                    .collect();
                let s: f64 = row.iter().sum();
                for (kk, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        entries.push((i, j, kk, p));
                        dense[i][j][kk] = p / s;
                    }
                }
            }
        }
        let tensor = TransitionTensor::from_entries(k, entries).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let raw: Vec<f64> =
                (0..k).map(|_| if rng.gen_bool(0.7) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
            let s: f64 = raw.iter().sum();
            let pi: Vec<f64> = if s > 0.0 { raw.iter().map(|v| v / s).collect() } else { vec![1.0 / k as f64; k] };
            let prev = rng.gen_range(0..k);
            let ev = evolve(&StateDistribution { probs: pi.clone() }, prev, &tensor);
            if ev.ops > tensor.nnz() {
                return Err(format!("case {case}: {} ops for {} nonzeros", ev.ops, tensor.nnz()));
            }
            match dense_evolve(&dense, &pi, prev) {
                None => {
                    if !ev.fallback {
                        return Err(format!("case {case}: dense mass is zero but no fallback"));
                    }
                }
                Some(d) => {
                    for (a, b) in d.iter().zip(&ev.dist.probs) {
                        max_err = max_err.max((a - b).abs());
                    }
                }
            }
        }
    }
    if max_err > 1e-12 {
        return Err(format!("max deviation {max_err:e}"));
    }
    Ok(format!("100 tensors, max deviation {max_err:.1e}"))
}

/// Spectral efficiency of the frozen-regime link as a function of d²,
/// computed straight from the scenario constants.
fn se_of_d2(cfg: &ScenarioConfig, regime: Regime, b: f64, p: f64, h2: f64, d2: f64) -> f64 {
    let eta = match regime {
        Regime::LoS => cfg.eta_los,
        Regime::NLoS => cfg.eta_nlos,
    };
    let k = 4.0 * std::f64::consts::PI * cfg.carrier_freq / 299_792_458.0;
    let snr = p * h2 / (eta * k * k * d2 * b * cfg.noise_psd);
    (1.0 + snr).log2()
}

fn random_pose(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> UavPose {
    UavPose::new(
        rng.gen_range(cfg.area_x_bounds.0..=cfg.area_x_bounds.1),
        rng.gen_range(cfg.area_y_bounds.0..=cfg.area_y_bounds.1),
        rng.gen_range(cfg.h_min()..=cfg.h_max()),
    )
}

fn random_user(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> Vec2 {
    Vec2::new(
        rng.gen_range(cfg.area_x_bounds.0..=cfg.area_x_bounds.1),
        rng.gen_range(cfg.area_y_bounds.0..=cfg.area_y_bounds.1),
    )
}

pub fn gradient_matches_finite_differences() -> Suite {
    let cfg = ScenarioConfig::paper();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let pose = random_pose(&mut rng, &cfg);
        let user = random_user(&mut rng, &cfg);
        let b = rng.gen_range(1e4..cfg.b_total_max);
        let p = rng.gen_range(1e-5..cfg.p_user_max);
        let h2 = rng.gen_range(0.1..12.0);
        let e = TaylorExpansion::new(&cfg, pose, user, b, p, h2);
        let step = 1e-4 * e.c1;
        let f = |d2| se_of_d2(&cfg, e.regime, b, p, h2, d2);
        let fd = (f(e.c1 + step) - f(e.c1 - step)) / (2.0 * step);
        let rel = (e.grad - fd).abs() / fd.abs();
        worst = worst.max(rel);
        if rel > 1e-5 {
            return Err(format!("point {i}: grad {} vs finite difference {fd}", e.grad));
        }
        let f0 = f(e.c1);
        if (e.f0 - f0).abs() > 1e-12 * f0.max(1.0) {
            return Err(format!("point {i}: value {} vs {f0}", e.f0));
        }
    }
    Ok(format!("1000 points, worst relative error {worst:.1e}"))
}

pub fn surrogate_below_true_rate() -> Suite {
    let cfg = ScenarioConfig::paper();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut same_regime = 0;
    for i in 0..10_000 {
        let at = random_pose(&mut rng, &cfg);
        let user = random_user(&mut rng, &cfg);
        let b = rng.gen_range(1e4..cfg.b_total_max);
        let p = rng.gen_range(1e-5..cfg.p_user_max);
        let e = TaylorExpansion::new(&cfg, at, user, b, p, cfg.antennas as f64);
        let to = random_pose(&mut rng, &cfg);
        let geom = channel::geometry(to, user);
        let d2 = geom.dist_3d * geom.dist_3d;
        let lower = e.surrogate(d2);
        let frozen = se_of_d2(&cfg, e.regime, b, p, cfg.antennas as f64, d2);
        if lower > frozen + 1e-9 {
            return Err(format!("sample {i}: surrogate {lower} above {frozen}"));
        }
        if channel::regime(&cfg, geom.elevation_deg) == e.regime {
            same_regime += 1;
            let truth = channel::link_rate(&cfg, to, user, cfg.antennas as f64, b, p) / b;
            if lower > truth + 1e-9 {
                return Err(format!("sample {i}: surrogate {lower} above link rate {truth}"));
            }
        }
    }
    Ok(format!("10000 samples ({same_regime} without a regime change)"))
}

pub fn dc_linearisation_implies_constraint() -> Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut active = 0;
    for i in 0..10_000 {
        let t_l = rng.gen_range(1..=12);
        let b_hat: Vec<f64> = (0..t_l).map(|_| rng.gen_range(0.0..20.0)).collect();
        let se_hat: Vec<f64> = (0..t_l).map(|_| rng.gen_range(0.0..15.0)).collect();
        let b: Vec<f64> = (0..t_l).map(|_| rng.gen_range(0.0..20.0)).collect();
        let se: Vec<f64> = (0..t_l).map(|_| rng.gen_range(0.0..15.0)).collect();
        let room = dc_margin(&b_hat, &se_hat, &b, &se, t_l, 0.0);
        let gamma = if room > 0.0 && rng.gen_bool(0.8) {
            rng.gen_range(0.0..=1.0) * room / (2.0 * t_l as f64)
        } else {
            rng.gen_range(0.0..300.0)
        };
        if dc_margin(&b_hat, &se_hat, &b, &se, t_l, gamma) >= 0.0 {
            active += 1;
            let lhs: f64 = b.iter().zip(&se).map(|(x, y)| x * y).sum();
            if lhs < t_l as f64 * gamma - 1e-9 * lhs.max(1.0) {
                return Err(format!("sample {i}: Σ B·ψ = {lhs} < T·Γ = {}", t_l as f64 * gamma));
            }
        }
    }
    if active < 5000 {
        return Err(format!("only {active} samples satisfied the linearised constraint"));
    }
    Ok(format!("10000 samples, {active} satisfying the linearisation"))
}

fn affine(vars: &[Var], coeffs: &[f64], c: f64) -> LinExpr {
    let mut e = LinExpr::constant(c);
    for (v, a) in vars.iter().zip(coeffs) {
        e.add_term(*v, *a);
    }
    e
}

/// Random SOCP, strictly feasible at a random centre and bounded by a ball.
pub fn random_socp(rng: &mut ChaCha8Rng, n: usize) -> ConvexProgram {
    let mut p = ConvexProgram::new();
    let vars: Vec<Var> = (0..n).map(|i| p.add_var(&format!("x{i}"))).collect();
    let center: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    p.maximize(affine(&vars, &c, 0.0));
    let radius = rng.gen_range(0.5..3.0);
    let shifted = vars.iter().zip(&center).map(|(v, x0)| LinExpr::from(*v) - *x0).collect();
    p.add_soc(radius, shifted);
    for _ in 0..rng.gen_range(1..4) {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at: f64 = a.iter().zip(&center).map(|(a, x)| a * x).sum();
        p.add_le(affine(&vars, &a, -(at + rng.gen_range(0.1..1.0))), 0.0);
    }
    let rows = rng.gen_range(1..=n);
    let mut xs = Vec::new();
    let mut norm_sq = 0.0;
    for _ in 0..rows {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = rng.gen_range(-1.0..1.0);
        let v: f64 = a.iter().zip(&center).map(|(a, x)| a * x).sum::<f64>() + d;
        norm_sq += v * v;
        xs.push(affine(&vars, &a, d));
    }
    let e: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let e_at: f64 = e.iter().zip(&center).map(|(a, x)| a * x).sum();
    let f = norm_sq.sqrt() - e_at + rng.gen_range(0.2..1.0);
    p.add_soc(affine(&vars, &e, f), xs);
    p
}

pub fn kernel_matches_barrier() -> Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = rng.gen_range(2..7);
        let p = random_socp(&mut rng, n);
        let a = InteriorPoint::default().solve(&p, 1e-10).map_err(|e| format!("case {case}: {e}"))?;
        let b = DenseBarrier::default().solve(&p, 1e-11).map_err(|e| format!("case {case}: {e}"))?;
        if !(a.is_optimal() && b.is_optimal()) {
            return Err(format!("case {case}: {:?} / {:?}", a.status, b.status));
        }
        let gap = (a.objective_value - b.objective_value).abs() / (1.0 + a.objective_value.abs());
        worst = worst.max(gap);
        if gap > 1e-6 {
            return Err(format!("case {case}: {} vs {}", a.objective_value, b.objective_value));
        }
    }
    Ok(format!("50 SOCPs, worst gap {worst:.1e}"))
}

pub const SUITES: [(&str, fn() -> Suite); 6] = [
    ("association vs enumeration", assoc_matches_enumeration),
    ("sparse vs dense evolution", sparse_matches_dense),
    ("gradient vs finite differences", gradient_matches_finite_differences),
    ("surrogate below true rate", surrogate_below_true_rate),
    ("linearised bandwidth constraint", dc_linearisation_implies_constraint),
    ("kernel vs dense barrier", kernel_matches_barrier),
];
