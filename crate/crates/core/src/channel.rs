//! Air-to-ground link model: elevation-dependent LoS probability, hard
//! LoS/NLoS excess attenuation, free-space path loss, MRT gain and rate.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geom::{UavPose, Vec2};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub horizontal_dist: f64,
    pub dist_3d: f64,
    pub elevation_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    LoS,
    NLoS,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub p_los: f64,
    pub path_loss: f64,
    pub gain: f64,
    pub regime: Regime,
}

pub fn geometry(pose: UavPose, user: Vec2) -> LinkGeometry {
    let horizontal = pose.xy.dist(user);
    let d = horizontal.hypot(pose.h);
    LinkGeometry {
        horizontal_dist: horizontal,
        dist_3d: d,
        elevation_deg: (pose.h / d).clamp(-1.0, 1.0).asin().to_degrees(),
    }
}

/// `1 / (1 + b1·exp(−b2·(θ − b1)))`, θ in degrees.
pub fn los_probability(elevation_deg: f64, b1: f64, b2: f64) -> f64 {
    1.0 / (1.0 + b1 * (-b2 * (elevation_deg - b1)).exp())
}

pub fn regime(cfg: &ScenarioConfig, elevation_deg: f64) -> Regime {
    if los_probability(elevation_deg, cfg.los_b1, cfg.los_b2) >= cfg.los_threshold {
        Regime::LoS
    } else {
        Regime::NLoS
    }
}

pub fn eta(cfg: &ScenarioConfig, r: Regime) -> f64 {
    match r {
        Regime::LoS => cfg.eta_los,
        Regime::NLoS => cfg.eta_nlos,
    }
}

/// `η·(4π f_c d / c)²`.
pub fn path_loss(cfg: &ScenarioConfig, dist_3d: f64, r: Regime) -> f64 {
    eta(cfg, r) * cfg.free_space_factor() * dist_3d * dist_3d
}

pub fn fading_norm_sq(h: &[Complex64]) -> f64 {
    h.iter().map(|c| c.norm_sqr()).sum()
}

/// Link budget for a given squared fading norm ‖h‖².
pub fn budget(geom: &LinkGeometry, cfg: &ScenarioConfig, h_norm_sq: f64) -> LinkBudget {
    let p_los = los_probability(geom.elevation_deg, cfg.los_b1, cfg.los_b2);
    let regime = if p_los >= cfg.los_threshold {
        Regime::LoS
    } else {
        Regime::NLoS
    };
    let path_loss = path_loss(cfg, geom.dist_3d, regime);
    LinkBudget {
        p_los,
        path_loss,
        gain: h_norm_sq / path_loss,
        regime,
    }
}

pub fn effective_gain(geom: &LinkGeometry, cfg: &ScenarioConfig, h: &[Complex64]) -> LinkBudget {
    budget(geom, cfg, fading_norm_sq(h))
}

/// `b·log2(1 + p·g/(b·N_o))` in bits/s; zero bandwidth gives zero rate.
pub fn rate(b: f64, p: f64, gain: f64, noise_psd: f64) -> f64 {
    if b <= 0.0 || p <= 0.0 {
        return 0.0;
    }
    b * (p * gain / (b * noise_psd)).ln_1p() / std::f64::consts::LN_2
}

/// Convenience: rate for a pose/user pair.
pub fn link_rate(cfg: &ScenarioConfig, pose: UavPose, user: Vec2, h_norm_sq: f64, b: f64, p: f64) -> f64 {
    let g = budget(&geometry(pose, user), cfg, h_norm_sq).gain;
    rate(b, p, g, cfg.noise_psd)
}

/// `(1/T_l)·Σ_t r_t`.
pub fn average_rate(slot_rates: &[f64], serve_slots: usize) -> f64 {
    if serve_slots == 0 {
        return 0.0;
    }
    slot_rates.iter().sum::<f64>() / serve_slots as f64
}

pub fn draw_fading<R: Rng + ?Sized>(antennas: usize, rng: &mut R) -> Vec<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..antennas)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

/// ‖h‖² per user per mission slot, drawn once so that every scheme sees the
/// same small-scale fading.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingField {
    norm_sq: Vec<Vec<f64>>,
}

impl FadingField {
    pub fn draw<R: Rng + ?Sized>(n_users: usize, n_slots: usize, antennas: usize, rng: &mut R) -> Self {
        let norm_sq = (0..n_users)
            .map(|_| {
                (0..n_slots)
                    .map(|_| fading_norm_sq(&draw_fading(antennas, rng)))
                    .collect()
            })
            .collect();
        Self { norm_sq }
    }

    /// Deterministic field with ‖h‖² = M everywhere (the fading mean).
    pub fn constant(n_users: usize, n_slots: usize, antennas: usize) -> Self {
        Self {
            norm_sq: vec![vec![antennas as f64; n_slots]; n_users],
        }
    }

    pub fn get(&self, user: usize, slot: usize) -> f64 {
        self.norm_sq[user][slot]
    }

    pub fn n_slots(&self) -> usize {
        self.norm_sq.first().map_or(0, |v| v.len())
    }
}
