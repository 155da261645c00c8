//! Capacity heuristics, K-means grouping, visiting order and serving times.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel;
use crate::geom::{UavPose, Vec2};
use crate::scenario::{CapacityFormula, ScenarioConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("QoS of {r_on} bits exceeds what a user can receive in the whole flight ({max_bits} bits)")]
    QosUnreachable { r_on: f64, max_bits: f64 },
    #[error("per-slot capacity is zero (tau = {tau}, R_max = {r_max} bit/s, r_on = {r_on} bits)")]
    ZeroCapacity { tau: u32, r_max: f64, r_on: f64 },
    #[error("cannot split {n} users into {l} clusters")]
    BadClusterCount { n: usize, l: usize },
    #[error("every cluster has already been served")]
    AllServed,
    #[error("cluster {cluster} gets {slots} slots after rescaling to the remaining {budget}, below tau = {tau}")]
    BudgetTooSmall {
        cluster: usize,
        slots: usize,
        budget: usize,
        tau: u32,
    },
    #[error("UAV cannot move horizontally but must travel {distance} m")]
    Immobile { distance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    /// Average spectral efficiency Λ, bit/s/Hz.
    pub lambda_se: f64,
    /// R^max = B·Λ, bit/s.
    pub r_max: f64,
    /// Connectivity requirement, slots.
    pub tau: u32,
    pub c_max: usize,
    pub n_clusters: usize,
}

/// Reference link for the capacity estimate: half the area diagonal away
/// horizontally, at minimum altitude, LoS.
pub fn reference_distance(cfg: &ScenarioConfig) -> f64 {
    (0.5 * cfg.area().diagonal()).hypot(cfg.h_min())
}

pub fn spectral_efficiency<R: Rng + ?Sized>(cfg: &ScenarioConfig, samples: usize, rng: &mut R) -> f64 {
    let pl = channel::path_loss(cfg, reference_distance(cfg), channel::Regime::LoS);
    let sigma2 = cfg.b_total_max * cfg.noise_psd;
    let mut acc = 0.0;
    for _ in 0..samples {
        let h2 = channel::fading_norm_sq(&channel::draw_fading(cfg.antennas, rng));
        let snr = match cfg.capacity_formula {
            CapacityFormula::Shannon => cfg.p_total_max * h2 / (sigma2 * pl),
            CapacityFormula::Literal => cfg.p_total_max / (cfg.carrier_freq * sigma2) * h2 * h2 / pl,
        };
        acc += snr.log2_1p();
    }
    acc / samples as f64
}

trait Log2_1p {
    fn log2_1p(self) -> f64;
}

impl Log2_1p for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

/// τ, C_max and L from R^max. `tau_pin` overrides the derived τ.
pub fn capacity_from_rate(
    r_max: f64,
    r_on: f64,
    slot: f64,
    total_slots: usize,
    n_users: usize,
    tau_pin: Option<u32>,
) -> Result<(u32, usize, usize), ClusterError> {
    let max_bits = r_max * slot * total_slots as f64;
    if r_on > max_bits {
        return Err(ClusterError::QosUnreachable { r_on, max_bits });
    }
    let tau = match tau_pin {
        Some(t) => t,
        None => ((r_on / (r_max * slot)).ceil() as u32).max(1),
    };
    let c_max = (tau as f64 * r_max * slot / r_on).floor();
    if c_max < 1.0 {
        return Err(ClusterError::ZeroCapacity { tau, r_max, r_on });
    }
    let c_max = c_max as usize;
    let n_clusters = n_users.div_ceil(c_max).max(1);
    Ok((tau, c_max, n_clusters))
}

pub fn estimate_capacity<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    mc_samples: usize,
    rng: &mut R,
) -> Result<CapacityEstimate, ClusterError> {
    let lambda_se = spectral_efficiency(cfg, mc_samples.max(1), rng);
    let r_max = cfg.b_total_max * lambda_se;
    let total = (cfg.total_flight_time / cfg.slot_duration).round() as usize;
    let (tau, c_max, n_clusters) =
        capacity_from_rate(r_max, cfg.qos_bits, cfg.slot_duration, total, cfg.n_users, cfg.tau_slots)?;
    Ok(CapacityEstimate {
        lambda_se,
        r_max,
        tau,
        c_max,
        n_clusters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec2>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
}

pub fn wcss(points: &[Vec2], assignments: &[usize], centroids: &[Vec2]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| p.dist(centroids[a]).powi(2))
        .sum()
}

fn nearest_centroid(p: Vec2, centroids: &[Vec2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = (p - *c).norm_sq();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn means(points: &[Vec2], assignments: &[usize], l: usize) -> (Vec<Vec2>, Vec<usize>) {
    let mut sums = vec![Vec2::ZERO; l];
    let mut counts = vec![0usize; l];
    for (p, &a) in points.iter().zip(assignments) {
        sums[a] += *p;
        counts[a] += 1;
    }
    let c = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { *s * (1.0 / n as f64) } else { Vec2::ZERO })
        .collect();
    (c, counts)
}

/// Lloyd iterations from the given centroids. Empty clusters take the point
/// farthest from its current centroid.
pub fn lloyd(points: &[Vec2], mut centroids: Vec<Vec2>, max_iter: usize) -> KMeans {
    let l = centroids.len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest_centroid(*p, &centroids)).collect();
    for _ in 0..max_iter {
        let (mut c, mut counts) = means(points, &assignments, l);
        while let Some(empty) = counts.iter().position(|&n| n == 0) {
            let far = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    let da = points[a].dist(c[assignments[a]]);
                    let db = points[b].dist(c[assignments[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("L ≤ N leaves a cluster with two points");
            assignments[far] = empty;
            (c, counts) = means(points, &assignments, l);
        }
        centroids = c;
        let next: Vec<usize> = points.iter().map(|p| nearest_centroid(*p, &centroids)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let (c, counts) = means(points, &assignments, l);
    if counts.iter().all(|&n| n > 0) {
        centroids = c;
    }
    let w = wcss(points, &assignments, &centroids);
    KMeans {
        assignments,
        centroids,
        wcss: w,
    }
}

fn kmeans_pp_seed<R: Rng + ?Sized>(points: &[Vec2], l: usize, rng: &mut R) -> Vec<Vec2> {
    let mut c = vec![points[rng.gen_range(0..points.len())]];
    while c.len() < l {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| c.iter().map(|q| (*p - *q).norm_sq()).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        };
        c.push(points[pick]);
    }
    c
}

/// k-means++ seeding and Lloyd iterations, best of `restarts`.
pub fn kmeans_clusters<R: Rng + ?Sized>(
    points: &[Vec2],
    l: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<KMeans, ClusterError> {
    if l == 0 || l > points.len() {
        return Err(ClusterError::BadClusterCount { n: points.len(), l });
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let seed = kmeans_pp_seed(points, l, rng);
        let r = lloyd(points, seed, 100);
        if best.as_ref().is_none_or(|b| r.wcss < b.wcss) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// 3D distance from the UAV to a ground-level centroid.
pub fn distance_to_centroid(pose: UavPose, c: Vec2) -> f64 {
    pose.xy.dist(c).hypot(pose.h)
}

/// Nearest unserved centroid; ties go to the lowest index.
pub fn nearest_cluster(pose: UavPose, centroids: &[Vec2], served: &[bool]) -> Result<usize, ClusterError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in centroids.iter().enumerate() {
        if served.get(i).copied().unwrap_or(false) {
            continue;
        }
        let d = distance_to_centroid(pose, *c);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|b| b.0).ok_or(ClusterError::AllServed)
}

pub fn travel_slots(distance: f64, s_xy_max: f64) -> Result<usize, ClusterError> {
    if distance <= 1e-9 {
        return Ok(0);
    }
    if s_xy_max <= 0.0 {
        return Err(ClusterError::Immobile { distance });
    }
    Ok((distance / s_xy_max - 1e-9).ceil() as usize)
}

/// `⌈N_l/C_max⌉·τ + ⌈D_l/s_xy_max⌉`.
pub fn serving_time(n_l: usize, d_l: f64, c_max: usize, tau: u32, s_xy_max: f64) -> Result<usize, ClusterError> {
    Ok(n_l.div_ceil(c_max) * tau as usize + travel_slots(d_l, s_xy_max)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPlan {
    /// User ids per cluster.
    pub members: Vec<Vec<usize>>,
    pub centroids: Vec<Vec2>,
    /// Serving time per cluster (indexed like `members`), slots.
    pub serve_times: Vec<usize>,
    /// Visiting order (cluster indices).
    pub order: Vec<usize>,
}

impl ClusterPlan {
    pub fn from_kmeans(user_ids: &[usize], km: &KMeans) -> Self {
        let l = km.centroids.len();
        let mut members = vec![Vec::new(); l];
        for (u, &a) in user_ids.iter().zip(&km.assignments) {
            members[a].push(*u);
        }
        Self {
            members,
            centroids: km.centroids.clone(),
            serve_times: vec![0; l],
            order: Vec::new(),
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn cluster_of(&self, user: usize) -> Option<usize> {
        self.members.iter().position(|m| m.contains(&user))
    }
}

/// Greedy nearest-first order from `pose`, serving times from the travel leg
/// of each cluster, return travel added to the final cluster when `home` is
/// given, then a floor rescale to `budget` if needed.
pub fn plan_service(
    plan: &mut ClusterPlan,
    pose: UavPose,
    home: Option<UavPose>,
    c_max: usize,
    tau: u32,
    s_xy_max: f64,
    budget: usize,
) -> Result<(), ClusterError> {
    let l = plan.n_clusters();
    let mut served = vec![false; l];
    let mut at = pose;
    plan.order.clear();
    for _ in 0..l {
        let next = nearest_cluster(at, &plan.centroids, &served)?;
        served[next] = true;
        let d = at.xy.dist(plan.centroids[next]);
        plan.serve_times[next] = serving_time(plan.members[next].len(), d, c_max, tau, s_xy_max)?;
        plan.order.push(next);
        at = UavPose {
            xy: plan.centroids[next],
            h: at.h,
        };
    }
    if let (Some(home), Some(&last)) = (home, plan.order.last()) {
        plan.serve_times[last] += travel_slots(at.xy.dist(home.xy), s_xy_max)?;
    }
    let total: usize = plan.serve_times.iter().sum();
    if total > budget {
        for (c, t) in plan.serve_times.iter_mut().enumerate() {
            *t = (*t as u128 * budget as u128 / total as u128) as usize;
            if *t < tau as usize {
                return Err(ClusterError::BudgetTooSmall {
                    cluster: c,
                    slots: *t,
                    budget,
                    tau,
                });
            }
        }
    }
    Ok(())
}
