//! The per-cluster service loop: knowledge of user positions, clustering,
//! block coordinate descent over association, trajectory and resources,
//! ground-truth evaluation, metrics and the benchmark schemes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{init_allocation, sca_allocation, AllocationTable};
use crate::assoc::{solve_association_with, AssocError, AssocOptions, Association};
use crate::channel::{self, FadingField};
use crate::cluster::{self, CapacityEstimate, ClusterError, ClusterPlan};
use crate::geom::{UavPose, Vec2};
use crate::mobility::{self, MobilityError, UserTrack};
use crate::predict::{self, PredictError, StateSpace};
use crate::scenario::{substream, ScenarioConfig, ScenarioError, Stream};
use crate::trajectory::{
    check_trajectory, initial_trajectory, model_user_rates, sca_trajectory, FlightContext, Trajectory,
};

/// Branch-and-bound node budget per association solve.
pub const ASSOC_NODE_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    Proposed,
    UpperBound,
    NoPrediction,
    FixedResources,
    TimeDividend,
    #[serde(rename = "traj_2d")]
    Traj2d,
    #[serde(rename = "traj_2d_prediction")]
    Traj2dPrediction,
}

impl SchemeId {
    pub const ALL: [SchemeId; 7] = [
        SchemeId::Proposed,
        SchemeId::UpperBound,
        SchemeId::NoPrediction,
        SchemeId::FixedResources,
        SchemeId::TimeDividend,
        SchemeId::Traj2d,
        SchemeId::Traj2dPrediction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Proposed => "proposed",
            SchemeId::UpperBound => "upper_bound",
            SchemeId::NoPrediction => "no_prediction",
            SchemeId::FixedResources => "fixed_resources",
            SchemeId::TimeDividend => "time_dividend",
            SchemeId::Traj2d => "traj_2d",
            SchemeId::Traj2dPrediction => "traj_2d_prediction",
        }
    }

    pub fn knowledge(self) -> Knowledge {
        match self {
            SchemeId::UpperBound => Knowledge::Truth,
            SchemeId::NoPrediction | SchemeId::Traj2d => Knowledge::LastKnown,
            _ => Knowledge::Predicted,
        }
    }

    pub fn optimizes_resources(self) -> bool {
        !matches!(self, SchemeId::FixedResources | SchemeId::TimeDividend)
    }

    pub fn one_user_per_slot(self) -> bool {
        self == SchemeId::TimeDividend
    }

    pub fn fixed_altitude(self) -> bool {
        matches!(self, SchemeId::Traj2d | SchemeId::Traj2dPrediction)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = SchemeId::ALL.iter().map(|id| id.name()).collect();
                format!("unknown scheme '{s}' (expected one of {})", names.join(", "))
            })
    }
}

/// Which user positions the optimizer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knowledge {
    /// Ground truth for every slot.
    Truth,
    /// Markov predictions from the pre-mission history.
    Predicted,
    /// The last position observed before the mission, held fixed.
    LastKnown,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("mobility: {0}")]
    Mobility(#[from] MobilityError),
    #[error("prediction: {0}")]
    Predict(#[from] PredictError),
    #[error("capacity estimate: {0}")]
    Capacity(ClusterError),
    #[error("round {round} (cluster {cluster:?}): {source}")]
    Cluster {
        round: usize,
        cluster: Option<usize>,
        source: ClusterError,
    },
    #[error("round {round}, cluster {cluster}: association: {source}")]
    Assoc {
        round: usize,
        cluster: usize,
        source: AssocError,
    },
}

impl RunError {
    /// True for errors caused by the scenario being infeasible rather than
    /// malformed.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, RunError::Capacity(_) | RunError::Cluster { .. } | RunError::Assoc { .. })
    }
}

/// Absolute-difference stopping test.
pub fn bcd_converged(f_prev: f64, f_curr: f64, eps: f64) -> bool {
    (f_prev - f_curr).abs() < eps
}

/// Everything drawn from the seed before any scheme runs: ground truth,
/// predictions and fading. Shared by all schemes of one seed.
#[derive(Debug, Clone)]
pub struct Mission {
    pub cfg: ScenarioConfig,
    /// Mission slots T/δ.
    pub n_slots: usize,
    /// Full tracks: `history_slots + 1` observed positions, then the mission.
    pub tracks: Vec<UserTrack>,
    /// `truth[n][g]`: position of user `n` during mission slot `g`.
    pub truth: Vec<Vec<Vec2>>,
    pub predicted: Vec<Vec<Vec2>>,
    pub last_known: Vec<Vec2>,
    pub prediction_fallbacks: usize,
    pub fading: FadingField,
    pub capacity: CapacityEstimate,
}

impl Mission {
    pub fn generate(cfg: &ScenarioConfig) -> Result<Self, RunError> {
        cfg.validate()?;
        let seed = cfg.rng_seed;
        let n_slots = cfg.n_slots()?;
        let hist = cfg.history_slots.max(2);
        let tracks =
            mobility::generate_tracks_steps(cfg, &cfg.mobility, hist + n_slots, &mut substream(seed, Stream::Tracks))?;

        let step = if cfg.mobility.mean_speed > 0.0 {
            cfg.mobility.mean_speed * cfg.slot_duration
        } else {
            cfg.slot_duration
        };
        let space = StateSpace::compass(cfg.n_states, step)?;
        let histories: Vec<UserTrack> = tracks
            .iter()
            .map(|t| mobility::split_history_future(t, hist).map(|(h, _)| h))
            .collect::<Result<_, _>>()?;
        let seqs: Vec<Vec<usize>> = histories
            .iter()
            .map(|h| predict::quantize_track(&h.positions, &space))
            .collect::<Result<_, _>>()?;
        let tensor = predict::fit_tensor(&seqs, space.k())?;

        let area = cfg.area();
        let mut predicted = Vec::with_capacity(tracks.len());
        let mut fallbacks = 0;
        for h in &histories {
            let p = predict::predict_from_history(h, &tensor, &space, n_slots, area)?;
            fallbacks += p.fallbacks;
            predicted.push(p.positions[1..].to_vec());
        }
        let truth = tracks.iter().map(|t| t.positions[hist + 1..].to_vec()).collect();
        let last_known = tracks.iter().map(|t| t.positions[hist]).collect();
        let fading = FadingField::draw(cfg.n_users, n_slots, cfg.antennas, &mut substream(seed, Stream::Fading));
        let capacity = cluster::estimate_capacity(cfg, cfg.capacity_mc_samples, &mut substream(seed, Stream::Capacity))
            .map_err(RunError::Capacity)?;
        Ok(Self {
            cfg: cfg.clone(),
            n_slots,
            tracks,
            truth,
            predicted,
            last_known,
            prediction_fallbacks: fallbacks,
            fading,
            capacity,
        })
    }

    /// Position of user `n` at mission slot `g` as seen under `k`.
    pub fn known(&self, k: Knowledge, n: usize, g: usize) -> Vec2 {
        match k {
            Knowledge::Truth => self.truth[n][g],
            Knowledge::Predicted => self.predicted[n][g],
            Knowledge::LastKnown => self.last_known[n],
        }
    }
}

/// One served cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    /// Service round, 0-based.
    pub round: usize,
    /// Cluster index within that round's clustering.
    pub cluster: usize,
    pub members: Vec<usize>,
    pub centroid: Vec2,
    /// First mission slot of the round.
    pub start_slot: usize,
    pub serve_slots: usize,
    /// Connectivity requirement actually imposed (reduced when the serving
    /// time cannot fit τ slots for every member).
    pub tau_eff: u32,
    pub slot_capacity: usize,
    pub flight: Trajectory,
    pub assoc: Association,
    pub alloc: AllocationTable,
    /// Positions the optimizer used, `[member][slot]`.
    pub planned_positions: Vec<Vec<Vec2>>,
    /// Model rates (optimizer's view), bits/s, per member.
    pub planned_rates: Vec<f64>,
    /// Realised average rates at the true positions and fading, per member.
    pub per_user_rates: Vec<f64>,
    pub delivered_bits: Vec<f64>,
    /// Minimum realised rate over members with at least one slot.
    pub min_rate: f64,
    /// Members whose delivered bits fall short of r_on.
    pub outage_users: usize,
    pub bcd_iters: u32,
    pub bcd_converged: bool,
    /// Model objective after each accepted BCD iteration.
    pub bcd_history: Vec<f64>,
    /// Trajectory SCA histories, one per BCD iteration.
    pub traj_histories: Vec<Vec<f64>>,
    /// Resource SCA histories, one per BCD iteration (empty when resources
    /// are fixed).
    pub alloc_histories: Vec<Vec<f64>>,
    pub assoc_proven_optimal: bool,
    pub ends_home: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRun {
    pub scheme: SchemeId,
    pub seed: u64,
    pub start: UavPose,
    pub rounds: Vec<RoundResult>,
    /// Flight back to the start after the last round, when the last round
    /// could not close the loop itself.
    pub return_leg: Vec<UavPose>,
    /// Users never served before the flight time ran out.
    pub unserved: Vec<usize>,
    pub capacity: CapacityEstimate,
}

impl SchemeRun {
    /// Whole flight, one pose per mission slot used.
    pub fn flight(&self) -> Vec<UavPose> {
        let mut out: Vec<UavPose> = self.rounds.iter().flat_map(|r| r.flight.poses.iter().copied()).collect();
        out.extend_from_slice(&self.return_leg);
        out
    }

    pub fn slots_used(&self) -> usize {
        self.rounds.iter().map(|r| r.serve_slots).sum::<usize>() + self.return_leg.len()
    }
}

/// Nominal per-user resources when `c` users share a slot.
fn nominal_share(cfg: &ScenarioConfig, c: usize) -> (f64, f64) {
    let c = c.max(1) as f64;
    (cfg.b_total_max / c, cfg.p_user_max.min(cfg.p_total_max / c))
}

fn model_gains(cfg: &ScenarioConfig, traj: &Trajectory, users: &[Vec<Vec2>], h2: f64) -> Vec<Vec<f64>> {
    users
        .iter()
        .map(|row| {
            row.iter()
                .zip(&traj.poses)
                .map(|(u, pose)| channel::budget(&channel::geometry(*pose, *u), cfg, h2).gain)
                .collect()
        })
        .collect()
}

fn select<T: Clone>(rows: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| rows[i].clone()).collect()
}

/// Expand an allocation over the served members back to all members.
fn expand(sub: &AllocationTable, idx: &[usize], n: usize, t: usize) -> AllocationTable {
    let mut out = AllocationTable::zeros(n, t);
    for (k, &i) in idx.iter().enumerate() {
        out.b[i].clone_from(&sub.b[k]);
        out.p[i].clone_from(&sub.p[k]);
    }
    out
}

struct Iterate {
    assoc: Association,
    traj: Trajectory,
    alloc: AllocationTable,
    f: f64,
}

struct BcdOutcome {
    best: Iterate,
    iters: u32,
    converged: bool,
    history: Vec<f64>,
    traj_histories: Vec<Vec<f64>>,
    alloc_histories: Vec<Vec<f64>>,
    proven: bool,
}

struct ClusterProblem<'a> {
    cfg: &'a ScenarioConfig,
    users: &'a [Vec<Vec2>],
    tau: u32,
    slot_capacity: usize,
    scheme: SchemeId,
    ctx: FlightContext<'a>,
}

impl ClusterProblem<'_> {
    fn model_min(&self, served: &[usize], j: &[Vec<bool>], traj: &Trajectory, alloc: &AllocationTable, h2: &[Vec<f64>]) -> f64 {
        let users = select(self.users, served);
        let js = select(j, served);
        let alloc = AllocationTable {
            b: select(&alloc.b, served),
            p: select(&alloc.p, served),
        };
        model_user_rates(traj, &users, &js, &alloc, h2, self.cfg)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    fn solve(&self, init: Trajectory) -> Result<BcdOutcome, AssocError> {
        let cfg = self.cfg;
        let n = self.users.len();
        let t_l = init.len();
        let h2_all = vec![vec![cfg.antennas as f64; t_l]; n];
        let (b_nom, p_nom) = nominal_share(cfg, self.slot_capacity.min(n));
        let opts = AssocOptions {
            node_limit: ASSOC_NODE_LIMIT,
            ..AssocOptions::default()
        };

        let mut best: Option<Iterate> = None;
        let mut traj = init;
        let mut out = BcdOutcome {
            best: Iterate {
                assoc: Association::all_ones(0, 0, 0),
                traj: Trajectory { poses: Vec::new() },
                alloc: AllocationTable::zeros(0, 0),
                f: 0.0,
            },
            iters: 0,
            converged: false,
            history: Vec::new(),
            traj_histories: Vec::new(),
            alloc_histories: Vec::new(),
            proven: true,
        };
        for _ in 0..cfg.sca_max_iters.max(1) {
            out.iters += 1;
            let rates: Vec<Vec<f64>> = self
                .users
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(&traj.poses)
                        .map(|(u, pose)| channel::link_rate(cfg, *pose, *u, cfg.antennas as f64, b_nom, p_nom))
                        .collect()
                })
                .collect();
            let assoc = solve_association_with(&rates, self.tau, self.slot_capacity, cfg.qos_bits, cfg.slot_duration, opts)?;
            out.proven &= assoc.proven_optimal;
            let served: Vec<usize> = (0..n).filter(|&i| assoc.slots_of(i) > 0).collect();

            let alloc0 = match &best {
                Some(b) if b.assoc.j == assoc.j => b.alloc.clone(),
                _ => init_allocation(&assoc.j, cfg),
            };
            let users = select(self.users, &served);
            let js = select(&assoc.j, &served);
            let h2 = select(&h2_all, &served);
            let alloc0_sub = AllocationTable {
                b: select(&alloc0.b, &served),
                p: select(&alloc0.p, &served),
            };

            let tr = sca_trajectory(&traj, &users, &js, &alloc0_sub, &h2, &self.ctx);
            out.traj_histories.push(tr.history.clone());
            let alloc = if self.scheme.optimizes_resources() {
                let gains = model_gains(cfg, &tr.traj, &users, cfg.antennas as f64);
                let al = sca_allocation(&js, &gains, cfg, Some(&alloc0_sub));
                out.alloc_histories.push(al.history.clone());
                expand(&al.alloc, &served, n, t_l)
            } else {
                out.alloc_histories.push(Vec::new());
                alloc0
            };
            let f = self.model_min(&served, &assoc.j, &tr.traj, &alloc, &h2_all);
            let f_prev = best.as_ref().map_or(0.0, |b| b.f);
            if best.is_some() && f < f_prev {
                // Keep the previous block solution; the objective never drops.
                out.converged = true;
                break;
            }
            traj = tr.traj.clone();
            best = Some(Iterate {
                assoc,
                traj: tr.traj,
                alloc,
                f,
            });
            out.history.push(f);
            if bcd_converged(f_prev, f, cfg.sca_tol * f.abs().max(1.0)) {
                out.converged = true;
                break;
            }
        }
        out.best = best.expect("at least one BCD iteration");
        Ok(out)
    }
}

/// Straight-line flight from `from` to `to` under the step limits.
fn return_leg(cfg: &ScenarioConfig, from: UavPose, to: UavPose) -> Vec<UavPose> {
    let mut out = Vec::new();
    let mut at = from;
    while at.xy.dist(to.xy) > 1e-9 || (at.h - to.h).abs() > 1e-9 {
        let d = to.xy - at.xy;
        let dn = d.norm();
        let xy = if dn <= cfg.s_xy_max { to.xy } else { at.xy + d * (cfg.s_xy_max / dn) };
        let h = at.h + (to.h - at.h).clamp(-cfg.s_h_max, cfg.s_h_max);
        at = UavPose { xy, h };
        out.push(at);
    }
    out
}

fn slots_to_reach(cfg: &ScenarioConfig, from: UavPose, to: UavPose) -> usize {
    let xy = if cfg.s_xy_max > 0.0 {
        (from.xy.dist(to.xy) / cfg.s_xy_max - 1e-9).ceil().max(0.0) as usize
    } else {
        0
    };
    let h = if cfg.s_h_max > 0.0 {
        ((from.h - to.h).abs() / cfg.s_h_max - 1e-9).ceil().max(0.0) as usize
    } else {
        0
    };
    xy.max(h)
}

/// Membership and serving time of each round, in service order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServicePlan {
    pub rounds: Vec<PlannedRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRound {
    pub cluster: usize,
    pub members: Vec<usize>,
    pub centroid: Vec2,
    pub serve_slots: usize,
}

impl SchemeRun {
    pub fn service_plan(&self) -> ServicePlan {
        ServicePlan {
            rounds: self
                .rounds
                .iter()
                .map(|r| PlannedRound {
                    cluster: r.cluster,
                    members: r.members.clone(),
                    centroid: r.centroid,
                    serve_slots: r.serve_slots,
                })
                .collect(),
        }
    }
}

/// Run one scheme on a pre-drawn mission, clustering with the scheme's own
/// knowledge of user positions.
pub fn run_scheme_on(mission: &Mission, scheme: SchemeId) -> Result<SchemeRun, RunError> {
    run_scheme_planned(mission, scheme, None)
}

/// Run one scheme, optionally replaying a fixed service plan (paired
/// comparisons: every scheme serves the same clusters in the same order for
/// the same time and differs only in trajectory, association and resources).
pub fn run_scheme_planned(mission: &Mission, scheme: SchemeId, fixed: Option<&ServicePlan>) -> Result<SchemeRun, RunError> {
    let cfg = &mission.cfg;
    let know = scheme.knowledge();
    let cap = mission.capacity;
    let tau = cap.tau;
    let slot_capacity = if scheme.one_user_per_slot() { 1 } else { cap.c_max };
    let start = cfg.start_pose();
    let mut rng = substream(cfg.rng_seed, Stream::Clustering);

    let home = if scheme.fixed_altitude() {
        UavPose {
            xy: start.xy,
            h: cfg.mid_altitude(),
        }
    } else {
        start
    };
    let mut pose = home;
    let mut g = 0usize;
    let mut remaining: Vec<usize> = (0..cfg.n_users).collect();
    let mut rounds = Vec::new();

    while !remaining.is_empty() && g < mission.n_slots {
        let round = rounds.len();
        let budget = mission.n_slots - g;
        let forced = cfg.serve_slots.map(|s| s as usize);
        let (c, members, centroid, t_l) = match fixed {
            Some(plan) => {
                let Some(r) = plan.rounds.get(round) else {
                    break;
                };
                (r.cluster, r.members.clone(), r.centroid, r.serve_slots.min(budget))
            }
            None => {
                let ctx_err = |cluster, source| RunError::Cluster { round, cluster, source };
                let points: Vec<Vec2> = remaining.iter().map(|&n| mission.known(know, n, g)).collect();
                let l = remaining.len().div_ceil(cap.c_max).max(1);
                let km =
                    cluster::kmeans_clusters(&points, l, cfg.kmeans_restarts, &mut rng).map_err(|e| ctx_err(None, e))?;
                let mut plan = ClusterPlan::from_kmeans(&remaining, &km);
                let planned = cluster::plan_service(&mut plan, pose, Some(home), slot_capacity, tau, cfg.s_xy_max, budget);
                let c = match (planned, forced) {
                    (Ok(()), _) => plan.order[0],
                    (Err(_), Some(_)) => cluster::nearest_cluster(pose, &plan.centroids, &vec![false; plan.n_clusters()])
                        .map_err(|e| ctx_err(None, e))?,
                    (Err(e), None) => return Err(ctx_err(None, e)),
                };
                let t_l = forced.unwrap_or(plan.serve_times[c]).min(budget).max(1);
                (c, plan.members[c].clone(), plan.centroids[c], t_l)
            }
        };
        if t_l == 0 {
            break;
        }
        let n_l = members.len();
        let tau_eff = (tau as usize).min(slot_capacity * t_l / n_l).min(t_l) as u32;

        let users: Vec<Vec<Vec2>> = members
            .iter()
            .map(|&n| (0..t_l).map(|t| mission.known(know, n, g + t)).collect())
            .collect();
        let last_round = members.len() == remaining.len();
        let closure = (last_round && slots_to_reach(cfg, pose, home) < t_l).then_some(home);
        let ctx = FlightContext {
            cfg,
            prev: pose,
            home: closure,
            fixed_altitude: scheme.fixed_altitude(),
        };
        let first: Vec<Vec2> = users.iter().map(|row| row[0]).collect();
        let init = initial_trajectory(&first, &ctx, t_l);
        let problem = ClusterProblem {
            cfg,
            users: &users,
            tau: tau_eff,
            slot_capacity,
            scheme,
            ctx,
        };
        let bcd = problem.solve(init).map_err(|source| RunError::Assoc {
            round,
            cluster: c,
            source,
        })?;
        let best = bcd.best;

        let h2_all = vec![vec![cfg.antennas as f64; t_l]; n_l];
        let planned_rates = model_user_rates(&best.traj, &users, &best.assoc.j, &best.alloc, &h2_all, cfg);
        let mut per_user_rates = Vec::with_capacity(n_l);
        let mut delivered_bits = Vec::with_capacity(n_l);
        for (k, &n) in members.iter().enumerate() {
            let mut sum = 0.0;
            for t in 0..t_l {
                if !best.assoc.j[k][t] {
                    continue;
                }
                let gain = channel::link_rate(
                    cfg,
                    best.traj.poses[t],
                    mission.truth[n][g + t],
                    mission.fading.get(n, g + t),
                    best.alloc.b[k][t],
                    best.alloc.p[k][t],
                );
                sum += gain;
            }
            per_user_rates.push(sum / t_l as f64);
            delivered_bits.push(sum * cfg.slot_duration);
        }
        let min_rate = (0..n_l)
            .filter(|&k| best.assoc.slots_of(k) > 0)
            .map(|k| per_user_rates[k])
            .fold(f64::INFINITY, f64::min);
        let min_rate = if min_rate.is_finite() { min_rate } else { 0.0 };
        let outage_users = delivered_bits.iter().filter(|&&b| b < cfg.qos_bits).count();
        let end = best.traj.last().expect("non-empty flight");
        let ends_home = closure.is_some_and(|h| end.xy.dist(h.xy) <= 1e-6 && (end.h - h.h).abs() <= 1e-6);

        rounds.push(RoundResult {
            round,
            cluster: c,
            members: members.clone(),
            centroid,
            start_slot: g,
            serve_slots: t_l,
            tau_eff,
            slot_capacity,
            flight: best.traj,
            assoc: best.assoc,
            alloc: best.alloc,
            planned_positions: users,
            planned_rates,
            per_user_rates,
            delivered_bits,
            min_rate,
            outage_users,
            bcd_iters: bcd.iters,
            bcd_converged: bcd.converged,
            bcd_history: bcd.history,
            traj_histories: bcd.traj_histories,
            alloc_histories: bcd.alloc_histories,
            assoc_proven_optimal: bcd.proven,
            ends_home,
        });
        pose = end;
        g += t_l;
        remaining.retain(|n| !members.contains(n));
    }

    let return_leg = if rounds.last().is_some_and(|r| r.ends_home) {
        Vec::new()
    } else {
        let leg = return_leg(cfg, pose, home);
        if leg.len() <= mission.n_slots - g {
            leg
        } else {
            leg[..mission.n_slots - g].to_vec()
        }
    };
    Ok(SchemeRun {
        scheme,
        seed: cfg.rng_seed,
        start,
        rounds,
        return_leg,
        unserved: remaining,
        capacity: cap,
    })
}

/// Draw the mission for `cfg.rng_seed` and run one scheme on it.
pub fn run_scheme(cfg: &ScenarioConfig, scheme: SchemeId) -> Result<SchemeRun, RunError> {
    run_scheme_on(&Mission::generate(cfg)?, scheme)
}

/// Every scheme × seed combination, in parallel. Results come back in
/// seed-major, scheme-minor order.
pub fn run_grid(
    cfg: &ScenarioConfig,
    schemes: &[SchemeId],
    seeds: &[u64],
) -> Vec<(u64, SchemeId, Result<SchemeRun, RunError>)> {
    let missions: Vec<(u64, Result<Mission, String>)> = seeds
        .par_iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.rng_seed = s;
            (s, Mission::generate(&c).map_err(|e| e.to_string()))
        })
        .collect();
    let jobs: Vec<(usize, SchemeId)> = (0..missions.len())
        .flat_map(|i| schemes.iter().map(move |&s| (i, s)))
        .collect();
    jobs.par_iter()
        .map(|&(i, scheme)| {
            let (seed, m) = &missions[i];
            let r = match m {
                Ok(m) => run_scheme_on(m, scheme),
                Err(_) => {
                    let mut c = cfg.clone();
                    c.rng_seed = *seed;
                    Mission::generate(&c).and_then(|m| run_scheme_on(&m, scheme))
                }
            };
            (*seed, scheme, r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetric {
    pub round: usize,
    pub members: Vec<usize>,
    pub start_slot: usize,
    pub serve_slots: usize,
    pub min_rate: f64,
    pub planned_min_rate: f64,
    /// (max − min)/mean of the planned per-user rates.
    pub planned_spread: f64,
    /// (max − min)/mean of the realised per-user rates.
    pub realised_spread: f64,
    pub bcd_iters: u32,
    pub outage_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: SchemeId,
    pub seed: u64,
    pub min_rate: f64,
    pub clusters: Vec<ClusterMetric>,
    /// Fraction of all users that did not receive r_on bits.
    pub outage_probability: f64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    /// Per-slot UAV speed ‖W[t+1] − W[t]‖/δ, m/s.
    pub speed: Vec<f64>,
    pub horizontal_speed: Vec<f64>,
    pub vertical_speed: Vec<f64>,
    pub slots_used: usize,
    pub n_slots: usize,
}

fn spread(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if mean > 0.0 {
        (max - min) / mean
    } else {
        0.0
    }
}

pub fn collect_metrics(run: &SchemeRun, mission: &Mission) -> MetricsReport {
    let cfg = &mission.cfg;
    let know = run.scheme.knowledge();
    let mut clusters = Vec::new();
    let (mut sx, mut sy, mut cnt) = (0.0, 0.0, 0usize);
    let mut in_outage = run.unserved.len();
    for r in &run.rounds {
        let served: Vec<usize> = (0..r.members.len()).filter(|&k| r.assoc.slots_of(k) > 0).collect();
        let planned: Vec<f64> = served.iter().map(|&k| r.planned_rates[k]).collect();
        let realised: Vec<f64> = served.iter().map(|&k| r.per_user_rates[k]).collect();
        clusters.push(ClusterMetric {
            round: r.round,
            members: r.members.clone(),
            start_slot: r.start_slot,
            serve_slots: r.serve_slots,
            min_rate: r.min_rate,
            planned_min_rate: if planned.is_empty() {
                0.0
            } else {
                planned.iter().copied().fold(f64::INFINITY, f64::min)
            },
            planned_spread: spread(&planned),
            realised_spread: spread(&realised),
            bcd_iters: r.bcd_iters,
            outage_users: r.outage_users,
        });
        in_outage += r.outage_users;
        for &n in &r.members {
            for t in 0..r.serve_slots {
                let g = r.start_slot + t;
                let d = mission.known(know, n, g) - mission.truth[n][g];
                sx += d.x * d.x;
                sy += d.y * d.y;
                cnt += 1;
            }
        }
    }
    let min_rate = if run.unserved.is_empty() {
        run.rounds.iter().map(|r| r.min_rate).fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    let flight = run.flight();
    let mut last = run.start;
    let (mut speed, mut hs, mut vs) = (Vec::new(), Vec::new(), Vec::new());
    for p in &flight {
        let dxy = p.xy.dist(last.xy);
        let dh = (p.h - last.h).abs();
        speed.push(dxy.hypot(dh) / cfg.slot_duration);
        hs.push(dxy / cfg.slot_duration);
        vs.push(dh / cfg.slot_duration);
        last = *p;
    }
    let cnt = cnt.max(1) as f64;
    MetricsReport {
        scheme: run.scheme,
        seed: run.seed,
        min_rate: if min_rate.is_finite() { min_rate } else { 0.0 },
        clusters,
        outage_probability: in_outage as f64 / cfg.n_users.max(1) as f64,
        rmse_x: (sx / cnt).sqrt(),
        rmse_y: (sy / cnt).sqrt(),
        speed,
        horizontal_speed: hs,
        vertical_speed: vs,
        slots_used: run.slots_used(),
        n_slots: mission.n_slots,
    }
}

/// Hard re-check of a finished run against the mobility, association,
/// resource and flight-time constraints. Returns every violation found.
pub fn verify_run(run: &SchemeRun, mission: &Mission) -> Result<(), Vec<String>> {
    const TOL: f64 = 1e-9;
    let cfg = &mission.cfg;
    let mut errs = Vec::new();
    let mut prev = if run.scheme.fixed_altitude() {
        UavPose {
            xy: run.start.xy,
            h: cfg.mid_altitude(),
        }
    } else {
        run.start
    };
    let mut seen = vec![false; cfg.n_users];
    let mut next_slot = 0;
    for r in &run.rounds {
        let ctx = FlightContext {
            cfg,
            prev,
            home: None,
            fixed_altitude: false,
        };
        if let Err(e) = check_trajectory(&r.flight, &ctx, TOL) {
            errs.push(format!("round {}: {e}", r.round));
        }
        if r.flight.len() != r.serve_slots {
            errs.push(format!("round {}: {} poses for {} slots", r.round, r.flight.len(), r.serve_slots));
        }
        if r.start_slot != next_slot {
            errs.push(format!("round {} starts at slot {} not {}", r.round, r.start_slot, next_slot));
        }
        next_slot = r.start_slot + r.serve_slots;
        let n_l = r.members.len();
        if r.assoc.n_users() != n_l || r.assoc.n_slots() != r.serve_slots {
            errs.push(format!("round {}: association shape mismatch", r.round));
            continue;
        }
        for &n in &r.members {
            if std::mem::replace(&mut seen[n], true) {
                errs.push(format!("user {n} served in more than one round"));
            }
        }
        for k in 0..n_l {
            if r.assoc.slots_of(k) < r.tau_eff as usize {
                errs.push(format!("round {}: user {} has {} < {} slots", r.round, r.members[k], r.assoc.slots_of(k), r.tau_eff));
            }
        }
        for t in 0..r.serve_slots {
            if r.assoc.users_in_slot(t) > r.slot_capacity {
                errs.push(format!("round {}: slot {t} serves more than {} users", r.round, r.slot_capacity));
            }
            let (mut sb, mut sp) = (0.0, 0.0);
            for k in 0..n_l {
                let (b, p) = (r.alloc.b[k][t], r.alloc.p[k][t]);
                let j = r.assoc.j[k][t];
                if b < 0.0 || p < 0.0 || !b.is_finite() || !p.is_finite() {
                    errs.push(format!("round {}: negative or non-finite resource at ({k}, {t})", r.round));
                }
                if b > if j { cfg.b_total_max * (1.0 + TOL) } else { 0.0 } {
                    errs.push(format!("round {}: bandwidth {b} at ({k}, {t}) with J = {j}", r.round));
                }
                if p > if j { cfg.p_user_max * (1.0 + TOL) } else { 0.0 } {
                    errs.push(format!("round {}: power {p} at ({k}, {t}) with J = {j}", r.round));
                }
                sb += b;
                sp += p;
            }
            if sb > cfg.b_total_max * (1.0 + TOL) {
                errs.push(format!("round {}: slot {t} bandwidth {sb} exceeds budget", r.round));
            }
            if sp > cfg.p_total_max * (1.0 + TOL) {
                errs.push(format!("round {}: slot {t} power {sp} exceeds budget", r.round));
            }
        }
        if let Some(last) = r.flight.last() {
            prev = last;
        }
    }
    let ctx = FlightContext {
        cfg,
        prev,
        home: None,
        fixed_altitude: false,
    };
    if !run.return_leg.is_empty() {
        if let Err(e) = check_trajectory(&Trajectory { poses: run.return_leg.clone() }, &ctx, TOL) {
            errs.push(format!("return leg: {e}"));
        }
    }
    if run.slots_used() > mission.n_slots {
        errs.push(format!("{} slots used of {}", run.slots_used(), mission.n_slots));
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// Planned QoS: every served user's model rate delivers r_on bits over the
/// round. Returns the users that fall short.
pub fn planned_qos_shortfalls(run: &SchemeRun, cfg: &ScenarioConfig) -> Vec<usize> {
    let mut out = Vec::new();
    for r in &run.rounds {
        for (k, &n) in r.members.iter().enumerate() {
            let bits = r.planned_rates[k] * r.serve_slots as f64 * cfg.slot_duration;
            if bits < cfg.qos_bits * (1.0 - 1e-9) {
                out.push(n);
            }
        }
    }
    out.extend_from_slice(&run.unserved);
    out
}

/// Outage probability when every cluster gets exactly `slots` serving slots.
pub fn outage_at(cfg: &ScenarioConfig, mission: &Mission, scheme: SchemeId, slots: u32) -> Result<f64, RunError> {
    let mut m = mission.clone();
    m.cfg = cfg.clone();
    m.cfg.serve_slots = Some(slots);
    let run = run_scheme_on(&m, scheme)?;
    Ok(collect_metrics(&run, &m).outage_probability)
}

/// Smallest per-cluster serving budget in `1..=max_slots` with zero outage.
pub fn zero_outage_budget(mission: &Mission, scheme: SchemeId, max_slots: u32) -> Result<Option<u32>, RunError> {
    for s in 1..=max_slots {
        if outage_at(&mission.cfg, mission, scheme, s)? == 0.0 {
            return Ok(Some(s));
        }
    }
    Ok(None)
}
