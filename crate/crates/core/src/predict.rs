//! Sparse second-order Markov location predictor.
//!
//! Consecutive displacements of a track are quantised to a small set of
//! movement states. A transition tensor `Ω[i][j][k] = P(s_t = k | s_{t−2} = i,
//! s_{t−1} = j)` is fitted from frequencies and stored sparsely by `(i, j)`
//! row, so that evolving a state distribution touches only nonzero entries.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Area, Vec2};
use crate::mobility::UserTrack;

pub const STAY: usize = 0;

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("track has {0} positions; the second-order model needs at least 3")]
    TooShort(usize),
    #[error("state index {index} does not fit a {k}-state space")]
    StateOutOfRange { index: usize, k: usize },
    #[error("invalid state space: {0}")]
    BadSpace(String),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    /// Displacement per slot for each state; index 0 is "stay".
    pub states: Vec<Vec2>,
    pub step_length: f64,
}

impl StateSpace {
    /// Stay plus `k − 1` equally spaced compass directions, starting east
    /// and turning counter-clockwise. `k` is 5 or 9.
    pub fn compass(k: usize, step_length: f64) -> Result<Self, PredictError> {
        if !(step_length > 0.0 && step_length.is_finite()) {
            return Err(PredictError::BadSpace(format!("step_length {step_length} must be > 0")));
        }
        if !matches!(k, 5 | 9) {
            return Err(PredictError::BadSpace(format!("unsupported K = {k}")));
        }
        let dirs = k - 1;
        let mut states = vec![Vec2::ZERO];
        for d in 0..dirs {
            let a = 2.0 * PI * d as f64 / dirs as f64;
            // Snap cos/sin so that axis moves are exact.
            let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
            states.push(Vec2::new(snap(a.cos()) * step_length, snap(a.sin()) * step_length));
        }
        Ok(Self { states, step_length })
    }

    pub fn k(&self) -> usize {
        self.states.len()
    }

    /// Nearest state to a displacement; ties go to the lowest index.
    pub fn nearest(&self, d: Vec2) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, s) in self.states.iter().enumerate() {
            let e = (d - *s).norm_sq();
            if e < best_d {
                best_d = e;
                best = i;
            }
        }
        best
    }
}

pub fn quantize_track(positions: &[Vec2], space: &StateSpace) -> Result<Vec<usize>, PredictError> {
    if positions.len() < 3 {
        return Err(PredictError::TooShort(positions.len()));
    }
    Ok(positions.windows(2).map(|w| space.nearest(w[1] - w[0])).collect())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionTensor {
    k: usize,
    rows: BTreeMap<(usize, usize), Vec<(usize, f64)>>,
    counts: BTreeMap<(usize, usize, usize), u64>,
}

impl TransitionTensor {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Nonzero count N_z.
    pub fn nnz(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }

    /// Outgoing distribution of context `(i, j)`, sorted by `k`; empty when
    /// the context was never observed.
    pub fn row(&self, i: usize, j: usize) -> &[(usize, f64)] {
        self.rows.get(&(i, j)).map_or(&[], Vec::as_slice)
    }

    pub fn prob(&self, i: usize, j: usize, k: usize) -> f64 {
        self.row(i, j)
            .iter()
            .find(|(kk, _)| *kk == k)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn count(&self, i: usize, j: usize, k: usize) -> u64 {
        self.counts.get(&(i, j, k)).copied().unwrap_or(0)
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.rows.contains_key(&(i, j))
    }

    /// Contexts `(i, j)` with no observed successor.
    pub fn unobserved_rows(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.k {
            for j in 0..self.k {
                if !self.is_observed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// All stored `(i, j, k, Ω_ijk)` in lexicographic order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .flat_map(|(&(i, j), row)| row.iter().map(move |&(k, p)| (i, j, k, p)))
    }

    /// Build directly from probabilities. Rows are renormalised; zero
    /// entries are dropped.
    pub fn from_entries(
        k: usize,
        entries: impl IntoIterator<Item = (usize, usize, usize, f64)>,
    ) -> Result<Self, PredictError> {
        let mut rows: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
        for (i, j, kk, p) in entries {
            for idx in [i, j, kk] {
                if idx >= k {
                    return Err(PredictError::StateOutOfRange { index: idx, k });
                }
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(PredictError::BadSpace(format!("probability {p} at ({i},{j},{kk})")));
            }
            if p > 0.0 {
                rows.entry((i, j)).or_default().push((kk, p));
            }
        }
        for row in rows.values_mut() {
            row.sort_by_key(|e| e.0);
            row.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            let s: f64 = row.iter().map(|e| e.1).sum();
            for e in row.iter_mut() {
                e.1 /= s;
            }
        }
        Ok(Self {
            k,
            rows,
            counts: BTreeMap::new(),
        })
    }
}

/// Count triples `(s_{t−2}, s_{t−1}, s_t)` over every sequence and normalise
/// each observed `(i, j)` row.
pub fn fit_tensor(seqs: &[Vec<usize>], k: usize) -> Result<TransitionTensor, PredictError> {
    let mut counts: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
    for s in seqs {
        if s.len() < 3 {
            return Err(PredictError::TooShort(s.len()));
        }
        if let Some(&m) = s.iter().max() {
            if m >= k {
                return Err(PredictError::StateOutOfRange { index: m, k });
            }
        }
        for w in s.windows(3) {
            *counts.entry((w[0], w[1], w[2])).or_insert(0) += 1;
        }
    }
    let mut rows: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    let mut totals: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (&(i, j, _), &c) in &counts {
        *totals.entry((i, j)).or_insert(0) += c;
    }
    for (&(i, j, kk), &c) in &counts {
        let total = totals[&(i, j)] as f64;
        rows.entry((i, j)).or_default().push((kk, c as f64 / total));
    }
    Ok(TransitionTensor { k, rows, counts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    pub probs: Vec<f64>,
}

impl StateDistribution {
    pub fn one_hot(k: usize, at: usize) -> Self {
        let mut probs = vec![0.0; k];
        probs[at] = 1.0;
        Self { probs }
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolved {
    pub dist: StateDistribution,
    /// Set when no outgoing transition existed and the "stay" fallback was
    /// used.
    pub fallback: bool,
    /// Number of tensor entries touched.
    pub ops: usize,
}

/// `π'[k] = Σ_j π[j]·Ω[prev][j][k]`, iterating only stored entries.
pub fn evolve(dist: &StateDistribution, prev: usize, tensor: &TransitionTensor) -> Evolved {
    let k = dist.probs.len();
    let mut out = vec![0.0; k];
    let mut ops = 0;
    for (j, &pj) in dist.probs.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        for &(kk, p) in tensor.row(prev, j) {
            out[kk] += pj * p;
            ops += 1;
        }
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 && total.is_finite() {
        for v in &mut out {
            *v /= total;
        }
        Evolved {
            dist: StateDistribution { probs: out },
            fallback: false,
            ops,
        }
    } else {
        Evolved {
            dist: StateDistribution::one_hot(k, STAY),
            fallback: true,
            ops,
        }
    }
}

/// Argmax; ties go to the lowest index.
pub fn decode_map(dist: &StateDistribution) -> usize {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedTrack {
    pub user_id: usize,
    pub positions: Vec<Vec2>,
    pub decoded_states: Vec<usize>,
    /// Steps that used the stay fallback.
    pub fallbacks: usize,
}

pub fn predict_locations(
    user_id: usize,
    initial_pos: Vec2,
    last_two_states: (usize, usize),
    tensor: &TransitionTensor,
    space: &StateSpace,
    horizon: usize,
    area: Area,
) -> Result<PredictedTrack, PredictError> {
    if horizon == 0 {
        return Err(PredictError::ZeroHorizon);
    }
    let k = space.k();
    let (mut prev, mut curr) = last_two_states;
    for idx in [prev, curr] {
        if idx >= k {
            return Err(PredictError::StateOutOfRange { index: idx, k });
        }
    }
    let mut pos = initial_pos;
    let mut dist = StateDistribution::one_hot(k, curr);
    let mut out = PredictedTrack {
        user_id,
        positions: Vec::with_capacity(horizon + 1),
        decoded_states: Vec::with_capacity(horizon),
        fallbacks: 0,
    };
    out.positions.push(pos);
    for _ in 0..horizon {
        let ev = evolve(&dist, prev, tensor);
        if ev.fallback {
            out.fallbacks += 1;
        }
        dist = ev.dist;
        let s = decode_map(&dist);
        pos = area.clamp(pos + space.states[s]);
        out.positions.push(pos);
        out.decoded_states.push(s);
        prev = curr;
        curr = s;
    }
    Ok(out)
}

/// Predict `horizon` slots beyond the end of an observed history.
pub fn predict_from_history(
    history: &UserTrack,
    tensor: &TransitionTensor,
    space: &StateSpace,
    horizon: usize,
    area: Area,
) -> Result<PredictedTrack, PredictError> {
    let states = quantize_track(&history.positions, space)?;
    let n = states.len();
    predict_locations(
        history.user_id,
        *history.positions.last().expect("non-empty"),
        (states[n - 2], states[n - 1]),
        tensor,
        space,
        horizon,
        area,
    )
}
