//! Gauss-Markov ground-truth user mobility.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Area, Vec2};
use crate::scenario::{ScenarioConfig, ScenarioError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmParams {
    pub memory_alpha: f64,
    /// m/s
    pub mean_speed: f64,
    pub speed_std: f64,
    /// Per-step rotation of the mean heading, radians.
    pub mean_heading_drift: f64,
    pub heading_std: f64,
    pub speed_max: f64,
}

impl Default for GmParams {
    fn default() -> Self {
        Self {
            memory_alpha: 0.85,
            mean_speed: 1.5,
            speed_std: 0.3,
            mean_heading_drift: 0.0,
            heading_std: 0.3,
            speed_max: 3.0,
        }
    }
}

impl GmParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.memory_alpha) {
            return Err(format!("memory_alpha must lie in [0, 1], got {}", self.memory_alpha));
        }
        if !(self.speed_std >= 0.0 && self.heading_std >= 0.0) {
            return Err("speed_std and heading_std must be ≥ 0".into());
        }
        if !self.mean_heading_drift.is_finite() {
            return Err("mean_heading_drift must be finite".into());
        }
        // A zero mean speed describes static users and is accepted.
        if !(self.mean_speed >= 0.0 && self.mean_speed <= self.speed_max && self.speed_max.is_finite()) {
            return Err(format!(
                "need 0 ≤ mean_speed ≤ speed_max, got {} and {}",
                self.mean_speed, self.speed_max
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTrack {
    pub user_id: usize,
    pub positions: Vec<Vec2>,
    pub speeds: Vec<f64>,
    pub headings: Vec<f64>,
}

impl UserTrack {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Stationary track with `len` copies of `p`.
    pub fn stationary(user_id: usize, p: Vec2, len: usize) -> Self {
        Self {
            user_id,
            positions: vec![p; len],
            speeds: vec![0.0; len],
            headings: vec![0.0; len],
        }
    }
}

#[derive(Debug, Error)]
pub enum MobilityError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid mobility parameters: {0}")]
    Params(String),
    #[error("split slot {split} out of range for a track of {len} positions")]
    SplitOutOfRange { split: usize, len: usize },
}

/// Starting state of one user.
#[derive(Debug, Clone, Copy)]
pub struct GmStart {
    pub position: Vec2,
    pub speed: f64,
    pub heading: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Advance one user for `steps` slots of duration `dt`.
pub fn generate_track_from<R: Rng + ?Sized>(
    user_id: usize,
    start: GmStart,
    steps: usize,
    area: Area,
    gm: &GmParams,
    dt: f64,
    rng: &mut R,
) -> UserTrack {
    let a = gm.memory_alpha;
    let innov = (1.0 - a * a).max(0.0).sqrt();
    let mut pos = area.clamp(start.position);
    let mut speed = start.speed.clamp(0.0, gm.speed_max);
    let mut heading = start.heading;
    let mut mean_heading = start.heading;

    let mut track = UserTrack {
        user_id,
        positions: Vec::with_capacity(steps + 1),
        speeds: Vec::with_capacity(steps + 1),
        headings: Vec::with_capacity(steps + 1),
    };
    track.positions.push(pos);
    track.speeds.push(speed);
    track.headings.push(heading);

    for _ in 0..steps {
        let ns: f64 = rng.sample(StandardNormal);
        let nh: f64 = rng.sample(StandardNormal);
        mean_heading += gm.mean_heading_drift;
        speed = a * speed + (1.0 - a) * gm.mean_speed + innov * gm.speed_std * ns;
        speed = speed.clamp(0.0, gm.speed_max);
        heading = a * heading + (1.0 - a) * mean_heading + innov * gm.heading_std * nh;

        let mut next = pos + Vec2::from_polar(speed * dt, heading);
        if next.x < area.x.0 || next.x > area.x.1 {
            next.x = if next.x < area.x.0 {
                2.0 * area.x.0 - next.x
            } else {
                2.0 * area.x.1 - next.x
            };
            heading = PI - heading;
            mean_heading = PI - mean_heading;
        }
        if next.y < area.y.0 || next.y > area.y.1 {
            next.y = if next.y < area.y.0 {
                2.0 * area.y.0 - next.y
            } else {
                2.0 * area.y.1 - next.y
            };
            heading = -heading;
            mean_heading = -mean_heading;
        }
        heading = wrap_angle(heading);
        mean_heading = wrap_angle(mean_heading);
        // A reflected step longer than the area itself can still overshoot.
        pos = area.clamp(next);

        track.positions.push(pos);
        track.speeds.push(speed);
        track.headings.push(heading);
    }
    track
}

/// `n_users` tracks of `steps + 1` positions with uniform initial positions
/// and headings and initial speed equal to the mean speed.
pub fn generate_tracks_steps<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    gm: &GmParams,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<UserTrack>, MobilityError> {
    gm.validate().map_err(MobilityError::Params)?;
    let area = cfg.area();
    let starts: Vec<GmStart> = (0..cfg.n_users)
        .map(|_| GmStart {
            position: Vec2::new(rng.gen_range(area.x.0..=area.x.1), rng.gen_range(area.y.0..=area.y.1)),
            speed: gm.mean_speed,
            heading: rng.gen_range(-PI..PI),
        })
        .collect();
    Ok(starts
        .into_iter()
        .enumerate()
        .map(|(n, s)| generate_track_from(n, s, steps, area, gm, cfg.slot_duration, rng))
        .collect())
}

/// Ground truth over the mission: `T/δ + 1` positions per user.
pub fn generate_tracks<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    gm: &GmParams,
    rng: &mut R,
) -> Result<Vec<UserTrack>, MobilityError> {
    let steps = cfg.n_slots()?;
    generate_tracks_steps(cfg, gm, steps, rng)
}

/// `history = [0, split]`, `future = (split, end]`.
pub fn split_history_future(
    track: &UserTrack,
    split: usize,
) -> Result<(UserTrack, UserTrack), MobilityError> {
    let len = track.len();
    if split == 0 || split + 1 >= len {
        return Err(MobilityError::SplitOutOfRange { split, len });
    }
    let part = |r: std::ops::Range<usize>| UserTrack {
        user_id: track.user_id,
        positions: track.positions[r.clone()].to_vec(),
        speeds: track.speeds[r.clone()].to_vec(),
        headings: track.headings[r].to_vec(),
    };
    Ok((part(0..split + 1), part(split + 1..len)))
}

pub fn concat_tracks(a: &UserTrack, b: &UserTrack) -> UserTrack {
    let mut out = a.clone();
    out.positions.extend_from_slice(&b.positions);
    out.speeds.extend_from_slice(&b.speeds);
    out.headings.extend_from_slice(&b.headings);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::seeded_rng;

    fn area() -> Area {
        Area {
            x: (0.0, 100.0),
            y: (0.0, 100.0),
        }
    }

    #[test]
    fn noiseless_model_is_straight_line() {
        let gm = GmParams {
            memory_alpha: 1.0,
            speed_std: 0.0,
            heading_std: 0.0,
            ..GmParams::default()
        };
        let start = GmStart {
            position: Vec2::new(50.0, 10.0),
            speed: gm.mean_speed,
            heading: PI / 2.0,
        };
        let t = generate_track_from(0, start, 20, area(), &gm, 1.0, &mut seeded_rng(1));
        for (k, p) in t.positions.iter().enumerate() {
            assert!((p.x - 50.0).abs() < 1e-9);
            assert!((p.y - (10.0 + 1.5 * k as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_mean_speed_keeps_users_still() {
        let gm = GmParams {
            mean_speed: 0.0,
            speed_std: 0.0,
            ..GmParams::default()
        };
        let cfg = ScenarioConfig {
            mobility: gm.clone(),
            ..ScenarioConfig::paper()
        };
        let tracks = generate_tracks(&cfg, &gm, &mut seeded_rng(3)).unwrap();
        for t in &tracks {
            assert_eq!(t.len(), 211);
            assert!(t.positions.iter().all(|p| *p == t.positions[0]));
        }
    }

    #[test]
    fn empirical_step_length_matches_mean_speed() {
        let gm = GmParams {
            memory_alpha: 0.8,
            mean_speed: 1.5,
            ..GmParams::default()
        };
        let cfg = ScenarioConfig::paper();
        let tracks = generate_tracks_steps(&cfg, &gm, 1000, &mut seeded_rng(42)).unwrap();
        let mut total = 0.0;
        let mut count = 0usize;
        for t in &tracks {
            for w in t.positions.windows(2) {
                total += w[0].dist(w[1]);
                count += 1;
            }
        }
        let mean = total / count as f64;
        assert!(count >= 1000);
        assert!((mean - 1.5).abs() <= 0.15, "mean step {mean}");
    }

    #[test]
    fn split_lengths() {
        let t = generate_track_from(
            0,
            GmStart {
                position: Vec2::new(5.0, 5.0),
                speed: 1.0,
                heading: 0.0,
            },
            10,
            area(),
            &GmParams::default(),
            1.0,
            &mut seeded_rng(0),
        );
        assert_eq!(t.len(), 11);
        let (h, f) = split_history_future(&t, 5).unwrap();
        assert_eq!((h.len(), f.len()), (6, 5));
        let (h, f) = split_history_future(&t, 9).unwrap();
        assert_eq!((h.len(), f.len()), (10, 1));
        assert_eq!(concat_tracks(&h, &f), t);
        assert!(split_history_future(&t, 0).is_err());
        assert!(split_history_future(&t, 10).is_err());
    }

    #[test]
    fn same_seed_same_tracks() {
        let cfg = ScenarioConfig::paper();
        let a = generate_tracks(&cfg, &cfg.mobility, &mut seeded_rng(42)).unwrap();
        let b = generate_tracks(&cfg, &cfg.mobility, &mut seeded_rng(42)).unwrap();
        let c = generate_tracks(&cfg, &cfg.mobility, &mut seeded_rng(43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
