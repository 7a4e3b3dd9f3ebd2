//! Synthetic scene generators.
//!
//! Both generators are pure functions of `(config, seed)`: scene `i` draws
//! from its own stream seeded with `seed + i`, so scenes could be produced in
//! any order without changing the output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AgentClass, AgentState, AgentTrack, GapMeta, Scene, SceneSet, DEFAULT_DT};
use crate::error::{Error, Result};

/// Lateral offset between the ego lane centre (`y = 0`) and the target lane centre.
pub const LANE_WIDTH: f64 = 3.5;
/// A gap-scene trajectory has changed lanes once its lateral coordinate reaches this value.
pub const LANE_BOUNDARY_Y: f64 = LANE_WIDTH / 2.0;

const URBAN_LANE_Y: [f64; 2] = [-1.75, 1.75];
const SIDEWALK_Y: f64 = 6.0;
const LANE_CHANGE_FRAMES: f64 = 5.0;
const MAX_BASE_RATE_ATTEMPTS: u64 = 256;
/// Base-rate bounds are only enforced on sets at least this large.
const BASE_RATE_MIN_SCENES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub num_scenes: usize,
    pub frames_per_scene: usize,
    pub dt: f64,
    pub history_steps: usize,
    pub horizon_steps: usize,
    pub num_vehicles: usize,
    pub num_pedestrians: usize,
    pub interaction_radius: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    /// Acceptance threshold; the midpoint of `[gap_min, gap_max]` when unset.
    pub gap_threshold: Option<f64>,
    pub decision_noise: f64,
    pub traffic_speed: f64,
    pub speed_noise: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_scenes: 20,
            frames_per_scene: 40,
            dt: DEFAULT_DT,
            history_steps: 9,
            horizon_steps: 8,
            num_vehicles: 3,
            num_pedestrians: 3,
            interaction_radius: 15.0,
            gap_min: 8.0,
            gap_max: 40.0,
            gap_threshold: None,
            decision_noise: 3.0,
            traffic_speed: 20.0,
            speed_noise: 1.0,
        }
    }
}

impl GenConfig {
    /// Defaults sized for gap-acceptance episodes.
    pub fn gap_default() -> Self {
        Self {
            frames_per_scene: 20,
            ..Self::default()
        }
    }

    pub fn threshold(&self) -> f64 {
        self.gap_threshold.unwrap_or(0.5 * (self.gap_min + self.gap_max))
    }

    fn validate_common(&self) -> Result<()> {
        if self.num_scenes < 1 {
            return Err(Error::config("num_scenes", "must be >= 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", "must be a finite value > 0"));
        }
        let need = self.history_steps + self.horizon_steps + 1;
        if self.frames_per_scene < need {
            return Err(Error::config(
                "frames_per_scene",
                format!("must be >= history_steps + horizon_steps + 1 = {need}"),
            ));
        }
        Ok(())
    }

    fn validate_urban(&self) -> Result<()> {
        self.validate_common()?;
        if self.num_vehicles < 1 {
            return Err(Error::config("num_vehicles", "must be >= 1"));
        }
        if self.num_pedestrians < 1 {
            return Err(Error::config("num_pedestrians", "must be >= 1"));
        }
        if !(self.interaction_radius > 0.0) {
            return Err(Error::config("interaction_radius", "must be > 0"));
        }
        Ok(())
    }

    fn validate_gap(&self) -> Result<()> {
        self.validate_common()?;
        if !(self.gap_min > 0.0) {
            return Err(Error::config("gap_min", "must be > 0"));
        }
        if !(self.gap_min < self.gap_max) {
            return Err(Error::config("gap_min", "must be < gap_max"));
        }
        if !(self.decision_noise >= 0.0) {
            return Err(Error::config("decision_noise", "must be >= 0"));
        }
        if !(self.traffic_speed > 0.0) {
            return Err(Error::config("traffic_speed", "must be > 0"));
        }
        if !(self.speed_noise >= 0.0) {
            return Err(Error::config("speed_noise", "must be >= 0"));
        }
        Ok(())
    }
}

fn scene_rng(seed: u64, index: usize, attempt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64).wrapping_add(attempt << 32))
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite standard deviation")
}

/// Turns simulated positions into a fully present track whose velocities are
/// the backward finite differences of the positions.
fn track_from_positions(agent_id: u64, class: AgentClass, pos: &[[f64; 2]], dt: f64) -> AgentTrack {
    let states = pos
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let (a, b) = if k == 0 { (pos[0], pos[1]) } else { (pos[k - 1], pos[k]) };
            AgentState {
                frame: k as i64,
                x: p[0],
                y: p[1],
                vx: (b[0] - a[0]) / dt,
                vy: (b[1] - a[1]) / dt,
            }
        })
        .collect();
    AgentTrack {
        agent_id,
        class,
        states,
        presence: vec![true; pos.len()],
    }
}

struct Vehicle {
    pos: [f64; 2],
    speed: f64,
    desired: f64,
    dir: f64,
    lane_y: f64,
}

struct Pedestrian {
    pos: [f64; 2],
    vel: [f64; 2],
    cross_at: Option<usize>,
    target_y: f64,
}

/// Mixed-class urban street scenes.
///
/// Vehicles drive a two-lane road along x and slow down when any agent is in
/// their lane corridor within `interaction_radius` ahead. Pedestrians stroll
/// along the sidewalks and some cross the road at a random frame.
pub fn generate_urban(config: &GenConfig, seed: u64) -> Result<SceneSet> {
    config.validate_urban()?;
    let scenes = (0..config.num_scenes)
        .map(|i| urban_scene(config, i, &mut scene_rng(seed, i, 0)))
        .collect();
    Ok(SceneSet {
        scenes,
        source_tag: format!("urban-seed{seed}"),
    })
}

fn urban_scene(cfg: &GenConfig, index: usize, rng: &mut ChaCha8Rng) -> Scene {
    let dt = cfg.dt;
    let frames = cfg.frames_per_scene;
    let mut vehicles: Vec<Vehicle> = (0..cfg.num_vehicles)
        .map(|_| {
            let lane = rng.random_range(0..2);
            let dir = if lane == 0 { 1.0 } else { -1.0 };
            let desired = rng.random_range(7.0..12.0);
            Vehicle {
                pos: [-dir * rng.random_range(15.0..70.0), URBAN_LANE_Y[lane]],
                speed: desired,
                desired,
                dir,
                lane_y: URBAN_LANE_Y[lane],
            }
        })
        .collect();
    let mut peds: Vec<Pedestrian> = (0..cfg.num_pedestrians)
        .map(|_| {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let walk = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let cross_at = rng.random_bool(0.6).then(|| rng.random_range(0..frames));
            Pedestrian {
                pos: [rng.random_range(-25.0..25.0), side * SIDEWALK_Y],
                vel: [walk * rng.random_range(0.8..1.5), 0.0],
                cross_at,
                target_y: -side * SIDEWALK_Y,
            }
        })
        .collect();

    let speed_noise = normal(0.1);
    let lateral_noise = normal(0.03);
    let ped_noise = normal(0.1);
    let mut vpos = vec![Vec::with_capacity(frames); vehicles.len()];
    let mut ppos = vec![Vec::with_capacity(frames); peds.len()];
    for k in 0..frames {
        for (i, v) in vehicles.iter().enumerate() {
            vpos[i].push(v.pos);
        }
        for (i, p) in peds.iter().enumerate() {
            ppos[i].push(p.pos);
        }
        let snapshot: Vec<[f64; 2]> = vehicles.iter().map(|v| v.pos).chain(peds.iter().map(|p| p.pos)).collect();
        for (i, v) in vehicles.iter_mut().enumerate() {
            let mut gap = f64::INFINITY;
            for (j, q) in snapshot.iter().enumerate() {
                if j == i {
                    continue;
                }
                let ahead = (q[0] - v.pos[0]) * v.dir;
                if ahead > 0.0 && ahead < cfg.interaction_radius && (q[1] - v.pos[1]).abs() < 2.5 {
                    gap = gap.min(ahead);
                }
            }
            let target = if gap.is_finite() {
                v.desired * ((gap - 5.0) / (cfg.interaction_radius - 5.0).max(1e-3)).clamp(0.0, 1.0)
            } else {
                v.desired
            };
            let dv = (target - v.speed).clamp(-4.0 * dt, 2.0 * dt) + speed_noise.sample(rng);
            v.speed = (v.speed + dv).max(0.0);
            v.pos[0] += v.dir * v.speed * dt;
            v.pos[1] += 0.3 * (v.lane_y - v.pos[1]) + lateral_noise.sample(rng);
        }
        for p in peds.iter_mut() {
            if p.cross_at == Some(k) {
                p.vel = [0.2 * p.vel[0], 1.3 * (p.target_y - p.pos[1]).signum()];
            }
            if p.vel[1] != 0.0 && (p.target_y - p.pos[1]) * p.vel[1].signum() <= 0.0 {
                p.vel = [p.vel[0].signum() * 1.0, 0.0];
            }
            p.pos[0] += (p.vel[0] + ped_noise.sample(rng)) * dt;
            p.pos[1] += (p.vel[1] + if p.vel[1] != 0.0 { ped_noise.sample(rng) } else { 0.0 }) * dt;
        }
    }

    let scene_id = index as u64;
    let mut tracks = Vec::with_capacity(vpos.len() + ppos.len());
    let mut next_id = scene_id * 1000;
    for p in &vpos {
        tracks.push(track_from_positions(next_id, AgentClass::Vehicle, p, dt));
        next_id += 1;
    }
    for p in &ppos {
        tracks.push(track_from_positions(next_id, AgentClass::Pedestrian, p, dt));
        next_id += 1;
    }
    Scene {
        scene_id,
        dt,
        tracks,
        gap_meta: None,
    }
}

/// Noisy threshold rule of the gap-acceptance generator.
pub fn gap_decision(gap_size: f64, noise: f64, threshold: f64) -> bool {
    gap_size + noise > threshold
}

/// Highway lane-change episodes.
///
/// The ego vehicle (lowest agent id in each scene) drives at `y = 0` beside a
/// gap between a lag and a lead vehicle in the lane at `y = LANE_WIDTH`. At
/// `decision_frame = history_steps` it merges if the noisy gap exceeds the
/// threshold, otherwise it brakes and stays in lane. Gap sizes are redrawn
/// until the acceptance rate lies in `[0.3, 0.7]` (sets of 10 or more scenes).
pub fn generate_gap(config: &GenConfig, seed: u64) -> Result<SceneSet> {
    config.validate_gap()?;
    for attempt in 0..MAX_BASE_RATE_ATTEMPTS {
        let scenes: Vec<Scene> = (0..config.num_scenes)
            .map(|i| gap_scene(config, i, &mut scene_rng(seed, i, attempt)))
            .collect();
        let accepted = scenes.iter().filter(|s| s.gap_meta.is_some_and(|g| g.accepted)).count();
        let rate = accepted as f64 / scenes.len() as f64;
        if scenes.len() < BASE_RATE_MIN_SCENES || (0.3..=0.7).contains(&rate) {
            return Ok(SceneSet {
                scenes,
                source_tag: format!("gap-seed{seed}"),
            });
        }
    }
    Err(Error::config(
        "gap_threshold",
        "acceptance base rate stays outside [0.3, 0.7]; move the threshold into the gap range",
    ))
}

fn gap_scene(cfg: &GenConfig, index: usize, rng: &mut ChaCha8Rng) -> Scene {
    let dt = cfg.dt;
    let frames = cfg.frames_per_scene;
    let decision = cfg.history_steps;
    let gap_size = rng.random_range(cfg.gap_min..=cfg.gap_max);
    let decision_noise = if cfg.decision_noise > 0.0 {
        normal(cfg.decision_noise).sample(rng)
    } else {
        0.0
    };
    let accepted = gap_decision(gap_size, decision_noise, cfg.threshold());

    let speed = cfg.traffic_speed + if cfg.speed_noise > 0.0 { normal(cfg.speed_noise).sample(rng) } else { 0.0 };
    let lag_x0 = rng.random_range(-5.0..5.0);
    let ego_offset = rng.random_range(3.0..6.0);
    let ego_speed = speed - rng.random_range(0.0..1.0);
    let jitter = normal(0.15);
    let lateral = normal(0.02);

    let mut lag = Vec::with_capacity(frames);
    let mut lead = Vec::with_capacity(frames);
    let mut ego = Vec::with_capacity(frames);
    let (mut xl, mut xd, mut xe) = (lag_x0, lag_x0 + gap_size, lag_x0 + ego_offset);
    let (mut vl, mut vd, mut ve) = (speed, speed, ego_speed);
    for k in 0..frames {
        let after = k as f64 - decision as f64;
        let ye = if accepted && after > 0.0 {
            let u = (after / LANE_CHANGE_FRAMES).min(1.0);
            LANE_WIDTH * u * u * (3.0 - 2.0 * u)
        } else {
            0.0
        };
        lag.push([xl, LANE_WIDTH + lateral.sample(rng)]);
        lead.push([xd, LANE_WIDTH + lateral.sample(rng)]);
        ego.push([xe, ye + lateral.sample(rng)]);
        vl = (vl + jitter.sample(rng) * dt).max(0.0);
        vd = (vd + jitter.sample(rng) * dt).max(0.0);
        if !accepted && after >= 0.0 {
            ve = (ve - 1.5 * dt).max(0.5 * speed);
        }
        ve = (ve + jitter.sample(rng) * dt).max(0.0);
        xl += vl * dt;
        xd += vd * dt;
        xe += ve * dt;
    }

    let scene_id = index as u64;
    let base = scene_id * 1000;
    Scene {
        scene_id,
        dt,
        tracks: vec![
            track_from_positions(base, AgentClass::Vehicle, &ego, dt),
            track_from_positions(base + 1, AgentClass::Vehicle, &lag, dt),
            track_from_positions(base + 2, AgentClass::Vehicle, &lead, dt),
        ],
        gap_meta: Some(GapMeta {
            gap_size,
            accepted,
            decision_frame: decision as i64,
        }),
    }
}
