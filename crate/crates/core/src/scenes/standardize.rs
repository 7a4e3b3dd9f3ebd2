use serde::{Deserialize, Serialize};

use super::SceneSet;
use crate::error::{Error, Result};

/// Smallest scale a coordinate may take.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Per-coordinate affine normalization of positions.
///
/// Positions map to `(p - mean) / scale`; velocities to `v / scale`, which
/// keeps `velocity == d position / dt` in standardized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
    /// Set when some coordinate had zero spread and its scale was floored.
    pub degenerate: bool,
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 2],
            scale: [1.0; 2],
            degenerate: false,
        }
    }

    /// Fits mean and population standard deviation over the present states of
    /// the scenes at `indices`.
    pub fn fit(set: &SceneSet, indices: &[usize]) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; 2];
        for &i in indices {
            for t in &set.scenes[i].tracks {
                for (s, p) in t.states.iter().zip(&t.presence) {
                    if *p {
                        n += 1;
                        sum[0] += s.x;
                        sum[1] += s.y;
                    }
                }
            }
        }
        if n == 0 {
            return Err(Error::validation("cannot standardize an empty scene set"));
        }
        let mean = [sum[0] / n as f64, sum[1] / n as f64];
        let mut sq = [0.0; 2];
        for &i in indices {
            for t in &set.scenes[i].tracks {
                for (s, p) in t.states.iter().zip(&t.presence) {
                    if *p {
                        sq[0] += (s.x - mean[0]).powi(2);
                        sq[1] += (s.y - mean[1]).powi(2);
                    }
                }
            }
        }
        let mut degenerate = false;
        let scale = sq.map(|v| {
            let sd = (v / n as f64).sqrt();
            if sd < SCALE_FLOOR {
                degenerate = true;
                SCALE_FLOOR
            } else {
                sd
            }
        });
        Ok(Self { mean, scale, degenerate })
    }

    pub fn position(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.mean[0]) / self.scale[0], (p[1] - self.mean[1]) / self.scale[1]]
    }

    pub fn velocity(&self, v: [f64; 2]) -> [f64; 2] {
        [v[0] / self.scale[0], v[1] / self.scale[1]]
    }

    /// Scales a displacement in meters to standardized units.
    pub fn offset(&self, d: [f64; 2]) -> [f64; 2] {
        self.velocity(d)
    }

    pub fn invert_position(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0] * self.scale[0] + self.mean[0], p[1] * self.scale[1] + self.mean[1]]
    }

    pub fn invert_velocity(&self, v: [f64; 2]) -> [f64; 2] {
        [v[0] * self.scale[0], v[1] * self.scale[1]]
    }

    /// Converts a displacement in standardized units back to meters.
    pub fn invert_offset(&self, d: [f64; 2]) -> [f64; 2] {
        self.invert_velocity(d)
    }

    /// Applies the transform to every present state; padding stays zero and
    /// gap metadata stays in meters.
    pub fn apply(&self, set: &SceneSet) -> SceneSet {
        let mut out = set.clone();
        for scene in &mut out.scenes {
            for t in &mut scene.tracks {
                for (s, p) in t.states.iter_mut().zip(&t.presence) {
                    if *p {
                        [s.x, s.y] = self.position([s.x, s.y]);
                        [s.vx, s.vy] = self.velocity([s.vx, s.vy]);
                    }
                }
            }
        }
        out
    }

    pub fn invert(&self, set: &SceneSet) -> SceneSet {
        let mut out = set.clone();
        for scene in &mut out.scenes {
            for t in &mut scene.tracks {
                for (s, p) in t.states.iter_mut().zip(&t.presence) {
                    if *p {
                        [s.x, s.y] = self.invert_position([s.x, s.y]);
                        [s.vx, s.vy] = self.invert_velocity([s.vx, s.vy]);
                    }
                }
            }
        }
        out
    }
}

/// Fits on the scenes at `train` and standardizes the whole set.
pub fn standardize(set: &SceneSet, train: &[usize]) -> Result<(SceneSet, Standardizer)> {
    let s = Standardizer::fit(set, train)?;
    Ok((s.apply(set), s))
}
