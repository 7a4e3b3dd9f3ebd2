//! Multi-agent scene data model and everything that produces or partitions it.

mod generate;
mod graph;
mod io;
mod split;
mod standardize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{gap_decision, generate_gap, generate_urban, GenConfig, LANE_BOUNDARY_Y, LANE_WIDTH};
pub use graph::{build_neighbor_graph, EdgeKey, NeighborGraph};
pub use io::{load_gap_meta, load_scene_dir, load_tracks, save_gap_meta, save_scene_dir, save_tracks, GAPS_FILE, TRACKS_FILE};
pub use split::{split_critical, split_random, DataSplit, SplitMethod};
pub use standardize::{standardize, Standardizer, SCALE_FLOOR};

/// Default frame spacing in seconds (2 Hz annotation).
pub const DEFAULT_DT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentClass {
    Vehicle,
    Pedestrian,
}

impl AgentClass {
    pub const ALL: [AgentClass; 2] = [AgentClass::Vehicle, AgentClass::Pedestrian];
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        match self {
            AgentClass::Vehicle => 0,
            AgentClass::Pedestrian => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentClass::Vehicle => "vehicle",
            AgentClass::Pedestrian => "pedestrian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vehicle" => Some(AgentClass::Vehicle),
            "pedestrian" => Some(AgentClass::Pedestrian),
            _ => None,
        }
    }
}

impl std::fmt::Display for AgentClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl AgentState {
    pub fn pos(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn vel(&self) -> [f64; 2] {
        [self.vx, self.vy]
    }
}

/// One agent's states on the scene's frame grid.
///
/// `states[k].frame == first_frame + k`; frames before the agent appears are
/// padding entries with `presence[k] == false`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub agent_id: u64,
    pub class: AgentClass,
    pub states: Vec<AgentState>,
    pub presence: Vec<bool>,
}

impl AgentTrack {
    pub fn first_frame(&self) -> Option<i64> {
        self.states.first().map(|s| s.frame)
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.states.last().map(|s| s.frame)
    }

    /// The state at `frame` if the agent is present there.
    pub fn state_at(&self, frame: i64) -> Option<&AgentState> {
        let first = self.first_frame()?;
        let k = usize::try_from(frame - first).ok()?;
        match (self.states.get(k), self.presence.get(k)) {
            (Some(s), Some(true)) => Some(s),
            _ => None,
        }
    }

    pub fn is_present(&self, frame: i64) -> bool {
        self.state_at(frame).is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.presence.len() != self.states.len() {
            return Err(Error::validation(format!(
                "agent {}: presence length {} != states length {}",
                self.agent_id,
                self.presence.len(),
                self.states.len()
            )));
        }
        for w in self.states.windows(2) {
            if w[1].frame != w[0].frame + 1 {
                return Err(Error::validation(format!(
                    "agent {}: non-uniform frame grid ({} -> {})",
                    self.agent_id, w[0].frame, w[1].frame
                )));
            }
        }
        for s in &self.states {
            if ![s.x, s.y, s.vx, s.vy].iter().all(|v| v.is_finite()) {
                return Err(Error::validation(format!(
                    "agent {}: non-finite state at frame {}",
                    self.agent_id, s.frame
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one gap-acceptance episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapMeta {
    pub gap_size: f64,
    pub accepted: bool,
    pub decision_frame: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: u64,
    pub dt: f64,
    pub tracks: Vec<AgentTrack>,
    pub gap_meta: Option<GapMeta>,
}

impl Scene {
    pub fn first_frame(&self) -> i64 {
        self.tracks.iter().filter_map(|t| t.first_frame()).min().unwrap_or(0)
    }

    pub fn last_frame(&self) -> i64 {
        self.tracks.iter().filter_map(|t| t.last_frame()).max().unwrap_or(0)
    }

    pub fn track(&self, agent_id: u64) -> Option<&AgentTrack> {
        self.tracks.iter().find(|t| t.agent_id == agent_id)
    }

    /// The decision-making vehicle of a gap scene: the lowest agent id.
    pub fn ego(&self) -> Option<&AgentTrack> {
        self.tracks.iter().min_by_key(|t| t.agent_id)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation(format!("scene {}: dt must be > 0", self.scene_id)));
        }
        if self.tracks.is_empty() {
            return Err(Error::validation(format!("scene {}: no tracks", self.scene_id)));
        }
        let first = self.first_frame();
        let mut ids = std::collections::HashSet::new();
        for t in &self.tracks {
            t.validate()?;
            if t.first_frame() != Some(first) {
                return Err(Error::validation(format!(
                    "scene {}: agent {} does not start on the scene grid",
                    self.scene_id, t.agent_id
                )));
            }
            if !ids.insert(t.agent_id) {
                return Err(Error::validation(format!(
                    "scene {}: duplicate agent id {}",
                    self.scene_id, t.agent_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneSet {
    pub scenes: Vec<Scene>,
    pub source_tag: String,
}

impl SceneSet {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for s in &self.scenes {
            s.validate()?;
            if !ids.insert(s.scene_id) {
                return Err(Error::validation(format!("duplicate scene id {}", s.scene_id)));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> SceneSet {
        SceneSet {
            scenes: indices.iter().map(|&i| self.scenes[i].clone()).collect(),
            source_tag: self.source_tag.clone(),
        }
    }

    pub fn has_gap_meta(&self) -> bool {
        !self.scenes.is_empty() && self.scenes.iter().all(|s| s.gap_meta.is_some())
    }
}
