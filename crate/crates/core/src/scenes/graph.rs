use super::{AgentClass, Scene};
use crate::error::{Error, Result};

/// Semantic edge class: ordered pair (focal class, neighbor class).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgeKey {
    pub focal: AgentClass,
    pub neighbor: AgentClass,
}

impl EdgeKey {
    /// Every key for a focal class, indexed by the neighbor class index.
    pub fn all_for(focal: AgentClass) -> [EdgeKey; AgentClass::COUNT] {
        AgentClass::ALL.map(|neighbor| EdgeKey { focal, neighbor })
    }
}

/// Neighbors of one focal agent over the window `t - T ..= t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    pub focal_id: u64,
    pub focal_class: AgentClass,
    /// Frames of the window, oldest first.
    pub frames: Vec<i64>,
    /// `neighbors[k][s]`: ids of class `AgentClass::ALL[k]` at `frames[s]`,
    /// sorted ascending.
    pub neighbors: Vec<Vec<Vec<u64>>>,
}

impl NeighborGraph {
    pub fn keys(&self) -> [EdgeKey; AgentClass::COUNT] {
        EdgeKey::all_for(self.focal_class)
    }

    pub fn list(&self, key: EdgeKey, step: usize) -> &[u64] {
        &self.neighbors[key.neighbor.index()][step]
    }
}

/// Lists, per window step and neighbor class, the agents strictly closer than
/// `radius` to the focal agent. Steps where the focal agent is absent have
/// empty lists.
pub fn build_neighbor_graph(scene: &Scene, focal_id: u64, t: i64, history: usize, radius: f64) -> Result<NeighborGraph> {
    let focal = scene
        .track(focal_id)
        .ok_or_else(|| Error::validation(format!("scene {}: no agent {focal_id}", scene.scene_id)))?;
    if !focal.is_present(t) {
        return Err(Error::validation(format!(
            "scene {}: focal agent {focal_id} absent at frame {t}",
            scene.scene_id
        )));
    }
    let start = t - history as i64;
    if start < scene.first_frame() {
        return Err(Error::validation(format!(
            "scene {}: window start {start} precedes first frame {}",
            scene.scene_id,
            scene.first_frame()
        )));
    }
    let frames: Vec<i64> = (start..=t).collect();
    let mut neighbors = vec![vec![Vec::new(); frames.len()]; AgentClass::COUNT];
    for (s, &frame) in frames.iter().enumerate() {
        let Some(fs) = focal.state_at(frame) else {
            continue;
        };
        for other in &scene.tracks {
            if other.agent_id == focal_id {
                continue;
            }
            if let Some(os) = other.state_at(frame) {
                let d = (os.x - fs.x).hypot(os.y - fs.y);
                if d < radius {
                    neighbors[other.class.index()][s].push(other.agent_id);
                }
            }
        }
    }
    for lists in &mut neighbors {
        for l in lists.iter_mut() {
            l.sort_unstable();
        }
    }
    Ok(NeighborGraph {
        focal_id,
        focal_class: focal.class,
        frames,
        neighbors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{AgentState, AgentTrack};

    fn still(id: u64, class: AgentClass, x: f64, y: f64, frames: usize) -> AgentTrack {
        AgentTrack {
            agent_id: id,
            class,
            states: (0..frames as i64)
                .map(|f| AgentState { frame: f, x, y, vx: 0.0, vy: 0.0 })
                .collect(),
            presence: vec![true; frames],
        }
    }

    fn scene(tracks: Vec<AgentTrack>) -> Scene {
        Scene {
            scene_id: 1,
            dt: 0.5,
            tracks,
            gap_meta: None,
        }
    }

    #[test]
    fn zero_radius_gives_empty_lists() {
        let s = scene(vec![
            still(1, AgentClass::Vehicle, 0.0, 0.0, 5),
            still(2, AgentClass::Vehicle, 0.0, 0.0, 5),
        ]);
        let g = build_neighbor_graph(&s, 1, 4, 3, 0.0).unwrap();
        assert!(g.neighbors.iter().flatten().all(|l| l.is_empty()));
    }

    #[test]
    fn pedestrian_within_radius_listed_when_present() {
        let mut ped = still(7, AgentClass::Pedestrian, 3.0, 0.0, 5);
        ped.presence[2] = false;
        let s = scene(vec![still(1, AgentClass::Vehicle, 0.0, 0.0, 5), ped]);
        let g = build_neighbor_graph(&s, 1, 4, 4, 5.0).unwrap();
        let key = EdgeKey {
            focal: AgentClass::Vehicle,
            neighbor: AgentClass::Pedestrian,
        };
        for step in 0..5 {
            let expect: &[u64] = if step == 2 { &[] } else { &[7] };
            assert_eq!(g.list(key, step), expect);
        }
    }

    #[test]
    fn radius_threshold() {
        let s = scene(vec![
            still(1, AgentClass::Vehicle, 0.0, 0.0, 3),
            still(2, AgentClass::Vehicle, 4.0, 0.0, 3),
            still(3, AgentClass::Vehicle, 0.0, 6.0, 3),
        ]);
        let g = build_neighbor_graph(&s, 1, 2, 2, 5.0).unwrap();
        assert!(g.neighbors[0].iter().all(|l| l == &vec![2]));
        assert!(g.neighbors[1].iter().all(|l| l.is_empty()));
    }

    #[test]
    fn errors_on_absent_focal_and_short_window() {
        let mut f = still(1, AgentClass::Vehicle, 0.0, 0.0, 4);
        f.presence[3] = false;
        let s = scene(vec![f]);
        assert!(build_neighbor_graph(&s, 1, 3, 2, 5.0).is_err());
        assert!(build_neighbor_graph(&s, 1, 2, 3, 5.0).is_err());
        assert!(build_neighbor_graph(&s, 1, 2, 2, 5.0).is_ok());
    }
}
