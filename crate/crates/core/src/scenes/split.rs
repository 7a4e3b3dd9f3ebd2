use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SceneSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMethod {
    Random,
    Critical,
}

impl SplitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMethod::Random => "random",
            SplitMethod::Critical => "critical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(SplitMethod::Random),
            "critical" => Some(SplitMethod::Critical),
            _ => None,
        }
    }
}

impl std::fmt::Display for SplitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Index partition of a [`SceneSet`]; each list is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub method: SplitMethod,
    pub seed: u64,
}

impl DataSplit {
    /// Checks that the three lists are pairwise disjoint and cover `0..n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Seeded random partition. Validation and test sizes are the rounded
/// fraction counts; the remainder goes to train.
pub fn split_random(set: &SceneSet, fractions: [f64; 3], seed: u64) -> Result<DataSplit> {
    if fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::config("split_fractions", "fractions must be nonnegative"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config("split_fractions", format!("fractions sum to {total}, expected 1")));
    }
    let n = set.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((fractions[2] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_test);
    let n_train = n - n_test - n_val;
    let mut train = perm[..n_train].to_vec();
    let mut val = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(DataSplit {
        train,
        val,
        test,
        method: SplitMethod::Random,
        seed,
    })
}

/// Puts the most unusual gap decisions in the test set.
///
/// Criticality is `-gap_size` for accepted gaps and `+gap_size` for rejected
/// ones. Within each label class the top `round(test_fraction * n_class)`
/// scenes by criticality (ties: lower scene id first) go to test.
pub fn split_critical(set: &SceneSet, test_fraction: f64) -> Result<DataSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config("critical_test_fraction", "must lie in (0, 1)"));
    }
    let mut classes: [Vec<(f64, u64, usize)>; 2] = [Vec::new(), Vec::new()];
    for (i, s) in set.scenes.iter().enumerate() {
        let g = s
            .gap_meta
            .ok_or_else(|| Error::validation(format!("scene {} has no gap metadata", s.scene_id)))?;
        let score = if g.accepted { -g.gap_size } else { g.gap_size };
        classes[usize::from(g.accepted)].push((score, s.scene_id, i));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in &mut classes {
        class.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        let k = (test_fraction * class.len() as f64).round() as usize;
        test.extend(class[..k].iter().map(|c| c.2));
        train.extend(class[k..].iter().map(|c| c.2));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(DataSplit {
        train,
        val: Vec::new(),
        test,
        method: SplitMethod::Critical,
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{AgentClass, AgentState, AgentTrack, GapMeta, Scene};

    fn scene(id: u64, gap: Option<(f64, bool)>) -> Scene {
        Scene {
            scene_id: id,
            dt: 0.5,
            tracks: vec![AgentTrack {
                agent_id: id * 10,
                class: AgentClass::Vehicle,
                states: vec![AgentState { frame: 0, x: 0.0, y: 0.0, vx: 0.0, vy: 0.0 }],
                presence: vec![true],
            }],
            gap_meta: gap.map(|(gap_size, accepted)| GapMeta {
                gap_size,
                accepted,
                decision_frame: 0,
            }),
        }
    }

    fn plain(n: usize) -> SceneSet {
        SceneSet {
            scenes: (0..n as u64).map(|i| scene(i, None)).collect(),
            source_tag: String::new(),
        }
    }

    #[test]
    fn random_split_sizes_and_cover() {
        let set = plain(10);
        let s = split_random(&set, [0.8, 0.0, 0.2], 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 0, 2));
        assert!(s.is_partition_of(10));
        assert_eq!(s, split_random(&set, [0.8, 0.0, 0.2], 7).unwrap());
    }

    #[test]
    fn random_split_remainder_goes_to_train() {
        let set = plain(7);
        let s = split_random(&set, [0.5, 0.25, 0.25], 1).unwrap();
        // round(1.75) = 2 for val and test
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (3, 2, 2));
    }

    #[test]
    fn random_split_rejects_bad_fractions() {
        let set = plain(4);
        assert!(matches!(split_random(&set, [0.5, 0.5, 0.5], 1), Err(Error::Config { .. })));
        assert!(matches!(split_random(&set, [1.2, -0.2, 0.0], 1), Err(Error::Config { .. })));
    }

    #[test]
    fn critical_split_picks_extremes() {
        let gaps = [(5.0, true), (10.0, true), (15.0, true), (20.0, true), (8.0, false), (12.0, false), (25.0, false)];
        let set = SceneSet {
            scenes: gaps.iter().enumerate().map(|(i, g)| scene(i as u64, Some(*g))).collect(),
            source_tag: String::new(),
        };
        let s = split_critical(&set, 0.25).unwrap();
        assert_eq!(s.test, vec![0, 6]);
        assert!(s.is_partition_of(7));
    }

    #[test]
    fn critical_split_ties_break_on_scene_id() {
        let set = SceneSet {
            scenes: (0..8u64).map(|i| scene(10 - i, Some((12.0, i % 2 == 0)))).collect(),
            source_tag: String::new(),
        };
        let s = split_critical(&set, 0.25).unwrap();
        // accepted ids 10,8,6,4 -> lowest id 4 (index 6); rejected 9,7,5,3 -> id 3 (index 7)
        assert_eq!(s.test, vec![6, 7]);
        assert!(s.is_partition_of(8));
    }

    #[test]
    fn critical_split_requires_gap_meta() {
        assert!(matches!(split_critical(&plain(3), 0.2), Err(Error::Validation(_))));
    }
}
