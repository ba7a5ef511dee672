//! Skeleton topologies: joint counts, tree-structured edge lists and roots.
//!
//! Every topology is a rooted spanning tree over its joints, so each edge
//! defines exactly one bone vector and the joints-to-bones mapping is
//! invertible given per-frame root positions.

use crate::error::{GaitError, Result};

/// A named skeleton layout: `num_joints` nodes connected by a rooted
/// spanning tree of `(parent, child)` edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTopology {
    pub name: String,
    pub num_joints: usize,
    pub edges: Vec<(usize, usize)>,
    pub root: usize,
}

impl SkeletonTopology {
    /// Build a topology and validate the spanning-tree invariants.
    pub fn new(
        name: &str,
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        root: usize,
    ) -> Result<Self> {
        let topo = Self {
            name: name.to_string(),
            num_joints,
            edges,
            root,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// Number of bones (edges).
    pub fn num_bones(&self) -> usize {
        self.edges.len()
    }

    fn validate(&self) -> Result<()> {
        let k = self.num_joints;
        if k == 0 {
            return Err(GaitError::InvalidInput("topology has no joints".into()));
        }
        if self.root >= k {
            return Err(GaitError::InvalidInput(format!(
                "root {} out of range for {} joints",
                self.root, k
            )));
        }
        if self.edges.len() != k - 1 {
            return Err(GaitError::InvalidInput(format!(
                "topology {}: expected {} edges for {} joints, got {}",
                self.name,
                k - 1,
                k,
                self.edges.len()
            )));
        }
        let mut parent_of = vec![usize::MAX; k];
        for &(p, c) in &self.edges {
            if p >= k || c >= k {
                return Err(GaitError::InvalidInput(format!(
                    "edge ({p},{c}) out of range for {k} joints"
                )));
            }
            if c == self.root {
                return Err(GaitError::InvalidInput(format!(
                    "root {} appears as a child",
                    self.root
                )));
            }
            if parent_of[c] != usize::MAX {
                return Err(GaitError::InvalidInput(format!(
                    "joint {c} has more than one parent"
                )));
            }
            parent_of[c] = p;
        }
        // Every joint must be reachable from the root along parent -> child edges.
        let mut reached = vec![false; k];
        reached[self.root] = true;
        let mut frontier = vec![self.root];
        while let Some(j) = frontier.pop() {
            for &(p, c) in &self.edges {
                if p == j && !reached[c] {
                    reached[c] = true;
                    frontier.push(c);
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return Err(GaitError::InvalidInput(format!(
                "topology {} is not connected from root {}",
                self.name, self.root
            )));
        }
        Ok(())
    }

    /// Look up a built-in topology by name.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "coco17" => Ok(coco17()),
            "openpose18" => Ok(openpose18()),
            "synth13" => Ok(synth13()),
            other => Err(GaitError::InvalidInput(format!(
                "unknown topology '{other}' (known: coco17, openpose18, synth13)"
            ))),
        }
    }
}

/// MS COCO 17-keypoint layout, face ring pruned to a tree rooted at the nose.
///
/// Joint order: nose, l_eye, r_eye, l_ear, r_ear, l_shoulder, r_shoulder,
/// l_elbow, r_elbow, l_wrist, r_wrist, l_hip, r_hip, l_knee, r_knee,
/// l_ankle, r_ankle.
pub fn coco17() -> SkeletonTopology {
    SkeletonTopology::new(
        "coco17",
        17,
        vec![
            (0, 1),
            (0, 2),
            (1, 3),
            (2, 4),
            (0, 5),
            (0, 6),
            (5, 7),
            (6, 8),
            (7, 9),
            (8, 10),
            (5, 11),
            (6, 12),
            (11, 13),
            (12, 14),
            (13, 15),
            (14, 16),
        ],
        0,
    )
    .expect("builtin coco17 is valid")
}

/// OpenPose BODY-18 layout rooted at the neck.
///
/// Joint order: nose, neck, r_shoulder, r_elbow, r_wrist, l_shoulder,
/// l_elbow, l_wrist, r_hip, r_knee, r_ankle, l_hip, l_knee, l_ankle,
/// r_eye, l_eye, r_ear, l_ear.
pub fn openpose18() -> SkeletonTopology {
    SkeletonTopology::new(
        "openpose18",
        18,
        vec![
            (1, 0),
            (1, 2),
            (2, 3),
            (3, 4),
            (1, 5),
            (5, 6),
            (6, 7),
            (1, 8),
            (8, 9),
            (9, 10),
            (1, 11),
            (11, 12),
            (12, 13),
            (0, 14),
            (0, 15),
            (14, 16),
            (15, 17),
        ],
        1,
    )
    .expect("builtin openpose18 is valid")
}

/// 13-joint stick figure used by the synthetic walker, rooted at the pelvis.
///
/// Joint order: head, neck, l_shoulder, r_shoulder, l_elbow, r_elbow,
/// l_wrist, r_wrist, pelvis, l_knee, r_knee, l_ankle, r_ankle.
pub fn synth13() -> SkeletonTopology {
    SkeletonTopology::new(
        "synth13",
        13,
        vec![
            (8, 1),
            (1, 0),
            (1, 2),
            (1, 3),
            (2, 4),
            (3, 5),
            (4, 6),
            (5, 7),
            (8, 9),
            (8, 10),
            (9, 11),
            (10, 12),
        ],
        8,
    )
    .expect("builtin synth13 is valid")
}

/// Joint indices of `synth13`, named for readability in the generator.
pub mod synth13_joints {
    pub const HEAD: usize = 0;
    pub const NECK: usize = 1;
    pub const L_SHOULDER: usize = 2;
    pub const R_SHOULDER: usize = 3;
    pub const L_ELBOW: usize = 4;
    pub const R_ELBOW: usize = 5;
    pub const L_WRIST: usize = 6;
    pub const R_WRIST: usize = 7;
    pub const PELVIS: usize = 8;
    pub const L_KNEE: usize = 9;
    pub const R_KNEE: usize = 10;
    pub const L_ANKLE: usize = 11;
    pub const R_ANKLE: usize = 12;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid_trees() {
        for name in ["coco17", "openpose18", "synth13"] {
            let t = SkeletonTopology::builtin(name).unwrap();
            assert_eq!(t.edges.len(), t.num_joints - 1, "{name}");
        }
        assert_eq!(coco17().num_joints, 17);
        assert_eq!(openpose18().num_joints, 18);
        assert_eq!(synth13().num_joints, 13);
    }

    #[test]
    fn rejects_cycle() {
        let r = SkeletonTopology::new("bad", 3, vec![(0, 1), (1, 0)], 0);
        assert!(r.is_err());
    }

    #[test]
    fn rejects_disconnected() {
        // 4 joints, 3 edges, but joint 3 links into a second component.
        let r = SkeletonTopology::new("bad", 4, vec![(0, 1), (1, 2), (3, 2)], 0);
        assert!(r.is_err());
    }

    #[test]
    fn rejects_wrong_edge_count() {
        let r = SkeletonTopology::new("bad", 3, vec![(0, 1)], 0);
        assert!(r.is_err());
    }

    #[test]
    fn rejects_out_of_range() {
        let r = SkeletonTopology::new("bad", 3, vec![(0, 1), (0, 7)], 0);
        assert!(r.is_err());
        assert!(SkeletonTopology::new("bad", 3, vec![(0, 1), (0, 2)], 9).is_err());
    }

    #[test]
    fn unknown_builtin_is_an_error() {
        assert!(SkeletonTopology::builtin("nope").is_err());
    }
}
