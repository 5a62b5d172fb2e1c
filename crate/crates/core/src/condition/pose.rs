use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// 2D joint positions in normalized `[0, 1]` image coordinates.
///
/// `x` runs along the width, `y` along the height. Invisible joints may hold
/// any coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    joints: Vec<[f32; 2]>,
    visible: Vec<bool>,
}

impl Pose {
    pub fn new(joints: Vec<[f32; 2]>, visible: Vec<bool>) -> Result<Self> {
        if joints.len() != visible.len() {
            return Err(arg_err!("{} joints but {} visibility flags", joints.len(), visible.len()));
        }
        for (j, (p, &vis)) in joints.iter().zip(&visible).enumerate() {
            if vis && !p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(arg_err!("visible joint {j} at {p:?} is outside [0, 1]"));
            }
        }
        Ok(Self { joints, visible })
    }

    /// All joints visible.
    pub fn visible(joints: Vec<[f32; 2]>) -> Result<Self> {
        let n = joints.len();
        Self::new(joints, vec![true; n])
    }

    pub fn joints(&self) -> &[[f32; 2]] {
        &self.joints
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visible
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Interleaved `[x0, y0, x1, y1, ...]`.
    pub fn flat_coords(&self) -> Vec<f32> {
        self.joints.iter().flat_map(|p| p.iter().copied()).collect()
    }

    /// Keypoint rows `[x, y, visible]` as stored in keypoint files.
    pub fn to_rows(&self) -> Vec<[f32; 3]> {
        self.joints
            .iter()
            .zip(&self.visible)
            .map(|(p, &v)| [p[0], p[1], if v { 1.0 } else { 0.0 }])
            .collect()
    }

    pub fn from_rows(rows: &[[f32; 3]]) -> Result<Self> {
        Self::new(
            rows.iter().map(|r| [r[0], r[1]]).collect(),
            rows.iter().map(|r| r[2] > 0.5).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseSequence {
    poses: Vec<Pose>,
}

impl PoseSequence {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if let Some(first) = poses.first() {
            let j = first.num_joints();
            if let Some((i, p)) = poses.iter().enumerate().find(|(_, p)| p.num_joints() != j) {
                return Err(arg_err!("pose {i} has {} joints, expected {j}", p.num_joints()));
            }
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn num_joints(&self) -> Option<usize> {
        self.poses.first().map(Pose::num_joints)
    }

    pub fn last(&self) -> Option<&Pose> {
        self.poses.last()
    }

    pub fn slice(&self, start: usize, end: usize) -> PoseSequence {
        PoseSequence {
            poses: self.poses[start..end].to_vec(),
        }
    }

    pub fn to_file(&self) -> KeypointFile {
        KeypointFile {
            frames: self.poses.iter().map(Pose::to_rows).collect(),
        }
    }
}

/// On-disk keypoints: one array of `[x, y, visible]` rows per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFile {
    pub frames: Vec<Vec<[f32; 3]>>,
}

impl KeypointFile {
    pub fn to_sequence(&self) -> Result<PoseSequence> {
        PoseSequence::new(self.frames.iter().map(|r| Pose::from_rows(r)).collect::<Result<_>>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visible_joints_must_be_in_range() {
        assert!(Pose::visible(vec![[0.5, 1.2]]).is_err());
        assert!(Pose::new(vec![[0.5, 1.2]], vec![false]).is_ok());
        assert!(Pose::new(vec![[0.5, 0.5]], vec![true, false]).is_err());
    }

    #[test]
    fn rows_round_trip() {
        let p = Pose::new(vec![[0.1, 0.2], [0.3, 0.4]], vec![true, false]).unwrap();
        assert_eq!(Pose::from_rows(&p.to_rows()).unwrap(), p);
        let seq = PoseSequence::new(vec![p.clone(), p]).unwrap();
        assert_eq!(seq.to_file().to_sequence().unwrap(), seq);
    }

    #[test]
    fn sequence_requires_uniform_joint_count() {
        let a = Pose::visible(vec![[0.1, 0.2]]).unwrap();
        let b = Pose::visible(vec![[0.1, 0.2], [0.2, 0.2]]).unwrap();
        assert!(PoseSequence::new(vec![a, b]).is_err());
    }
}
