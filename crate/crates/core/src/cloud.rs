use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    World,
    Gripper,
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Maps every point through `pose`, relabelling the frame.
    pub fn transformed(&self, pose: &Pose, frame: Frame) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| pose.act(p)).collect(), frame)
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len().max(1) as f64
    }

    /// Fails unless the cloud is non-empty and labelled `frame`.
    pub fn expect(&self, frame: Frame, what: &str) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidInput(format!("{what}: point cloud is empty")));
        }
        if self.frame != frame {
            return Err(Error::InvalidInput(format!(
                "{what}: expected a {frame:?}-frame cloud, got {:?}",
                self.frame
            )));
        }
        Ok(())
    }
}
