//! Point-to-plane ICP of a point cloud against a triangle mesh.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::lie::{Pose, Twist};
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpParams {
    pub max_iters: usize,
    /// Stop when the relative fitness improvement falls below this.
    pub tol: f64,
    /// Correspondences farther than this (m) are rejected.
    pub max_corr_dist: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-8,
            max_corr_dist: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Transform taking source points onto the mesh.
    pub pose: Pose,
    /// Mean point-to-surface distance (m), each term capped at `max_corr_dist`.
    pub fitness: f64,
    pub iterations: usize,
    /// Fitness after the initial pose and each accepted iteration.
    pub trace: Vec<f64>,
}

fn fitness(source: &PointCloud, target: &TriangleMesh, pose: &Pose, cap: f64) -> f64 {
    let sum: f64 = source
        .points
        .iter()
        .map(|p| target.signed_distance(&pose.act(p)).value.abs().min(cap))
        .sum();
    sum / source.len() as f64
}

/// Aligns `source` to `target` starting from `init`. Running out of
/// iterations is not an error: the best pose seen is returned.
pub fn icp_register(source: &PointCloud, target: &TriangleMesh, init: Pose, params: &IcpParams) -> Result<IcpResult> {
    if source.is_empty() {
        return Err(Error::InvalidInput("icp: source cloud is empty".into()));
    }
    if params.max_iters == 0 {
        return Err(Error::InvalidInput("icp: max_iters must be at least 1".into()));
    }
    let cap = params.max_corr_dist;
    let mut pose = init;
    let mut fit = fitness(source, target, &pose, cap);
    let mut trace = vec![fit];
    let mut iterations = 0;

    while iterations < params.max_iters && fit > 1e-15 {
        iterations += 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        let mut inliers = 0usize;
        for p in &source.points {
            let y = pose.act(p);
            let s = target.signed_distance(&y);
            if s.value.abs() > cap {
                continue;
            }
            inliers += 1;
            let n = s.gradient;
            // Left perturbation exp(ξ)·pose moves y by ω × y + v.
            let yn = y.cross(&n);
            let j = Vector6::new(yn.x, yn.y, yn.z, n.x, n.y, n.z);
            h += j * j.transpose();
            g += j * s.value;
        }
        if inliers == 0 {
            break;
        }
        let svd = h.svd(true, true);
        let eps = svd.singular_values.max() * 1e-9;
        let Ok(step) = svd.solve(&(-g), eps) else {
            break;
        };
        let candidate = Pose::exp(&Twist::from(step)).compose(&pose);
        let cand_fit = fitness(source, target, &candidate, cap);
        if cand_fit > fit {
            break;
        }
        let rel = (fit - cand_fit) / fit.max(1e-300);
        pose = candidate;
        fit = cand_fit;
        trace.push(fit);
        if rel < params.tol {
            break;
        }
    }
    Ok(IcpResult {
        pose,
        fitness: fit,
        iterations,
        trace,
    })
}
