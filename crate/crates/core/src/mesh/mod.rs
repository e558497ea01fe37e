//! Watertight triangle meshes with exact signed-distance queries.
//!
//! Signs come from angle-weighted pseudo-normals at the closest feature
//! (face, edge or vertex), which is exact for closed, consistently oriented
//! meshes. Construction rejects anything else.

mod bvh;
pub mod obj;
mod query;
pub mod shapes;

use std::collections::HashMap;

use log::warn;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};

pub use bvh::Aabb;
pub use query::{closest_point_on_triangle, Feature, SdfResult};

use bvh::Bvh;

/// Faces with area below this are dropped at construction.
pub const DEGENERATE_AREA: f64 = 1e-14;

/// Bookkeeping from mesh construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub degenerate_faces_removed: usize,
    pub orientation_flipped: bool,
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    face_normals: Vec<Vector3<f64>>,
    face_areas: Vec<f64>,
    vertex_normals: Vec<Vector3<f64>>,
    // Pseudo-normal of edge k (vertices k -> k+1) of each face.
    edge_normals: Vec<[Vector3<f64>; 3]>,
    bvh: Bvh,
    report: LoadReport,
}

impl TriangleMesh {
    /// Validates and preprocesses an indexed triangle soup.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i as usize >= n {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index: i as usize,
                        count: n,
                    });
                }
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidInput("non-finite vertex coordinate".into()));
        }

        let mut report = LoadReport::default();
        let mut kept = Vec::with_capacity(faces.len());
        for f in faces {
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            if 0.5 * (b - a).cross(&(c - a)).norm() < DEGENERATE_AREA {
                report.degenerate_faces_removed += 1;
            } else {
                kept.push(f);
            }
        }
        if report.degenerate_faces_removed > 0 {
            warn!(
                "removed {} degenerate face(s) during mesh load",
                report.degenerate_faces_removed
            );
        }
        if kept.is_empty() {
            return Err(Error::DegenerateFace);
        }
        check_watertight(&kept)?;

        let mut faces = kept;
        if signed_volume(&vertices, &faces) < 0.0 {
            for f in &mut faces {
                f.swap(1, 2);
            }
            report.orientation_flipped = true;
        }

        let mut face_normals = Vec::with_capacity(faces.len());
        let mut face_areas = Vec::with_capacity(faces.len());
        let mut vertex_normals = vec![Vector3::zeros(); n];
        for f in &faces {
            let p = f.map(|i| vertices[i as usize]);
            let cross = (p[1] - p[0]).cross(&(p[2] - p[0]));
            let area = 0.5 * cross.norm();
            let normal = cross.normalize();
            for k in 0..3 {
                let e1 = (p[(k + 1) % 3] - p[k]).normalize();
                let e2 = (p[(k + 2) % 3] - p[k]).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vertex_normals[f[k] as usize] += normal * angle;
            }
            face_normals.push(normal);
            face_areas.push(area);
        }
        for v in &mut vertex_normals {
            let len = v.norm();
            if len > 0.0 {
                *v /= len;
            }
        }

        let mut edge_sum: HashMap<(u32, u32), Vector3<f64>> = HashMap::new();
        for (f, nrm) in faces.iter().zip(&face_normals) {
            for k in 0..3 {
                let key = edge_key(f[k], f[(k + 1) % 3]);
                *edge_sum.entry(key).or_insert_with(Vector3::zeros) += nrm;
            }
        }
        let edge_normals = faces
            .iter()
            .zip(&face_normals)
            .map(|(f, nrm)| {
                std::array::from_fn(|k| {
                    let s = edge_sum[&edge_key(f[k], f[(k + 1) % 3])];
                    // Opposite faces on a knife edge sum to zero; fall back to the face.
                    if s.norm() > 1e-12 {
                        s.normalize()
                    } else {
                        *nrm
                    }
                })
            })
            .collect();

        let bvh = Bvh::build(&vertices, &faces);
        Ok(Self {
            vertices,
            faces,
            face_normals,
            face_areas,
            vertex_normals,
            edge_normals,
            bvh,
            report,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn face_normals(&self) -> &[Vector3<f64>] {
        &self.face_normals
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn vertex_pseudo_normals(&self) -> &[Vector3<f64>] {
        &self.vertex_normals
    }

    pub fn edge_pseudo_normals(&self) -> &[[Vector3<f64>; 3]] {
        &self.edge_normals
    }

    pub fn load_report(&self) -> &LoadReport {
        &self.report
    }

    pub fn triangle(&self, face: usize) -> [Vector3<f64>; 3] {
        self.faces[face].map(|i| self.vertices[i as usize])
    }

    pub fn surface_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    pub fn volume(&self) -> f64 {
        signed_volume(&self.vertices, &self.faces)
    }

    /// Centroid of the enclosed solid.
    pub fn centroid(&self) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        let mut vol = 0.0;
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i as usize]);
            let v = a.dot(&b.cross(&c)) / 6.0;
            acc += (a + b + c) * (v / 4.0);
            vol += v;
        }
        acc / vol
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.root_bounds()
    }

    /// Exact signed distance with gradient and closest surface point.
    pub fn signed_distance(&self, q: &Vector3<f64>) -> SdfResult {
        let hit = self.bvh.nearest(q, &self.vertices, &self.faces);
        self.finish_query(q, hit)
    }

    pub fn batch_signed_distance(&self, cloud: &PointCloud) -> Vec<SdfResult> {
        cloud.points.iter().map(|p| self.signed_distance(p)).collect()
    }

    /// Area-weighted uniform surface samples in the mesh frame.
    pub fn sample_surface(&self, n: usize, seed: u64) -> PointCloud {
        let (points, _) = self.sample_surface_with_faces(n, seed);
        PointCloud::new(points, Frame::Object)
    }

    /// Like [`Self::sample_surface`], also returning the face of each sample.
    pub fn sample_surface_with_faces(&self, n: usize, seed: u64) -> (Vec<Vector3<f64>>, Vec<usize>) {
        let mut cdf = Vec::with_capacity(self.face_areas.len());
        let mut acc = 0.0;
        for a in &self.face_areas {
            acc += a;
            cdf.push(acc);
        }
        let total = acc;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * total;
            let fi = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let r1: f64 = rng.random::<f64>();
            let r2: f64 = rng.random::<f64>();
            let s = r1.sqrt();
            let [a, b, c] = self.triangle(fi);
            points.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
            ids.push(fi);
        }
        (points, ids)
    }

    /// Returns a copy with every vertex mapped through `f`. Orientation must be preserved.
    pub fn transformed(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Result<Self> {
        Self::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn check_watertight(faces: &[[u32; 3]]) -> Result<()> {
    let mut directed: HashMap<(u32, u32), usize> = HashMap::with_capacity(faces.len() * 3);
    for f in faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    let mut bad: Vec<_> = directed
        .iter()
        .filter(|(&(a, b), &count)| count != 1 || directed.get(&(b, a)).copied() != Some(1))
        .map(|(&(a, b), &count)| (a, b, count))
        .collect();
    bad.sort_unstable();
    match bad.first() {
        Some(&(a, b, count)) => Err(Error::NonWatertight(a, b, count)),
        None => Ok(()),
    }
}

fn signed_volume(vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> f64 {
    faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| vertices[i as usize]);
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}
