use nalgebra::Vector3;

use super::bvh::NearestHit;
use super::TriangleMesh;

/// On-surface threshold below which the gradient falls back to the pseudo-normal.
pub const ON_SURFACE_EPS: f64 = 1e-7;

/// Local feature of a triangle that holds the closest point.
/// Edge `k` joins vertices `k` and `k + 1 (mod 3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Face,
    Edge(u8),
    Vertex(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfResult {
    /// Signed distance, negative inside.
    pub value: f64,
    pub gradient: Vector3<f64>,
    pub closest_point: Vector3<f64>,
    pub face: usize,
    pub feature: Feature,
}

/// Closest point on triangle `tri` to `p` (Ericson's region test).
pub fn closest_point_on_triangle(p: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> (Vector3<f64>, Feature) {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}

impl TriangleMesh {
    fn pseudo_normal(&self, face: usize, feature: Feature) -> Vector3<f64> {
        match feature {
            Feature::Face => self.face_normals[face],
            Feature::Edge(k) => self.edge_normals[face][k as usize],
            Feature::Vertex(k) => self.vertex_normals[self.faces[face][k as usize] as usize],
        }
    }

    pub(super) fn finish_query(&self, q: &Vector3<f64>, hit: NearestHit) -> SdfResult {
        let normal = self.pseudo_normal(hit.face, hit.feature);
        let diff = q - hit.point;
        let dist = hit.distance_squared.sqrt();
        let value = if diff.dot(&normal) >= 0.0 { dist } else { -dist };
        let gradient = if dist > ON_SURFACE_EPS { diff / value } else { normal };
        SdfResult {
            value,
            gradient,
            closest_point: hit.point,
            face: hit.face,
            feature: hit.feature,
        }
    }
}
