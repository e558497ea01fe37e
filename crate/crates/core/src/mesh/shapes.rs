//! Procedural watertight meshes: boxes and extruded polygons.
//!
//! Object shapes are returned with their volume centroid at the origin.

use nalgebra::{Vector2, Vector3};

use super::TriangleMesh;

/// Axis-aligned box centred at the origin.
pub fn box_mesh(size: Vector3<f64>) -> TriangleMesh {
    let (hx, hy) = (0.5 * size.x, 0.5 * size.y);
    let rect = [
        Vector2::new(-hx, -hy),
        Vector2::new(hx, -hy),
        Vector2::new(hx, hy),
        Vector2::new(-hx, hy),
    ];
    extrude(&rect, size.z)
}

/// Regular `segments`-gon prism approximating a cylinder along z.
pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    let poly: Vec<_> = (0..segments)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / segments as f64;
            Vector2::new(radius * a.cos(), radius * a.sin())
        })
        .collect();
    centred(extrude(&poly, height))
}

/// L-shaped prism: legs of length `long` (x) and `short` (y), leg width
/// `width`, extruded by `thickness` along z.
pub fn l_shape(long: f64, short: f64, width: f64, thickness: f64) -> TriangleMesh {
    let poly = [
        Vector2::new(0.0, 0.0),
        Vector2::new(long, 0.0),
        Vector2::new(long, width),
        Vector2::new(width, width),
        Vector2::new(width, short),
        Vector2::new(0.0, short),
    ];
    centred(extrude(&poly, thickness))
}

/// Flat open-end wrench: a handle with a slotted head, 6 mm thick.
pub fn wrench_like() -> TriangleMesh {
    let poly = [
        (0.0, -0.006),
        (0.09, -0.006),
        (0.09, -0.015),
        (0.12, -0.015),
        (0.12, -0.006),
        (0.105, -0.006),
        (0.105, 0.006),
        (0.12, 0.006),
        (0.12, 0.015),
        (0.09, 0.015),
        (0.09, 0.006),
        (0.0, 0.006),
    ]
    .map(|(x, y)| Vector2::new(x, y));
    centred(extrude(&poly, 0.006))
}

/// Table slab whose top face lies at `z = top`.
pub fn table(size: Vector3<f64>, top: f64) -> TriangleMesh {
    let b = box_mesh(size);
    b.transformed(|v| v + Vector3::new(0.0, 0.0, top - 0.5 * size.z))
        .expect("translated box stays valid")
}

/// Translates a mesh so its volume centroid is at the origin.
pub fn centred(mesh: TriangleMesh) -> TriangleMesh {
    let c = mesh.centroid();
    mesh.transformed(|v| v - c).expect("translation preserves validity")
}

/// Extrudes a simple counter-clockwise polygon to a closed prism spanning
/// `z ∈ [-thickness/2, thickness/2]`.
pub fn extrude(poly: &[Vector2<f64>], thickness: f64) -> TriangleMesh {
    let n = poly.len();
    let h = 0.5 * thickness;
    let mut vertices = Vec::with_capacity(2 * n);
    vertices.extend(poly.iter().map(|p| Vector3::new(p.x, p.y, -h)));
    vertices.extend(poly.iter().map(|p| Vector3::new(p.x, p.y, h)));
    let n32 = n as u32;
    let mut faces = Vec::with_capacity(4 * n);
    for [a, b, c] in ear_clip(poly) {
        faces.push([a + n32, b + n32, c + n32]);
        faces.push([c, b, a]);
    }
    for i in 0..n32 {
        let j = (i + 1) % n32;
        faces.push([i, j, j + n32]);
        faces.push([i, j + n32, i + n32]);
    }
    TriangleMesh::new(vertices, faces).expect("extruded simple polygon is watertight")
}

fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Ear-clipping triangulation of a simple CCW polygon.
fn ear_clip(poly: &[Vector2<f64>]) -> Vec<[u32; 3]> {
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut tris = Vec::with_capacity(poly.len().saturating_sub(2));
    let mut guard = 0;
    while idx.len() > 3 && guard < 10 * poly.len() * poly.len() {
        guard += 1;
        let m = idx.len();
        let mut clipped = false;
        for k in 0..m {
            let (ia, ib, ic) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (a, b, c) = (poly[ia], poly[ib], poly[ic]);
            if cross2(b - a, c - b) <= 1e-15 {
                continue;
            }
            let blocked = idx.iter().any(|&j| {
                if j == ia || j == ib || j == ic {
                    return false;
                }
                let p = poly[j];
                cross2(b - a, p - a) >= 0.0 && cross2(c - b, p - b) >= 0.0 && cross2(a - c, p - c) >= 0.0
            });
            if !blocked {
                tris.push([ia as u32, ib as u32, ic as u32]);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        assert!(clipped, "polygon is not simple or not counter-clockwise");
    }
    if idx.len() == 3 {
        tris.push([idx[0] as u32, idx[1] as u32, idx[2] as u32]);
    }
    tris
}
