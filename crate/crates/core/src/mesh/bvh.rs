use nalgebra::Vector3;

use super::query::{closest_point_on_triangle, Feature};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vector3<f64>) -> f64 {
        let d = (self.min - p).sup(&Vector3::zeros()).sup(&(p - self.max));
        d.norm_squared()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Median-split bounding-volume hierarchy over triangles.
#[derive(Debug, Clone)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

pub(crate) struct NearestHit {
    pub face: usize,
    pub point: Vector3<f64>,
    pub feature: Feature,
    pub distance_squared: f64,
}

impl Bvh {
    pub fn build(vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> Self {
        let boxes: Vec<Aabb> = faces
            .iter()
            .map(|f| {
                let mut b = Aabb::empty();
                for &i in f {
                    b.grow(&vertices[i as usize]);
                }
                b
            })
            .collect();
        let centers: Vec<Vector3<f64>> = boxes.iter().map(Aabb::center).collect();
        let mut bvh = Self {
            nodes: Vec::with_capacity(2 * faces.len() / LEAF_SIZE + 1),
            order: (0..faces.len()).collect(),
        };
        bvh.build_node(&boxes, &centers, 0, faces.len());
        bvh
    }

    fn build_node(&mut self, boxes: &[Aabb], centers: &[Vector3<f64>], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        for &i in &self.order[start..end] {
            bounds.merge(&boxes[i]);
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let mut cbounds = Aabb::empty();
        for &i in &self.order[start..end] {
            cbounds.grow(&centers[i]);
        }
        let axis = cbounds.extent().imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centers[a][axis].total_cmp(&centers[b][axis])
        });
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.build_node(boxes, centers, start, mid);
        let right = self.build_node(boxes, centers, mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    pub fn root_bounds(&self) -> Aabb {
        *self.nodes[0].bounds()
    }

    /// Exact nearest triangle to `q`.
    pub fn nearest(&self, q: &Vector3<f64>, vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> NearestHit {
        let mut best = NearestHit {
            face: usize::MAX,
            point: Vector3::zeros(),
            feature: Feature::Face,
            distance_squared: f64::INFINITY,
        };
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, self.nodes[0].bounds().distance_squared(q)));
        while let Some((id, d2)) = stack.pop() {
            if d2 > best.distance_squared {
                continue;
            }
            match &self.nodes[id] {
                Node::Leaf { start, end, .. } => {
                    for &fi in &self.order[*start..*end] {
                        let f = faces[fi];
                        let tri = f.map(|i| vertices[i as usize]);
                        let (p, feature) = closest_point_on_triangle(q, &tri);
                        let dd = (q - p).norm_squared();
                        // Ties go to the lower face index so results do not depend on traversal.
                        if dd < best.distance_squared || (dd == best.distance_squared && fi < best.face) {
                            best = NearestHit {
                                face: fi,
                                point: p,
                                feature,
                                distance_squared: dd,
                            };
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_squared(q);
                    let dr = self.nodes[*right].bounds().distance_squared(q);
                    // Push the farther child first so the nearer one is popped next.
                    if dl <= dr {
                        stack.push((*right, dr));
                        stack.push((*left, dl));
                    } else {
                        stack.push((*left, dl));
                        stack.push((*right, dr));
                    }
                }
            }
        }
        best
    }
}
