//! Ray/mesh intersection: a median-split BVH and the brute-force reference.
//!
//! Both paths share the same triangle test so that their results agree
//! exactly, including ties (equal distance resolves to the lower face index).

use crate::error::{Error, Result};
use crate::geom::{Ray, TriMesh, Vec3};

pub const MAX_LEAF_SIZE: usize = 4;
pub const MAX_DEPTH: usize = 64;
/// Default near clip for rays cast from a surface point.
pub const DEFAULT_T_MIN: f64 = 1e-6;

const DET_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && self.max[k] >= other.max[k])
    }

    /// Slab test; returns the entry distance if the ray overlaps the box
    /// within `[t_min, t_max]`.
    fn ray_entry(&self, origin: &Vec3, inv_dir: &Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        let mut lo = t_min;
        let mut hi = t_max;
        for k in 0..3 {
            let t0 = (self.min[k] - origin[k]) * inv_dir[k];
            let t1 = (self.max[k] - origin[k]) * inv_dir[k];
            let (near, far) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
            // NaN (0 * inf) means the origin lies on the slab plane: no constraint.
            if !near.is_nan() {
                lo = lo.max(near);
            }
            if !far.is_nan() {
                hi = hi.min(far);
            }
            if lo > hi * (1.0 + 4.0 * f64::EPSILON) + 1e-12 {
                return None;
            }
        }
        Some(lo)
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Leaf { start: u32, count: u32 },
    Interior { left: u32, right: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    triangle_order: Vec<u32>,
    depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub face_index: usize,
    pub distance: f64,
    pub barycentric: [f64; 3],
}

fn triangle_bounds(mesh: &TriMesh, face: usize) -> Aabb {
    let mut b = Aabb::empty();
    for p in mesh.triangle(face) {
        b.grow(&p);
    }
    b
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Result<Bvh> {
        if mesh.face_count() == 0 {
            return Err(Error::InvalidMesh("cannot build a BVH over an empty mesh".into()));
        }
        let centroids: Vec<Vec3> = (0..mesh.face_count())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (a + b + c) / 3.0
            })
            .collect();
        let bounds: Vec<Aabb> = (0..mesh.face_count())
            .map(|f| triangle_bounds(mesh, f))
            .collect();
        let mut order: Vec<u32> = (0..mesh.face_count() as u32).collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * mesh.face_count() / MAX_LEAF_SIZE + 1),
            triangle_order: Vec::new(),
            depth: 0,
        };
        bvh.nodes.push(BvhNode {
            bounds: Aabb::empty(),
            kind: NodeKind::Leaf { start: 0, count: 0 },
        });
        let n = order.len();
        bvh.build_node(0, &mut order, 0, n, &centroids, &bounds, 1);
        bvh.triangle_order = order;
        Ok(bvh)
    }

    #[allow(clippy::too_many_arguments)]
    fn build_node(
        &mut self,
        node: usize,
        order: &mut [u32],
        start: usize,
        end: usize,
        centroids: &[Vec3],
        bounds: &[Aabb],
        depth: usize,
    ) {
        self.depth = self.depth.max(depth);
        let mut node_bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &order[start..end] {
            node_bounds = node_bounds.union(&bounds[f as usize]);
            cbounds.grow(&centroids[f as usize]);
        }
        let count = end - start;
        let extent = cbounds.max - cbounds.min;
        let axis = extent.imax();
        if count <= MAX_LEAF_SIZE || depth >= MAX_DEPTH || !(extent[axis] > 0.0) {
            // Identical centroids cannot be split: the forced leaf may then
            // exceed MAX_LEAF_SIZE.
            self.nodes[node] = BvhNode {
                bounds: node_bounds,
                kind: NodeKind::Leaf {
                    start: start as u32,
                    count: count as u32,
                },
            };
            return;
        }
        let mid = start + count / 2;
        order[start..end].select_nth_unstable_by(count / 2, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = self.nodes.len();
        let empty = BvhNode {
            bounds: Aabb::empty(),
            kind: NodeKind::Leaf { start: 0, count: 0 },
        };
        self.nodes.push(empty);
        self.nodes.push(empty);
        self.nodes[node] = BvhNode {
            bounds: node_bounds,
            kind: NodeKind::Interior {
                left: left as u32,
                right: left as u32 + 1,
            },
        };
        self.build_node(left, order, start, mid, centroids, bounds, depth + 1);
        self.build_node(left + 1, order, mid, end, centroids, bounds, depth + 1);
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    pub fn triangle_order(&self) -> &[u32] {
        &self.triangle_order
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Nearest hit with distance in `(t_min, t_max]`.
    pub fn intersect(&self, mesh: &TriMesh, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        let origin = ray.origin();
        let dir = ray.direction();
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<Hit> = None;
        let mut stack: Vec<u32> = Vec::with_capacity(2 * MAX_DEPTH);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            let limit = best.map_or(t_max, |h| h.distance);
            if node.bounds.ray_entry(&origin, &inv, t_min, limit).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.triangle_order[start as usize..(start + count) as usize] {
                        if let Some(hit) = intersect_triangle(mesh, f as usize, ray, t_min, t_max) {
                            if is_better(&hit, best.as_ref()) {
                                best = Some(hit);
                            }
                        }
                    }
                }
                NodeKind::Interior { left, right } => {
                    let l = self.nodes[left as usize].bounds.ray_entry(&origin, &inv, t_min, limit);
                    let r = self.nodes[right as usize].bounds.ray_entry(&origin, &inv, t_min, limit);
                    // Push the farther child first so the nearer one is visited first.
                    match (l, r) {
                        (Some(tl), Some(tr)) => {
                            if tl <= tr {
                                stack.push(right);
                                stack.push(left);
                            } else {
                                stack.push(left);
                                stack.push(right);
                            }
                        }
                        (Some(_), None) => stack.push(left),
                        (None, Some(_)) => stack.push(right),
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }

    /// Closest point on the mesh surface to `p`: `(face, barycentric, distance)`.
    pub fn closest_point(&self, mesh: &TriMesh, p: &Vec3) -> (usize, [f64; 3], f64) {
        let mut best = (usize::MAX, [1.0, 0.0, 0.0], f64::INFINITY);
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.distance_squared(p) > best.2 * best.2 {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.triangle_order[start as usize..(start + count) as usize] {
                        let [a, b, c] = mesh.triangle(f as usize);
                        let (q, bary) = closest_point_on_triangle(p, &a, &b, &c);
                        let d = (q - p).norm();
                        if d < best.2 || (d == best.2 && (f as usize) < best.0) {
                            best = (f as usize, bary, d);
                        }
                    }
                }
                NodeKind::Interior { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best
    }
}

fn is_better(hit: &Hit, best: Option<&Hit>) -> bool {
    match best {
        None => true,
        Some(b) => {
            hit.distance < b.distance || (hit.distance == b.distance && hit.face_index < b.face_index)
        }
    }
}

/// Möller–Trumbore test against one face, distance in `(t_min, t_max]`.
pub fn intersect_triangle(
    mesh: &TriMesh,
    face: usize,
    ray: &Ray,
    t_min: f64,
    t_max: f64,
) -> Option<Hit> {
    let [v0, v1, v2] = mesh.triangle(face);
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let dir = ray.direction();
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < DET_EPSILON * e1.norm() * e2.norm() {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = ray.origin() - v0;
    let u = s.dot(&p) * inv_det;
    const EDGE_TOL: f64 = 1e-12;
    if u < -EDGE_TOL || u > 1.0 + EDGE_TOL {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv_det;
    if v < -EDGE_TOL || u + v > 1.0 + EDGE_TOL {
        return None;
    }
    let t = e2.dot(&q) * inv_det;
    if !(t > t_min && t <= t_max) {
        return None;
    }
    let mut bary = [1.0 - u - v, u, v];
    for b in &mut bary {
        *b = b.max(0.0);
    }
    let sum: f64 = bary.iter().sum();
    for b in &mut bary {
        *b /= sum;
    }
    Some(Hit {
        face_index: face,
        distance: t,
        barycentric: bary,
    })
}

/// Reference intersector: tests every face.
pub fn brute_force_intersect(mesh: &TriMesh, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for f in 0..mesh.face_count() {
        if let Some(hit) = intersect_triangle(mesh, f, ray, t_min, t_max) {
            if is_better(&hit, best.as_ref()) {
                best = Some(hit);
            }
        }
    }
    best
}

/// Closest point on triangle `abc` to `p`, with its barycentric weights.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{grid, icosphere, TriMesh};

    fn unit_triangle() -> TriMesh {
        TriMesh::new(
            vec![
                Vec3::new(-1.0, -1.0, 0.0),
                Vec3::new(1.0, -1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn axis_aligned_hit() {
        let m = unit_triangle();
        let bvh = Bvh::build(&m).unwrap();
        let ray = Ray::new(Vec3::new(0.0, 0.0, -1.0), Vec3::z()).unwrap();
        let hit = bvh.intersect(&m, &ray, 0.0, 10.0).unwrap();
        assert!((hit.distance - 1.0).abs() < 1e-15);
        assert!((hit.barycentric.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(Some(hit), brute_force_intersect(&m, &ray, 0.0, 10.0));
    }

    #[test]
    fn parallel_ray_misses() {
        let m = unit_triangle();
        let bvh = Bvh::build(&m).unwrap();
        let ray = Ray::new(Vec3::new(-5.0, 0.0, 0.0), Vec3::x()).unwrap();
        assert!(bvh.intersect(&m, &ray, 0.0, 100.0).is_none());
        assert!(brute_force_intersect(&m, &ray, 0.0, 100.0).is_none());
    }

    #[test]
    fn single_triangle_is_single_leaf() {
        let bvh = Bvh::build(&unit_triangle()).unwrap();
        assert_eq!(bvh.node_count(), 1);
        assert!(matches!(bvh.nodes()[0].kind, NodeKind::Leaf { count: 1, .. }));
    }

    #[test]
    fn grid_node_count_in_expected_range() {
        // 17×33 vertices → 16·32·2 = 1024 triangles.
        let m = grid(17, 33, 0.01).unwrap();
        assert_eq!(m.face_count(), 1024);
        let bvh = Bvh::build(&m).unwrap();
        assert!((511..=2047).contains(&bvh.node_count()), "{}", bvh.node_count());
        assert!(bvh.depth() <= MAX_DEPTH);
    }

    #[test]
    fn identical_centroids_terminate() {
        // Ten copies of the same triangle.
        let mut v = Vec::new();
        let mut f = Vec::new();
        for i in 0..10u32 {
            v.extend_from_slice(&[Vec3::zeros(), Vec3::x(), Vec3::y()]);
            f.push([3 * i, 3 * i + 1, 3 * i + 2]);
        }
        let m = TriMesh::new(v, f, None).unwrap();
        let bvh = Bvh::build(&m).unwrap();
        assert_eq!(bvh.node_count(), 1);
        let ray = Ray::new(Vec3::new(0.2, 0.2, 1.0), -Vec3::z()).unwrap();
        // Tie: lowest face index wins.
        assert_eq!(bvh.intersect(&m, &ray, 0.0, 5.0).unwrap().face_index, 0);
    }

    #[test]
    fn bvh_structure_invariants() {
        let m = icosphere(3, 1.0);
        let bvh = Bvh::build(&m).unwrap();
        let mut seen = vec![false; m.face_count()];
        for &f in bvh.triangle_order() {
            assert!(!seen[f as usize]);
            seen[f as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
        for node in bvh.nodes() {
            if let NodeKind::Leaf { start, count } = node.kind {
                for &f in &bvh.triangle_order()[start as usize..(start + count) as usize] {
                    assert!(node.bounds.contains(&triangle_bounds(&m, f as usize)));
                }
            }
        }
    }

    #[test]
    fn closest_point_matches_projection() {
        let m = icosphere(2, 1.0);
        let bvh = Bvh::build(&m).unwrap();
        let p = Vec3::new(0.0, 0.0, 2.0);
        let (face, bary, d) = bvh.closest_point(&m, &p);
        let q = m.interpolate_position(face, bary);
        assert!(((q - p).norm() - d).abs() < 1e-12);
        assert!((d - 1.0).abs() < 0.02);
    }
}
