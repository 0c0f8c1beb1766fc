//! Indexed triangle meshes, rays and a few procedural surface builders.
//!
//! All lengths are meters. A [`TriMesh`] is validated on construction and
//! immutable afterwards; operations that change geometry return a new mesh.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Smallest triangle area accepted by [`TriMesh`] validation (m²).
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
    uv: Option<Vec<Vec2>>,
}

impl TriMesh {
    /// Builds a mesh and computes area-weighted vertex normals.
    ///
    /// Isolated vertices receive a +Z normal; use [`compute_vertex_normals`]
    /// directly to learn which ones.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>, uv: Option<Vec<Vec2>>) -> Result<Self> {
        validate_topology(&vertices, &faces, uv.as_deref())?;
        let (normals, _) = area_weighted_normals(&vertices, &faces);
        let mesh = TriMesh {
            vertices,
            faces,
            normals,
            uv,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh with caller-supplied normals (which must be unit length).
    pub fn with_normals(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        normals: Vec<Vec3>,
        uv: Option<Vec<Vec2>>,
    ) -> Result<Self> {
        validate_topology(&vertices, &faces, uv.as_deref())?;
        if normals.len() != vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} normals for {} vertices",
                normals.len(),
                vertices.len()
            )));
        }
        let mesh = TriMesh {
            vertices,
            faces,
            normals,
            uv,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn uv(&self) -> Option<&[Vec2]> {
        self.uv.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Point on `face` with the given barycentric weights.
    pub fn interpolate_position(&self, face: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.faces[face];
        self.vertices[a as usize] * bary[0]
            + self.vertices[b as usize] * bary[1]
            + self.vertices[c as usize] * bary[2]
    }

    /// Interpolated and renormalized vertex normal on `face`.
    pub fn interpolate_normal(&self, face: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.faces[face];
        let n = self.normals[a as usize] * bary[0]
            + self.normals[b as usize] * bary[1]
            + self.normals[c as usize] * bary[2];
        let len = n.norm();
        if len > 1e-12 {
            n / len
        } else {
            self.face_normal(face)
        }
    }

    pub fn interpolate_uv(&self, face: usize, bary: [f64; 3]) -> Option<Vec2> {
        let uv = self.uv.as_ref()?;
        let [a, b, c] = self.faces[face];
        Some(uv[a as usize] * bary[0] + uv[b as usize] * bary[1] + uv[c as usize] * bary[2])
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Same topology and UVs, new positions; normals are recomputed.
    ///
    /// Deformed meshes may collapse faces, so only finiteness is checked.
    pub fn with_positions(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Mismatch(format!(
                "{} positions for a mesh with {} vertices",
                vertices.len(),
                self.vertices.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        let (normals, _) = area_weighted_normals(&vertices, &self.faces);
        Ok(TriMesh {
            vertices,
            faces: self.faces.clone(),
            normals,
            uv: self.uv.clone(),
        })
    }

    /// Replaces the normals, keeping everything else.
    pub fn with_replaced_normals(&self, normals: Vec<Vec3>) -> Result<Self> {
        TriMesh::with_normals(
            self.vertices.clone(),
            self.faces.clone(),
            normals,
            self.uv.clone(),
        )
    }

    pub fn translated(&self, t: Vec3) -> Result<Self> {
        self.with_positions(self.vertices.iter().map(|v| v + t).collect())
    }

    /// Concatenates meshes into one, offsetting face indices.
    ///
    /// UVs are kept only if every part has them. Normals are carried over
    /// unchanged rather than recomputed.
    pub fn concat(parts: &[TriMesh]) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut normals = Vec::new();
        let keep_uv = parts.iter().all(|p| p.uv.is_some());
        let mut uv = Vec::new();
        for part in parts {
            let base = vertices.len() as u32;
            vertices.extend_from_slice(&part.vertices);
            normals.extend_from_slice(&part.normals);
            faces.extend(part.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
            if keep_uv {
                uv.extend_from_slice(part.uv.as_ref().unwrap());
            }
        }
        TriMesh::with_normals(vertices, faces, normals, keep_uv.then_some(uv))
    }

    /// Checks every mesh invariant.
    pub fn validate(&self) -> Result<()> {
        validate_topology(&self.vertices, &self.faces, self.uv.as_deref())?;
        for (i, n) in self.normals.iter().enumerate() {
            if ((n.norm()) - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidMesh(format!(
                    "normal {i} has length {} (expected unit length)",
                    n.norm()
                )));
            }
        }
        Ok(())
    }
}

fn validate_topology(vertices: &[Vec3], faces: &[[u32; 3]], uv: Option<&[Vec2]>) -> Result<()> {
    let n = vertices.len();
    for (i, v) in vertices.iter().enumerate() {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
    }
    for (fi, f) in faces.iter().enumerate() {
        for &idx in f {
            if idx as usize >= n {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex {idx} but the mesh has {n} vertices"
                )));
            }
        }
        let [a, b, c] = [
            vertices[f[0] as usize],
            vertices[f[1] as usize],
            vertices[f[2] as usize],
        ];
        let area = 0.5 * (b - a).cross(&(c - a)).norm();
        if !(area > MIN_TRIANGLE_AREA) {
            return Err(Error::InvalidMesh(format!(
                "face {fi} has area {area:e} m² (minimum {MIN_TRIANGLE_AREA:e})"
            )));
        }
    }
    if let Some(uv) = uv {
        if uv.len() != n {
            return Err(Error::InvalidMesh(format!(
                "{} uv coordinates for {n} vertices",
                uv.len()
            )));
        }
        for (i, t) in uv.iter().enumerate() {
            if !(0.0..=1.0).contains(&t.x) || !(0.0..=1.0).contains(&t.y) {
                return Err(Error::InvalidMesh(format!(
                    "uv coordinate {i} = ({}, {}) outside [0,1]²",
                    t.x, t.y
                )));
            }
        }
    }
    Ok(())
}

fn area_weighted_normals(vertices: &[Vec3], faces: &[[u32; 3]]) -> (Vec<Vec3>, Vec<usize>) {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = [
            vertices[f[0] as usize],
            vertices[f[1] as usize],
            vertices[f[2] as usize],
        ];
        // Cross product length is twice the area: this is the area weighting.
        let n = (b - a).cross(&(c - a));
        for &i in f {
            acc[i as usize] += n;
        }
    }
    let mut isolated = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                isolated.push(i);
                Vec3::z()
            }
        })
        .collect();
    (normals, isolated)
}

/// Recomputes area-weighted vertex normals.
///
/// Returns the new mesh and the indices of isolated vertices (no incident
/// face), whose normal was set to +Z.
pub fn compute_vertex_normals(mesh: &TriMesh) -> (TriMesh, Vec<usize>) {
    let (normals, isolated) = area_weighted_normals(&mesh.vertices, &mesh.faces);
    let out = TriMesh {
        vertices: mesh.vertices.clone(),
        faces: mesh.faces.clone(),
        normals,
        uv: mesh.uv.clone(),
    };
    (out, isolated)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Vec3,
    direction: Vec3,
}

impl Ray {
    /// Creates a ray; the direction is normalized.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let len = direction.norm();
        if !(len > 1e-300) || !len.is_finite() || !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ray with origin {origin:?} and direction {direction:?}"
            )));
        }
        Ok(Ray {
            origin,
            direction: direction / len,
        })
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn direction(&self) -> Vec3 {
        self.direction
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// An orthonormal frame used by the surface builders. `axis = e1 × e2`.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub axis: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl Frame {
    pub fn from_axis(axis: Vec3) -> Frame {
        let axis = axis.normalize();
        let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let e1 = helper.cross(&axis).normalize();
        let e2 = axis.cross(&e1);
        Frame { axis, e1, e2 }
    }
}

/// One cross-section ring of a [`lathe`] surface: an ellipse centered at
/// `center` in the plane spanned by the frame's `e1`/`e2`.
#[derive(Debug, Clone, Copy)]
pub struct Ring {
    pub center: Vec3,
    pub radius1: f64,
    pub radius2: f64,
}

/// Closed surface of revolution between two poles.
///
/// `rings` lists interior cross-sections in axis order; the poles close the
/// surface at both ends. When `uv_rect = [u0, v0, width, height]` is given,
/// the surface is unwrapped cylindrically into that rectangle, with a seam
/// column of duplicated vertices and fan triangles at the poles.
pub fn lathe(
    frame: Frame,
    bottom_pole: Vec3,
    rings: &[Ring],
    top_pole: Vec3,
    segments: usize,
    uv_rect: Option<[f64; 4]>,
) -> Result<TriMesh> {
    if rings.is_empty() || segments < 3 {
        return Err(Error::InvalidArgument(
            "lathe needs at least one ring and three segments".into(),
        ));
    }
    let cols = if uv_rect.is_some() { segments + 1 } else { segments };
    let mut vertices = Vec::with_capacity(rings.len() * cols + 2);
    let mut uv = Vec::new();

    // Arc length of the profile curve on the e1 side drives the v coordinate.
    let mut s = vec![0.0];
    let mut prev_p = bottom_pole;
    for r in rings {
        let p = r.center + frame.e1 * r.radius1;
        s.push(s.last().unwrap() + (p - prev_p).norm());
        prev_p = p;
    }
    s.push(s.last().unwrap() + (top_pole - prev_p).norm());
    let total = *s.last().unwrap();

    vertices.push(bottom_pole);
    if let Some([u0, v0, w, _]) = uv_rect {
        uv.push(Vec2::new(u0 + 0.5 * w, v0));
    }
    for (i, r) in rings.iter().enumerate() {
        for j in 0..cols {
            let k = j % segments;
            let phi = std::f64::consts::TAU * k as f64 / segments as f64;
            let p = r.center
                + frame.e1 * (r.radius1 * phi.cos())
                + frame.e2 * (r.radius2 * phi.sin());
            vertices.push(p);
            if let Some([u0, v0, w, h]) = uv_rect {
                uv.push(Vec2::new(
                    u0 + w * j as f64 / segments as f64,
                    v0 + h * s[i + 1] / total,
                ));
            }
        }
    }
    vertices.push(top_pole);
    if let Some([u0, v0, w, h]) = uv_rect {
        uv.push(Vec2::new(u0 + 0.5 * w, v0 + h));
    }

    let top = (vertices.len() - 1) as u32;
    let idx = |ring: usize, j: usize| -> u32 { (1 + ring * cols + (j % cols)) as u32 };
    let next = |j: usize| -> usize {
        if uv_rect.is_some() {
            j + 1
        } else {
            (j + 1) % segments
        }
    };
    let mut faces = Vec::new();
    for j in 0..segments {
        faces.push([0, idx(0, next(j)), idx(0, j)]);
    }
    for i in 0..rings.len() - 1 {
        for j in 0..segments {
            let a = idx(i, j);
            let b = idx(i, next(j));
            let c = idx(i + 1, next(j));
            let d = idx(i + 1, j);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    let last = rings.len() - 1;
    for j in 0..segments {
        faces.push([idx(last, j), idx(last, next(j)), top]);
    }
    let mesh = TriMesh::new(vertices, faces, uv_rect.map(|_| uv))?;
    Ok(weld_seam_normals(&mesh))
}

/// Open tube through the given rings (no caps). Faces are oriented so the
/// normals point away from the ring centers when the rings advance along
/// `frame.axis`.
pub fn tube(frame: Frame, rings: &[Ring], segments: usize) -> Result<TriMesh> {
    if rings.len() < 2 || segments < 3 {
        return Err(Error::InvalidArgument(
            "tube needs at least two rings and three segments".into(),
        ));
    }
    let mut vertices = Vec::with_capacity(rings.len() * segments);
    for r in rings {
        for j in 0..segments {
            let phi = std::f64::consts::TAU * j as f64 / segments as f64;
            vertices.push(
                r.center + frame.e1 * (r.radius1 * phi.cos()) + frame.e2 * (r.radius2 * phi.sin()),
            );
        }
    }
    let idx = |ring: usize, j: usize| -> u32 { (ring * segments + j % segments) as u32 };
    let mut faces = Vec::new();
    for i in 0..rings.len() - 1 {
        for j in 0..segments {
            let a = idx(i, j);
            let b = idx(i, j + 1);
            let c = idx(i + 1, j + 1);
            let d = idx(i + 1, j);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh::new(vertices, faces, None)
}

/// Averages normals of vertices that share a bit-identical position, so UV
/// seams do not produce creased normals.
pub fn weld_seam_normals(mesh: &TriMesh) -> TriMesh {
    use std::collections::HashMap;
    let mut groups: HashMap<[u64; 3], Vec<usize>> = HashMap::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        groups
            .entry([v.x.to_bits(), v.y.to_bits(), v.z.to_bits()])
            .or_default()
            .push(i);
    }
    let mut normals = mesh.normals.clone();
    for members in groups.values().filter(|m| m.len() > 1) {
        let sum: Vec3 = members.iter().map(|&i| mesh.normals[i]).sum();
        if sum.norm() > 1e-12 {
            let n = sum.normalize();
            for &i in members {
                normals[i] = n;
            }
        }
    }
    TriMesh {
        normals,
        ..mesh.clone()
    }
}

/// Sphere as a lathe surface with optional UV unwrap.
pub fn uv_sphere(
    center: Vec3,
    radius: f64,
    segments: usize,
    rings: usize,
    uv_rect: Option<[f64; 4]>,
) -> Result<TriMesh> {
    let frame = Frame::from_axis(Vec3::z());
    let profile: Vec<Ring> = (1..rings)
        .map(|i| {
            let theta = std::f64::consts::PI * i as f64 / rings as f64;
            let r = radius * theta.sin();
            Ring {
                center: center - frame.axis * (radius * theta.cos()),
                radius1: r,
                radius2: r,
            }
        })
        .collect();
    lathe(
        frame,
        center - frame.axis * radius,
        &profile,
        center + frame.axis * radius,
        segments,
        uv_rect,
    )
}

/// Icosahedron subdivided `subdivisions` times and projected onto a sphere.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriMesh {
    use std::collections::HashMap;
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts.into_iter().map(|v| v * radius).collect();
    TriMesh::new(verts, faces, None).expect("icosphere is a valid mesh")
}

/// Regular grid in the XY plane with `nx × ny` vertices, one diagonal per
/// quad, normals along +Z.
pub fn grid(nx: usize, ny: usize, spacing: f64) -> Result<TriMesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2×2 vertices".into()));
    }
    let mut vertices = Vec::with_capacity(nx * ny);
    let mut uv = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            uv.push(Vec2::new(
                i as f64 / (nx - 1) as f64,
                j as f64 / (ny - 1) as f64,
            ));
        }
    }
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = (j * nx + i) as u32;
            let b = a + 1;
            let c = a + nx as u32 + 1;
            let d = a + nx as u32;
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh::new(vertices, faces, Some(uv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_square_normals_point_up() {
        let m = grid(3, 3, 0.5).unwrap();
        for n in m.normals() {
            assert!((n - Vec3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn single_triangle_normals_equal_face_normal() {
        let m = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.2),
                Vec3::new(0.0, 1.0, 0.5),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let fnorm = m.face_normal(0);
        for n in m.normals() {
            assert!((n - fnorm).norm() < 1e-12);
        }
    }

    #[test]
    fn icosphere_normals_match_sphere_directions() {
        let m = icosphere(2, 1.0);
        let mut worst: f64 = 0.0;
        for (v, n) in m.vertices().iter().zip(m.normals()) {
            let cos = v.normalize().dot(n).clamp(-1.0, 1.0);
            worst = worst.max(cos.acos().to_degrees());
        }
        assert!(worst < 5.0, "max angle {worst}°");
    }

    #[test]
    fn isolated_vertex_is_reported() {
        let m = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(5.0, 5.0, 5.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let (out, isolated) = compute_vertex_normals(&m);
        assert_eq!(isolated, vec![3]);
        assert_eq!(out.normals()[3], Vec3::z());
    }

    #[test]
    fn rejects_bad_index_and_degenerate_face() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]], None).is_err());
        let line = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(TriMesh::new(line, vec![[0, 1, 2]], None).is_err());
        let bad_uv = Some(vec![Vec2::new(0.0, 0.0), Vec2::new(1.5, 0.0), Vec2::new(0.0, 1.0)]);
        assert!(TriMesh::new(v, vec![[0, 1, 2]], bad_uv).is_err());
    }

    #[test]
    fn lathe_normals_point_outward() {
        let s = uv_sphere(Vec3::new(0.3, -0.2, 1.0), 0.5, 24, 12, Some([0.0, 0.0, 1.0, 1.0])).unwrap();
        for (v, n) in s.vertices().iter().zip(s.normals()) {
            let radial = (v - Vec3::new(0.3, -0.2, 1.0)).normalize();
            assert!(radial.dot(n) > 0.95);
        }
        let t = tube(
            Frame::from_axis(Vec3::y()),
            &[
                Ring { center: Vec3::zeros(), radius1: 0.2, radius2: 0.2 },
                Ring { center: Vec3::y(), radius1: 0.2, radius2: 0.2 },
            ],
            16,
        )
        .unwrap();
        for (v, n) in t.vertices().iter().zip(t.normals()) {
            let radial = Vec3::new(v.x, 0.0, v.z).normalize();
            assert!(radial.dot(n) > 0.9);
        }
    }

    #[test]
    fn ray_direction_is_normalized() {
        let r = Ray::new(Vec3::zeros(), Vec3::new(0.0, 3.0, 4.0)).unwrap();
        assert!((r.direction().norm() - 1.0).abs() < 1e-15);
        assert!(Ray::new(Vec3::zeros(), Vec3::zeros()).is_err());
    }
}

/// Segment `a`–`b` swept by a sphere of `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    /// Closest point on the core segment and its segment parameter in [0,1].
    pub fn closest_on_segment(&self, p: &Vec3) -> (Vec3, f64) {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (self.a + ab * t, t)
    }

    /// Signed distance from `p` to the capsule surface (negative inside).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let (c, _) = self.closest_on_segment(p);
        (p - c).norm() - self.radius
    }
}
