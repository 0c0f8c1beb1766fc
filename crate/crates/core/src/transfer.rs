//! Body ↔ garment correspondence by normal-ray casting, garment offset maps
//! and garment reconstruction from offsets.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Ray, TriMesh, Vec2, Vec3};
use crate::raycast::{Bvh, Hit, DEFAULT_T_MIN};
use crate::uvbake::{Semantic, UVMap, UvTransferMap};

/// Longest accepted ray between body and garment, in meters.
pub const MAX_RAY_LENGTH: f64 = 0.5;
/// Radius in pixels of the nearest-valid search used when bilinear sampling
/// finds no valid neighbor.
pub const FALLBACK_RADIUS: usize = 3;
/// Minimum share of garment vertices that must be bound or projected.
pub const MIN_BOUND_FRACTION: f64 = 0.95;

const NO_CHART: u16 = u16::MAX;

/// Per body pixel: the garment surface point hit by the outward normal ray.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyToClothTransfer {
    template: String,
    size: usize,
    body_vertices: usize,
    garment_vertices: usize,
    hits: Vec<Option<Hit>>,
}

impl BodyToClothTransfer {
    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn hits(&self) -> &[Option<Hit>] {
        &self.hits
    }

    pub fn hit_count(&self) -> usize {
        self.hits.iter().filter(|h| h.is_some()).count()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.hits.iter().map(Option::is_some).collect()
    }
}

pub fn compute_body_to_cloth(
    template: &str,
    body_tpose: &TriMesh,
    body_uv: &UvTransferMap,
    garment_tpose: &TriMesh,
) -> Result<BodyToClothTransfer> {
    if body_uv.vertex_count() != body_tpose.vertex_count() {
        return Err(Error::Mismatch("UV layout does not belong to this body mesh".into()));
    }
    let bvh = Bvh::build(garment_tpose)?;
    let hits = body_uv
        .samples()
        .iter()
        .map(|s| {
            let s = s.as_ref()?;
            let f = s.face as usize;
            let origin = body_tpose.interpolate_position(f, s.barycentric);
            let dir = body_tpose.interpolate_normal(f, s.barycentric);
            let ray = Ray::new(origin, dir).ok()?;
            bvh.intersect(garment_tpose, &ray, DEFAULT_T_MIN, MAX_RAY_LENGTH)
        })
        .collect();
    Ok(BodyToClothTransfer {
        template: template.to_string(),
        size: body_uv.size(),
        body_vertices: body_tpose.vertex_count(),
        garment_vertices: garment_tpose.vertex_count(),
        hits,
    })
}

/// Offset map `garment point − body point` for one posed frame.
pub fn bake_offsets(
    t_bc: &BodyToClothTransfer,
    body_frame: &TriMesh,
    garment_frame: &TriMesh,
    body_uv: &UvTransferMap,
) -> Result<UVMap> {
    if body_frame.vertex_count() != t_bc.body_vertices || body_uv.vertex_count() != t_bc.body_vertices {
        return Err(Error::Mismatch(format!(
            "body frame has {} vertices, transfer expects {}",
            body_frame.vertex_count(),
            t_bc.body_vertices
        )));
    }
    if garment_frame.vertex_count() != t_bc.garment_vertices {
        return Err(Error::Mismatch(format!(
            "garment frame has {} vertices, transfer expects {}",
            garment_frame.vertex_count(),
            t_bc.garment_vertices
        )));
    }
    if body_uv.size() != t_bc.size {
        return Err(Error::Mismatch("UV layout resolution differs from transfer".into()));
    }
    let data = t_bc
        .hits
        .iter()
        .zip(body_uv.samples())
        .map(|(h, s)| match (h, s) {
            (Some(h), Some(s)) => {
                let g = garment_frame.interpolate_position(h.face_index, h.barycentric);
                let b = body_frame.interpolate_position(s.face as usize, s.barycentric);
                let d = g - b;
                [d.x, d.y, d.z]
            }
            _ => [0.0; 3],
        })
        .collect();
    UVMap::new(t_bc.size, Semantic::Offset, data, t_bc.mask())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindStatus {
    /// Inward normal ray hit the body.
    Ray,
    /// Projected to the closest body point.
    Fallback,
    Unbound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexBinding {
    pub status: BindStatus,
    pub face: u32,
    pub barycentric: [f64; 3],
    pub uv: Vec2,
    pub distance: f64,
    pub chart: u16,
}

/// Per garment vertex: where it attaches on the body and its body UV.
///
/// Also carries the chart id of each body pixel, so that offset sampling
/// never blends pixels from neighboring UV islands.
#[derive(Debug, Clone, PartialEq)]
pub struct GarmentBinding {
    size: usize,
    body_vertices: usize,
    vertices: Vec<VertexBinding>,
    pixel_charts: Vec<u16>,
}

impl GarmentBinding {
    pub fn vertices(&self) -> &[VertexBinding] {
        &self.vertices
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn count(&self, status: BindStatus) -> usize {
        self.vertices.iter().filter(|v| v.status == status).count()
    }

    /// Share of vertices bound by ray or fallback.
    pub fn bound_fraction(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        1.0 - self.count(BindStatus::Unbound) as f64 / self.vertices.len() as f64
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(16 + self.vertices.len() * 67 + self.pixel_charts.len() * 2);
        buf.extend_from_slice(b"GBD1");
        buf.extend_from_slice(&(self.vertices.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.size as u32).to_le_bytes());
        buf.extend_from_slice(&(self.body_vertices as u32).to_le_bytes());
        for v in &self.vertices {
            buf.push(match v.status {
                BindStatus::Ray => 0,
                BindStatus::Fallback => 1,
                BindStatus::Unbound => 2,
            });
            buf.extend_from_slice(&v.face.to_le_bytes());
            for x in v.barycentric.iter().chain([v.uv.x, v.uv.y, v.distance].iter()) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            buf.extend_from_slice(&v.chart.to_le_bytes());
        }
        for c in &self.pixel_charts {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read) -> Result<GarmentBinding> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Format(format!("binding read failed: {e}")))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != b"GBD1" {
            return Err(Error::Format("not a GBD1 file".into()));
        }
        let n = cur.u32()? as usize;
        let size = cur.u32()? as usize;
        let body_vertices = cur.u32()? as usize;
        let mut vertices = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let status = match cur.take(1)?[0] {
                0 => BindStatus::Ray,
                1 => BindStatus::Fallback,
                2 => BindStatus::Unbound,
                s => return Err(Error::Format(format!("bad binding status {s}"))),
            };
            let face = cur.u32()?;
            let barycentric = [cur.f64()?, cur.f64()?, cur.f64()?];
            let uv = Vec2::new(cur.f64()?, cur.f64()?);
            let distance = cur.f64()?;
            let chart = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
            vertices.push(VertexBinding {
                status,
                face,
                barycentric,
                uv,
                distance,
                chart,
            });
        }
        let mut pixel_charts = Vec::with_capacity(size * size);
        for _ in 0..size * size {
            pixel_charts.push(u16::from_le_bytes(cur.take(2)?.try_into().unwrap()));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes in binding file".into()));
        }
        Ok(GarmentBinding {
            size,
            body_vertices,
            vertices,
            pixel_charts,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GarmentBinding> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        GarmentBinding::read_from(&mut bytes.as_slice())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("truncated binding file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Connected component id of each face (faces sharing a vertex are connected).
pub fn face_charts(mesh: &TriMesh) -> Vec<u16> {
    let n = mesh.vertex_count();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for f in mesh.faces() {
        let a = find(&mut parent, f[0] as usize);
        for &v in &f[1..] {
            let b = find(&mut parent, v as usize);
            if a != b {
                parent[b] = a;
            }
        }
    }
    let mut ids = std::collections::HashMap::new();
    mesh.faces()
        .iter()
        .map(|f| {
            let root = find(&mut parent, f[0] as usize);
            let next = ids.len() as u16;
            *ids.entry(root).or_insert(next)
        })
        .collect()
}

pub fn bind_garment(garment: &TriMesh, body_tpose: &TriMesh, body_uv: &UvTransferMap) -> Result<GarmentBinding> {
    if body_uv.vertex_count() != body_tpose.vertex_count() {
        return Err(Error::Mismatch("UV layout does not belong to this body mesh".into()));
    }
    if body_tpose.uv().is_none() {
        return Err(Error::InvalidMesh("body mesh has no uv coordinates".into()));
    }
    let charts = face_charts(body_tpose);
    let pixel_charts = body_uv
        .samples()
        .iter()
        .map(|s| s.map_or(NO_CHART, |s| charts[s.face as usize]))
        .collect();
    let bvh = Bvh::build(body_tpose)?;
    let vertices: Vec<VertexBinding> = garment
        .vertices()
        .iter()
        .zip(garment.normals())
        .map(|(p, n)| {
            let hit = Ray::new(*p, -n)
                .ok()
                .and_then(|ray| bvh.intersect(body_tpose, &ray, DEFAULT_T_MIN, MAX_RAY_LENGTH));
            let (status, face, bary, distance) = match hit {
                Some(h) => (BindStatus::Ray, h.face_index, h.barycentric, h.distance),
                None => {
                    let (face, bary, d) = bvh.closest_point(body_tpose, p);
                    let status = if d <= MAX_RAY_LENGTH {
                        BindStatus::Fallback
                    } else {
                        BindStatus::Unbound
                    };
                    (status, face, bary, d)
                }
            };
            VertexBinding {
                status,
                face: face as u32,
                barycentric: bary,
                uv: body_tpose.interpolate_uv(face, bary).unwrap(),
                distance,
                chart: charts[face],
            }
        })
        .collect();
    let binding = GarmentBinding {
        size: body_uv.size(),
        body_vertices: body_tpose.vertex_count(),
        vertices,
        pixel_charts,
    };
    let fraction = binding.bound_fraction();
    if fraction < MIN_BOUND_FRACTION {
        return Err(Error::IncompatibleGarment { fraction });
    }
    Ok(binding)
}

/// Offset at `uv` from pixels of the given chart that are valid in `offsets`.
///
/// Bilinear over the four surrounding pixel centers with invalid neighbors
/// dropped and weights renormalized; if none is usable, the nearest usable
/// pixel within [`FALLBACK_RADIUS`].
pub fn sample_offset(offsets: &UVMap, pixel_charts: &[u16], chart: u16, uv: Vec2) -> Option<Vec3> {
    let size = offsets.size();
    let usable = |row: isize, col: isize| -> Option<[f64; 3]> {
        if row < 0 || col < 0 || row >= size as isize || col >= size as isize {
            return None;
        }
        let i = row as usize * size + col as usize;
        if pixel_charts[i] != chart {
            return None;
        }
        offsets.get(row as usize, col as usize)
    };
    let x = uv.x * size as f64 - 0.5;
    let y = uv.y * size as f64 - 0.5;
    let c0 = x.floor();
    let r0 = y.floor();
    let (fx, fy) = (x - c0, y - r0);
    let (c0, r0) = (c0 as isize, r0 as isize);
    let mut acc = Vec3::zeros();
    let mut wsum = 0.0;
    for (dr, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dc, wx) in [(0, 1.0 - fx), (1, fx)] {
            let w = wx * wy;
            if let Some(v) = usable(r0 + dr, c0 + dc) {
                acc += Vec3::new(v[0], v[1], v[2]) * w;
                wsum += w;
            }
        }
    }
    if wsum > 1e-12 {
        return Some(acc / wsum);
    }
    // Any neighbor with zero weight still counts before the radius search.
    let mut best: Option<(f64, [f64; 3])> = None;
    let r = FALLBACK_RADIUS as isize;
    let (ci, ri) = (x.round() as isize, y.round() as isize);
    for row in ri - r..=ri + r {
        for col in ci - r..=ci + r {
            if let Some(v) = usable(row, col) {
                let d = (row as f64 - y).powi(2) + (col as f64 - x).powi(2);
                if d <= (FALLBACK_RADIUS as f64).powi(2) && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, v));
                }
            }
        }
    }
    best.map(|(_, v)| Vec3::new(v[0], v[1], v[2]))
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub mesh: TriMesh,
    /// Vertices left on the body surface because no offset could be sampled.
    pub unresolved: Vec<usize>,
}

/// Garment vertex = posed body point + sampled offset.
pub fn reconstruct_garment(
    binding: &GarmentBinding,
    garment: &TriMesh,
    body_frame: &TriMesh,
    offsets: &UVMap,
) -> Result<Reconstruction> {
    if offsets.semantic() == Semantic::Normalized {
        return Err(Error::InvalidArgument(
            "offsets must be denormalized to meters before reconstruction".into(),
        ));
    }
    if offsets.size() != binding.size {
        return Err(Error::Mismatch(format!(
            "offset map is {}², binding was built at {}²",
            offsets.size(),
            binding.size
        )));
    }
    if body_frame.vertex_count() != binding.body_vertices {
        return Err(Error::Mismatch("body frame does not match the bound body".into()));
    }
    if garment.vertex_count() != binding.len() {
        return Err(Error::Mismatch("garment does not match the binding".into()));
    }
    let mut unresolved = Vec::new();
    let positions = binding
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let base = body_frame.interpolate_position(v.face as usize, v.barycentric);
            if v.status == BindStatus::Unbound {
                unresolved.push(i);
                return base;
            }
            match sample_offset(offsets, &binding.pixel_charts, v.chart, v.uv) {
                Some(o) => base + o,
                None => {
                    unresolved.push(i);
                    base
                }
            }
        })
        .collect();
    Ok(Reconstruction {
        mesh: garment.with_positions(positions)?,
        unresolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::uv_sphere;
    use crate::uvbake::rasterize_uv_layout;

    /// Sphere whose vertex normals are exactly radial.
    fn radial_sphere(r: f64) -> TriMesh {
        let m = uv_sphere(Vec3::zeros(), r, 96, 48, Some([0.0, 0.0, 1.0, 1.0])).unwrap();
        let n = m.vertices().iter().map(|v| v.normalize()).collect();
        m.with_replaced_normals(n).unwrap()
    }

    #[test]
    fn concentric_spheres_hit_at_gap() {
        let body = radial_sphere(1.0);
        let cloth = radial_sphere(1.1);
        let uv = rasterize_uv_layout(&body, 64, 64).unwrap();
        let t = compute_body_to_cloth("tops", &body, &uv, &cloth).unwrap();
        assert_eq!(t.hit_count(), uv.valid_count());
        for h in t.hits().iter().flatten() {
            assert!((h.distance - 0.1).abs() < 1e-4, "{}", h.distance);
        }
        let binding = bind_garment(&cloth, &body, &uv).unwrap();
        assert_eq!(binding.count(BindStatus::Ray), cloth.vertex_count());
        for v in binding.vertices() {
            assert!((v.distance - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn offsets_at_rest_match_hit_distance() {
        let body = radial_sphere(1.0);
        let cloth = radial_sphere(1.1);
        let uv = rasterize_uv_layout(&body, 32, 32).unwrap();
        let t = compute_body_to_cloth("tops", &body, &uv, &cloth).unwrap();
        let off = bake_offsets(&t, &body, &cloth, &uv).unwrap();
        for ((h, s), o) in t.hits().iter().zip(uv.samples()).zip(off.data()) {
            if let (Some(h), Some(s)) = (h, s) {
                let o = Vec3::new(o[0], o[1], o[2]);
                let n = body.interpolate_normal(s.face as usize, s.barycentric);
                assert!((o - n * h.distance).norm() < 1e-6);
            }
        }
        let shift = Vec3::new(0.3, -1.0, 2.0);
        let moved = bake_offsets(&t, &body.translated(shift).unwrap(), &cloth.translated(shift).unwrap(), &uv).unwrap();
        for (a, b) in moved.data().iter().zip(off.data()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertex_count_mismatch_is_rejected() {
        let body = radial_sphere(1.0);
        let cloth = radial_sphere(1.1);
        let uv = rasterize_uv_layout(&body, 16, 16).unwrap();
        let t = compute_body_to_cloth("tops", &body, &uv, &cloth).unwrap();
        let small = uv_sphere(Vec3::zeros(), 1.1, 8, 4, None).unwrap();
        assert!(matches!(bake_offsets(&t, &body, &small, &uv), Err(Error::Mismatch(_))));
    }

    #[test]
    fn zero_offsets_collapse_onto_body() {
        let body = radial_sphere(1.0);
        let cloth = radial_sphere(1.1);
        let uv = rasterize_uv_layout(&body, 32, 32).unwrap();
        let binding = bind_garment(&cloth, &body, &uv).unwrap();
        let zero = UVMap::zeros(32, Semantic::Offset, uv.mask()).unwrap();
        let r = reconstruct_garment(&binding, &cloth, &body, &zero).unwrap();
        for (p, v) in r.mesh.vertices().iter().zip(binding.vertices()) {
            let b = body.interpolate_position(v.face as usize, v.barycentric);
            assert!((p - b).norm() < 1e-12);
        }
        let norm = zero.clone().with_semantic(Semantic::Normalized);
        assert!(reconstruct_garment(&binding, &cloth, &body, &norm).is_err());
    }

    #[test]
    fn sphere_round_trip_improves_with_resolution() {
        let body = radial_sphere(1.0);
        let cloth = radial_sphere(1.1);
        let mut errors = Vec::new();
        for size in [32, 64, 128] {
            let uv = rasterize_uv_layout(&body, size, size).unwrap();
            let t = compute_body_to_cloth("tops", &body, &uv, &cloth).unwrap();
            let off = bake_offsets(&t, &body, &cloth, &uv).unwrap();
            let binding = bind_garment(&cloth, &body, &uv).unwrap();
            let r = reconstruct_garment(&binding, &cloth, &body, &off).unwrap();
            let err: f64 = r
                .mesh
                .vertices()
                .iter()
                .zip(cloth.vertices())
                .map(|(a, b)| (a - b).norm())
                .sum::<f64>()
                / cloth.vertex_count() as f64;
            errors.push(err);
        }
        assert!(errors[0] < 1e-3, "{errors:?}");
        assert!(errors[1] <= errors[0] && errors[2] <= errors[1], "{errors:?}");
    }

    #[test]
    fn outward_vertex_without_backside_falls_back() {
        let body = radial_sphere(1.0);
        let uv = rasterize_uv_layout(&body, 16, 16).unwrap();
        // Normal points away from the body: the inward ray leaves it.
        let tri = TriMesh::with_normals(
            vec![Vec3::new(1.1, 0.0, 0.0), Vec3::new(1.1, 0.01, 0.0), Vec3::new(1.1, 0.0, 0.01)],
            vec![[0, 1, 2]],
            vec![-Vec3::x(); 3],
            None,
        )
        .unwrap();
        let b = bind_garment(&tri, &body, &uv).unwrap();
        assert_eq!(b.count(BindStatus::Fallback), 3);
        let far = tri.translated(Vec3::new(5.0, 0.0, 0.0)).unwrap();
        assert!(matches!(bind_garment(&far, &body, &uv), Err(Error::IncompatibleGarment { .. })));
    }

    #[test]
    fn sampling_blends_only_valid_same_chart_pixels() {
        let size = 4;
        let data = (0..16).map(|i| [i as f64, 0.0, 0.0]).collect();
        let mut mask = vec![true; 16];
        mask[5] = false;
        let map = UVMap::new(size, Semantic::Offset, data, mask).unwrap();
        let mut charts = vec![0u16; 16];
        charts[6] = 1;
        // Centered between pixels (1,1), (1,2), (2,1), (2,2) = 5, 6, 9, 10.
        let uv = Vec2::new(0.5, 0.5);
        let v = sample_offset(&map, &charts, 0, uv).unwrap();
        assert!((v.x - (9.0 + 10.0) / 2.0).abs() < 1e-12);
        // Exactly on pixel (1,2)'s center, which is another chart: radius search.
        let v = sample_offset(&map, &charts, 0, Vec2::new(2.5 / 4.0, 1.5 / 4.0)).unwrap();
        assert!([2.0, 7.0, 10.0].contains(&v.x), "{}", v.x);
        assert!(sample_offset(&map, &charts, 9, uv).is_none());
    }

    #[test]
    fn binding_file_round_trip() {
        let body = radial_sphere(1.0);
        let cloth = radial_sphere(1.1);
        let uv = rasterize_uv_layout(&body, 16, 16).unwrap();
        let b = bind_garment(&cloth, &body, &uv).unwrap();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(GarmentBinding::read_from(&mut buf.as_slice()).unwrap(), b);
        buf.pop();
        assert!(GarmentBinding::read_from(&mut buf.as_slice()).is_err());
    }
}
