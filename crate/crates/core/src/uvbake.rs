//! UV-space sampling of meshes: layout rasterization, position / velocity /
//! acceleration maps, and per-semantic [-1, 1] normalization.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{TriMesh, Vec3};

/// Maximum share of covered pixels that two UV triangles may both claim.
const MAX_OVERLAP_FRACTION: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Semantic {
    Position,
    Velocity,
    Acceleration,
    Offset,
    Normalized,
}

impl Semantic {
    pub fn code(self) -> u8 {
        match self {
            Semantic::Position => 0,
            Semantic::Velocity => 1,
            Semantic::Acceleration => 2,
            Semantic::Offset => 3,
            Semantic::Normalized => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Semantic::Position,
            1 => Semantic::Velocity,
            2 => Semantic::Acceleration,
            3 => Semantic::Offset,
            4 => Semantic::Normalized,
            c => return Err(Error::Format(format!("unknown UV map semantic code {c}"))),
        })
    }
}

/// Square W×H×3 grid of values with a validity mask. Invalid pixels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct UVMap {
    size: usize,
    semantic: Semantic,
    data: Vec<[f64; 3]>,
    mask: Vec<bool>,
}

impl UVMap {
    pub fn new(size: usize, semantic: Semantic, data: Vec<[f64; 3]>, mask: Vec<bool>) -> Result<Self> {
        if data.len() != size * size || mask.len() != size * size {
            return Err(Error::Mismatch(format!(
                "UV map of size {size} with {} values and {} mask entries",
                data.len(),
                mask.len()
            )));
        }
        let mut data = data;
        for (v, &m) in data.iter_mut().zip(&mask) {
            if !m {
                *v = [0.0; 3];
            } else if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidArgument("UV map contains non-finite values".into()));
            }
        }
        Ok(UVMap {
            size,
            semantic,
            data,
            mask,
        })
    }

    pub fn zeros(size: usize, semantic: Semantic, mask: Vec<bool>) -> Result<Self> {
        UVMap::new(size, semantic, vec![[0.0; 3]; size * size], mask)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn semantic(&self) -> Semantic {
        self.semantic
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, row: usize, col: usize) -> Option<[f64; 3]> {
        let i = row * self.size + col;
        self.mask[i].then_some(self.data[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn with_semantic(mut self, semantic: Semantic) -> Self {
        self.semantic = semantic;
        self
    }

    /// Element-wise `self − other` on valid pixels; masks must agree.
    pub fn difference(&self, other: &UVMap, semantic: Semantic) -> Result<UVMap> {
        if self.size != other.size || self.mask != other.mask {
            return Err(Error::Mismatch("UV map masks differ".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
            .collect();
        UVMap::new(self.size, semantic, data, self.mask.clone())
    }

    /// Keeps only pixels valid in both maps.
    pub fn restrict_to(&self, mask: &[bool]) -> Result<UVMap> {
        if mask.len() != self.mask.len() {
            return Err(Error::Mismatch("mask size differs".into()));
        }
        let m: Vec<bool> = self.mask.iter().zip(mask).map(|(a, b)| *a && *b).collect();
        UVMap::new(self.size, self.semantic, self.data.clone(), m)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"UVM1")?;
        w.write_all(&(self.size as u32).to_le_bytes())?;
        w.write_all(&(self.size as u32).to_le_bytes())?;
        w.write_all(&[self.semantic.code()])?;
        let mut buf = Vec::with_capacity(self.data.len() * 12);
        for v in &self.data {
            for c in v {
                buf.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        let mut bits = vec![0u8; self.mask.len().div_ceil(8)];
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bits)
    }

    pub fn read_from(r: &mut impl Read) -> Result<UVMap> {
        let fmt = |e: std::io::Error| Error::Format(format!("truncated UV map: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != b"UVM1" {
            return Err(Error::Format("not a UVM1 file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(fmt)?;
        let width = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word).map_err(fmt)?;
        let height = u32::from_le_bytes(word) as usize;
        if width != height || width == 0 || width > 1 << 14 {
            return Err(Error::Format(format!("unsupported UV map size {width}×{height}")));
        }
        let mut code = [0u8; 1];
        r.read_exact(&mut code).map_err(fmt)?;
        let semantic = Semantic::from_code(code[0])?;
        let n = width * height;
        let mut buf = vec![0u8; n * 12];
        r.read_exact(&mut buf).map_err(fmt)?;
        let data = buf
            .chunks_exact(12)
            .map(|c| {
                let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap()) as f64;
                [f(0), f(1), f(2)]
            })
            .collect();
        let mut bits = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut bits).map_err(fmt)?;
        let mask = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        UVMap::new(width, semantic, data, mask)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<UVMap> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        UVMap::read_from(&mut bytes.as_slice())
    }
}

/// Surface sample behind one valid UV pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub face: u32,
    pub barycentric: [f64; 3],
}

/// Pixel → mesh-surface correspondence of a UV layout.
#[derive(Debug, Clone, PartialEq)]
pub struct UvTransferMap {
    size: usize,
    vertex_count: usize,
    samples: Vec<Option<SurfaceSample>>,
}

impl UvTransferMap {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn samples(&self) -> &[Option<SurfaceSample>] {
        &self.samples
    }

    pub fn mask(&self) -> Vec<bool> {
        self.samples.iter().map(Option::is_some).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_some()).count()
    }

    fn check_mesh(&self, mesh: &TriMesh) -> Result<()> {
        if mesh.vertex_count() != self.vertex_count {
            return Err(Error::Mismatch(format!(
                "mesh has {} vertices, UV layout was built for {}",
                mesh.vertex_count(),
                self.vertex_count
            )));
        }
        Ok(())
    }
}

/// Rasterizes the mesh's UV layout at pixel centers.
///
/// A pixel belongs to the first triangle whose closed UV footprint contains
/// its center; `(col + ½) / W, (row + ½) / H` is the center of pixel
/// `(row, col)`.
pub fn rasterize_uv_layout(mesh: &TriMesh, width: usize, height: usize) -> Result<UvTransferMap> {
    if width != height || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "UV maps must be square and non-empty, got {width}×{height}"
        )));
    }
    let uv = mesh
        .uv()
        .ok_or_else(|| Error::InvalidMesh("mesh has no uv coordinates".into()))?;
    let size = width;
    let mut samples: Vec<Option<SurfaceSample>> = vec![None; size * size];
    let mut strict_owner = vec![false; size * size];
    let mut overlapping = 0usize;
    let scale = size as f64;
    for (fi, f) in mesh.faces().iter().enumerate() {
        let [a, b, c] = f.map(|i| uv[i as usize] * scale);
        let area2 = (b - a).perp(&(c - a));
        if area2.abs() < 1e-14 * scale * scale {
            continue;
        }
        let lo = a.inf(&b).inf(&c);
        let hi = a.sup(&b).sup(&c);
        let col0 = (lo.x - 0.5).ceil().max(0.0) as usize;
        let row0 = (lo.y - 0.5).ceil().max(0.0) as usize;
        let col1 = ((hi.x - 0.5).floor() as isize).min(size as isize - 1);
        let row1 = ((hi.y - 0.5).floor() as isize).min(size as isize - 1);
        if col1 < 0 || row1 < 0 {
            continue;
        }
        for row in row0..=row1 as usize {
            for col in col0..=col1 as usize {
                let p = nalgebra::Vector2::new(col as f64 + 0.5, row as f64 + 0.5);
                let w0 = (b - p).perp(&(c - p)) / area2;
                let w1 = (c - p).perp(&(a - p)) / area2;
                let w2 = 1.0 - w0 - w1;
                const TOL: f64 = 1e-12;
                if w0 < -TOL || w1 < -TOL || w2 < -TOL {
                    continue;
                }
                let strict = w0 > 1e-6 && w1 > 1e-6 && w2 > 1e-6;
                let idx = row * size + col;
                if samples[idx].is_some() {
                    if strict && strict_owner[idx] {
                        overlapping += 1;
                    }
                    continue;
                }
                let mut bary = [w0.max(0.0), w1.max(0.0), w2.max(0.0)];
                let s: f64 = bary.iter().sum();
                for x in &mut bary {
                    *x /= s;
                }
                samples[idx] = Some(SurfaceSample {
                    face: fi as u32,
                    barycentric: bary,
                });
                strict_owner[idx] = strict;
            }
        }
    }
    let covered = samples.iter().filter(|s| s.is_some()).count();
    if overlapping as f64 > MAX_OVERLAP_FRACTION * covered as f64 {
        return Err(Error::OverlappingLayout {
            overlapping,
            covered,
        });
    }
    Ok(UvTransferMap {
        size,
        vertex_count: mesh.vertex_count(),
        samples,
    })
}

/// Samples a per-vertex quantity through the transfer map.
pub fn bake_vertex_values(transfer: &UvTransferMap, values: &[Vec3], semantic: Semantic, mesh: &TriMesh) -> Result<UVMap> {
    transfer.check_mesh(mesh)?;
    let faces = mesh.faces();
    let data = transfer
        .samples
        .iter()
        .map(|s| match s {
            Some(s) => {
                let [a, b, c] = faces[s.face as usize];
                let p = values[a as usize] * s.barycentric[0]
                    + values[b as usize] * s.barycentric[1]
                    + values[c as usize] * s.barycentric[2];
                [p.x, p.y, p.z]
            }
            None => [0.0; 3],
        })
        .collect();
    UVMap::new(transfer.size, semantic, data, transfer.mask())
}

/// Body position map: barycentric interpolation of the posed vertices.
pub fn bake_positions(transfer: &UvTransferMap, posed: &TriMesh) -> Result<UVMap> {
    bake_vertex_values(transfer, posed.vertices(), Semantic::Position, posed)
}

pub fn velocity_map(pos_k: &UVMap, pos_km1: &UVMap) -> Result<UVMap> {
    pos_k.difference(pos_km1, Semantic::Velocity)
}

pub fn acceleration_map(vel_k: &UVMap, vel_km1: &UVMap) -> Result<UVMap> {
    vel_k.difference(vel_km1, Semantic::Acceleration)
}

/// Per-channel min/max of one map semantic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

const CHANNELS: [char; 3] = ['x', 'y', 'z'];

impl NormStats {
    fn check(&self, name: &str) -> Result<()> {
        for k in 0..3 {
            if !(self.max[k] > self.min[k]) {
                return Err(Error::DegenerateChannel {
                    semantic: name.to_string(),
                    channel: CHANNELS[k],
                });
            }
        }
        Ok(())
    }
}

/// Fits per-channel bounds over the valid pixels of `maps`.
pub fn fit_norm<'a>(maps: impl IntoIterator<Item = &'a UVMap>, name: &str) -> Result<NormStats> {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for map in maps {
        for (v, &m) in map.data.iter().zip(&map.mask) {
            if m {
                any = true;
                for k in 0..3 {
                    min[k] = min[k].min(v[k]);
                    max[k] = max[k].max(v[k]);
                }
            }
        }
    }
    if !any {
        return Err(Error::InvalidArgument(format!("no valid pixels to fit {name}")));
    }
    let stats = NormStats { min, max };
    stats.check(name)?;
    Ok(stats)
}

/// `x ↦ 2(x − min)/(max − min) − 1` on valid pixels.
pub fn normalize(map: &UVMap, stats: &NormStats) -> Result<UVMap> {
    stats.check("map")?;
    if map.semantic == Semantic::Normalized {
        return Err(Error::InvalidArgument("map is already normalized".into()));
    }
    let data = map
        .data
        .iter()
        .zip(&map.mask)
        .map(|(v, &m)| {
            if !m {
                return [0.0; 3];
            }
            std::array::from_fn(|k| 2.0 * (v[k] - stats.min[k]) / (stats.max[k] - stats.min[k]) - 1.0)
        })
        .collect();
    UVMap::new(map.size, Semantic::Normalized, data, map.mask.clone())
}

/// Inverse of [`normalize`]; the result carries `semantic`.
pub fn denormalize(map: &UVMap, stats: &NormStats, semantic: Semantic) -> Result<UVMap> {
    if map.semantic != Semantic::Normalized {
        return Err(Error::InvalidArgument(format!(
            "denormalize expects a normalized map, got {:?}",
            map.semantic
        )));
    }
    let data = map
        .data
        .iter()
        .zip(&map.mask)
        .map(|(v, &m)| {
            if !m {
                return [0.0; 3];
            }
            std::array::from_fn(|k| (v[k] + 1.0) * 0.5 * (stats.max[k] - stats.min[k]) + stats.min[k])
        })
        .collect();
    UVMap::new(map.size, semantic, data, map.mask.clone())
}

/// Named collection of [`NormStats`], persisted as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsSet {
    pub entries: BTreeMap<String, NamedStats>,
}

/// JSON shape of one stats entry: channels listed by name.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NamedStats {
    pub min: Channels,
    pub max: Channels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channels {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl StatsSet {
    pub fn insert(&mut self, name: &str, stats: NormStats) {
        let ch = |a: [f64; 3]| Channels {
            x: a[0],
            y: a[1],
            z: a[2],
        };
        self.entries.insert(
            name.to_string(),
            NamedStats {
                min: ch(stats.min),
                max: ch(stats.max),
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<NormStats> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Dataset(format!("no normalization stats for '{name}'")))?;
        Ok(NormStats {
            min: [e.min.x, e.min.y, e.min.z],
            max: [e.max.x, e.max.y, e.max.z],
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("stats file: {e}")))
    }

    /// Hex SHA-256 of the JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        StatsSet::from_json(&text)
    }
}
