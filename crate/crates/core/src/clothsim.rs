//! Mass-spring cloth with capsule body colliders, integrated with
//! semi-implicit Euler.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::body::{skin_points, BodyModel, MotionSequence, Pose};
use crate::error::{Error, Result};
use crate::garment::{Garment, Template};
use crate::geom::{Capsule, TriMesh, Vec3};

/// Frames spent easing from the rest pose into the first motion frame.
pub const SETTLE_FRAMES: usize = 30;
/// Speed above which a vertex is considered to have blown up (m/s).
pub const MAX_SPEED: f64 = 100.0;

const SHEAR_MIN_ANGLE_SUM: f64 = 150.0;
const SHEAR_MAX_DIHEDRAL: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Stretch stiffness of mesh edges (N/m).
    pub k_struct: f64,
    pub k_shear: f64,
    pub k_bend: f64,
    /// Stiffness of mesh edges shorter than rest (N/m).
    pub k_compress: f64,
    /// Damping along each spring axis (N·s/m).
    pub damping: f64,
    /// Areal density (kg/m²).
    pub density: f64,
    pub gravity: [f64; 3],
    /// Air drag rate (1/s).
    pub drag: f64,
    /// Duration of one `step` (s).
    pub dt: f64,
    pub substeps: usize,
    /// Clearance kept from the body colliders (m).
    pub thickness: f64,
    pub friction: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            k_struct: 60.0,
            k_shear: 15.0,
            k_bend: 4.0,
            k_compress: 12.0,
            damping: 0.01,
            density: 0.15,
            gravity: [0.0, -9.81, 0.0],
            drag: 0.8,
            dt: 1.0 / 240.0,
            substeps: 16,
            thickness: 0.005,
            friction: 0.3,
        }
    }
}

impl SimParams {
    /// Cotton-like fabric tuned per garment template.
    pub fn preset(template: Template) -> SimParams {
        let base = SimParams::default();
        match template {
            Template::Tops => base,
            Template::Bottoms => SimParams {
                k_bend: 6.0,
                ..base
            },
            Template::Dress => SimParams {
                k_bend: 3.0,
                density: 0.12,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("k_struct", self.k_struct),
            ("k_shear", self.k_shear),
            ("k_bend", self.k_bend),
            ("k_compress", self.k_compress),
            ("damping", self.damping),
            ("drag", self.drag),
            ("thickness", self.thickness),
            ("friction", self.friction),
        ];
        for (name, v) in named {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        if !(self.density > 0.0) || !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument("density and dt must be positive".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be ≥ 1".into()));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidArgument("gravity must be finite".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<SimParams> {
        let p: SimParams = toml::from_str(text).map_err(|e| Error::Format(format!("simulation config: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("params serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SimParams> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SimParams::from_toml(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SpringClass {
    Structural,
    Shear,
    Bend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    pub i: u32,
    pub j: u32,
    pub rest: f64,
    pub class: SpringClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpringSet {
    pub springs: Vec<Spring>,
    /// Lumped vertex masses (kg).
    pub mass: Vec<f64>,
}

impl SpringSet {
    pub fn count(&self, class: SpringClass) -> usize {
        self.springs.iter().filter(|s| s.class == class).count()
    }
}

fn angle_deg(at: Vec3, p: Vec3, q: Vec3) -> f64 {
    (p - at).angle(&(q - at)).to_degrees()
}

pub fn build_springs(mesh: &TriMesh, params: &SimParams) -> Result<SpringSet> {
    if mesh.face_count() == 0 {
        return Err(Error::InvalidMesh("cloth mesh has no faces".into()));
    }
    let v = mesh.vertices();
    // Edge → opposite vertices of the distinct faces using it.
    let mut edges: BTreeMap<(u32, u32), Vec<(usize, u32)>> = BTreeMap::new();
    let mut seen_faces = BTreeSet::new();
    for (fi, f) in mesh.faces().iter().enumerate() {
        let mut key = *f;
        key.sort_unstable();
        if !seen_faces.insert(key) {
            continue;
        }
        for k in 0..3 {
            let (a, b, c) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            edges.entry((a.min(b), a.max(b))).or_default().push((fi, c));
        }
    }
    let mut springs = Vec::new();
    let mut paired = BTreeSet::new();
    let mut cross: BTreeMap<(u32, u32), SpringClass> = BTreeMap::new();
    for (&(a, b), opp) in &edges {
        springs.push(Spring {
            i: a,
            j: b,
            rest: (v[b as usize] - v[a as usize]).norm(),
            class: SpringClass::Structural,
        });
        paired.insert((a, b));
        if let [(f0, c), (f1, d)] = opp[..] {
            if c == d {
                continue;
            }
            let (pa, pb, pc, pd) = (v[a as usize], v[b as usize], v[c as usize], v[d as usize]);
            let angles = angle_deg(pc, pa, pb) + angle_deg(pd, pa, pb);
            let n0 = mesh.face_normal(f0);
            let n1 = mesh.face_normal(f1);
            let planar = n0.dot(&n1).abs() >= SHEAR_MAX_DIHEDRAL.to_radians().cos();
            let class = if angles >= SHEAR_MIN_ANGLE_SUM && planar {
                SpringClass::Shear
            } else {
                SpringClass::Bend
            };
            cross.entry((c.min(d), c.max(d))).or_insert(class);
        }
    }
    for ((c, d), class) in cross {
        if paired.contains(&(c, d)) {
            continue;
        }
        springs.push(Spring {
            i: c,
            j: d,
            rest: (v[d as usize] - v[c as usize]).norm(),
            class,
        });
    }
    if let Some(s) = springs.iter().find(|s| !(s.rest > 0.0)) {
        return Err(Error::InvalidMesh(format!("zero rest length between {} and {}", s.i, s.j)));
    }
    let mut mass = vec![0.0; v.len()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let m = mesh.face_area(fi) * params.density / 3.0;
        for &k in f {
            mass[k as usize] += m;
        }
    }
    for m in &mut mass {
        *m = m.max(1e-9);
    }
    Ok(SpringSet { springs, mass })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClothState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub pinned: Vec<bool>,
}

impl ClothState {
    pub fn at_rest(positions: Vec<Vec3>, pinned: Vec<bool>) -> Result<ClothState> {
        if positions.len() != pinned.len() {
            return Err(Error::Mismatch("pinned mask length differs from vertex count".into()));
        }
        let n = positions.len();
        Ok(ClothState {
            positions,
            velocities: vec![Vec3::zeros(); n],
            pinned,
        })
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities
            .iter()
            .zip(&self.pinned)
            .filter(|(_, &p)| !p)
            .map(|(v, _)| v.norm())
            .fold(0.0, f64::max)
    }
}

fn stiffness(params: &SimParams, s: &Spring, stretch: f64) -> f64 {
    match s.class {
        SpringClass::Structural if stretch < 0.0 => params.k_compress,
        SpringClass::Structural => params.k_struct,
        SpringClass::Shear => params.k_shear,
        SpringClass::Bend => params.k_bend,
    }
}

/// Spring and spring-damping forces only.
pub fn internal_forces(state: &ClothState, springs: &SpringSet, params: &SimParams) -> Vec<Vec3> {
    let x = &state.positions;
    let v = &state.velocities;
    let mut f = vec![Vec3::zeros(); x.len()];
    for s in &springs.springs {
        let (i, j) = (s.i as usize, s.j as usize);
        let d = x[j] - x[i];
        let len = d.norm();
        if len <= 1e-12 {
            continue;
        }
        let u = d / len;
        let stretch = len - s.rest;
        let mag = stiffness(params, s, stretch) * stretch + params.damping * (v[j] - v[i]).dot(&u);
        let fi = u * mag;
        f[i] += fi;
        f[j] -= fi;
    }
    f
}

/// Total force on every vertex: springs, damping, gravity and air drag.
pub fn compute_forces(state: &ClothState, springs: &SpringSet, params: &SimParams) -> Vec<Vec3> {
    let g = Vec3::from(params.gravity);
    let mut f = internal_forces(state, springs, params);
    for ((fi, m), v) in f.iter_mut().zip(&springs.mass).zip(&state.velocities) {
        *fi += g * *m - v * (params.drag * m);
    }
    f
}

/// Elastic energy stored in the springs (J).
pub fn spring_energy(state: &ClothState, springs: &SpringSet, params: &SimParams) -> f64 {
    springs
        .springs
        .iter()
        .map(|s| {
            let stretch = (state.positions[s.j as usize] - state.positions[s.i as usize]).norm() - s.rest;
            0.5 * stiffness(params, s, stretch) * stretch * stretch
        })
        .sum()
}

pub fn kinetic_energy(state: &ClothState, springs: &SpringSet) -> f64 {
    state
        .velocities
        .iter()
        .zip(&springs.mass)
        .zip(&state.pinned)
        .filter(|(_, &p)| !p)
        .map(|((v, m), _)| 0.5 * m * v.norm_squared())
        .sum()
}

/// Pushes `p` out of every capsule to `thickness` clearance; the inward
/// normal velocity is removed and tangential velocity reduced by Coulomb
/// friction.
fn collide(p: &mut Vec3, v: &mut Vec3, colliders: &[Capsule], thickness: f64, friction: f64) {
    for c in colliders {
        let (q, _) = c.closest_on_segment(p);
        let r = *p - q;
        let dist = r.norm();
        if dist - c.radius >= thickness {
            continue;
        }
        let n = if dist > 1e-12 {
            r / dist
        } else {
            let axis = c.b - c.a;
            let helper = if axis.x.abs() < 0.9 * axis.norm() { Vec3::x() } else { Vec3::y() };
            helper.cross(&axis).try_normalize(1e-12).unwrap_or_else(Vec3::x)
        };
        *p = q + n * (c.radius + thickness);
        let vn = v.dot(&n);
        if vn < 0.0 {
            let vt = *v - n * vn;
            let vt_len = vt.norm();
            let scale = if vt_len > 0.0 {
                (1.0 - friction * (-vn) / vt_len).max(0.0)
            } else {
                0.0
            };
            *v = vt * scale;
        }
    }
}

/// Pinned vertex motion over one step: positions at start and end.
struct Kinematics<'a> {
    from: &'a [Vec3],
    to: &'a [Vec3],
    /// Cloth vertex index of each entry.
    index: &'a [usize],
}

fn advance(
    state: &ClothState,
    springs: &SpringSet,
    params: &SimParams,
    colliders: &[Capsule],
    kin: Option<&Kinematics>,
) -> Result<ClothState> {
    let n = state.positions.len();
    if springs.mass.len() != n {
        return Err(Error::Mismatch("spring set was built for another mesh".into()));
    }
    let mut s = state.clone();
    let h = params.dt / params.substeps as f64;
    for sub in 0..params.substeps {
        if let Some(k) = kin {
            let t = (sub + 1) as f64 / params.substeps as f64;
            let vel_scale = 1.0 / params.dt;
            for (e, &vi) in k.index.iter().enumerate() {
                s.positions[vi] = k.from[e].lerp(&k.to[e], t);
                s.velocities[vi] = (k.to[e] - k.from[e]) * vel_scale;
            }
        }
        let f = compute_forces(&s, springs, params);
        for i in 0..n {
            if s.pinned[i] {
                continue;
            }
            s.velocities[i] += f[i] * (h / springs.mass[i]);
            s.positions[i] += s.velocities[i] * h;
            collide(&mut s.positions[i], &mut s.velocities[i], colliders, params.thickness, params.friction);
            let speed = s.velocities[i].norm();
            if !speed.is_finite() || !s.positions[i].iter().all(|c| c.is_finite()) {
                return Err(Error::Explosion {
                    vertex: i,
                    reason: "non-finite state".into(),
                });
            }
            if speed >= MAX_SPEED {
                return Err(Error::Explosion {
                    vertex: i,
                    reason: format!("speed {speed:.1} m/s"),
                });
            }
        }
    }
    Ok(s)
}

/// Advances the cloth by `params.dt`. Pinned vertices do not move.
pub fn step(state: &ClothState, springs: &SpringSet, params: &SimParams, colliders: &[Capsule]) -> Result<ClothState> {
    advance(state, springs, params, colliders, None)
}

/// Simulates the garment on the body through the motion. Returns one cloth
/// mesh per motion frame.
///
/// The cloth first eases from the rest pose into frame 0 over
/// [`SETTLE_FRAMES`] frames. Pinned vertices are skinned to the body.
pub fn simulate_sequence(
    garment: &Garment,
    body: &BodyModel,
    motion: &MotionSequence,
    params: &SimParams,
) -> Result<Vec<TriMesh>> {
    params.validate()?;
    motion.validate()?;
    if motion.bone_names != body.skeleton().names() {
        return Err(Error::Mismatch("motion bones do not match the body skeleton".into()));
    }
    let mesh = &garment.mesh;
    let springs = build_springs(mesh, params)?;
    let index: Vec<usize> = (0..mesh.vertex_count()).filter(|&i| garment.pinned[i]).collect();
    let rest: Vec<Vec3> = index.iter().map(|&i| mesh.vertices()[i]).collect();
    let weights: Vec<_> = rest.iter().map(|p| body.skin_weights_at(p)).collect();
    let pinned_at = |pose: &Pose| -> Result<Vec<Vec3>> {
        let xf = body.skeleton().skinning_transforms(pose)?;
        Ok(skin_points(&rest, &weights, &xf))
    };

    let steps_per_frame = ((1.0 / (motion.frame_rate * params.dt)).round() as usize).max(1);
    let mut state = ClothState::at_rest(mesh.vertices().to_vec(), garment.pinned.clone())?;
    let run = |state: &mut ClothState, from: &Pose, to: &Pose, t0: f64, t1: f64| -> Result<()> {
        let mut prev = pinned_at(&from.interpolate(to, t0))?;
        for s in 0..steps_per_frame {
            let t = t0 + (t1 - t0) * (s + 1) as f64 / steps_per_frame as f64;
            let pose = from.interpolate(to, t);
            let next = pinned_at(&pose)?;
            let colliders = body.capsules(&pose)?;
            let kin = Kinematics {
                from: &prev,
                to: &next,
                index: &index,
            };
            *state = advance(state, &springs, params, &colliders, Some(&kin))?;
            prev = next;
        }
        Ok(())
    };

    let rest_pose = Pose::identity(body.skeleton().len());
    for f in 0..SETTLE_FRAMES {
        let t0 = f as f64 / SETTLE_FRAMES as f64;
        let t1 = (f + 1) as f64 / SETTLE_FRAMES as f64;
        run(&mut state, &rest_pose, &motion.frames[0], t0, t1)?;
    }
    let mut frames = Vec::with_capacity(motion.len());
    frames.push(mesh.with_positions(state.positions.clone())?);
    for k in 1..motion.len() {
        run(&mut state, &motion.frames[k - 1], &motion.frames[k], 0.0, 1.0)?;
        frames.push(mesh.with_positions(state.positions.clone())?);
    }
    Ok(frames)
}

/// Packs cloth frames sharing one topology into the `CSQ1` format.
pub fn write_sequence(frames: &[TriMesh]) -> Result<Vec<u8>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty cloth sequence".into()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(b"CSQ1");
    for n in [frames.len(), first.vertex_count(), first.face_count()] {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for f in first.faces() {
        for i in f {
            buf.extend_from_slice(&i.to_le_bytes());
        }
    }
    for frame in frames {
        if frame.faces() != first.faces() {
            return Err(Error::Mismatch("cloth frames differ in topology".into()));
        }
        for p in frame.vertices() {
            for c in p.iter() {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn read_sequence(bytes: &[u8]) -> Result<Vec<TriMesh>> {
    let truncated = || Error::Format("truncated cloth sequence".into());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    if take(4)? != b"CSQ1" {
        return Err(Error::Format("not a CSQ1 file".into()));
    }
    let mut word = || -> Result<usize> { Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize) };
    let (nf, nv, nt) = (word()?, word()?, word()?);
    drop(word);
    let expected = 16 + nt * 12 + nf * nv * 24;
    if bytes.len() != expected {
        return Err(Error::Format(format!("cloth sequence has {} bytes, expected {expected}", bytes.len())));
    }
    let mut faces = Vec::with_capacity(nt);
    for _ in 0..nt {
        let t = take(12)?;
        faces.push(std::array::from_fn(|k| u32::from_le_bytes(t[4 * k..4 * k + 4].try_into().unwrap())));
    }
    let mut frames = Vec::with_capacity(nf);
    for _ in 0..nf {
        let data = take(nv * 24)?;
        let verts = data
            .chunks_exact(24)
            .map(|c| {
                let f = |k: usize| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap());
                Vec3::new(f(0), f(1), f(2))
            })
            .collect();
        frames.push(TriMesh::new(verts, faces.clone(), None)?);
    }
    Ok(frames)
}

pub fn save_sequence(frames: &[TriMesh], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_sequence(frames)?).map_err(|e| Error::io(path, e))
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<Vec<TriMesh>> {
    let path = path.as_ref();
    read_sequence(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
