//! Procedural skinned body, linear blend skinning and the dress proxy.
//!
//! The body is Y-up and faces +X; its left side is +Z. In the rest pose
//! (T-pose) the arms lie along ±Z. Each bone owns one capsule-shaped surface
//! patch with its own rectangular UV chart; charts are packed into a fixed
//! 4×3 grid so the plain body and the dress proxy share a layout.

mod motion;

pub use motion::{load_motion, parse_motion, procedural_motion, save_motion, format_motion, MotionSequence, ACTION_KINDS};

use nalgebra::{Isometry3, Translation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::geom::{lathe, Capsule, Frame, Ring, TriMesh, Vec3};

pub const BONE_NAMES: [&str; 11] = [
    "pelvis",
    "spine",
    "neck",
    "upper_arm_l",
    "lower_arm_l",
    "upper_arm_r",
    "lower_arm_r",
    "upper_leg_l",
    "lower_leg_l",
    "upper_leg_r",
    "lower_leg_r",
];

/// Maximum number of bones influencing a body vertex.
pub const MAX_INFLUENCES: usize = 4;

/// Distance over which a neighbouring bone's influence fades to zero (m).
const BLEND_DISTANCE: f64 = 0.05;

/// UV chart margin inside each grid cell.
const CHART_MARGIN: f64 = 0.01;

/// Grid cell (column, row) of each bone's chart, in `BONE_NAMES` order.
const CHART_CELLS: [(usize, usize); 11] = [
    (1, 0),
    (0, 0),
    (2, 0),
    (0, 1),
    (1, 1),
    (2, 1),
    (3, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
];
/// Cell reserved for the dress proxy's leg bridge.
const BRIDGE_CELL: (usize, usize) = (3, 0);

fn chart_rect((col, row): (usize, usize)) -> [f64; 4] {
    let w = 0.25;
    let h = 1.0 / 3.0;
    [
        col as f64 * w + CHART_MARGIN,
        row as f64 * h + CHART_MARGIN,
        w - 2.0 * CHART_MARGIN,
        h - 2.0 * CHART_MARGIN,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    pub head: Vec3,
    pub tail: Vec3,
    /// Capsule radius used both for the surface and as collider.
    pub radius: f64,
}

impl Bone {
    pub fn length(&self) -> f64 {
        (self.tail - self.head).norm()
    }

    fn capsule(&self) -> Capsule {
        Capsule {
            a: self.head,
            b: self.tail,
            radius: self.radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    bones: Vec<Bone>,
}

impl Skeleton {
    pub fn new(bones: Vec<Bone>) -> Result<Self> {
        let roots = bones.iter().filter(|b| b.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::InvalidSkeleton(format!("{roots} roots (expected exactly one)")));
        }
        for (i, b) in bones.iter().enumerate() {
            if let Some(p) = b.parent {
                if p >= i {
                    return Err(Error::InvalidSkeleton(format!(
                        "bone {} has parent {p} not before it",
                        b.name
                    )));
                }
            }
            if !(b.length() > 1e-4) {
                return Err(Error::InvalidSkeleton(format!("bone {} is too short", b.name)));
            }
        }
        Ok(Skeleton { bones })
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.bones.iter().position(|b| b.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.bones.iter().map(|b| b.name.clone()).collect()
    }

    fn children(&self, bone: usize) -> impl Iterator<Item = usize> + '_ {
        self.bones
            .iter()
            .enumerate()
            .filter(move |(_, b)| b.parent == Some(bone))
            .map(|(i, _)| i)
    }

    /// Per-bone skinning transforms `T_b(pose) · T_b(rest)⁻¹`.
    ///
    /// The root rotation acts about the world origin and is followed by the
    /// root translation; other bones rotate about their rest head.
    pub fn skinning_transforms(&self, pose: &Pose) -> Result<Vec<Isometry3<f64>>> {
        if pose.rotations.len() != self.bones.len() {
            return Err(Error::Mismatch(format!(
                "pose has {} rotations for {} bones",
                pose.rotations.len(),
                self.bones.len()
            )));
        }
        let mut global: Vec<Isometry3<f64>> = Vec::with_capacity(self.bones.len());
        for (i, bone) in self.bones.iter().enumerate() {
            let g = match bone.parent {
                None => {
                    Isometry3::from_parts(Translation3::from(pose.root_translation), pose.rotations[i])
                        * Translation3::from(bone.head)
                }
                Some(p) => {
                    global[p]
                        * Translation3::from(bone.head - self.bones[p].head)
                        * pose.rotations[i]
                }
            };
            global.push(g);
        }
        Ok(global
            .into_iter()
            .zip(&self.bones)
            .map(|(g, b)| g * Translation3::from(-b.head))
            .collect())
    }

    /// Bone capsules in the given pose.
    pub fn posed_capsules(&self, pose: &Pose) -> Result<Vec<Capsule>> {
        let xf = self.skinning_transforms(pose)?;
        Ok(self
            .bones
            .iter()
            .zip(&xf)
            .map(|(b, t)| Capsule {
                a: t.transform_point(&b.head.into()).coords,
                b: t.transform_point(&b.tail.into()).coords,
                radius: b.radius,
            })
            .collect())
    }
}

/// One frame of motion: root translation plus a local rotation per bone.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub root_translation: Vec3,
    pub rotations: Vec<UnitQuaternion<f64>>,
}

impl Pose {
    pub fn identity(bones: usize) -> Pose {
        Pose {
            root_translation: Vec3::zeros(),
            rotations: vec![UnitQuaternion::identity(); bones],
        }
    }

    /// Component-wise interpolation: lerp for translation, slerp for rotations.
    pub fn interpolate(&self, other: &Pose, t: f64) -> Pose {
        Pose {
            root_translation: self.root_translation.lerp(&other.root_translation, t),
            rotations: self
                .rotations
                .iter()
                .zip(&other.rotations)
                .map(|(a, b)| a.try_slerp(b, t, 1e-12).unwrap_or(*b))
                .collect(),
        }
    }
}

/// Per-segment scale factors. All must lie in [0.5, 2.0].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapeParams {
    pub torso: f64,
    pub arms: f64,
    pub legs: f64,
    pub girth: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        ShapeParams {
            torso: 1.0,
            arms: 1.0,
            legs: 1.0,
            girth: 1.0,
        }
    }
}

impl ShapeParams {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("torso", self.torso),
            ("arms", self.arms),
            ("legs", self.legs),
            ("girth", self.girth),
        ] {
            if !(0.5..=2.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "shape parameter {name} = {v} outside [0.5, 2.0]"
                )));
            }
        }
        Ok(())
    }
}

/// Sparse skinning weights of one vertex: `(bone, weight)` pairs.
pub type Influences = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    template: TriMesh,
    skeleton: Skeleton,
    weights: Vec<Influences>,
    shape: ShapeParams,
    /// Vertex range of each surface part; the last entry is the bridge on a
    /// dress proxy.
    parts: Vec<(String, std::ops::Range<usize>)>,
    /// Groups of vertices sharing a position along UV seams.
    seams: Vec<Vec<u32>>,
    /// Leg bridge of the dress proxy, if any.
    bridge: Option<BridgeShape>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BridgeShape {
    center: Vec3,
    semi_axes: Vec3,
}

struct Dimensions {
    knee_y: f64,
    hip_y: f64,
    hip_z: f64,
}

impl BodyModel {
    pub fn template(&self) -> &TriMesh {
        &self.template
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn weights(&self) -> &[Influences] {
        &self.weights
    }

    pub fn shape(&self) -> ShapeParams {
        self.shape
    }

    pub fn parts(&self) -> &[(String, std::ops::Range<usize>)] {
        &self.parts
    }

    pub fn part_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        self.parts.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone())
    }

    pub fn is_dress_proxy(&self) -> bool {
        self.bridge.is_some()
    }

    /// Height of the rest-pose mesh (extent along +Y).
    pub fn height(&self) -> f64 {
        let (lo, hi) = self.template.bounding_box();
        hi.y - lo.y
    }

    /// Skinning weights for an arbitrary rest-pose point, using the same
    /// distance falloff as the body surface.
    pub fn skin_weights_at(&self, p: &Vec3) -> Influences {
        let own = self
            .skeleton
            .bones
            .iter()
            .enumerate()
            .map(|(i, b)| (i, b.capsule().signed_distance(p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        bone_weights(&self.skeleton, own, p)
    }

    /// Linear blend skinning of the template; normals are recomputed.
    pub fn pose(&self, pose: &Pose) -> Result<TriMesh> {
        let xf = self.skeleton.skinning_transforms(pose)?;
        let positions = skin_points(self.template.vertices(), &self.weights, &xf);
        let posed = self.template.with_positions(positions)?;
        Ok(self.weld(&posed))
    }

    pub fn capsules(&self, pose: &Pose) -> Result<Vec<Capsule>> {
        self.skeleton.posed_capsules(pose)
    }

    fn weld(&self, mesh: &TriMesh) -> TriMesh {
        let mut normals = mesh.normals().to_vec();
        for group in &self.seams {
            let sum: Vec3 = group.iter().map(|&i| mesh.normals()[i as usize]).sum();
            if sum.norm() > 1e-12 {
                let n = sum.normalize();
                for &i in group {
                    normals[i as usize] = n;
                }
            }
        }
        mesh.with_replaced_normals(normals)
            .expect("welded normals are unit length")
    }
}

/// Applies blended rigid transforms to points.
pub fn skin_points(points: &[Vec3], weights: &[Influences], xf: &[Isometry3<f64>]) -> Vec<Vec3> {
    points
        .iter()
        .zip(weights)
        .map(|(v, w)| {
            let p = nalgebra::Point3::from(*v);
            w.iter()
                .map(|&(b, wb)| xf[b].transform_point(&p).coords * wb)
                .sum()
        })
        .collect()
}

pub fn pose_body(body: &BodyModel, pose: &Pose) -> Result<TriMesh> {
    body.pose(pose)
}

fn falloff(d: f64) -> f64 {
    if d <= 0.0 {
        1.0
    } else if d >= BLEND_DISTANCE {
        0.0
    } else {
        let t = 1.0 - d / BLEND_DISTANCE;
        t * t * t
    }
}

/// Weights of `p` against `own` bone and its direct neighbours.
fn bone_weights(skeleton: &Skeleton, own: usize, p: &Vec3) -> Influences {
    let bones = skeleton.bones();
    let mut candidates: Vec<usize> = vec![own];
    if let Some(parent) = bones[own].parent {
        candidates.push(parent);
    }
    candidates.extend(skeleton.children(own));
    let mut w: Influences = candidates
        .into_iter()
        .map(|b| {
            let d = if b == own {
                0.0
            } else {
                bones[b].capsule().signed_distance(p)
            };
            (b, falloff(d))
        })
        .filter(|&(_, wb)| wb > 0.0)
        .collect();
    w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    w.truncate(MAX_INFLUENCES);
    let sum: f64 = w.iter().map(|x| x.1).sum();
    for x in &mut w {
        x.1 /= sum;
    }
    w.sort_by_key(|x| x.0);
    w
}

fn build_skeleton(shape: &ShapeParams) -> Result<(Skeleton, Dimensions)> {
    let g = shape.girth;
    let ankle_y = 0.08;
    let knee_y = ankle_y + 0.42 * shape.legs;
    let hip_y = knee_y + 0.40 * shape.legs;
    let hip_z = 0.09 * g;
    let pelvis_head = hip_y + 0.02;
    let pelvis_tail = pelvis_head + 0.13 * shape.torso;
    let spine_tail = pelvis_tail + 0.35 * shape.torso;
    let shoulder_y = pelvis_tail + 0.33 * shape.torso;
    let neck_head = pelvis_tail + 0.40 * shape.torso;
    let neck_tail = neck_head + 0.19 * shape.torso;
    let shoulder_z = 0.17 * g;
    let elbow_z = shoulder_z + 0.28 * shape.arms;
    let wrist_z = elbow_z + 0.27 * shape.arms;

    let v = Vec3::new;
    let bone = |name: &str, parent: Option<usize>, head: Vec3, tail: Vec3, radius: f64| Bone {
        name: name.to_string(),
        parent,
        head,
        tail,
        radius,
    };
    let bones = vec![
        bone("pelvis", None, v(0.0, pelvis_head, 0.0), v(0.0, pelvis_tail, 0.0), 0.15 * g),
        bone("spine", Some(0), v(0.0, pelvis_tail, 0.0), v(0.0, spine_tail, 0.0), 0.15 * g),
        bone("neck", Some(1), v(0.0, neck_head, 0.0), v(0.0, neck_tail, 0.0), 0.06 * g),
        bone("upper_arm_l", Some(1), v(0.0, shoulder_y, shoulder_z), v(0.0, shoulder_y, elbow_z), 0.05 * g),
        bone("lower_arm_l", Some(3), v(0.0, shoulder_y, elbow_z), v(0.0, shoulder_y, wrist_z), 0.04 * g),
        bone("upper_arm_r", Some(1), v(0.0, shoulder_y, -shoulder_z), v(0.0, shoulder_y, -elbow_z), 0.05 * g),
        bone("lower_arm_r", Some(5), v(0.0, shoulder_y, -elbow_z), v(0.0, shoulder_y, -wrist_z), 0.04 * g),
        bone("upper_leg_l", Some(0), v(0.0, hip_y, hip_z), v(0.0, knee_y, hip_z), 0.075 * g),
        bone("lower_leg_l", Some(7), v(0.0, knee_y, hip_z), v(0.0, ankle_y, hip_z), 0.055 * g),
        bone("upper_leg_r", Some(0), v(0.0, hip_y, -hip_z), v(0.0, knee_y, -hip_z), 0.075 * g),
        bone("lower_leg_r", Some(9), v(0.0, knee_y, -hip_z), v(0.0, ankle_y, -hip_z), 0.055 * g),
    ];
    Ok((
        Skeleton::new(bones)?,
        Dimensions {
            knee_y,
            hip_y,
            hip_z,
        },
    ))
}

/// Segments around and rings along each bone's capsule.
fn tessellation(name: &str) -> (usize, usize, usize) {
    // (segments, cylinder rings, rings per hemispherical cap)
    match name {
        "pelvis" | "spine" => (40, 14, 6),
        "neck" => (16, 4, 3),
        n if n.contains("arm") => (16, 10, 3),
        _ => (20, 14, 4),
    }
}

fn capsule_surface(bone: &Bone, uv_rect: [f64; 4]) -> Result<TriMesh> {
    let (segments, body_rings, cap_rings) = tessellation(&bone.name);
    let axis = (bone.tail - bone.head).normalize();
    let frame = Frame::from_axis(axis);
    let r = bone.radius;
    let mut rings = Vec::new();
    for i in 1..=cap_rings {
        let theta = std::f64::consts::FRAC_PI_2 * i as f64 / cap_rings as f64;
        rings.push(Ring {
            center: bone.head - axis * (r * theta.cos()),
            radius1: r * theta.sin(),
            radius2: r * theta.sin(),
        });
    }
    for i in 1..body_rings {
        let t = i as f64 / body_rings as f64;
        rings.push(Ring {
            center: bone.head.lerp(&bone.tail, t),
            radius1: r,
            radius2: r,
        });
    }
    for i in (1..=cap_rings).rev() {
        let theta = std::f64::consts::FRAC_PI_2 * i as f64 / cap_rings as f64;
        rings.push(Ring {
            center: bone.tail + axis * (r * theta.cos()),
            radius1: r * theta.sin(),
            radius2: r * theta.sin(),
        });
    }
    lathe(frame, bone.head - axis * r, &rings, bone.tail + axis * r, segments, Some(uv_rect))
}

fn seam_groups(mesh: &TriMesh) -> Vec<Vec<u32>> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<[u64; 3], Vec<u32>> = BTreeMap::new();
    for (i, v) in mesh.vertices().iter().enumerate() {
        groups
            .entry([v.x.to_bits(), v.y.to_bits(), v.z.to_bits()])
            .or_default()
            .push(i as u32);
    }
    groups.into_values().filter(|g| g.len() > 1).collect()
}

/// Builds the capsule humanoid for the given shape parameters.
///
/// Deterministic: the same parameters always give a bit-identical model.
pub fn build_procedural_body(shape: ShapeParams) -> Result<BodyModel> {
    shape.validate()?;
    let (skeleton, _) = build_skeleton(&shape)?;
    let mut surfaces = Vec::new();
    let mut parts = Vec::new();
    let mut weights = Vec::new();
    let mut offset = 0;
    for (i, bone) in skeleton.bones().iter().enumerate() {
        let surface = capsule_surface(bone, chart_rect(CHART_CELLS[i]))?;
        for v in surface.vertices() {
            weights.push(bone_weights(&skeleton, i, v));
        }
        parts.push((bone.name.clone(), offset..offset + surface.vertex_count()));
        offset += surface.vertex_count();
        surfaces.push(surface);
    }
    let template = TriMesh::concat(&surfaces)?;
    let seams = seam_groups(&template);
    let mut body = BodyModel {
        template,
        skeleton,
        weights,
        shape,
        parts,
        seams,
        bridge: None,
    };
    body.template = body.weld(&body.template);
    Ok(body)
}

/// Body variant whose inner-leg gap is bridged by an ellipsoid from the
/// pelvis down to the knees, skinned to both leg chains.
///
/// The original vertices come first and are unchanged, so vertex `i < n` of
/// the proxy is vertex `i` of `body`.
pub fn build_dress_proxy(body: &BodyModel) -> Result<BodyModel> {
    let (_, dims) = build_skeleton(&body.shape)?;
    let g = body.shape.girth;
    let center = Vec3::new(0.0, 0.5 * (dims.hip_y + dims.knee_y), 0.0);
    let thigh = &body.skeleton.bones[body.skeleton.index_of("upper_leg_l").expect("procedural bone")];
    // Wide enough to wrap both thighs, tall enough to stay nearly
    // cylindrical along the skirt.
    let lateral = dims.hip_z + thigh.radius + 0.015 * g;
    let semi_axes = Vec3::new(lateral, 0.5 * (dims.hip_y - dims.knee_y) + 0.25, lateral);
    let frame = Frame {
        axis: Vec3::y(),
        e1: Vec3::z(),
        e2: Vec3::x(),
    };
    let ring_count = 16;
    let rings: Vec<Ring> = (1..ring_count)
        .map(|i| {
            let theta = std::f64::consts::PI * i as f64 / ring_count as f64;
            Ring {
                center: center - Vec3::y() * (semi_axes.y * theta.cos()),
                radius1: semi_axes.z * theta.sin(),
                radius2: semi_axes.x * theta.sin(),
            }
        })
        .collect();
    let bridge = lathe(
        frame,
        center - Vec3::y() * semi_axes.y,
        &rings,
        center + Vec3::y() * semi_axes.y,
        24,
        Some(chart_rect(BRIDGE_CELL)),
    )?;

    let sk = &body.skeleton;
    let idx = |n: &str| sk.index_of(n).expect("procedural bone");
    let (ul, ll, ur, lr) = (
        idx("upper_leg_l"),
        idx("lower_leg_l"),
        idx("upper_leg_r"),
        idx("lower_leg_r"),
    );
    let smooth = |t: f64| {
        let t = t.clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    };
    let pelvis = idx("pelvis");
    let mut weights = body.weights.clone();
    for v in bridge.vertices() {
        let left = smooth(0.5 + v.z / (2.0 * semi_axes.z));
        let upper = smooth((v.y - dims.knee_y) / (dims.hip_y - dims.knee_y));
        let hips = smooth((v.y - dims.hip_y) / 0.15);
        let legs = 1.0 - hips;
        let mut w: Influences = [
            (pelvis, hips),
            (ul, legs * left * upper),
            (ll, legs * left * (1.0 - upper)),
            (ur, legs * (1.0 - left) * upper),
            (lr, legs * (1.0 - left) * (1.0 - upper)),
        ]
        .into_iter()
        .filter(|&(_, x)| x > 0.0)
        .collect();
        w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        w.truncate(MAX_INFLUENCES);
        let sum: f64 = w.iter().map(|x| x.1).sum();
        for x in &mut w {
            x.1 /= sum;
        }
        w.sort_by_key(|x| x.0);
        weights.push(w);
    }
    let n = body.template.vertex_count();
    let template = TriMesh::concat(&[body.template.clone(), bridge.clone()])?;
    let mut parts = body.parts.clone();
    parts.push(("bridge".to_string(), n..n + bridge.vertex_count()));
    let mut seams = body.seams.clone();
    seams.extend(
        seam_groups(&bridge)
            .into_iter()
            .map(|g| g.into_iter().map(|i| i + n as u32).collect()),
    );
    Ok(BodyModel {
        template,
        skeleton: body.skeleton.clone(),
        weights,
        shape: body.shape,
        parts,
        seams,
        bridge: Some(BridgeShape { center, semi_axes }),
    })
}
