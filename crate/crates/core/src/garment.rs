//! Procedural garments fitted to a body's skeleton in the rest pose.

use serde::{Deserialize, Serialize};

use crate::body::{Bone, BodyModel};
use crate::error::{Error, Result};
use crate::geom::{tube, Frame, Ring, TriMesh, Vec3};

/// Target spacing between neighboring cloth vertices, in meters.
const SPACING: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    Tops,
    Bottoms,
    Dress,
}

impl Template {
    pub const ALL: [Template; 3] = [Template::Tops, Template::Bottoms, Template::Dress];

    pub fn name(self) -> &'static str {
        match self {
            Template::Tops => "tops",
            Template::Bottoms => "bottoms",
            Template::Dress => "dress",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_name(name: &str) -> Result<Template> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown garment template '{name}'")))
    }
}

impl std::fmt::Display for Template {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Rest-pose cloth mesh. Pinned vertices are attached to the body.
#[derive(Debug, Clone, PartialEq)]
pub struct Garment {
    pub name: String,
    pub template: Template,
    pub mesh: TriMesh,
    pub pinned: Vec<bool>,
}

struct Piece {
    mesh: TriMesh,
    pinned: Vec<bool>,
}

/// Tube from ring list with the first ring pinned.
fn pinned_tube(axis: Vec3, centers: &[Vec3], radii: &[f64], segments: usize) -> Result<Piece> {
    let rings: Vec<Ring> = centers
        .iter()
        .zip(radii)
        .map(|(&center, &r)| Ring {
            center,
            radius1: r,
            radius2: r,
        })
        .collect();
    let mesh = tube(Frame::from_axis(axis), &rings, segments)?;
    let pinned = (0..mesh.vertex_count()).map(|i| i < segments).collect();
    Ok(Piece { mesh, pinned })
}

fn ring_count(length: f64) -> usize {
    ((length / SPACING).round() as usize).max(1) + 1
}

fn segment_count(radius: f64) -> usize {
    ((std::f64::consts::TAU * radius / SPACING).round() as usize).max(8)
}

/// Straight tube between `from` and `to` with linearly varying radius.
fn straight(from: Vec3, to: Vec3, r0: f64, r1: f64) -> Result<Piece> {
    let n = ring_count((to - from).norm());
    let centers: Vec<Vec3> = (0..n).map(|i| from.lerp(&to, i as f64 / (n - 1) as f64)).collect();
    let radii: Vec<f64> = (0..n).map(|i| r0 + (r1 - r0) * i as f64 / (n - 1) as f64).collect();
    pinned_tube(to - from, &centers, &radii, segment_count(r0.max(r1)))
}

fn join(name: &str, template: Template, pieces: Vec<Piece>) -> Result<Garment> {
    let meshes: Vec<TriMesh> = pieces.iter().map(|p| p.mesh.clone()).collect();
    let mesh = TriMesh::concat(&meshes)?;
    let pinned = pieces.into_iter().flat_map(|p| p.pinned).collect();
    Ok(Garment {
        name: name.to_string(),
        template,
        mesh,
        pinned,
    })
}

fn bone<'a>(body: &'a BodyModel, name: &str) -> Result<&'a Bone> {
    let i = body
        .skeleton()
        .index_of(name)
        .ok_or_else(|| Error::InvalidSkeleton(format!("body has no bone '{name}'")))?;
    Ok(&body.skeleton().bones()[i])
}

/// Shirt: torso tube from chest to hips plus short sleeves.
fn shirt(body: &BodyModel, name: &str, hem_drop: f64, sleeve_share: f64) -> Result<Garment> {
    let spine = bone(body, "spine")?;
    let pelvis = bone(body, "pelvis")?;
    let top = Vec3::new(pelvis.head.x, spine.tail.y - 0.10, pelvis.head.z);
    let hem = Vec3::new(top.x, top.y - hem_drop, top.z);
    let r = spine.radius.max(pelvis.radius) + 0.03;
    let mut pieces = vec![straight(top, hem, r, r)?];
    for side in ["upper_arm_l", "upper_arm_r"] {
        let arm = bone(body, side)?;
        let dir = (arm.tail - arm.head).normalize();
        let start = arm.head + dir * 0.03;
        let end = arm.head + dir * (arm.length() * sleeve_share);
        pieces.push(straight(start, end, arm.radius + 0.03, arm.radius + 0.03)?);
    }
    join(name, Template::Tops, pieces)
}

pub fn build_tops(body: &BodyModel) -> Result<Garment> {
    let spine = bone(body, "spine")?;
    let pelvis = bone(body, "pelvis")?;
    let drop = (spine.tail.y - 0.10) - (pelvis.head.y + 0.03);
    shirt(body, "tops", drop, 0.8)
}

/// Shorter shirt with half sleeves; not used for training.
pub fn build_cropped_tops(body: &BodyModel) -> Result<Garment> {
    let spine = bone(body, "spine")?;
    let pelvis = bone(body, "pelvis")?;
    let drop = 0.6 * ((spine.tail.y - 0.10) - (pelvis.head.y + 0.03));
    shirt(body, "cropped_tops", drop, 0.5)
}

/// Shorts: waist tube over the pelvis plus a tube around each thigh.
pub fn build_bottoms(body: &BodyModel) -> Result<Garment> {
    let pelvis = bone(body, "pelvis")?;
    let r = pelvis.radius + 0.03;
    let top = Vec3::new(pelvis.head.x, pelvis.tail.y - 0.03, pelvis.head.z);
    // Ends where the pelvis capsule is still cylindrical; the capsule itself
    // reaches down to the crotch.
    let crotch_y = pelvis.head.y - pelvis.radius;
    let waist_bottom = Vec3::new(top.x, pelvis.head.y - 0.02, top.z);
    let mut pieces = vec![straight(top, waist_bottom, r, r)?];
    for side in ["upper_leg_l", "upper_leg_r"] {
        let thigh = bone(body, side)?;
        let lower = bone(body, &side.replace("upper", "lower"))?;
        let start = Vec3::new(thigh.head.x, crotch_y - 0.01, thigh.head.z);
        let end = Vec3::new(lower.head.x, lower.head.y - 0.2 * lower.length(), lower.head.z);
        let r = thigh.radius.max(lower.radius) + 0.01;
        pieces.push(straight(start, end, r, r)?);
    }
    join("bottoms", Template::Bottoms, pieces)
}

/// Flared skirt from the chest to below the knees.
pub fn build_dress(body: &BodyModel) -> Result<Garment> {
    let spine = bone(body, "spine")?;
    let pelvis = bone(body, "pelvis")?;
    let shin = bone(body, "lower_leg_l")?;
    let r_top = spine.radius.max(pelvis.radius) + 0.03;
    let top = Vec3::new(pelvis.head.x, spine.tail.y - 0.10, pelvis.head.z);
    let hem = Vec3::new(top.x, shin.head.y - 0.12 * shin.length(), top.z);
    let hip_clearance = {
        let thigh = bone(body, "upper_leg_l")?;
        thigh.head.z.abs() + thigh.radius + 0.05
    };
    let r_hem = (r_top + 0.08).max(hip_clearance + 0.04);
    let piece = straight(top, hem, r_top, r_hem)?;
    join("dress", Template::Dress, vec![piece])
}

pub fn build_garment(template: Template, body: &BodyModel) -> Result<Garment> {
    match template {
        Template::Tops => build_tops(body),
        Template::Bottoms => build_bottoms(body),
        Template::Dress => build_dress(body),
    }
}
