//! Motion sequences: a plain-text file format and a small library of
//! procedural actions.
//!
//! File layout:
//!
//! ```text
//! bones: pelvis spine ...
//! fps: 30
//! tx ty tz  w x y z  w x y z ...   (one line per frame)
//! ```

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Unit, UnitQuaternion, Quaternion};

use super::{Pose, BONE_NAMES};
use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Shortest sequence that still yields one training window.
pub const MIN_FRAMES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frame_rate: f64,
    pub bone_names: Vec<String>,
    pub frames: Vec<Pose>,
}

impl MotionSequence {
    pub fn new(frame_rate: f64, bone_names: Vec<String>, frames: Vec<Pose>) -> Result<Self> {
        let m = MotionSequence {
            frame_rate,
            bone_names,
            frames,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("frame rate {}", self.frame_rate)));
        }
        if self.frames.len() < MIN_FRAMES {
            return Err(Error::InvalidArgument(format!(
                "{} frames (at least {MIN_FRAMES} required)",
                self.frames.len()
            )));
        }
        for (k, f) in self.frames.iter().enumerate() {
            if f.rotations.len() != self.bone_names.len() {
                return Err(Error::Mismatch(format!(
                    "frame {k} has {} rotations for {} bones",
                    f.rotations.len(),
                    self.bone_names.len()
                )));
            }
            for q in &f.rotations {
                if (q.quaternion().norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!("frame {k} has a non-unit quaternion")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Static sequence in the rest pose.
    pub fn identity(frames: usize, frame_rate: f64) -> Result<Self> {
        let names: Vec<String> = BONE_NAMES.iter().map(|s| s.to_string()).collect();
        let pose = Pose::identity(names.len());
        MotionSequence::new(frame_rate, names, vec![pose; frames])
    }
}

pub fn format_motion(motion: &MotionSequence) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "bones: {}", motion.bone_names.join(" "));
    let _ = writeln!(out, "fps: {:.8e}", motion.frame_rate);
    for f in &motion.frames {
        let t = f.root_translation;
        let _ = write!(out, "{:.8e} {:.8e} {:.8e}", t.x, t.y, t.z);
        for q in &f.rotations {
            let _ = write!(out, "  {:.8e} {:.8e} {:.8e} {:.8e}", q.w, q.i, q.j, q.k);
        }
        out.push('\n');
    }
    out
}

pub fn save_motion(motion: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_motion(motion)).map_err(|e| Error::io(path, e))
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_motion(&text)
}

/// Parses the motion text format. Bone names must belong to the procedural
/// skeleton.
pub fn parse_motion(text: &str) -> Result<MotionSequence> {
    let mut bones: Option<Vec<String>> = None;
    let mut fps: Option<f64> = None;
    let mut frames = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        if let Some(rest) = content.strip_prefix("bones:") {
            let names: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            for n in &names {
                if !BONE_NAMES.contains(&n.as_str()) {
                    return Err(Error::Parse {
                        line,
                        message: format!("unknown bone name '{n}'"),
                    });
                }
            }
            bones = Some(names);
            continue;
        }
        if let Some(rest) = content.strip_prefix("fps:") {
            fps = Some(rest.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad frame rate '{}'", rest.trim()),
            })?);
            continue;
        }
        let names = bones.as_ref().ok_or_else(|| Error::Parse {
            line,
            message: "frame data before the 'bones:' header".into(),
        })?;
        let values: Vec<f64> = content
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("'{t}' is not a number"),
                })
            })
            .collect::<Result<_>>()?;
        let expected = 3 + 4 * names.len();
        if values.len() != expected {
            return Err(Error::Parse {
                line,
                message: format!(
                    "{} values, expected {expected} (translation + w x y z per bone)",
                    values.len()
                ),
            });
        }
        let rotations = values[3..]
            .chunks_exact(4)
            .map(|c| {
                let q = Quaternion::new(c[0], c[1], c[2], c[3]);
                if (q.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::Parse {
                        line,
                        message: format!("quaternion {c:?} is not unit length"),
                    });
                }
                Ok(Unit::new_normalize(q))
            })
            .collect::<Result<Vec<_>>>()?;
        frames.push(Pose {
            root_translation: Vec3::new(values[0], values[1], values[2]),
            rotations,
        });
    }
    let bones = bones.ok_or_else(|| Error::Parse {
        line: 0,
        message: "missing 'bones:' header".into(),
    })?;
    let fps = fps.ok_or_else(|| Error::Parse {
        line: 0,
        message: "missing 'fps:' header".into(),
    })?;
    MotionSequence::new(fps, bones, frames)
}

/// Names of the procedural actions understood by [`procedural_motion`].
pub const ACTION_KINDS: [&str; 13] = [
    "swing_arms",
    "walk",
    "jog",
    "jump",
    "punch",
    "twist",
    "squat",
    "wave",
    "side_step",
    "kick",
    "stretch_arms",
    "spin",
    "idle",
];

fn rot(axis: Vec3, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle)
}

fn bone(name: &str) -> usize {
    BONE_NAMES.iter().position(|b| *b == name).expect("known bone")
}

/// Generates a procedural action on the standard skeleton.
///
/// `intensity` scales amplitudes and speeds. Frame 0 is always the rest pose
/// and motion ramps in over the first 0.3 s.
pub fn procedural_motion(kind: &str, frames: usize, fps: f64, intensity: f64) -> Result<MotionSequence> {
    if !ACTION_KINDS.contains(&kind) {
        return Err(Error::InvalidArgument(format!("unknown action '{kind}'")));
    }
    let s = intensity;
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let t = k as f64 / fps;
        let ramp = {
            let u = (t / 0.3).min(1.0);
            u * u * (3.0 - 2.0 * u)
        };
        let mut pose = Pose::identity(BONE_NAMES.len());
        let set = |pose: &mut Pose, b: &str, q: UnitQuaternion<f64>| pose.rotations[bone(b)] = q;
        match kind {
            "swing_arms" => {
                let a = 0.7 * s * (TAU * 1.2 * t).sin();
                set(&mut pose, "upper_arm_l", rot(x, a));
                set(&mut pose, "upper_arm_r", rot(x, a));
                set(&mut pose, "lower_arm_l", rot(y, 0.3 * s * ramp));
                set(&mut pose, "lower_arm_r", rot(y, -0.3 * s * ramp));
            }
            "walk" | "jog" => {
                let (f, amp, speed) = if kind == "walk" { (1.0, 0.45, 0.8) } else { (1.6, 0.6, 1.8) };
                let ph = TAU * f * s.sqrt() * t;
                let swing = amp * s * ph.sin();
                set(&mut pose, "upper_leg_l", rot(z, swing));
                set(&mut pose, "upper_leg_r", rot(z, -swing));
                set(&mut pose, "lower_leg_l", rot(z, -0.5 * amp * s * (1.0 - ph.cos()) * 0.5 * ramp));
                set(&mut pose, "lower_leg_r", rot(z, -0.5 * amp * s * (1.0 + ph.cos()) * 0.5 * ramp));
                let lower = 0.9 * ramp;
                set(&mut pose, "upper_arm_l", rot(y, -0.8 * swing) * rot(x, lower));
                set(&mut pose, "upper_arm_r", rot(y, -0.8 * swing) * rot(x, -lower));
                pose.root_translation = Vec3::new(
                    speed * s * t * ramp,
                    0.02 * s * (2.0 * ph).sin().abs(),
                    0.0,
                );
            }
            "jump" => {
                let period = 0.8;
                let phase = (t / period).fract();
                let air = if phase > 0.4 { (PI * (phase - 0.4) / 0.6).sin() } else { 0.0 };
                let crouch = if phase <= 0.4 { (PI * phase / 0.4).sin() } else { 0.0 };
                let crouch = crouch * ramp;
                pose.root_translation = Vec3::new(0.0, 0.25 * s * air - 0.12 * s * crouch, 0.0);
                set(&mut pose, "upper_leg_l", rot(z, 0.7 * s * crouch));
                set(&mut pose, "upper_leg_r", rot(z, 0.7 * s * crouch));
                set(&mut pose, "lower_leg_l", rot(z, -1.2 * s * crouch));
                set(&mut pose, "lower_leg_r", rot(z, -1.2 * s * crouch));
                set(&mut pose, "upper_arm_l", rot(x, -0.8 * s * air + 0.5 * crouch));
                set(&mut pose, "upper_arm_r", rot(x, 0.8 * s * air - 0.5 * crouch));
            }
            "punch" => {
                let phase = (t / 0.7).fract();
                let strike = (PI * phase).sin().powi(3) * ramp;
                set(&mut pose, "upper_arm_r", rot(y, -1.3 * s * ramp) * rot(x, -0.2 * ramp));
                set(&mut pose, "lower_arm_r", rot(y, -1.4 * s * (1.0 - strike) * ramp));
                set(&mut pose, "upper_arm_l", rot(y, 1.0 * s * ramp));
                set(&mut pose, "lower_arm_l", rot(y, 1.5 * s * ramp));
                set(&mut pose, "spine", rot(y, -0.35 * s * strike));
            }
            "twist" => {
                let a = 0.6 * s * (TAU * 0.8 * t).sin();
                set(&mut pose, "spine", rot(y, a));
                set(&mut pose, "pelvis", rot(y, -0.3 * a));
                set(&mut pose, "upper_arm_l", rot(x, 0.6 * ramp));
                set(&mut pose, "upper_arm_r", rot(x, -0.6 * ramp));
            }
            "squat" => {
                let d = 0.5 * (1.0 - (TAU * 0.6 * s.sqrt() * t).cos());
                pose.root_translation = Vec3::new(0.0, -0.25 * s * d, 0.0);
                set(&mut pose, "upper_leg_l", rot(z, 1.0 * s * d));
                set(&mut pose, "upper_leg_r", rot(z, 1.0 * s * d));
                set(&mut pose, "lower_leg_l", rot(z, -2.0 * s * d));
                set(&mut pose, "lower_leg_r", rot(z, -2.0 * s * d));
                set(&mut pose, "upper_arm_l", rot(y, 0.9 * s * d));
                set(&mut pose, "upper_arm_r", rot(y, -0.9 * s * d));
            }
            "wave" => {
                set(&mut pose, "upper_arm_l", rot(x, -1.0 * s * ramp));
                set(&mut pose, "lower_arm_l", rot(x, -0.6 * s * (TAU * 2.0 * t).sin() * ramp));
                set(&mut pose, "upper_arm_r", rot(x, -0.9 * ramp));
            }
            "side_step" => {
                let p = (TAU * 0.7 * t).sin();
                pose.root_translation = Vec3::new(0.0, 0.0, 0.25 * s * p);
                let a = 0.25 * s * (TAU * 0.7 * t).cos() * ramp;
                set(&mut pose, "upper_leg_l", rot(x, -a));
                set(&mut pose, "upper_leg_r", rot(x, a));
                set(&mut pose, "upper_arm_l", rot(x, 0.7 * ramp));
                set(&mut pose, "upper_arm_r", rot(x, -0.7 * ramp));
            }
            "kick" => {
                let phase = (t / 1.1).fract();
                let kick = (PI * phase).sin().powi(3) * ramp;
                set(&mut pose, "upper_leg_r", rot(z, 1.3 * s * kick));
                set(&mut pose, "lower_leg_r", rot(z, -0.8 * s * (1.0 - kick) * ramp));
                set(&mut pose, "upper_arm_l", rot(y, -0.5 * s * kick));
                set(&mut pose, "upper_arm_r", rot(y, -0.5 * s * kick));
                set(&mut pose, "spine", rot(z, -0.2 * s * kick));
            }
            "stretch_arms" => {
                let d = 0.5 * (1.0 - (TAU * 0.4 * t).cos());
                set(&mut pose, "upper_arm_l", rot(x, -1.2 * s * d));
                set(&mut pose, "upper_arm_r", rot(x, 1.2 * s * d));
                set(&mut pose, "spine", rot(z, -0.15 * s * d));
            }
            "spin" => {
                let angle = 2.0 * s * t * ramp;
                set(&mut pose, "pelvis", rot(y, angle));
                set(&mut pose, "upper_arm_l", rot(x, 0.4 * ramp));
                set(&mut pose, "upper_arm_r", rot(x, -0.4 * ramp));
            }
            "idle" => {}
            _ => unreachable!(),
        }
        out.push(pose);
    }
    MotionSequence::new(fps, BONE_NAMES.iter().map(|s| s.to_string()).collect(), out)
}
