//! Dataset generation: simulate every action for the three garment
//! templates, bake body dynamics and garment offsets into UV maps, split by
//! action and write normalized training windows to disk.
//!
//! Directory layout:
//!
//! ```text
//! manifest.json
//! stats.json
//! actions/<name>/motion.txt
//! actions/<name>/cloth_<template>.csq
//! actions/<name>/v_<k>.uvm  a_<k>.uvm        (k ≥ 2)
//! actions/<name>/offset_<template>_<k>.uvm   (k ≥ 4)
//! ```

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body::{
    build_dress_proxy, build_procedural_body, load_motion, procedural_motion, save_motion, BodyModel, MotionSequence,
    ShapeParams, ACTION_KINDS,
};
use crate::clothsim::{load_sequence, save_sequence, simulate_sequence, SimParams};
use crate::error::{Error, Result};
use crate::garment::{build_garment, Garment, Template};
use crate::geom::TriMesh;
use crate::transfer::{bake_offsets, compute_body_to_cloth, BodyToClothTransfer};
use crate::uvbake::{
    acceleration_map, bake_positions, normalize, rasterize_uv_layout, velocity_map, NormStats, Semantic, StatsSet,
    UVMap, UvTransferMap,
};

pub const FORMAT_VERSION: u32 = 1;
/// First frame with a complete input window.
pub const FIRST_SAMPLE_FRAME: usize = 4;
/// Velocity and acceleration at frames k−2, k−1, k.
pub const INPUT_MAPS: usize = 6;
pub const INPUT_CHANNELS: usize = 3 * INPUT_MAPS;
pub const TARGET_CHANNELS: usize = 3 * Template::ALL.len();
/// Action kind that holds the rest pose for the whole sequence.
pub const REST_KIND: &str = "rest";
/// Smallest per-channel span of fitted stats (m). Static data would
/// otherwise give degenerate channels.
pub const MIN_STATS_SPAN: f64 = 1e-6;

pub const VELOCITY_STATS: &str = "velocity";
pub const ACCELERATION_STATS: &str = "acceleration";

pub fn offset_stats_name(template: Template) -> String {
    format!("offset_{}", template.name())
}

fn default_intensity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub name: String,
    /// One of the procedural action kinds or `rest`.
    pub kind: String,
    #[serde(default = "default_intensity")]
    pub intensity: f64,
    pub frames: usize,
}

/// Per-template simulation parameters; missing entries use the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimOverrides {
    pub tops: Option<SimParams>,
    pub bottoms: Option<SimParams>,
    pub dress: Option<SimParams>,
}

impl SimOverrides {
    pub fn params(&self, template: Template) -> SimParams {
        let o = match template {
            Template::Tops => &self.tops,
            Template::Bottoms => &self.bottoms,
            Template::Dress => &self.dress,
        };
        o.clone().unwrap_or_else(|| SimParams::preset(template))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub resolution: usize,
    pub fps: f64,
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub shape: ShapeParams,
    #[serde(default)]
    pub sim: SimOverrides,
    pub actions: Vec<ActionSpec>,
}

impl DatasetConfig {
    /// Eight short actions at 64×64, 6 train and 2 test. Intensities are
    /// drawn from `seed`.
    pub fn desk(seed: u64) -> DatasetConfig {
        let kinds = ["swing_arms", "walk", "jog", "jump", "punch", "twist", "wave", "side_step"];
        DatasetConfig::generated(&kinds, 40, 64, 0.75, seed)
    }

    /// 34 actions (22 train, 12 test) of about 142 frames at 256×256.
    pub fn full_scale(seed: u64) -> DatasetConfig {
        let kinds: Vec<&str> = ACTION_KINDS.iter().cycle().take(34).copied().collect();
        DatasetConfig::generated(&kinds, 142, 256, 22.0 / 34.0, seed)
    }

    fn generated(kinds: &[&str], frames: usize, resolution: usize, train_fraction: f64, seed: u64) -> DatasetConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions = kinds
            .iter()
            .enumerate()
            .map(|(i, kind)| ActionSpec {
                name: format!("{kind}_{i:02}"),
                kind: kind.to_string(),
                intensity: rng.random_range(0.8..1.2),
                frames,
            })
            .collect();
        DatasetConfig {
            resolution,
            fps: 30.0,
            train_fraction,
            seed,
            shape: ShapeParams::default(),
            sim: SimOverrides::default(),
            actions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 || !self.resolution.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "resolution {} must be a power of two ≥ 16",
                self.resolution
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidArgument(format!("fps {}", self.fps)));
        }
        let mut names = std::collections::BTreeSet::new();
        for a in &self.actions {
            if !names.insert(a.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate action name '{}'", a.name)));
            }
            if a.name.is_empty() || a.name.contains(['/', '\\']) || a.name.starts_with('.') {
                return Err(Error::InvalidArgument(format!("action name '{}' is not a plain file name", a.name)));
            }
            if a.kind != REST_KIND && !ACTION_KINDS.contains(&a.kind.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown action kind '{}'", a.kind)));
            }
            if a.frames <= FIRST_SAMPLE_FRAME {
                return Err(Error::InvalidArgument(format!(
                    "action '{}' has {} frames; at least {} needed",
                    a.name,
                    a.frames,
                    FIRST_SAMPLE_FRAME + 1
                )));
            }
        }
        for t in Template::ALL {
            self.sim.params(t).validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<DatasetConfig> {
        let c: DatasetConfig = toml::from_str(text).map_err(|e| Error::Format(format!("dataset config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DatasetConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DatasetConfig::from_toml(&text)
    }

    /// Hex SHA-256 over the simulation parameters of all templates.
    pub fn sim_config_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in Template::ALL {
            h.update(t.name().as_bytes());
            h.update(self.sim.params(t).to_toml().as_bytes());
        }
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEntry {
    pub name: String,
    pub kind: String,
    pub intensity: f64,
    pub frames: usize,
    pub split: Split,
}

impl ActionEntry {
    pub fn sample_count(&self) -> usize {
        self.frames.saturating_sub(FIRST_SAMPLE_FRAME)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedAction {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub resolution: usize,
    pub fps: f64,
    pub seed: u64,
    pub shape: ShapeParams,
    pub actions: Vec<ActionEntry>,
    #[serde(default)]
    pub skipped: Vec<SkippedAction>,
    pub stats_file: String,
    pub stats_hash: String,
    pub sim_config_hash: String,
}

impl Manifest {
    /// Manifest for `config` with every action split; stats not yet fitted.
    pub fn from_config(config: &DatasetConfig) -> Result<Manifest> {
        config.validate()?;
        let m = Manifest {
            format_version: FORMAT_VERSION,
            resolution: config.resolution,
            fps: config.fps,
            seed: config.seed,
            shape: config.shape,
            actions: config
                .actions
                .iter()
                .map(|a| ActionEntry {
                    name: a.name.clone(),
                    kind: a.kind.clone(),
                    intensity: a.intensity,
                    frames: a.frames,
                    split: Split::Train,
                })
                .collect(),
            skipped: Vec::new(),
            stats_file: "stats.json".into(),
            stats_hash: String::new(),
            sim_config_hash: config.sim_config_hash(),
        };
        split_actions(&m, config.train_fraction)
    }

    pub fn action(&self, name: &str) -> Result<&ActionEntry> {
        self.actions
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Dataset(format!("no action '{name}' in manifest")))
    }

    pub fn actions_in(&self, split: Split) -> impl Iterator<Item = &ActionEntry> {
        self.actions.iter().filter(move |a| a.split == split)
    }

    /// `(action, k)` of every sample in `split`.
    pub fn samples(&self, split: Split) -> Vec<(String, usize)> {
        self.actions_in(split)
            .flat_map(|a| (FIRST_SAMPLE_FRAME..a.frames).map(move |k| (a.name.clone(), k)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Manifest> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Dataset(format!(
                "manifest format version {} (expected {FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Deterministic per-action split: actions are ordered by the SHA-256 of
/// their name and the first `round(fraction·n)` go to training.
pub fn split_actions(manifest: &Manifest, train_fraction: f64) -> Result<Manifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = manifest.actions.len();
    if n < 2 {
        return Err(Error::Dataset(format!("{n} action(s); a split needs at least 2")));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<(String, usize)> = manifest
        .actions
        .iter()
        .enumerate()
        .map(|(i, a)| (hex(&Sha256::digest(a.name.as_bytes())), i))
        .collect();
    order.sort();
    let mut out = manifest.clone();
    for (rank, (_, i)) in order.into_iter().enumerate() {
        out.actions[i].split = if rank < n_train { Split::Train } else { Split::Test };
    }
    Ok(out)
}

/// Body, proxy, garments and the fixed correspondences shared by all actions.
#[derive(Debug, Clone)]
pub struct Rig {
    pub body: BodyModel,
    pub proxy: BodyModel,
    pub body_uv: UvTransferMap,
    pub proxy_uv: UvTransferMap,
    pub garments: Vec<Garment>,
    pub params: Vec<SimParams>,
    pub transfers: Vec<BodyToClothTransfer>,
}

impl Rig {
    pub fn new(shape: ShapeParams, sim: &SimOverrides, resolution: usize) -> Result<Rig> {
        let body = build_procedural_body(shape)?;
        let proxy = build_dress_proxy(&body)?;
        let body_uv = rasterize_uv_layout(body.template(), resolution, resolution)?;
        let proxy_uv = rasterize_uv_layout(proxy.template(), resolution, resolution)?;
        let mut rig = Rig {
            body,
            proxy,
            body_uv,
            proxy_uv,
            garments: Vec::new(),
            params: Vec::new(),
            transfers: Vec::new(),
        };
        for t in Template::ALL {
            let g = build_garment(t, &rig.body)?;
            let (b, uv) = rig.reference(t);
            let transfer = compute_body_to_cloth(t.name(), b.template(), uv, &g.mesh)?;
            rig.transfers.push(transfer);
            rig.garments.push(g);
            rig.params.push(sim.params(t));
        }
        Ok(rig)
    }

    pub fn from_manifest(manifest: &Manifest, sim: &SimOverrides) -> Result<Rig> {
        Rig::new(manifest.shape, sim, manifest.resolution)
    }

    /// Body and UV layout that offsets of `template` are baked against:
    /// the proxy for the dress, the plain body otherwise.
    pub fn reference(&self, template: Template) -> (&BodyModel, &UvTransferMap) {
        match template {
            Template::Dress => (&self.proxy, &self.proxy_uv),
            _ => (&self.body, &self.body_uv),
        }
    }

    pub fn resolution(&self) -> usize {
        self.body_uv.size()
    }
}

/// Everything generated for one action, in meters and unnormalized.
#[derive(Debug, Clone)]
pub struct ActionData {
    pub name: String,
    pub motion: MotionSequence,
    /// Simulated cloth frames per template.
    pub cloth: Vec<Vec<TriMesh>>,
    /// `velocity[k]` is `v_k`; `v_0` is zero.
    pub velocity: Vec<UVMap>,
    /// `acceleration[k]` is `a_k`; `a_0` and `a_1` are zero.
    pub acceleration: Vec<UVMap>,
    /// Offset maps per template and frame.
    pub offsets: Vec<Vec<UVMap>>,
}

pub fn action_motion(spec: &ActionEntry, fps: f64) -> Result<MotionSequence> {
    motion_of_kind(&spec.kind, spec.frames, fps, spec.intensity)
}

/// Motion of a procedural action kind or [`REST_KIND`].
pub fn motion_of_kind(kind: &str, frames: usize, fps: f64, intensity: f64) -> Result<MotionSequence> {
    if kind == REST_KIND {
        MotionSequence::identity(frames, fps)
    } else {
        procedural_motion(kind, frames, fps, intensity)
    }
}

/// Simulates and bakes one action.
pub fn simulate_action(rig: &Rig, spec: &ActionEntry, fps: f64) -> Result<ActionData> {
    let motion = action_motion(spec, fps)?;
    let mut cloth = Vec::with_capacity(Template::ALL.len());
    for t in Template::ALL {
        let i = t.index();
        cloth.push(simulate_sequence(&rig.garments[i], &rig.body, &motion, &rig.params[i])?);
    }
    let n = motion.len();
    let mut positions = Vec::with_capacity(n);
    let mut offsets: Vec<Vec<UVMap>> = vec![Vec::with_capacity(n); Template::ALL.len()];
    for (k, pose) in motion.frames.iter().enumerate() {
        let posed = rig.body.pose(pose)?;
        let posed_proxy = rig.proxy.pose(pose)?;
        positions.push(bake_positions(&rig.body_uv, &posed)?);
        for t in Template::ALL {
            let (reference, uv) = match t {
                Template::Dress => (&posed_proxy, &rig.proxy_uv),
                _ => (&posed, &rig.body_uv),
            };
            let i = t.index();
            offsets[i].push(bake_offsets(&rig.transfers[i], reference, &cloth[i][k], uv)?);
        }
    }
    let mask = rig.body_uv.mask();
    let zero = |s| UVMap::zeros(rig.resolution(), s, mask.clone());
    let mut velocity = vec![zero(Semantic::Velocity)?, velocity_map(&positions[1], &positions[0])?];
    let mut acceleration = vec![zero(Semantic::Acceleration)?, zero(Semantic::Acceleration)?];
    for k in 2..n {
        let v = velocity_map(&positions[k], &positions[k - 1])?;
        acceleration.push(acceleration_map(&v, &velocity[k - 1])?);
        velocity.push(v);
    }
    Ok(ActionData {
        name: spec.name.clone(),
        motion,
        cloth,
        velocity,
        acceleration,
        offsets,
    })
}

/// Bounds over valid pixels, widened to at least [`MIN_STATS_SPAN`].
fn fit_padded<'a>(maps: impl IntoIterator<Item = &'a UVMap>, name: &str) -> Result<NormStats> {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for map in maps {
        for (v, &m) in map.data().iter().zip(map.mask()) {
            if m {
                for c in 0..3 {
                    min[c] = min[c].min(v[c]);
                    max[c] = max[c].max(v[c]);
                }
            }
        }
    }
    if !min[0].is_finite() {
        return Err(Error::Dataset(format!("no valid pixels to fit {name}")));
    }
    for c in 0..3 {
        let span = max[c] - min[c];
        if span < MIN_STATS_SPAN {
            let pad = 0.5 * (MIN_STATS_SPAN - span);
            min[c] -= pad;
            max[c] += pad;
        }
    }
    Ok(NormStats { min, max })
}

/// Normalization stats from the training actions only. Maps outside any
/// training window are ignored.
pub fn fit_stats(data: &[ActionData], manifest: &Manifest) -> Result<StatsSet> {
    let train: Vec<&ActionData> = data
        .iter()
        .filter(|d| manifest.action(&d.name).map(|a| a.split == Split::Train).unwrap_or(false))
        .collect();
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let mut stats = StatsSet::default();
    let first = FIRST_SAMPLE_FRAME - 2;
    stats.insert(
        VELOCITY_STATS,
        fit_padded(train.iter().flat_map(|d| &d.velocity[first..]), VELOCITY_STATS)?,
    );
    stats.insert(
        ACCELERATION_STATS,
        fit_padded(train.iter().flat_map(|d| &d.acceleration[first..]), ACCELERATION_STATS)?,
    );
    for t in Template::ALL {
        let name = offset_stats_name(t);
        let maps = train.iter().flat_map(|d| &d.offsets[t.index()][FIRST_SAMPLE_FRAME..]);
        stats.insert(&name, fit_padded(maps, &name)?);
    }
    Ok(stats)
}

fn action_dir(root: &Path, name: &str) -> PathBuf {
    root.join("actions").join(name)
}

fn velocity_file(root: &Path, action: &str, k: usize) -> PathBuf {
    action_dir(root, action).join(format!("v_{k:04}.uvm"))
}

fn acceleration_file(root: &Path, action: &str, k: usize) -> PathBuf {
    action_dir(root, action).join(format!("a_{k:04}.uvm"))
}

fn offset_file(root: &Path, action: &str, template: Template, k: usize) -> PathBuf {
    action_dir(root, action).join(format!("offset_{}_{k:04}.uvm", template.name()))
}

fn cloth_file(root: &Path, action: &str, template: Template) -> PathBuf {
    action_dir(root, action).join(format!("cloth_{}.csq", template.name()))
}

fn write_action(root: &Path, data: &ActionData, stats: &StatsSet) -> Result<()> {
    let dir = action_dir(root, &data.name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    save_motion(&data.motion, dir.join("motion.txt"))?;
    let vs = stats.get(VELOCITY_STATS)?;
    let acs = stats.get(ACCELERATION_STATS)?;
    let n = data.motion.len();
    for k in 2..n {
        normalize(&data.velocity[k], &vs)?.save(velocity_file(root, &data.name, k))?;
        normalize(&data.acceleration[k], &acs)?.save(acceleration_file(root, &data.name, k))?;
    }
    for t in Template::ALL {
        let os = stats.get(&offset_stats_name(t))?;
        save_sequence(&data.cloth[t.index()], cloth_file(root, &data.name, t))?;
        for k in FIRST_SAMPLE_FRAME..n {
            normalize(&data.offsets[t.index()][k], &os)?.save(offset_file(root, &data.name, t, k))?;
        }
    }
    Ok(())
}

/// Simulates, bakes, normalizes and writes the whole dataset to `out`.
///
/// Actions whose simulation explodes are dropped from the manifest and
/// listed under `skipped`.
pub fn generate_dataset(config: &DatasetConfig, out: impl AsRef<Path>) -> Result<Manifest> {
    let out = out.as_ref();
    let mut manifest = Manifest::from_config(config)?;
    let rig = Rig::new(config.shape, &config.sim, config.resolution)?;
    let mut data = Vec::new();
    let mut kept = Vec::new();
    for entry in &manifest.actions {
        match simulate_action(&rig, entry, config.fps) {
            Ok(d) => {
                data.push(d);
                kept.push(entry.clone());
            }
            Err(Error::Explosion { vertex, reason }) => {
                log::warn!("skipping action '{}': simulation exploded at vertex {vertex}: {reason}", entry.name);
                manifest.skipped.push(SkippedAction {
                    name: entry.name.clone(),
                    reason: format!("simulation exploded at vertex {vertex}: {reason}"),
                });
            }
            Err(e) => return Err(e),
        }
    }
    manifest.actions = kept;
    if manifest.actions_in(Split::Test).next().is_none() {
        log::warn!("test split is empty after skipping exploded actions");
    }
    let stats = fit_stats(&data, &manifest)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    stats.save(out.join(&manifest.stats_file))?;
    manifest.stats_hash = stats.hash();
    for d in &data {
        write_action(out, d, &stats)?;
    }
    let path = out.join("manifest.json");
    std::fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// One network sample, normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub action: String,
    pub k: usize,
    /// `[v_{k−2}, v_{k−1}, v_k, a_{k−2}, a_{k−1}, a_k]`.
    pub inputs: Vec<UVMap>,
    /// Offset maps of tops, bottoms and dress; each carries its mask.
    pub targets: Vec<UVMap>,
}

impl DatasetSample {
    pub fn size(&self) -> usize {
        self.inputs[0].size()
    }

    fn planes(maps: &[UVMap]) -> Vec<f64> {
        let n = maps[0].size() * maps[0].size();
        let mut out = Vec::with_capacity(3 * maps.len() * n);
        for m in maps {
            for c in 0..3 {
                out.extend(m.data().iter().map(|v| v[c]));
            }
        }
        out
    }

    /// Input as 18 planes of `size × size`, channel-major.
    pub fn input_planes(&self) -> Vec<f64> {
        DatasetSample::planes(&self.inputs)
    }

    /// Targets as 9 planes.
    pub fn target_planes(&self) -> Vec<f64> {
        DatasetSample::planes(&self.targets)
    }

    /// Target masks as 3 planes of 0/1.
    pub fn mask_planes(&self) -> Vec<f64> {
        self.targets
            .iter()
            .flat_map(|m| m.mask().iter().map(|&b| if b { 1.0 } else { 0.0 }))
            .collect()
    }
}

/// A dataset directory opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub stats: StatsSet,
}

impl Dataset {
    /// Reads the manifest and stats and checks that they belong together.
    pub fn open(root: impl AsRef<Path>) -> Result<Dataset> {
        let root = root.as_ref().to_path_buf();
        let path = root.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest::from_json(&text)?;
        let stats = StatsSet::load(root.join(&manifest.stats_file))?;
        if stats.hash() != manifest.stats_hash {
            return Err(Error::Dataset(format!(
                "stats file hash {} does not match manifest {}",
                stats.hash(),
                manifest.stats_hash
            )));
        }
        Ok(Dataset { root, manifest, stats })
    }

    pub fn load_sample(&self, action: &str, k: usize) -> Result<DatasetSample> {
        let entry = self.manifest.action(action)?;
        if k < FIRST_SAMPLE_FRAME {
            return Err(Error::Dataset(format!(
                "frame {k} has no full input window (first is {FIRST_SAMPLE_FRAME})"
            )));
        }
        if k >= entry.frames {
            return Err(Error::Dataset(format!("action '{action}' has {} frames, asked for {k}", entry.frames)));
        }
        let load = |path: PathBuf| -> Result<UVMap> {
            let m = UVMap::load(&path)?;
            if m.size() != self.manifest.resolution || m.semantic() != Semantic::Normalized {
                return Err(Error::Dataset(format!("{} is not a normalized {}² map", path.display(), self.manifest.resolution)));
            }
            Ok(m)
        };
        let mut inputs = Vec::with_capacity(INPUT_MAPS);
        for j in (k - 2)..=k {
            inputs.push(load(velocity_file(&self.root, action, j))?);
        }
        for j in (k - 2)..=k {
            inputs.push(load(acceleration_file(&self.root, action, j))?);
        }
        let targets = Template::ALL
            .iter()
            .map(|&t| load(offset_file(&self.root, action, t, k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetSample {
            action: action.to_string(),
            k,
            inputs,
            targets,
        })
    }

    pub fn load_cloth(&self, action: &str, template: Template) -> Result<Vec<TriMesh>> {
        self.manifest.action(action)?;
        load_sequence(cloth_file(&self.root, action, template))
    }

    pub fn load_motion(&self, action: &str) -> Result<MotionSequence> {
        self.manifest.action(action)?;
        load_motion(action_dir(&self.root, action).join("motion.txt"))
    }

    pub fn offset_stats(&self, template: Template) -> Result<NormStats> {
        self.stats.get(&offset_stats_name(template))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest_with(n: usize) -> Manifest {
        let config = DatasetConfig {
            actions: (0..n)
                .map(|i| ActionSpec {
                    name: format!("action_{i}"),
                    kind: "walk".into(),
                    intensity: 1.0,
                    frames: 10,
                })
                .collect(),
            ..DatasetConfig::desk(0)
        };
        let mut m = Manifest::from_config(&config).unwrap();
        for a in &mut m.actions {
            a.split = Split::Train;
        }
        m
    }

    fn count(m: &Manifest, s: Split) -> usize {
        m.actions_in(s).count()
    }

    #[test]
    fn full_scale_split_is_22_to_12() {
        let c = DatasetConfig::full_scale(3);
        let m = Manifest::from_config(&c).unwrap();
        assert_eq!(m.actions.len(), 34);
        assert_eq!(count(&m, Split::Train), 22);
        assert_eq!(count(&m, Split::Test), 12);
        assert_eq!(m.samples(Split::Train).len(), 22 * (142 - 4));
    }

    #[test]
    fn desk_split_is_6_to_2() {
        let m = Manifest::from_config(&DatasetConfig::desk(0)).unwrap();
        assert_eq!(count(&m, Split::Train), 6);
        assert_eq!(count(&m, Split::Test), 2);
    }

    #[test]
    fn two_actions_split_evenly() {
        let m = split_actions(&manifest_with(2), 0.5).unwrap();
        assert_eq!(count(&m, Split::Train), 1);
        assert_eq!(count(&m, Split::Test), 1);
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_actions(&manifest_with(4), 0.0).is_err());
        assert!(split_actions(&manifest_with(4), 1.0).is_err());
        assert!(split_actions(&manifest_with(4), f64::NAN).is_err());
        let mut one = manifest_with(2);
        one.actions.truncate(1);
        assert!(split_actions(&one, 0.5).is_err());
    }

    #[test]
    fn split_ignores_listing_order() {
        let m = manifest_with(9);
        let mut reversed = m.clone();
        reversed.actions.reverse();
        let a = split_actions(&m, 0.6).unwrap();
        let b = split_actions(&reversed, 0.6).unwrap();
        for e in &a.actions {
            assert_eq!(b.action(&e.name).unwrap().split, e.split);
        }
    }

    proptest! {
        #[test]
        fn split_partitions_actions(n in 2usize..60, fraction in 0.01f64..0.99) {
            let m = split_actions(&manifest_with(n), fraction).unwrap();
            let train = count(&m, Split::Train);
            let test = count(&m, Split::Test);
            prop_assert_eq!(train + test, n);
            prop_assert!(train >= 1 && test >= 1);
            let expected = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
            prop_assert_eq!(train, expected);
            prop_assert_eq!(split_actions(&m, fraction).unwrap(), m);
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = DatasetConfig::desk(11);
        c.sim.dress = Some(SimParams {
            k_bend: 2.5,
            ..SimParams::default()
        });
        let back = DatasetConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.sim.params(Template::Dress).k_bend, 2.5);
        assert_eq!(back.sim.params(Template::Bottoms), SimParams::preset(Template::Bottoms));
        assert_ne!(c.sim_config_hash(), DatasetConfig::desk(11).sim_config_hash());
    }

    #[test]
    fn config_rejects_bad_actions() {
        let mut c = DatasetConfig::desk(0);
        c.actions[0].frames = 4;
        assert!(c.validate().is_err());
        let mut c = DatasetConfig::desk(0);
        c.actions[1].name = c.actions[0].name.clone();
        assert!(c.validate().is_err());
        let mut c = DatasetConfig::desk(0);
        c.actions[0].kind = "moonwalk".into();
        assert!(c.validate().is_err());
        let mut c = DatasetConfig::desk(0);
        c.actions[0].name = "../x".into();
        assert!(c.validate().is_err());
        let mut c = DatasetConfig::desk(0);
        c.resolution = 48;
        assert!(c.validate().is_err());
        assert!(DatasetConfig::from_toml("resolution = 64\nbogus = 1").is_err());
    }

    #[test]
    fn padded_fit_widens_constant_channels() {
        let map = UVMap::new(2, Semantic::Velocity, vec![[0.5, 1.0, -2.0]; 4], vec![true; 4]).unwrap();
        let s = fit_padded([&map], "v").unwrap();
        for c in 0..3 {
            assert!((s.max[c] - s.min[c] - MIN_STATS_SPAN).abs() < 1e-15);
            assert!((0.5 * (s.max[c] + s.min[c]) - map.data()[0][c]).abs() < 1e-15);
        }
        let empty = UVMap::zeros(2, Semantic::Velocity, vec![false; 4]).unwrap();
        assert!(fit_padded([&empty], "v").is_err());
    }
}
