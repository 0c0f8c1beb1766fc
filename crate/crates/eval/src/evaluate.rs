//! Per-frame evaluation of the network, the LBS baseline and the
//! ground-truth round trip against simulated cloth.

use std::time::Instant;

use nalgebra::Isometry3;
use uvcloth_core::body::{MotionSequence, Pose};
use uvcloth_core::clothsim::simulate_sequence;
use uvcloth_core::dataset::{Dataset, Manifest, Rig, SimOverrides, Split, FIRST_SAMPLE_FRAME};
use uvcloth_core::garment::Template;
use uvcloth_core::transfer::{bake_offsets, bind_garment, reconstruct_garment, GarmentBinding};
use uvcloth_core::uvbake::UVMap;
use uvcloth_core::TriMesh;
use uvcloth_net::infer::infer_sample;
use uvcloth_net::train::Model;
use uvcloth_net::NetError;

use crate::error::{EvalError, Result};
use crate::lbs::LbsGarment;
use crate::metrics::{hem_variance, hem_vertices, mse_uv, mse_vertices};
use crate::report::{EvalReport, EvalRow, HemRow, Method};

/// Height band above the lowest rest vertex that counts as hem.
pub const HEM_BAND: f64 = 0.01;
/// Bone whose frame hem motion is measured in.
pub const TORSO_BONE: &str = "pelvis";
const REST_FRAMES: usize = 5;

/// Everything needed to score predictions for one dataset.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub rig: Rig,
    /// Rest garments bound to their reference body, for reconstruction.
    pub bindings: Vec<GarmentBinding>,
    /// Garments draped at the rest pose, skinned for the baseline.
    pub lbs: Vec<LbsGarment>,
    pub hems: Vec<Vec<usize>>,
    torso: usize,
}

/// Cloth of `template` after settling on the body at the rest pose.
pub fn draped_rest(rig: &Rig, template: Template, fps: f64) -> Result<TriMesh> {
    let i = template.index();
    let motion = MotionSequence::identity(REST_FRAMES, fps)?;
    let mut frames = simulate_sequence(&rig.garments[i], &rig.body, &motion, &rig.params[i])?;
    Ok(frames.swap_remove(0))
}

impl Evaluator {
    pub fn new(manifest: &Manifest) -> Result<Evaluator> {
        let rig = Rig::from_manifest(manifest, &SimOverrides::default())?;
        let mut bindings = Vec::new();
        let mut lbs = Vec::new();
        let mut hems = Vec::new();
        for t in Template::ALL {
            let (body, uv) = rig.reference(t);
            let rest = &rig.garments[t.index()].mesh;
            bindings.push(bind_garment(rest, body.template(), uv)?);
            let draped = draped_rest(&rig, t, manifest.fps)?;
            let draped_binding = bind_garment(&draped, body.template(), uv)?;
            lbs.push(LbsGarment::new(&draped, body, &draped_binding)?);
            hems.push(hem_vertices(rest, HEM_BAND));
        }
        let torso = rig
            .body
            .skeleton()
            .index_of(TORSO_BONE)
            .ok_or_else(|| EvalError::Invalid(format!("body has no {TORSO_BONE} bone")))?;
        Ok(Evaluator {
            rig,
            bindings,
            lbs,
            hems,
            torso,
        })
    }

    /// Posed reference body of `template` (the proxy for the dress).
    pub fn posed_reference(&self, template: Template, pose: &Pose) -> Result<TriMesh> {
        Ok(self.rig.reference(template).0.pose(pose)?)
    }

    /// Offsets from the posed reference body to `cloth`.
    pub fn offsets(&self, template: Template, posed_reference: &TriMesh, cloth: &TriMesh) -> Result<UVMap> {
        let i = template.index();
        let uv = self.rig.reference(template).1;
        Ok(bake_offsets(&self.rig.transfers[i], posed_reference, cloth, uv)?)
    }

    /// Garment rebuilt from offset maps in meters.
    pub fn reconstruct(&self, template: Template, posed_reference: &TriMesh, offsets: &UVMap) -> Result<TriMesh> {
        let i = template.index();
        Ok(reconstruct_garment(&self.bindings[i], &self.rig.garments[i].mesh, posed_reference, offsets)?.mesh)
    }

    fn torso_frame(&self, pose: &Pose) -> Result<Isometry3<f64>> {
        Ok(self.rig.body.skeleton().skinning_transforms(pose)?[self.torso])
    }

    /// Scores every sample frame of `action`.
    pub fn evaluate_action(&self, ds: &Dataset, model: &mut Model, action: &str) -> Result<ActionEval> {
        let entry = ds.manifest.action(action)?;
        let motion = ds.load_motion(action)?;
        let cloth: Vec<Vec<TriMesh>> = Template::ALL.iter().map(|&t| ds.load_cloth(action, t)).collect::<std::result::Result<_, _>>()?;
        let frames: Vec<usize> = (FIRST_SAMPLE_FRAME..entry.frames).collect();
        let templates = Template::ALL.len();
        let mut sums = vec![[[0.0f64; 2]; 3]; templates];
        let mut meshes: Vec<[Vec<TriMesh>; 4]> = (0..templates).map(|_| Default::default()).collect();
        let mut torso = Vec::with_capacity(frames.len());
        let (mut network_secs, mut lbs_secs) = (0.0, 0.0);

        for &k in &frames {
            let pose = &motion.frames[k];
            torso.push(self.torso_frame(pose)?);
            let sample = ds.load_sample(action, k)?;
            let started = Instant::now();
            let predicted = infer_sample(model, &sample, &ds.stats)?;
            network_secs += started.elapsed().as_secs_f64();
            for t in Template::ALL {
                let i = t.index();
                let (ref_body, _) = self.rig.reference(t);
                let posed = ref_body.pose(pose)?;
                let truth_mesh = &cloth[i][k];
                let truth = self.offsets(t, &posed, truth_mesh)?;

                let estimate = predicted[i].restrict_to(truth.mask())?;
                let started = Instant::now();
                let net_mesh = self.reconstruct(t, &posed, &estimate)?;
                network_secs += started.elapsed().as_secs_f64();

                let started = Instant::now();
                let lbs_mesh = self.lbs[i].pose(ref_body, pose)?;
                lbs_secs += started.elapsed().as_secs_f64();
                let lbs_offsets = self.offsets(t, &posed, &lbs_mesh)?;

                let gt_mesh = self.reconstruct(t, &posed, &truth)?;

                let scores = [
                    (mse_uv(&estimate, &truth)?, mse_vertices(&net_mesh, truth_mesh)?),
                    (mse_uv(&lbs_offsets, &truth)?, mse_vertices(&lbs_mesh, truth_mesh)?),
                    (mse_uv(&truth, &truth)?, mse_vertices(&gt_mesh, truth_mesh)?),
                ];
                for (m, (uv, vert)) in scores.into_iter().enumerate() {
                    sums[i][m][0] += uv;
                    sums[i][m][1] += vert;
                }
                meshes[i][0].push(net_mesh);
                meshes[i][1].push(lbs_mesh);
                meshes[i][2].push(gt_mesh);
                meshes[i][3].push(truth_mesh.clone());
            }
        }

        let n = frames.len() as f64;
        let mut rows = Vec::new();
        let mut hem = Vec::new();
        for t in Template::ALL {
            let i = t.index();
            for (m, method) in Method::ALL.into_iter().enumerate() {
                rows.push(EvalRow {
                    action: action.to_string(),
                    template: t.name().to_string(),
                    method,
                    mse_uv_mm2: sums[i][m][0] / n,
                    mse_vert_mm2: sums[i][m][1] / n,
                    frames: frames.len(),
                });
            }
            for (m, source) in Method::ALL.iter().map(|m| m.tag()).chain(["simulation"]).enumerate() {
                hem.push(HemRow {
                    action: action.to_string(),
                    template: t.name().to_string(),
                    source: source.to_string(),
                    variance_mm2: hem_variance(&meshes[i][m], &self.hems[i], &torso)?,
                });
            }
        }
        Ok(ActionEval {
            rows,
            hem,
            frames: frames.len(),
            network_secs,
            lbs_secs,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ActionEval {
    pub rows: Vec<EvalRow>,
    pub hem: Vec<HemRow>,
    pub frames: usize,
    pub network_secs: f64,
    pub lbs_secs: f64,
}

/// Evaluates every action of `split`.
pub fn run_eval(ds: &Dataset, model: &mut Model, split: Split) -> Result<EvalReport> {
    let found = ds.stats.hash();
    if found != model.stats_hash {
        return Err(NetError::StatsMismatch {
            expected: model.stats_hash.clone(),
            found,
        }
        .into());
    }
    let evaluator = Evaluator::new(&ds.manifest)?;
    run_eval_with(&evaluator, ds, model, split)
}

/// [`run_eval`] with a prepared evaluator.
pub fn run_eval_with(evaluator: &Evaluator, ds: &Dataset, model: &mut Model, split: Split) -> Result<EvalReport> {
    let mut report = EvalReport {
        split,
        ..Default::default()
    };
    let mut frames = 0;
    for entry in ds.manifest.actions_in(split) {
        log::info!("evaluating {}", entry.name);
        let a = evaluator.evaluate_action(ds, model, &entry.name)?;
        frames += a.frames;
        report.network_ms += a.network_secs * 1e3;
        report.lbs_ms += a.lbs_secs * 1e3;
        report.rows.extend(a.rows);
        report.hem.extend(a.hem);
    }
    if frames > 0 {
        report.network_ms /= frames as f64;
        report.lbs_ms /= frames as f64;
    }
    Ok(report)
}
