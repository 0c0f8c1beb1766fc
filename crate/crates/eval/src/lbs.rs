//! Linear blend skinning baseline: the garment follows the skeleton rigidly
//! with the weights of the body point it is bound to.

use uvcloth_core::body::{skin_points, BodyModel, Influences, Pose};
use uvcloth_core::transfer::{BindStatus, GarmentBinding};
use uvcloth_core::TriMesh;

use crate::error::{EvalError, Result};

/// Garment rest mesh with one set of skinning weights per vertex.
#[derive(Debug, Clone)]
pub struct LbsGarment {
    pub rest: TriMesh,
    pub weights: Vec<Influences>,
}

/// Barycentric blend of the bound triangle's vertex weights.
pub fn blended_weights(body: &BodyModel, binding: &GarmentBinding) -> Result<Vec<Influences>> {
    let faces = body.template().faces();
    let bones = body.skeleton().len();
    binding
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.status == BindStatus::Unbound {
                return Err(EvalError::Unbound { vertex: i });
            }
            let face = faces
                .get(v.face as usize)
                .ok_or_else(|| EvalError::Mismatch(format!("binding face {} is not on this body", v.face)))?;
            let mut acc = vec![0.0; bones];
            for (&corner, &b) in face.iter().zip(&v.barycentric) {
                for &(bone, w) in &body.weights()[corner as usize] {
                    acc[bone] += b * w;
                }
            }
            let total: f64 = acc.iter().sum();
            Ok(acc
                .into_iter()
                .enumerate()
                .filter(|&(_, w)| w > 0.0)
                .map(|(bone, w)| (bone, w / total))
                .collect())
        })
        .collect()
}

impl LbsGarment {
    pub fn new(rest: &TriMesh, body: &BodyModel, binding: &GarmentBinding) -> Result<Self> {
        if binding.len() != rest.vertex_count() {
            return Err(EvalError::Mismatch(format!(
                "binding has {} vertices, garment {}",
                binding.len(),
                rest.vertex_count()
            )));
        }
        Ok(LbsGarment {
            rest: rest.clone(),
            weights: blended_weights(body, binding)?,
        })
    }

    pub fn pose(&self, body: &BodyModel, pose: &Pose) -> Result<TriMesh> {
        let xf = body.skeleton().skinning_transforms(pose)?;
        Ok(self.rest.with_positions(skin_points(self.rest.vertices(), &self.weights, &xf))?)
    }
}

/// Poses `garment` with the skinning weights of the body points it is bound to.
pub fn lbs_predict(garment: &TriMesh, body: &BodyModel, binding: &GarmentBinding, pose: &Pose) -> Result<TriMesh> {
    LbsGarment::new(garment, body, binding)?.pose(body, pose)
}
