//! Error metrics in mm² and hem motion statistics.

use nalgebra::Isometry3;
use uvcloth_core::uvbake::UVMap;
use uvcloth_core::{TriMesh, Vec3};

use crate::error::{EvalError, Result};

const MM2_PER_M2: f64 = 1e6;

/// Mean squared distance over valid pixels, in mm².
pub fn mse_uv(estimate: &UVMap, truth: &UVMap) -> Result<f64> {
    if estimate.size() != truth.size() || estimate.mask() != truth.mask() {
        return Err(EvalError::Mismatch("UV maps differ in size or mask".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((e, t), &m) in estimate.data().iter().zip(truth.data()).zip(truth.mask()) {
        if m {
            sum += (0..3).map(|c| (e[c] - t[c]).powi(2)).sum::<f64>();
            n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::Invalid("UV map has no valid pixels".into()));
    }
    Ok(sum / n as f64 * MM2_PER_M2)
}

/// Mean squared vertex distance, in mm².
pub fn mse_vertices(estimate: &TriMesh, truth: &TriMesh) -> Result<f64> {
    if estimate.vertex_count() != truth.vertex_count() || truth.vertex_count() == 0 {
        return Err(EvalError::Mismatch(format!(
            "{} estimated vertices vs {} true",
            estimate.vertex_count(),
            truth.vertex_count()
        )));
    }
    let sum: f64 = estimate
        .vertices()
        .iter()
        .zip(truth.vertices())
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok(sum / truth.vertex_count() as f64 * MM2_PER_M2)
}

/// Vertices within `band` meters of the lowest point of the rest mesh.
pub fn hem_vertices(rest: &TriMesh, band: f64) -> Vec<usize> {
    let low = rest.vertices().iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
    (0..rest.vertex_count()).filter(|&i| rest.vertices()[i].y <= low + band).collect()
}

/// Variance over frames of hem vertex positions expressed in a moving
/// reference frame (for example the pelvis), summed over axes and averaged
/// over vertices, in mm². Zero for a hem that moves rigidly with the frame.
pub fn hem_variance(frames: &[TriMesh], hem: &[usize], reference: &[Isometry3<f64>]) -> Result<f64> {
    if frames.len() != reference.len() || frames.len() < 2 || hem.is_empty() {
        return Err(EvalError::Invalid(format!(
            "hem variance needs matching frames and transforms (got {} and {}) and hem vertices",
            frames.len(),
            reference.len()
        )));
    }
    let n = frames.len() as f64;
    let mut total = 0.0;
    for &i in hem {
        let local: Vec<Vec3> = frames
            .iter()
            .zip(reference)
            .map(|(f, xf)| xf.inverse_transform_point(&f.vertices()[i].into()).coords)
            .collect();
        let mean: Vec3 = local.iter().sum::<Vec3>() / n;
        total += local.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n;
    }
    Ok(total / hem.len() as f64 * MM2_PER_M2)
}
