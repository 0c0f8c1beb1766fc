//! Inference: body dynamics window in, garment offset maps in meters out.

use uvcloth_core::dataset::{offset_stats_name, DatasetSample, ACCELERATION_STATS, INPUT_CHANNELS, INPUT_MAPS, VELOCITY_STATS};
use uvcloth_core::garment::Template;
use uvcloth_core::uvbake::{denormalize, normalize, Semantic, StatsSet, UVMap};

use crate::error::{NetError, Result};
use crate::layers::Mode;
use crate::tensor::Tensor4;
use crate::train::Model;

fn check_stats(model: &Model, stats: &StatsSet) -> Result<()> {
    let found = stats.hash();
    if found != model.stats_hash {
        return Err(NetError::StatsMismatch {
            expected: model.stats_hash.clone(),
            found,
        });
    }
    Ok(())
}

/// Runs the generator on normalized 18-channel planes and returns one
/// normalized map per template, restricted to `masks`.
pub fn predict_normalized(model: &mut Model, planes: &[f64], masks: &[Vec<bool>]) -> Result<Vec<UVMap>> {
    let n = model.resolution;
    if masks.len() != model.generator.heads() {
        return Err(NetError::Shape(format!("{} masks for {} templates", masks.len(), model.generator.heads())));
    }
    let x = Tensor4::<f32>::from_f64([1, INPUT_CHANNELS, n, n], planes)?;
    let outputs = model.generator.forward(&x, Mode::Eval)?;
    outputs
        .iter()
        .zip(masks)
        .map(|(y, mask)| {
            if mask.len() != n * n {
                return Err(NetError::Shape(format!("mask of {} pixels for {n}²", mask.len())));
            }
            let plane = n * n;
            let d = y.data();
            let data = (0..plane).map(|p| std::array::from_fn(|c| d[c * plane + p] as f64)).collect();
            Ok(UVMap::new(n, Semantic::Normalized, data, mask.clone())?)
        })
        .collect()
}

fn denormalize_all(maps: &[UVMap], stats: &StatsSet) -> Result<Vec<UVMap>> {
    Template::ALL
        .iter()
        .zip(maps)
        .map(|(&t, m)| Ok(denormalize(m, &stats.get(&offset_stats_name(t))?, Semantic::Offset)?))
        .collect()
}

/// Offset maps (m) for the window `[v_{k−2}, v_{k−1}, v_k, a_{k−2}, a_{k−1}, a_k]`
/// of raw velocity and acceleration maps. One forward pass gives all templates.
pub fn infer(model: &mut Model, window: &[UVMap], stats: &StatsSet, masks: &[Vec<bool>]) -> Result<Vec<UVMap>> {
    check_stats(model, stats)?;
    if window.len() != INPUT_MAPS {
        return Err(NetError::Shape(format!("window of {} maps, expected {INPUT_MAPS}", window.len())));
    }
    let vs = stats.get(VELOCITY_STATS)?;
    let acs = stats.get(ACCELERATION_STATS)?;
    let mut planes = Vec::with_capacity(INPUT_CHANNELS * model.resolution * model.resolution);
    for (i, m) in window.iter().enumerate() {
        if m.size() != model.resolution {
            return Err(NetError::Shape(format!("input map is {}², model expects {}²", m.size(), model.resolution)));
        }
        let (expected, s) = if i < 3 { (Semantic::Velocity, &vs) } else { (Semantic::Acceleration, &acs) };
        if m.semantic() != expected {
            return Err(NetError::Shape(format!("window slot {i} holds {:?}, expected {expected:?}", m.semantic())));
        }
        let norm = normalize(m, s)?;
        for c in 0..3 {
            planes.extend(norm.data().iter().map(|v| v[c]));
        }
    }
    let out = predict_normalized(model, &planes, masks)?;
    denormalize_all(&out, stats)
}

/// Offset maps (m) for a stored sample, masked like its targets.
pub fn infer_sample(model: &mut Model, sample: &DatasetSample, stats: &StatsSet) -> Result<Vec<UVMap>> {
    check_stats(model, stats)?;
    if sample.size() != model.resolution {
        return Err(NetError::Shape(format!("sample is {}², model expects {}²", sample.size(), model.resolution)));
    }
    let masks: Vec<Vec<bool>> = sample.targets.iter().map(|t| t.mask().to_vec()).collect();
    let out = predict_normalized(model, &sample.input_planes(), &masks)?;
    denormalize_all(&out, stats)
}
