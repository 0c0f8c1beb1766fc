//! Adversarial and generator losses with their gradients. Loss values are
//! accumulated in f64 whatever the tensor precision.

use crate::error::{NetError, Result};
use crate::tensor::{Real, Tensor4};

/// Mean over all elements of `max(z,0) − z·y + ln(1 + e^{−|z|})` and its
/// gradient `(σ(z) − y)/n`.
pub fn bce_with_logits<T: Real>(logits: &Tensor4<T>, targets: &[f64]) -> Result<(f64, Tensor4<T>)> {
    if logits.data().len() != targets.len() {
        return Err(NetError::Shape(format!(
            "{} logits, {} targets",
            logits.data().len(),
            targets.len()
        )));
    }
    let n = targets.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(targets.len());
    for (&z, &y) in logits.data().iter().zip(targets) {
        let z = z.to_f64().expect("finite");
        sum += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let s = 1.0 / (1.0 + (-z).exp());
        grad.push(T::lit((s - y) / n));
    }
    Ok((sum / n, Tensor4::new(logits.shape(), grad)?))
}

/// One target per batch item repeated over its patch grid.
pub fn patch_targets(shape: [usize; 4], per_item: &[f64]) -> Result<Vec<f64>> {
    if per_item.len() != shape[0] {
        return Err(NetError::Shape(format!("{} labels for batch {}", per_item.len(), shape[0])));
    }
    let n = shape[1] * shape[2] * shape[3];
    Ok(per_item.iter().flat_map(|&y| std::iter::repeat_n(y, n)).collect())
}

#[derive(Debug, Clone)]
pub struct AdversarialLoss<T> {
    /// Mean cross-entropy of the real logits plus that of the fake logits.
    pub value: f64,
    pub d_fake: Tensor4<T>,
    pub d_real: Tensor4<T>,
}

/// Discriminator objective: real logits against `real_labels`, fake
/// logits against `fake_labels`, one label per batch item.
pub fn adversarial_loss<T: Real>(
    fake_logits: &Tensor4<T>,
    real_logits: &Tensor4<T>,
    fake_labels: &[f64],
    real_labels: &[f64],
) -> Result<AdversarialLoss<T>> {
    if fake_logits.shape() != real_logits.shape() {
        return Err(NetError::Shape(format!(
            "fake logits {:?}, real logits {:?}",
            fake_logits.shape(),
            real_logits.shape()
        )));
    }
    let (lf, d_fake) = bce_with_logits(fake_logits, &patch_targets(fake_logits.shape(), fake_labels)?)?;
    let (lr, d_real) = bce_with_logits(real_logits, &patch_targets(real_logits.shape(), real_labels)?)?;
    Ok(AdversarialLoss {
        value: lf + lr,
        d_fake,
        d_real,
    })
}

#[derive(Debug, Clone)]
pub struct GeneratorLoss<T> {
    /// `adversarial + λ·l1`.
    pub total: f64,
    pub adversarial: f64,
    /// Masked mean absolute error over all templates.
    pub l1: f64,
    pub l1_per_template: Vec<f64>,
    pub d_fake_logits: Tensor4<T>,
    pub d_outputs: Vec<Tensor4<T>>,
}

/// Masked L1 terms: overall mean and per-template means. Masks are
/// `batch × 1 × h × w` with 0/1 entries.
pub fn masked_l1<T: Real>(outputs: &[Tensor4<T>], targets: &[Tensor4<T>], masks: &[Tensor4<T>]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if outputs.len() != targets.len() || outputs.len() != masks.len() {
        return Err(NetError::Shape("outputs, targets and masks differ in count".into()));
    }
    let mut total = 0.0;
    let mut count = 0.0;
    let mut per = Vec::with_capacity(outputs.len());
    let mut counts = Vec::with_capacity(outputs.len());
    for ((o, t), m) in outputs.iter().zip(targets).zip(masks) {
        let [n, c, h, w] = o.shape();
        if t.shape() != o.shape() || m.shape() != [n, 1, h, w] {
            return Err(NetError::Shape(format!("output {:?}, target {:?}, mask {:?}", o.shape(), t.shape(), m.shape())));
        }
        let plane = h * w;
        let mut s = 0.0;
        let mut k = 0.0;
        for b in 0..n {
            let mask = m.item(b);
            let (oi, ti) = (o.item(b), t.item(b));
            for ch in 0..c {
                for p in 0..plane {
                    let mv = mask[p].to_f64().expect("finite");
                    if mv != 0.0 {
                        let d = (oi[ch * plane + p] - ti[ch * plane + p]).to_f64().expect("finite");
                        s += mv * d.abs();
                        k += mv;
                    }
                }
            }
        }
        per.push(if k > 0.0 { s / k } else { 0.0 });
        counts.push(k);
        total += s;
        count += k;
    }
    if count == 0.0 {
        return Err(NetError::Shape("all target pixels are masked out".into()));
    }
    Ok((total / count, per, counts))
}

/// Non-saturating adversarial term (fake logits against label 1) plus
/// `lambda_l1` times the masked L1 between outputs and targets.
pub fn generator_loss<T: Real>(
    fake_logits: &Tensor4<T>,
    outputs: &[Tensor4<T>],
    targets: &[Tensor4<T>],
    masks: &[Tensor4<T>],
    lambda_l1: f64,
) -> Result<GeneratorLoss<T>> {
    let ones = vec![1.0; fake_logits.batch()];
    let (adversarial, d_fake_logits) = bce_with_logits(fake_logits, &patch_targets(fake_logits.shape(), &ones)?)?;
    let (l1, per, counts) = masked_l1(outputs, targets, masks)?;
    let count: f64 = counts.iter().sum();
    let scale = lambda_l1 / count;
    let mut d_outputs = Vec::with_capacity(outputs.len());
    for ((o, t), m) in outputs.iter().zip(targets).zip(masks) {
        let [n, c, h, w] = o.shape();
        let plane = h * w;
        let mut g = Tensor4::zeros(o.shape());
        for b in 0..n {
            let mask = m.item(b).to_vec();
            let (oi, ti) = (o.item(b).to_vec(), t.item(b).to_vec());
            let gi = g.item_mut(b);
            for ch in 0..c {
                for p in 0..plane {
                    let i = ch * plane + p;
                    let d = oi[i] - ti[i];
                    let sign = if d > T::zero() {
                        1.0
                    } else if d < T::zero() {
                        -1.0
                    } else {
                        0.0
                    };
                    gi[i] = T::lit(scale * sign * mask[p].to_f64().expect("finite"));
                }
            }
        }
        d_outputs.push(g);
    }
    Ok(GeneratorLoss {
        total: adversarial + lambda_l1 * l1,
        adversarial,
        l1,
        l1_per_template: per,
        d_fake_logits,
        d_outputs,
    })
}
