//! Central finite-difference checks of the hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{Layer, Mode};
use crate::loss::{adversarial_loss, generator_loss};
use crate::tensor::Tensor4;

pub const STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub relative_error: f64,
    /// Largest elementwise `|a − n| / max(|a|, |n|)` over entries whose
    /// magnitude exceeds 1e-3 of the largest entry.
    pub max_entry_error: f64,
    /// `max(‖analytic‖, ‖numeric‖)`.
    pub scale: f64,
    pub entries: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.relative_error < tol
    }
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    let peak = analytic.iter().chain(numeric).fold(0.0f64, |m, x| m.max(x.abs()));
    let max_entry_error = analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs().max(n.abs()) > 1e-3 * peak)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max);
    GradCheck {
        relative_error: if scale == 0.0 { diff } else { diff / scale },
        max_entry_error,
        scale,
        entries: analytic.len(),
    }
}

/// Central differences of `f` at `x` with step [`STEP`].
pub fn numeric_gradient(x: &[f64], f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    numeric_gradient_with_step(x, STEP, f)
}

pub fn numeric_gradient_with_step(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn random_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor4<f64> {
    let n = shape.iter().product();
    Tensor4::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Moves values closer than `gap` to zero away from it, so kinks at zero
/// stay outside the finite-difference stencil.
pub fn away_from_zero(t: &Tensor4<f64>, gap: f64) -> Tensor4<f64> {
    t.map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

fn weighted_sum(y: &Tensor4<f64>, w: &[f64]) -> f64 {
    y.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Checks input and parameter gradients of `layer` in training mode on
/// the scalar `Σ r ⊙ layer(x)` with random `r`. Returns `(name, check)`
/// for the input and every parameter.
pub fn check_layer<L: Layer<f64>>(layer: &mut L, x: &Tensor4<f64>, seed: u64) -> Result<Vec<(String, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = layer.forward(x, Mode::Train)?;
    let r: Vec<f64> = (0..y.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dy = Tensor4::new(y.shape(), r.clone())?;
    for p in layer.params() {
        p.zero_grad();
    }
    layer.forward(x, Mode::Train)?;
    let dx = layer.backward(&dy)?;
    let mut out = Vec::new();

    let shape = x.shape();
    let numeric = numeric_gradient(x.data(), |v| {
        let t = Tensor4::new(shape, v.to_vec()).expect("shape");
        weighted_sum(&layer.forward(&t, Mode::Train).expect("forward"), &r)
    });
    out.push(("input".to_string(), compare(dx.data(), &numeric)));

    let count = layer.params().len();
    for i in 0..count {
        let (name, analytic, values) = {
            let p = &layer.params()[i];
            (p.name.clone(), p.grad.clone(), p.value.clone())
        };
        let numeric = numeric_gradient(&values, |v| {
            layer.params()[i].value.copy_from_slice(v);
            weighted_sum(&layer.forward(x, Mode::Train).expect("forward"), &r)
        });
        layer.params()[i].value.copy_from_slice(&values);
        out.push((name, compare(&analytic, &numeric)));
    }
    Ok(out)
}

/// Gradient of the adversarial loss w.r.t. both logit grids on random
/// logits and soft labels.
pub fn check_adversarial_loss(seed: u64) -> Result<Vec<(String, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 1, 8, 8];
    let fake = random_tensor(shape, &mut rng).map(|v| 3.0 * v);
    let real = random_tensor(shape, &mut rng).map(|v| 3.0 * v);
    let fl = [rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)];
    let rl = [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0)];
    let l = adversarial_loss(&fake, &real, &fl, &rl)?;
    let nf = numeric_gradient(fake.data(), |v| {
        adversarial_loss(&Tensor4::new(shape, v.to_vec()).expect("shape"), &real, &fl, &rl).expect("loss").value
    });
    let nr = numeric_gradient(real.data(), |v| {
        adversarial_loss(&fake, &Tensor4::new(shape, v.to_vec()).expect("shape"), &fl, &rl).expect("loss").value
    });
    Ok(vec![
        ("fake logits".into(), compare(l.d_fake.data(), &nf)),
        ("real logits".into(), compare(l.d_real.data(), &nr)),
    ])
}

/// Gradient of the generator loss w.r.t. the fake logits and every output
/// map, with random targets and masks.
pub fn check_generator_loss(seed: u64, lambda_l1: f64) -> Result<Vec<(String, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = random_tensor([2, 1, 8, 8], &mut rng).map(|v| 3.0 * v);
    let targets: Vec<Tensor4<f64>> = (0..3).map(|_| random_tensor([2, 3, 8, 8], &mut rng)).collect();
    // Outputs differ from targets by at least the gap so |·| is smooth.
    let outputs: Vec<Tensor4<f64>> = targets
        .iter()
        .map(|t| {
            let d = away_from_zero(&random_tensor(t.shape(), &mut rng), 10.0 * STEP);
            let mut o = t.clone();
            o.add_assign(&d).expect("same shape");
            o
        })
        .collect();
    let masks: Vec<Tensor4<f64>> = (0..3)
        .map(|_| random_tensor([2, 1, 8, 8], &mut rng).map(|v| if v > -0.3 { 1.0 } else { 0.0 }))
        .collect();
    let l = generator_loss(&logits, &outputs, &targets, &masks, lambda_l1)?;
    let mut out = vec![(
        "fake logits".to_string(),
        compare(
            l.d_fake_logits.data(),
            &numeric_gradient(logits.data(), |v| {
                let z = Tensor4::new(logits.shape(), v.to_vec()).expect("shape");
                generator_loss(&z, &outputs, &targets, &masks, lambda_l1).expect("loss").total
            }),
        ),
    )];
    for t in 0..3 {
        let numeric = numeric_gradient(outputs[t].data(), |v| {
            let mut o = outputs.clone();
            o[t] = Tensor4::new(outputs[t].shape(), v.to_vec()).expect("shape");
            generator_loss(&logits, &o, &targets, &masks, lambda_l1).expect("loss").total
        });
        out.push((format!("output {t}"), compare(l.d_outputs[t].data(), &numeric)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_reports_zero_for_equal_vectors() {
        let c = compare(&[1.0, -2.0, 0.0], &[1.0, -2.0, 0.0]);
        assert_eq!(c.relative_error, 0.0);
        assert_eq!(c.max_entry_error, 0.0);
        let d = compare(&[1.0, 0.0], &[1.1, 0.0]);
        assert!((d.max_entry_error - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn numeric_gradient_of_a_cubic() {
        let g = numeric_gradient(&[2.0, -1.0], |v| v[0].powi(3) + 3.0 * v[1]);
        assert!((g[0] - 12.0).abs() < 1e-7);
        assert!((g[1] - 3.0).abs() < 1e-9);
    }
}
