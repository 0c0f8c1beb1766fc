//! Adversarial training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uvcloth_core::dataset::{Dataset, DatasetSample, Split, INPUT_CHANNELS};
use uvcloth_core::garment::Template;

use crate::checkpoint::save_checkpoint;
use crate::error::{NetError, Result};
use crate::layers::Mode;
use crate::loss::{bce_with_logits, generator_loss, patch_targets, GeneratorLoss};
use crate::nets::{DiscriminatorNet, GeneratorNet, OUTPUT_CHANNELS};
use crate::optim::Adam;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_l1: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Range of the soft label for generated samples.
    pub soft_fake: [f64; 2],
    /// Range of the soft label for real samples.
    pub soft_real: [f64; 2],
    /// Chance per sample and epoch that its labels are swapped.
    pub flip_fraction: f64,
    pub seed: u64,
    /// Channels of the first encoder level; doubles at each level.
    pub base_width: usize,
    pub disc_conditional: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_l1: 100.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 200,
            batch_size: 4,
            soft_fake: [0.0, 0.3],
            soft_real: [0.7, 1.0],
            flip_fraction: 0.05,
            seed: 0,
            base_width: 32,
            disc_conditional: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::Config(m));
        for (name, r) in [("soft_fake", self.soft_fake), ("soft_real", self.soft_real)] {
            if !(0.0..=1.0).contains(&r[0]) || !(0.0..=1.0).contains(&r[1]) || r[0] > r[1] {
                return bad(format!("{name} range {r:?} must lie within [0, 1]"));
            }
        }
        if !(0.0..0.5).contains(&self.flip_fraction) {
            return bad(format!("flip fraction {} outside [0, 0.5)", self.flip_fraction));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return bad(format!("lambda_l1 {}", self.lambda_l1));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("Adam betas ({}, {})", self.beta1, self.beta2));
        }
        if self.batch_size == 0 || self.base_width == 0 {
            return bad("batch size and base width must be positive".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| NetError::Config(format!("train config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Generator and discriminator with everything needed to use them.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub resolution: usize,
    /// Hash of the normalization stats the model was trained with.
    pub stats_hash: String,
    pub generator: GeneratorNet<f32>,
    pub discriminator: DiscriminatorNet<f32>,
}

impl Model {
    pub fn new(config: &TrainConfig, resolution: usize, stats_hash: &str) -> Result<Model> {
        config.validate()?;
        if resolution < 16 || resolution % 16 != 0 {
            return Err(NetError::Config(format!("resolution {resolution} is not a multiple of 16")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let heads: Vec<&str> = Template::ALL.iter().map(|t| t.name()).collect();
        let generator = GeneratorNet::new(INPUT_CHANNELS, config.base_width, &heads, &mut rng);
        let cond = if config.disc_conditional { INPUT_CHANNELS } else { 0 };
        let discriminator = DiscriminatorNet::new(cond, OUTPUT_CHANNELS * heads.len(), config.base_width, &mut rng);
        Ok(Model {
            config: config.clone(),
            resolution,
            stats_hash: stats_hash.to_string(),
            generator,
            discriminator,
        })
    }

    pub fn parameter_count(&mut self) -> (usize, usize) {
        let g = self.generator.params().iter().map(|p| p.value.len()).sum();
        let d = self.discriminator.params().iter().map(|p| p.value.len()).sum();
        (g, d)
    }
}

/// One training example as network tensors (batch 1).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Tensor4<f32>,
    pub targets: Vec<Tensor4<f32>>,
    pub masks: Vec<Tensor4<f32>>,
}

impl TrainSample {
    pub fn from_dataset_sample(s: &DatasetSample) -> Result<TrainSample> {
        let n = s.size();
        let input = Tensor4::from_f64([1, INPUT_CHANNELS, n, n], &s.input_planes())?;
        let mut targets = Vec::with_capacity(s.targets.len());
        let mut masks = Vec::with_capacity(s.targets.len());
        for t in &s.targets {
            let planes: Vec<f64> = (0..3).flat_map(|c| t.data().iter().map(move |v| v[c])).collect();
            targets.push(Tensor4::from_f64([1, 3, n, n], &planes)?);
            let mask: Vec<f64> = t.mask().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            masks.push(Tensor4::from_f64([1, 1, n, n], &mask)?);
        }
        Ok(TrainSample { input, targets, masks })
    }

    pub fn resolution(&self) -> usize {
        self.input.shape()[2]
    }
}

/// Loads every sample of `split`.
pub fn load_split(ds: &Dataset, split: Split) -> Result<Vec<TrainSample>> {
    ds.manifest
        .samples(split)
        .iter()
        .map(|(a, k)| TrainSample::from_dataset_sample(&ds.load_sample(a, *k)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    /// Masked L1 per template in normalized units.
    pub l1: Vec<f64>,
    /// Masked L1 over all templates.
    pub l1_all: f64,
}

pub const LOG_HEADER: &str = "epoch,loss_D,loss_G,L1_tops,L1_bottoms,L1_dress,L1";

pub fn write_log(log: &[EpochLog], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for e in log {
        write!(w, "{},{:.9e},{:.9e}", e.epoch, e.loss_d, e.loss_g)?;
        for l in &e.l1 {
            write!(w, ",{l:.9e}")?;
        }
        writeln!(w, ",{:.9e}", e.l1_all)?;
    }
    Ok(())
}

pub fn save_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| NetError::io(path, e))?);
    write_log(log, &mut f).and_then(|_| f.flush()).map_err(|e| NetError::io(path, e))
}

/// Batches of `size`; a trailing single sample joins the previous batch
/// so batch statistics always see at least two items.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn stack_field(samples: &[TrainSample], batch: &[usize], f: impl Fn(&TrainSample) -> &Tensor4<f32>) -> Result<Tensor4<f32>> {
    let items: Vec<&Tensor4<f32>> = batch.iter().map(|&i| f(&samples[i])).collect();
    Tensor4::stack(&items)
}

fn scaled(t: &Tensor4<f32>, s: f32) -> Tensor4<f32> {
    t.map(|v| v * s)
}

/// Options that do not change the result of training.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Written after every epoch; left at the last finite state on divergence.
    pub checkpoint: Option<&'a Path>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochLog)>,
}

/// Updates only the discriminator, on half the summed cross-entropies of
/// real and generated pairs. Returns the unhalved sum. A non-finite loss
/// is returned without stepping.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_step(
    model: &mut Model,
    opt: &mut Adam,
    x: &Tensor4<f32>,
    y_real: &Tensor4<f32>,
    y_fake: &Tensor4<f32>,
    real_labels: &[f64],
    fake_labels: &[f64],
) -> Result<f64> {
    let d = &mut model.discriminator;
    d.zero_grad();
    let real_logits = d.forward(x, y_real, Mode::Train)?;
    let (lr, gr) = bce_with_logits(&real_logits, &patch_targets(real_logits.shape(), real_labels)?)?;
    d.backward(&scaled(&gr, 0.5))?;
    let fake_logits = d.forward(x, y_fake, Mode::Train)?;
    let (lf, gf) = bce_with_logits(&fake_logits, &patch_targets(fake_logits.shape(), fake_labels)?)?;
    d.backward(&scaled(&gf, 0.5))?;
    let loss = lr + lf;
    if loss.is_finite() {
        opt.step(d.params());
    }
    Ok(loss)
}

/// Updates only the generator, whose `fakes` came from a training-mode
/// forward pass on `x`, through the current discriminator. A non-finite
/// loss is returned without stepping.
pub fn generator_step(
    model: &mut Model,
    opt: &mut Adam,
    x: &Tensor4<f32>,
    fakes: &[Tensor4<f32>],
    targets: &[Tensor4<f32>],
    masks: &[Tensor4<f32>],
) -> Result<GeneratorLoss<f32>> {
    model.generator.zero_grad();
    let y_fake = Tensor4::concat_channels(&fakes.iter().collect::<Vec<_>>())?;
    let logits = model.discriminator.forward(x, &y_fake, Mode::Train)?;
    let gl = generator_loss(&logits, fakes, targets, masks, model.config.lambda_l1)?;
    if !gl.total.is_finite() {
        return Ok(gl);
    }
    let d_fake = model.discriminator.backward(&gl.d_fake_logits)?;
    model.discriminator.zero_grad();
    let d_heads = d_fake.split_channels(&vec![OUTPUT_CHANNELS; fakes.len()])?;
    let mut d_outputs = gl.d_outputs.clone();
    for (a, b) in d_outputs.iter_mut().zip(&d_heads) {
        a.add_assign(b)?;
    }
    model.generator.backward(&d_outputs)?;
    opt.step(model.generator.params());
    Ok(gl)
}

/// Trains `model` in place for `model.config.epochs` epochs. One
/// discriminator step and one generator step per batch.
pub fn train(model: &mut Model, samples: &[TrainSample], mut hooks: TrainHooks<'_>) -> Result<Vec<EpochLog>> {
    let cfg = model.config.clone();
    cfg.validate()?;
    if samples.is_empty() {
        return Err(NetError::Config("training set is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.resolution() != model.resolution) {
        return Err(NetError::Shape(format!(
            "sample resolution {} differs from model resolution {}",
            s.resolution(),
            model.resolution
        )));
    }
    let heads = model.generator.heads();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);
    let mut opt_g = Adam::new(cfg.lr, cfg.beta1, cfg.beta2);
    let mut opt_d = Adam::new(cfg.lr, cfg.beta1, cfg.beta2);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let flipped: Vec<bool> = (0..samples.len()).map(|_| rng.random::<f64>() < cfg.flip_fraction).collect();
        let mut sums = (0.0, 0.0, vec![0.0; heads], 0.0);
        let mut seen = 0.0;
        for (bi, batch) in batches(&order, cfg.batch_size).iter().enumerate() {
            let n = batch.len();
            let x = stack_field(samples, batch, |s| &s.input)?;
            let ys: Vec<Tensor4<f32>> = (0..heads).map(|t| stack_field(samples, batch, |s| &s.targets[t])).collect::<Result<_>>()?;
            let ms: Vec<Tensor4<f32>> = (0..heads).map(|t| stack_field(samples, batch, |s| &s.masks[t])).collect::<Result<_>>()?;
            let y_real = Tensor4::concat_channels(&ys.iter().collect::<Vec<_>>())?;

            let mut real_labels = Vec::with_capacity(n);
            let mut fake_labels = Vec::with_capacity(n);
            for &i in batch {
                let r = rng.random_range(cfg.soft_real[0]..=cfg.soft_real[1]);
                let f = rng.random_range(cfg.soft_fake[0]..=cfg.soft_fake[1]);
                if flipped[i] {
                    real_labels.push(f);
                    fake_labels.push(r);
                } else {
                    real_labels.push(r);
                    fake_labels.push(f);
                }
            }

            let fakes = model.generator.forward(&x, Mode::Train)?;
            let y_fake = Tensor4::concat_channels(&fakes.iter().collect::<Vec<_>>())?;
            let loss_d = discriminator_step(model, &mut opt_d, &x, &y_real, &y_fake, &real_labels, &fake_labels)?;
            if !loss_d.is_finite() {
                return Err(NetError::Diverged { epoch, batch: bi, what: "discriminator loss".into() });
            }
            let gl = generator_step(model, &mut opt_g, &x, &fakes, &ys, &ms)?;
            if !gl.total.is_finite() {
                return Err(NetError::Diverged { epoch, batch: bi, what: "generator loss".into() });
            }

            let w = n as f64;
            sums.0 += w * loss_d;
            sums.1 += w * gl.total;
            for (s, l) in sums.2.iter_mut().zip(&gl.l1_per_template) {
                *s += w * l;
            }
            sums.3 += w * gl.l1;
            seen += w;
        }
        let entry = EpochLog {
            epoch,
            loss_d: sums.0 / seen,
            loss_g: sums.1 / seen,
            l1: sums.2.iter().map(|s| s / seen).collect(),
            l1_all: sums.3 / seen,
        };
        if let Some(path) = hooks.checkpoint {
            save_checkpoint(model, epoch, path)?;
        }
        if let Some(f) = hooks.on_epoch.as_mut() {
            f(&entry);
        }
        log.push(entry);
    }
    Ok(log)
}
