//! U-Net generator with one decoder per garment template and a PatchGAN
//! discriminator.

use rand::Rng;

use crate::error::{NetError, Result};
use crate::layers::{Activation, ActivationKind, BatchNorm2d, Buffer, Conv2d, ConvTranspose2d, Layer, Mode, Param};
use crate::tensor::{Real, Tensor4};

pub const DEPTH: usize = 4;
pub const OUTPUT_CHANNELS: usize = 3;
const LEAK: f64 = 0.2;

#[derive(Debug, Clone)]
pub enum Sampler<T> {
    Down(Conv2d<T>),
    Up(ConvTranspose2d<T>),
}

/// Resampling convolution, optional batch norm, optional activation.
#[derive(Debug, Clone)]
pub struct Block<T> {
    pub sampler: Sampler<T>,
    pub bn: Option<BatchNorm2d<T>>,
    pub act: Option<Activation<T>>,
}

impl<T: Real> Block<T> {
    fn down(name: &str, cin: usize, cout: usize, norm: bool, act: ActivationKind, rng: &mut impl Rng) -> Self {
        Block {
            sampler: Sampler::Down({
                let c = Conv2d::new(&format!("{name}.conv"), cin, cout, 4, 2, 1, rng);
                if norm { c.without_bias() } else { c }
            }),
            bn: norm.then(|| BatchNorm2d::new(&format!("{name}.bn"), cout)),
            act: Some(Activation::new(act)),
        }
    }

    fn up(name: &str, cin: usize, cout: usize, norm: bool, act: ActivationKind, rng: &mut impl Rng) -> Self {
        Block {
            sampler: Sampler::Up({
                let c = ConvTranspose2d::new(&format!("{name}.tconv"), cin, cout, 4, 2, 1, rng);
                if norm { c.without_bias() } else { c }
            }),
            bn: norm.then(|| BatchNorm2d::new(&format!("{name}.bn"), cout)),
            act: Some(Activation::new(act)),
        }
    }

    /// Parameters and buffers by name, in a fixed order.
    pub fn state(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let (weight, bias) = match &mut self.sampler {
            Sampler::Down(c) => (&mut c.weight, c.bias.as_mut()),
            Sampler::Up(c) => (&mut c.weight, c.bias.as_mut()),
        };
        let mut out: Vec<(String, &mut Vec<T>)> = vec![(weight.name.clone(), &mut weight.value)];
        out.extend(bias.map(|b| (b.name.clone(), &mut b.value)));
        if let Some(bn) = &mut self.bn {
            out.push((bn.gamma.name.clone(), &mut bn.gamma.value));
            out.push((bn.beta.name.clone(), &mut bn.beta.value));
            out.push((bn.running_mean.name.clone(), &mut bn.running_mean.value));
            out.push((bn.running_var.name.clone(), &mut bn.running_var.value));
        }
        out
    }

    pub fn out_channels(&self) -> usize {
        match &self.sampler {
            Sampler::Down(c) => c.out_channels,
            Sampler::Up(c) => c.out_channels,
        }
    }
}

impl<T: Real> Layer<T> for Block<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let mut h = match &mut self.sampler {
            Sampler::Down(c) => c.forward(x, mode)?,
            Sampler::Up(c) => c.forward(x, mode)?,
        };
        if let Some(bn) = &mut self.bn {
            h = bn.forward(&h, mode)?;
        }
        if let Some(act) = &mut self.act {
            h = act.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = match &mut self.act {
            Some(act) => act.backward(dy)?,
            None => dy.clone(),
        };
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        match &mut self.sampler {
            Sampler::Down(c) => c.backward(&g),
            Sampler::Up(c) => c.backward(&g),
        }
    }

    fn params(&mut self) -> Vec<&mut Param<T>> {
        let mut p = match &mut self.sampler {
            Sampler::Down(c) => c.params(),
            Sampler::Up(c) => c.params(),
        };
        if let Some(bn) = &mut self.bn {
            p.extend(bn.params());
        }
        p
    }

    fn buffers(&mut self) -> Vec<&mut Buffer<T>> {
        self.bn.as_mut().map(|bn| bn.buffers()).unwrap_or_default()
    }
}

/// Shared encoder, one decoder per output head, skip connections at every
/// level. Spatial size must be a multiple of 16.
#[derive(Debug, Clone)]
pub struct GeneratorNet<T> {
    pub input_channels: usize,
    pub base_width: usize,
    pub encoder: Vec<Block<T>>,
    pub decoders: Vec<Vec<Block<T>>>,
}

impl<T: Real> GeneratorNet<T> {
    pub fn new(input_channels: usize, base_width: usize, heads: &[&str], rng: &mut impl Rng) -> Self {
        let w = base_width;
        let widths = [w, 2 * w, 4 * w, 8 * w];
        let mut encoder = Vec::with_capacity(DEPTH);
        let mut cin = input_channels;
        for (i, &c) in widths.iter().enumerate() {
            encoder.push(Block::down(&format!("gen.enc{i}"), cin, c, true, ActivationKind::Relu, rng));
            cin = c;
        }
        let decoders = heads
            .iter()
            .map(|head| {
                let name = |i: usize| format!("gen.dec_{head}.{i}");
                vec![
                    Block::up(&name(0), widths[3], widths[2], true, ActivationKind::Relu, rng),
                    Block::up(&name(1), 2 * widths[2], widths[1], true, ActivationKind::Relu, rng),
                    Block::up(&name(2), 2 * widths[1], widths[0], true, ActivationKind::Relu, rng),
                    Block::up(&name(3), 2 * widths[0], OUTPUT_CHANNELS, false, ActivationKind::Tanh, rng),
                ]
            })
            .collect();
        GeneratorNet {
            input_channels,
            base_width,
            encoder,
            decoders,
        }
    }

    pub fn heads(&self) -> usize {
        self.decoders.len()
    }

    /// One `batch × 3 × h × w` tensor in [−1, 1] per head.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Vec<Tensor4<T>>> {
        let [_, c, h, w] = x.shape();
        if c != self.input_channels {
            return Err(NetError::Shape(format!("generator expects {} channels, got {c}", self.input_channels)));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(NetError::Shape(format!("generator input {h}×{w} is not a multiple of 16")));
        }
        let mut skips = Vec::with_capacity(DEPTH);
        let mut e = x.clone();
        for block in &mut self.encoder {
            e = block.forward(&e, mode)?;
            skips.push(e.clone());
        }
        let mut out = Vec::with_capacity(self.heads());
        for dec in &mut self.decoders {
            let mut h = dec[0].forward(&skips[DEPTH - 1], mode)?;
            for j in 1..DEPTH {
                let joined = Tensor4::concat_channels(&[&h, &skips[DEPTH - 1 - j]])?;
                h = dec[j].forward(&joined, mode)?;
            }
            out.push(h);
        }
        Ok(out)
    }

    /// Backpropagates output gradients; returns the input gradient.
    pub fn backward(&mut self, d_outputs: &[Tensor4<T>]) -> Result<Tensor4<T>> {
        if d_outputs.len() != self.heads() {
            return Err(NetError::Shape(format!("{} output gradients for {} heads", d_outputs.len(), self.heads())));
        }
        let mut d_skips: Vec<Option<Tensor4<T>>> = vec![None; DEPTH];
        let add = |slot: &mut Option<Tensor4<T>>, g: Tensor4<T>| -> Result<()> {
            match slot {
                Some(s) => s.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        };
        for (dec, dy) in self.decoders.iter_mut().zip(d_outputs) {
            let mut g = dy.clone();
            for j in (1..DEPTH).rev() {
                let joined = dec[j].backward(&g)?;
                let up = dec[j - 1].out_channels();
                let skip = joined.channels() - up;
                let mut parts = joined.split_channels(&[up, skip])?;
                add(&mut d_skips[DEPTH - 1 - j], parts.pop().expect("two parts"))?;
                g = parts.pop().expect("two parts");
            }
            add(&mut d_skips[DEPTH - 1], dec[0].backward(&g)?)?;
        }
        let mut g = d_skips[DEPTH - 1].take().expect("deepest level has a gradient");
        for i in (0..DEPTH).rev() {
            let dx = self.encoder[i].backward(&g)?;
            if i == 0 {
                return Ok(dx);
            }
            g = dx;
            if let Some(s) = d_skips[i - 1].take() {
                g.add_assign(&s)?;
            }
        }
        unreachable!("encoder has {DEPTH} blocks")
    }

    pub fn params(&mut self) -> Vec<&mut Param<T>> {
        let mut p: Vec<&mut Param<T>> = self.encoder.iter_mut().flat_map(|b| b.params()).collect();
        for dec in &mut self.decoders {
            p.extend(dec.iter_mut().flat_map(|b| b.params()));
        }
        p
    }

    pub fn buffers(&mut self) -> Vec<&mut Buffer<T>> {
        let mut p: Vec<&mut Buffer<T>> = self.encoder.iter_mut().flat_map(|b| b.buffers()).collect();
        for dec in &mut self.decoders {
            p.extend(dec.iter_mut().flat_map(|b| b.buffers()));
        }
        p
    }

    pub fn state(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out: Vec<(String, &mut Vec<T>)> = self.encoder.iter_mut().flat_map(|b| b.state()).collect();
        for dec in &mut self.decoders {
            out.extend(dec.iter_mut().flat_map(|b| b.state()));
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params().into_iter().for_each(Param::zero_grad);
    }
}

/// PatchGAN: four stride-2 blocks (the first without norm) and a final
/// 3×3 convolution to one logit per patch. When conditional, the body
/// input is concatenated in front of the garment maps.
#[derive(Debug, Clone)]
pub struct DiscriminatorNet<T> {
    pub condition_channels: usize,
    pub target_channels: usize,
    pub blocks: Vec<Block<T>>,
    pub head: Conv2d<T>,
}

impl<T: Real> DiscriminatorNet<T> {
    /// `condition_channels = 0` gives an unconditional discriminator.
    pub fn new(condition_channels: usize, target_channels: usize, base_width: usize, rng: &mut impl Rng) -> Self {
        let w = base_width;
        let widths = [w, 2 * w, 4 * w, 8 * w];
        let mut blocks = Vec::with_capacity(DEPTH);
        let mut cin = condition_channels + target_channels;
        for (i, &c) in widths.iter().enumerate() {
            blocks.push(Block::down(&format!("disc.{i}"), cin, c, i > 0, ActivationKind::LeakyRelu(LEAK), rng));
            cin = c;
        }
        DiscriminatorNet {
            condition_channels,
            target_channels,
            blocks,
            head: Conv2d::new("disc.head", cin, 1, 3, 1, 1, rng),
        }
    }

    pub fn is_conditional(&self) -> bool {
        self.condition_channels > 0
    }

    /// Logit grid for garment maps `y` given body input `x`.
    pub fn forward(&mut self, x: &Tensor4<T>, y: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        if y.channels() != self.target_channels {
            return Err(NetError::Shape(format!("discriminator expects {} target channels, got {}", self.target_channels, y.channels())));
        }
        let mut h = if self.is_conditional() {
            if x.channels() != self.condition_channels {
                return Err(NetError::Shape(format!(
                    "discriminator expects {} condition channels, got {}",
                    self.condition_channels,
                    x.channels()
                )));
            }
            Tensor4::concat_channels(&[x, y])?
        } else {
            y.clone()
        };
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        self.head.forward(&h, mode)
    }

    /// Backpropagates logit gradients; returns the gradient w.r.t. `y`.
    pub fn backward(&mut self, d_logits: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = self.head.backward(d_logits)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        if self.is_conditional() {
            Ok(g.split_channels(&[self.condition_channels, self.target_channels])?.pop().expect("two parts"))
        } else {
            Ok(g)
        }
    }

    pub fn params(&mut self) -> Vec<&mut Param<T>> {
        let mut p: Vec<&mut Param<T>> = self.blocks.iter_mut().flat_map(|b| b.params()).collect();
        p.extend(self.head.params());
        p
    }

    pub fn buffers(&mut self) -> Vec<&mut Buffer<T>> {
        self.blocks.iter_mut().flat_map(|b| b.buffers()).collect()
    }

    pub fn state(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out: Vec<(String, &mut Vec<T>)> = self.blocks.iter_mut().flat_map(|b| b.state()).collect();
        out.push((self.head.weight.name.clone(), &mut self.head.weight.value));
        out.extend(self.head.bias.as_mut().map(|b| (b.name.clone(), &mut b.value)));
        out
    }

    pub fn zero_grad(&mut self) {
        self.params().into_iter().for_each(Param::zero_grad);
    }
}
