use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Mode, RunningStats, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::ParamSet;

const INIT_STD: f64 = 0.02;
const BN_EPS: f64 = 1e-5;
const KERNEL: usize = 4;

fn init_conv<T: Element, R: Rng + ?Sized>(shape: [usize; 4], rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, 0.0, INIT_STD, rng)
}

fn init_bn<T: Element, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    name: &str,
    ch: usize,
    rng: &mut R,
) {
    params.push(
        format!("{name}.gamma"),
        Tensor::randn([ch], 1.0, INIT_STD, rng),
    );
    params.push(format!("{name}.beta"), Tensor::zeros([ch]));
}

/// Generator layout: project `z` to a 4x4 map with `widths[0]` channels, then
/// double the resolution through each remaining width and finally to RGB.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub z_dim: usize,
    pub widths: Vec<usize>,
}

impl GeneratorSpec {
    /// 512-256-128-64 channel stages.
    pub fn standard(z_dim: usize) -> Self {
        Self::with_base_width(z_dim, 64)
    }

    /// Stages `8b, 4b, 2b, b` for base width `b`.
    pub fn with_base_width(z_dim: usize, base: usize) -> Self {
        Self {
            z_dim,
            widths: vec![8 * base, 4 * base, 2 * base, base],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 {
            return Err(Error::Config("latent size must be at least 1".into()));
        }
        if self.widths.len() != 4 || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "generator needs four positive stage widths for 64x64 output, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }
}

/// Discriminator layout: stride-2 convolutions through `widths` (64 -> 4 pixels),
/// then a 4x4 convolution to one logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub widths: Vec<usize>,
    pub slope: f64,
}

impl DiscriminatorSpec {
    pub fn standard() -> Self {
        Self::with_base_width(64)
    }

    pub fn with_base_width(base: usize) -> Self {
        Self {
            widths: vec![base, 2 * base, 4 * base, 8 * base],
            slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 4 || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "discriminator needs four positive stage widths, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Generator<T: Element = f32> {
    spec: GeneratorSpec,
    params: ParamSet<T>,
    bn: Vec<RunningStats<T>>,
}

impl<T: Element> Generator<T> {
    pub fn new<R: Rng + ?Sized>(spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let mut bn = Vec::new();
        let mut in_c = spec.z_dim;
        for (i, &w) in spec.widths.iter().enumerate() {
            params.push(
                format!("up{i}.weight"),
                init_conv([in_c, w, KERNEL, KERNEL], rng),
            );
            init_bn(&mut params, &format!("up{i}.bn"), w, rng);
            bn.push(RunningStats::new(w));
            in_c = w;
        }
        params.push("out.weight", init_conv([in_c, 3, KERNEL, KERNEL], rng));
        Ok(Self { spec, params, bn })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.bn
    }

    pub fn set_running_stats(&mut self, bn: Vec<RunningStats<T>>) -> Result<()> {
        if bn.len() != self.bn.len()
            || bn
                .iter()
                .zip(&self.bn)
                .any(|(a, b)| a.mean.len() != b.mean.len())
        {
            return Err(Error::Data(
                "batch-norm statistics do not match the generator layout".into(),
            ));
        }
        self.bn = bn;
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.bind(tape)
    }

    /// Maps `(batch, z_dim)` or `(batch, z_dim, 1, 1)` noise to `(batch, 3, 64, 64)` images in `[-1, 1]`.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        bound: &[Var],
        z: Var,
        mode: Mode,
    ) -> Result<Var> {
        let zs = tape.shape(z).to_vec();
        if zs.len() < 2 || zs[1] != self.spec.z_dim || zs[2..].iter().any(|&d| d != 1) {
            return Err(Error::Shape(format!(
                "generator expects (batch, {}) noise, got {zs:?}",
                self.spec.z_dim
            )));
        }
        let mut h = tape.reshape(z, &[zs[0], self.spec.z_dim, 1, 1])?;
        for (i, stats) in self.bn.iter_mut().enumerate() {
            let (stride, pad) = if i == 0 { (1, 0) } else { (2, 1) };
            h = tape.conv_transpose2d(h, bound[3 * i], None, stride, pad)?;
            h = tape.batchnorm2d(h, bound[3 * i + 1], bound[3 * i + 2], mode, stats, BN_EPS)?;
            h = tape.relu(h)?;
        }
        let h = tape.conv_transpose2d(h, bound[3 * self.bn.len()], None, 2, 1)?;
        tape.tanh(h)
    }

    pub fn cast<U: Element>(&self) -> Generator<U> {
        Generator {
            spec: self.spec.clone(),
            params: self.params.cast(),
            bn: self.bn.iter().map(RunningStats::cast).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator<T: Element = f32> {
    spec: DiscriminatorSpec,
    params: ParamSet<T>,
    /// Statistics for every stage but the first.
    bn: Vec<RunningStats<T>>,
}

impl<T: Element> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(spec: DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let mut bn = Vec::new();
        let mut in_c = 3;
        for (i, &w) in spec.widths.iter().enumerate() {
            params.push(
                format!("down{i}.weight"),
                init_conv([w, in_c, KERNEL, KERNEL], rng),
            );
            if i > 0 {
                init_bn(&mut params, &format!("down{i}.bn"), w, rng);
                bn.push(RunningStats::new(w));
            }
            in_c = w;
        }
        params.push("head.weight", init_conv([1, in_c, KERNEL, KERNEL], rng));
        Ok(Self { spec, params, bn })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.bn
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.bind(tape)
    }

    /// Maps `(batch, 3, 64, 64)` images to `(batch, 1)` probabilities of being real.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        bound: &[Var],
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 4 || xs[1..] != [3, 64, 64] {
            return Err(Error::Shape(format!(
                "discriminator expects (batch, 3, 64, 64), got {xs:?}"
            )));
        }
        let mut h = tape.conv2d(x, bound[0], None, 2, 1)?;
        h = tape.leaky_relu(h, self.spec.slope)?;
        let mut p = 1;
        for stats in self.bn.iter_mut() {
            h = tape.conv2d(h, bound[p], None, 2, 1)?;
            h = tape.batchnorm2d(h, bound[p + 1], bound[p + 2], mode, stats, BN_EPS)?;
            h = tape.leaky_relu(h, self.spec.slope)?;
            p += 3;
        }
        let h = tape.conv2d(h, bound[p], None, 1, 0)?;
        let h = tape.reshape(h, &[xs[0], 1])?;
        tape.sigmoid(h)
    }

    pub fn cast<U: Element>(&self) -> Discriminator<U> {
        Discriminator {
            spec: self.spec.clone(),
            params: self.params.cast(),
            bn: self.bn.iter().map(RunningStats::cast).collect(),
        }
    }
}

/// `-(mean log D(x) + mean log(1 - D(G(z))))`, probabilities clamped at 1e-7.
pub fn disc_loss<T: Element>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let ones = vec![T::one(); tape.value(d_real).len()];
    let zeros = vec![T::zero(); tape.value(d_fake).len()];
    let real_term = tape.bce(d_real, &ones)?;
    let fake_term = tape.bce(d_fake, &zeros)?;
    tape.add(real_term, fake_term)
}

/// Non-saturating generator loss `-mean log D(G(z))`.
pub fn gen_loss<T: Element>(tape: &mut Tape<T>, d_fake: Var) -> Result<Var> {
    let ones = vec![T::one(); tape.value(d_fake).len()];
    tape.bce(d_fake, &ones)
}
