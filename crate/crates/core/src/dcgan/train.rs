use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{
    disc_loss, gen_loss, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec,
};
use crate::autodiff::{Mode, Tape, Tensor};
use crate::data::{batches, stack_records, ImageRecord, Label, Source, IMAGE_SIZE, PIXELS};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub z_dim: usize,
    /// Channel width of the finest generator stage (and coarsest discriminator stage).
    pub base_width: usize,
    /// 1-based epochs after which a sample grid is rendered.
    pub sample_epochs: Vec<usize>,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 2e-4,
            batch_size: 64,
            z_dim: 100,
            base_width: 64,
            sample_epochs: vec![1, 500, 1000],
            sample_count: 16,
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("GAN epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.sample_count == 0 {
            return Err(Error::Config(
                "GAN batch size and sample count must be positive".into(),
            ));
        }
        AdamConfig::gan(self.learning_rate).validate()?;
        self.generator_spec().validate()?;
        self.discriminator_spec().validate()
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec::with_base_width(self.z_dim, self.base_width)
    }

    pub fn discriminator_spec(&self) -> DiscriminatorSpec {
        DiscriminatorSpec::with_base_width(self.base_width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanEpochLoss {
    pub epoch: usize,
    pub gen_loss: f64,
    pub disc_loss: f64,
}

#[derive(Clone, Debug)]
pub struct SampleGrid {
    pub epoch: usize,
    /// `(sample_count, 3, 64, 64)` in `[-1, 1]`.
    pub images: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct GanTrainReport {
    pub label: Label,
    /// Batch-averaged losses, one entry per epoch.
    pub losses: Vec<GanEpochLoss>,
    pub samples: Vec<SampleGrid>,
    pub disc_steps: u64,
    pub gen_steps: u64,
    /// Origins of every image the discriminator was shown as real.
    pub training_origins: Vec<String>,
}

impl GanTrainReport {
    /// CSV with columns `epoch,gen_loss,disc_loss`.
    pub fn write_loss_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        w.write_record(["epoch", "gen_loss", "disc_loss"])?;
        for l in &self.losses {
            w.write_record([
                l.epoch.to_string(),
                l.gen_loss.to_string(),
                l.disc_loss.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub struct TrainedGan {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub report: GanTrainReport,
}

fn noise<R: Rng + ?Sized>(n: usize, z_dim: usize, rng: &mut R) -> Tensor<f32> {
    Tensor::randn([n, z_dim, 1, 1], 0.0, 1.0, rng)
}

/// Trains one generator/discriminator pair on images of a single class.
///
/// Each batch takes one discriminator step on real and freshly generated
/// images, then one generator step against the updated discriminator.
/// Both steps pass real and generated images through the discriminator as one
/// batch, so its batch-norm statistics cover both and a global intensity
/// offset between them stays visible.
pub fn train_dcgan(images: &[ImageRecord], config: &GanTrainConfig) -> Result<TrainedGan> {
    config.validate()?;
    let label = images
        .first()
        .ok_or_else(|| Error::Contract("GAN training set is empty".into()))?
        .label;
    if let Some(r) = images.iter().find(|r| r.label != label) {
        return Err(Error::Contract(format!(
            "GAN training set mixes classes: `{}` is {} but the set is {}",
            r.origin,
            r.label.as_str(),
            label.as_str()
        )));
    }
    if let Some(r) = images.iter().find(|r| r.pixels.len() != PIXELS) {
        return Err(Error::Shape(format!(
            "record `{}` is not 3x64x64",
            r.origin
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gen = Generator::<f32>::new(config.generator_spec(), &mut rng)?;
    let mut disc = Discriminator::<f32>::new(config.discriminator_spec(), &mut rng)?;
    let mut opt_g = Adam::new(AdamConfig::gan(config.learning_rate))?;
    let mut opt_d = Adam::new(AdamConfig::gan(config.learning_rate))?;
    let eval_noise = noise(config.sample_count, config.z_dim, &mut rng);

    let mut losses = Vec::with_capacity(config.epochs);
    let mut samples = Vec::new();
    for epoch in 1..=config.epochs {
        let (mut g_sum, mut d_sum, mut n_batches) = (0.0, 0.0, 0usize);
        for batch in batches(images, config.batch_size, rng.random())? {
            let (real, _) = stack_records::<f32>(&batch)?;
            let z = noise(batch.len(), config.z_dim, &mut rng);

            let mut g_tape = Tape::new();
            let g_vars = gen.bind(&mut g_tape);
            let z = g_tape.constant(&z);
            let fake = gen.forward(&mut g_tape, &g_vars, z, Mode::Train)?;
            let fake_values = g_tape.tensor(fake);

            let mut d_tape = Tape::new();
            let d_vars = disc.bind(&mut d_tape);
            let real_d = d_tape.constant(&real);
            let detached = d_tape.constant(&fake_values);
            let joint = d_tape.concat(&[real_d, detached])?;
            let d_out = disc.forward(&mut d_tape, &d_vars, joint, Mode::Train)?;
            let n = batch.len();
            let d_real = d_tape.slice_outer(d_out, 0, n)?;
            let d_fake = d_tape.slice_outer(d_out, n, 2 * n)?;
            let d_loss = disc_loss(&mut d_tape, d_real, d_fake)?;
            let d_value = d_tape.value(d_loss)[0] as f64;
            let grads = d_tape.backward(d_loss)?;
            disc.params_mut().attach(&grads, &d_vars)?;
            opt_d.step(disc.params_mut().tensors_mut())?;

            let d_vars = disc.bind(&mut g_tape);
            let real_g = g_tape.constant(&real);
            let joint = g_tape.concat(&[real_g, fake])?;
            let d_out = disc.forward(&mut g_tape, &d_vars, joint, Mode::Train)?;
            let d_fake = g_tape.slice_outer(d_out, n, 2 * n)?;
            let g_loss = gen_loss(&mut g_tape, d_fake)?;
            let g_value = g_tape.value(g_loss)[0] as f64;
            let grads = g_tape.backward(g_loss)?;
            gen.params_mut().attach(&grads, &g_vars)?;
            opt_g.step(gen.params_mut().tensors_mut())?;

            if !d_value.is_finite() || !g_value.is_finite() {
                return Err(Error::Divergence(format!(
                    "{} GAN epoch {epoch}: generator loss {g_value}, discriminator loss {d_value}",
                    label.as_str()
                )));
            }
            g_sum += g_value;
            d_sum += d_value;
            n_batches += 1;
        }
        let entry = GanEpochLoss {
            epoch,
            gen_loss: g_sum / n_batches as f64,
            disc_loss: d_sum / n_batches as f64,
        };
        log::debug!(
            "{} gan epoch {epoch}: G {:.4} D {:.4}",
            label.as_str(),
            entry.gen_loss,
            entry.disc_loss
        );
        losses.push(entry);
        if config.sample_epochs.contains(&epoch) {
            samples.push(SampleGrid {
                epoch,
                images: sample(&mut gen, &eval_noise)?,
            });
        }
    }

    let report = GanTrainReport {
        label,
        losses,
        samples,
        disc_steps: opt_d.steps(),
        gen_steps: opt_g.steps(),
        training_origins: images.iter().map(|r| r.origin.clone()).collect(),
    };
    Ok(TrainedGan {
        generator: gen,
        discriminator: disc,
        report,
    })
}

/// Runs the generator in eval mode.
pub fn sample(gen: &mut Generator<f32>, z: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let vars = gen
        .params()
        .tensors()
        .iter()
        .map(|t| tape.constant(t))
        .collect::<Vec<_>>();
    let z = tape.constant(z);
    let out = gen.forward(&mut tape, &vars, z, Mode::Eval)?;
    Ok(tape.tensor(out))
}

/// Draws `count` synthetic records of class `label` from the generator.
pub fn generate_synthetic(
    gen: &mut Generator<f32>,
    count: usize,
    label: Label,
    seed: u64,
) -> Result<Vec<ImageRecord>> {
    if count == 0 {
        return Err(Error::Contract("synthetic count must be at least 1".into()));
    }
    const CHUNK: usize = 64;
    let z_dim = gen.spec().z_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = CHUNK.min(count - out.len());
        let images = sample(gen, &noise(n, z_dim, &mut rng))?;
        let base = out.len();
        for (i, px) in images.data().chunks_exact(PIXELS).enumerate() {
            out.push(ImageRecord {
                pixels: px.to_vec(),
                label,
                source: Source::Synthetic,
                origin: format!("gan:{}:{seed}:{}", label.as_str(), base + i),
            });
        }
    }
    Ok(out)
}

/// Writes images as a PNG grid with `cols` columns.
pub fn save_image_grid(images: &Tensor<f32>, cols: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = images.shape()[0];
    if images.shape()[1..] != [3, IMAGE_SIZE, IMAGE_SIZE] || cols == 0 {
        return Err(Error::Shape(format!(
            "cannot tile images of shape {:?}",
            images.shape()
        )));
    }
    let rows = n.div_ceil(cols);
    let (w, h) = ((cols * IMAGE_SIZE) as u32, (rows * IMAGE_SIZE) as u32);
    let mut canvas = image::RgbImage::new(w, h);
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    for (k, px) in images.data().chunks_exact(PIXELS).enumerate() {
        let (ox, oy) = ((k % cols) * IMAGE_SIZE, (k / cols) * IMAGE_SIZE);
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let rgb: [u8; 3] = std::array::from_fn(|c| {
                    let v = crate::data::denormalize(px[c * plane + y * IMAGE_SIZE + x]);
                    (v.clamp(0.0, 1.0) * 255.0).round() as u8
                });
                canvas.put_pixel((ox + x) as u32, (oy + y) as u32, image::Rgb(rgb));
            }
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    canvas
        .save(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
