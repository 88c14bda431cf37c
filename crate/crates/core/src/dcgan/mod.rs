//! Per-class DCGAN: networks, adversarial losses, training and sampling.

mod nets;
mod train;

use serde_json::json;

pub use nets::{disc_loss, gen_loss, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
pub use train::{
    generate_synthetic, sample, save_image_grid, train_dcgan, GanEpochLoss, GanTrainConfig,
    GanTrainReport, SampleGrid, TrainedGan,
};

use crate::autodiff::{RunningStats, Tensor};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

impl Generator<f32> {
    pub fn to_checkpoint(&self, seed: u64, label: Option<&str>) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor<f32>)> = self
            .params()
            .names()
            .iter()
            .cloned()
            .zip(self.params().tensors().iter().map(|t| {
                let mut t = t.clone();
                t.set_requires_grad(false);
                t
            }))
            .collect();
        for (i, s) in self.running_stats().iter().enumerate() {
            tensors.push((
                format!("bn{i}.running_mean"),
                Tensor::new([s.mean.len()], s.mean.clone()).unwrap(),
            ));
            tensors.push((
                format!("bn{i}.running_var"),
                Tensor::new([s.var.len()], s.var.clone()).unwrap(),
            ));
        }
        Checkpoint {
            header: json!({
                "kind": "generator",
                "z_dim": self.spec().z_dim,
                "widths": self.spec().widths,
                "seed": seed,
                "label": label,
            }),
            tensors,
        }
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        ck.expect_kind("generator")?;
        let spec: GeneratorSpec = serde_json::from_value(ck.header.clone())
            .map_err(|e| Error::Data(format!("generator header: {e}")))?;
        let mut gen = Generator::<f32>::new(
            spec,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        let mut stats = Vec::new();
        for (i, s) in gen.running_stats().iter().enumerate() {
            let mean = ck.take_tensor(&format!("bn{i}.running_mean"))?.into_data();
            let var = ck.take_tensor(&format!("bn{i}.running_var"))?.into_data();
            stats.push(RunningStats {
                mean,
                var,
                momentum: s.momentum,
            });
        }
        gen.set_running_stats(stats)?;
        let values = ck.tensors.into_iter().map(|(_, t)| t).collect();
        gen.params_mut().load(values)?;
        Ok(gen)
    }
}
