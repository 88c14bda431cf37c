//! Three-stage convolutional tumor classifier and its training loop.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Element, Mode, Tape, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::data::{batches, stack_records, ImageRecord, Label, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::optim::{Adam, AdamConfig};

/// Filters of the three 3x3 convolution stages.
pub const CONV_WIDTHS: [usize; 3] = [32, 64, 128];
pub const HIDDEN_UNITS: usize = 128;
const FLAT: usize = 128 * 8 * 8;
const PREDICT_CHUNK: usize = 64;

/// conv(3x3, same) -> relu -> maxpool(2) three times, then dense 128 -> relu ->
/// dropout -> dense 1 -> sigmoid.
#[derive(Clone, Debug)]
pub struct Cnn<T: Element = f32> {
    dropout_rate: f64,
    params: ParamSet<T>,
}

impl<T: Element> Cnn<T> {
    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(dropout_rate: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        let mut params = ParamSet::new();
        let mut in_c = 3;
        for (i, &w) in CONV_WIDTHS.iter().enumerate() {
            let bound = 1.0 / ((in_c * 9) as f64).sqrt();
            params.push(
                format!("conv{i}.weight"),
                Tensor::uniform([w, in_c, 3, 3], bound, rng),
            );
            params.push(format!("conv{i}.bias"), Tensor::uniform([w], bound, rng));
            in_c = w;
        }
        let bound = 1.0 / (FLAT as f64).sqrt();
        params.push(
            "fc1.weight",
            Tensor::uniform([FLAT, HIDDEN_UNITS], bound, rng),
        );
        params.push("fc1.bias", Tensor::uniform([HIDDEN_UNITS], bound, rng));
        let bound = 1.0 / (HIDDEN_UNITS as f64).sqrt();
        params.push("fc2.weight", Tensor::uniform([HIDDEN_UNITS, 1], bound, rng));
        params.push("fc2.bias", Tensor::uniform([1], bound, rng));
        Ok(Self {
            dropout_rate,
            params,
        })
    }

    /// Closed-form count from the layer shapes.
    pub fn analytic_parameter_count() -> usize {
        let mut total = 0;
        let mut in_c = 3;
        for &w in &CONV_WIDTHS {
            total += w * in_c * 9 + w;
            in_c = w;
        }
        total + FLAT * HIDDEN_UNITS + HIDDEN_UNITS + HIDDEN_UNITS + 1
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.bind(tape)
    }

    /// `(batch, 3, 64, 64)` -> `(batch, 1)` tumor probabilities.
    /// `dropout_seed` only matters in train mode.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        x: Var,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<Var> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 4 || xs[1..] != [3, IMAGE_SIZE, IMAGE_SIZE] {
            return Err(Error::Contract(format!(
                "classifier expects (batch, 3, 64, 64), got {xs:?}"
            )));
        }
        let mut h = x;
        for stage in 0..CONV_WIDTHS.len() {
            h = tape.conv2d(h, bound[2 * stage], Some(bound[2 * stage + 1]), 1, 1)?;
            h = tape.relu(h)?;
            h = tape.maxpool2d(h, 2, 2)?;
        }
        let h = tape.flatten(h)?;
        let h = tape.dense(h, bound[6], bound[7])?;
        let h = tape.relu(h)?;
        let h = tape.dropout(h, self.dropout_rate, mode, dropout_seed)?;
        let h = tape.dense(h, bound[8], bound[9])?;
        tape.sigmoid(h)
    }

    /// Eval-mode probabilities for a `(batch, 3, 64, 64)` tensor.
    pub fn predict_tensor(&self, images: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.constant(t))
            .collect();
        let x = tape.constant(images);
        let p = self.forward(&mut tape, &vars, x, Mode::Eval, 0)?;
        Ok(tape.value(p).to_vec())
    }

    pub fn cast<U: Element>(&self) -> Cnn<U> {
        Cnn {
            dropout_rate: self.dropout_rate,
            params: self.params.cast(),
        }
    }
}

impl Cnn<f32> {
    /// Tumor probability for every record, in order.
    pub fn predict(&self, records: &[ImageRecord]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(PREDICT_CHUNK) {
            let refs: Vec<&ImageRecord> = chunk.iter().collect();
            let (x, _) = stack_records::<f32>(&refs)?;
            out.extend(self.predict_tensor(&x)?);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            header: json!({
                "kind": "cnn",
                "conv_widths": CONV_WIDTHS,
                "hidden_units": HIDDEN_UNITS,
                "dropout_rate": self.dropout_rate,
                "seed": seed,
            }),
            tensors: self
                .params
                .names()
                .iter()
                .cloned()
                .zip(self.params.tensors().iter().map(|t| {
                    let mut t = t.clone();
                    t.set_requires_grad(false);
                    t
                }))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.expect_kind("cnn")?;
        let rate = ck
            .header
            .get("dropout_rate")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Data("cnn checkpoint lacks dropout_rate".into()))?;
        let mut net = Cnn::new(rate, &mut ChaCha8Rng::seed_from_u64(0))?;
        net.params
            .load(ck.tensors.into_iter().map(|(_, t)| t).collect())?;
        Ok(net)
    }
}

/// Tumor iff `probability > threshold`.
pub fn classify(probability: f32, threshold: f32) -> Label {
    if probability > threshold {
        Label::Tumor
    } else {
        Label::Healthy
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    /// Stop after this many epochs without a lower validation loss.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 25,
            dropout_rate: 0.5,
            patience: Some(5),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("CNN epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("CNN batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        AdamConfig::classifier(self.learning_rate).validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochMetrics>,
    pub optimizer_steps: u64,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// CSV with columns `epoch,train_loss,train_acc,val_loss,val_acc`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.train_acc.to_string(),
                e.val_loss.to_string(),
                e.val_acc.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn correct(probs: &[f32], targets: &[f32]) -> usize {
    probs
        .iter()
        .zip(targets)
        .filter(|(&p, &t)| classify(p, 0.5).target() == t)
        .count()
}

/// Loss and accuracy of `net` over `records` in eval mode.
pub fn evaluate_loss(net: &Cnn<f32>, records: &[ImageRecord]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0;
    for chunk in records.chunks(PREDICT_CHUNK) {
        let refs: Vec<&ImageRecord> = chunk.iter().collect();
        let (x, t) = stack_records::<f32>(&refs)?;
        let mut tape = Tape::new();
        let p = tape.constant(&Tensor::new([chunk.len()], net.predict_tensor(&x)?)?);
        let l = tape.bce(p, &t)?;
        loss += tape.value(l)[0] as f64 * chunk.len() as f64;
        hits += correct(tape.value(p), &t);
    }
    Ok((
        loss / records.len() as f64,
        hits as f64 / records.len() as f64,
    ))
}

/// Mini-batch Adam training with a per-epoch reshuffle and validation pass.
pub fn train_cnn(
    train: &[ImageRecord],
    val: &[ImageRecord],
    config: &TrainConfig,
) -> Result<(Cnn<f32>, TrainHistory)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let train_origins: std::collections::HashSet<&str> =
        train.iter().map(|r| r.origin.as_str()).collect();
    if let Some(r) = val
        .iter()
        .find(|r| train_origins.contains(r.origin.as_str()))
    {
        return Err(Error::Contract(format!(
            "`{}` is in both training and validation sets",
            r.origin
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Cnn::<f32>::new(config.dropout_rate, &mut rng)?;
    let mut opt = Adam::new(AdamConfig::classifier(config.learning_rate))?;
    let mut history = TrainHistory::default();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in batches(train, config.batch_size, rng.random())? {
            let (x, t) = stack_records::<f32>(&batch)?;
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let x = tape.constant(&x);
            let p = net.forward(&mut tape, &vars, x, Mode::Train, rng.random())?;
            let loss = tape.bce(p, &t)?;
            let value = tape.value(loss)[0] as f64;
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "classifier loss {value} at epoch {epoch}"
                )));
            }
            loss_sum += value * batch.len() as f64;
            hits += correct(tape.value(p), &t);
            let grads = tape.backward(loss)?;
            net.params_mut().attach(&grads, &vars)?;
            opt.step(net.params_mut().tensors_mut())?;
        }
        let (val_loss, val_acc) = evaluate_loss(&net, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "validation loss {val_loss} at epoch {epoch}"
            )));
        }
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            val_loss,
            val_acc,
        };
        log::debug!("cnn epoch {epoch}: {row:?}");
        history.epochs.push(row);
        if val_loss < best {
            best = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if config.patience.is_some_and(|p| stale >= p) {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.optimizer_steps = opt.steps();
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_is_closed_form() {
        let net = Cnn::<f32>::new(0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(
            net.parameter_count(),
            Cnn::<f32>::analytic_parameter_count()
        );
        assert_eq!(Cnn::<f32>::analytic_parameter_count(), 1_142_081);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(classify(0.51, 0.5), Label::Tumor);
        assert_eq!(classify(0.49, 0.5), Label::Healthy);
        assert_eq!(classify(0.5, 0.5), Label::Healthy);
        assert_eq!(classify(1e-6, 0.0), Label::Tumor);
        assert_eq!(classify(0.0, 0.0), Label::Healthy);
    }

    #[test]
    fn rejects_bad_dropout() {
        assert!(Cnn::<f32>::new(1.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
