#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthmix::autodiff::{
    Activation, Element, Mode, RunningStats, ScalarFunction, Tape, Tensor, Var,
};
use synthmix::dcgan::{disc_loss, gen_loss};
use synthmix::Result;

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(
        shape.to_vec(),
        0.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

pub fn probs(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new([n, 1], (0..n).map(|_| rng.random_range(0.1..0.9)).collect()).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub enum Layer {
    Conv2d {
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        stride: usize,
        pad: usize,
    },
    Dense,
    BatchNorm,
    /// Two batches stacked, normalized together, second one sliced back out.
    JointBatchNorm,
    Act(Activation),
    MaxPool,
    Bce,
    DiscLoss,
    GenLoss,
    /// conv -> relu -> dense -> sigmoid -> bce on a 2-sample batch.
    Composite,
}

/// One layer with all inputs fixed except `inputs[wrt]`, reduced to a scalar
/// through a fixed positive weighting of its output.
pub struct Case {
    pub name: String,
    pub layer: Layer,
    pub inputs: Vec<Tensor<f64>>,
    pub wrt: usize,
}

impl Case {
    fn new(name: &str, layer: Layer, inputs: Vec<Tensor<f64>>, wrt: usize) -> Self {
        Self {
            name: name.to_string(),
            layer,
            inputs,
            wrt,
        }
    }

    pub fn point(&self) -> &Tensor<f64> {
        &self.inputs[self.wrt]
    }
}

fn weighted_sum<T: Element>(tape: &mut Tape<T>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(
        shape,
        (0..n)
            .map(|i| T::from_f64(0.5 + (i * 37 % 17) as f64 / 17.0))
            .collect(),
    )?;
    let w = tape.constant(&w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn targets<T: Element>(t: &Tensor<f64>) -> Vec<T> {
    t.data().iter().map(|&v| T::from_f64(v)).collect()
}

impl ScalarFunction for Case {
    fn eval<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let v: Vec<Var> = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == self.wrt {
                    x
                } else {
                    tape.constant(&t.cast())
                }
            })
            .collect();
        match self.layer {
            Layer::Conv2d { stride, pad } => {
                let y = tape.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                weighted_sum(tape, y)
            }
            Layer::ConvTranspose2d { stride, pad } => {
                let y = tape.conv_transpose2d(v[0], v[1], Some(v[2]), stride, pad)?;
                weighted_sum(tape, y)
            }
            Layer::Dense => {
                let y = tape.dense(v[0], v[1], v[2])?;
                weighted_sum(tape, y)
            }
            Layer::BatchNorm => {
                let channels = self.inputs[0].shape()[1];
                let mut stats = RunningStats::new(channels);
                let y = tape.batchnorm2d(v[0], v[1], v[2], Mode::Train, &mut stats, 1e-5)?;
                weighted_sum(tape, y)
            }
            Layer::JointBatchNorm => {
                let rows = self.inputs[0].shape()[0];
                let total = rows + self.inputs[1].shape()[0];
                let mut stats = RunningStats::new(self.inputs[0].shape()[1]);
                let x = tape.concat(&[v[0], v[1]])?;
                let y = tape.batchnorm2d(x, v[2], v[3], Mode::Train, &mut stats, 1e-5)?;
                let y = tape.slice_outer(y, rows, total)?;
                weighted_sum(tape, y)
            }
            Layer::Act(kind) => {
                let y = tape.activation(v[0], kind)?;
                weighted_sum(tape, y)
            }
            Layer::MaxPool => {
                let y = tape.maxpool2d(v[0], 2, 2)?;
                weighted_sum(tape, y)
            }
            Layer::Bce => tape.bce(v[0], &targets::<T>(&self.inputs[1])),
            Layer::DiscLoss => disc_loss(tape, v[0], v[1]),
            Layer::GenLoss => gen_loss(tape, v[0]),
            Layer::Composite => {
                let h = tape.conv2d(v[0], v[1], None, 1, 1)?;
                let h = tape.relu(h)?;
                let h = tape.flatten(h)?;
                let logits = tape.dense(h, v[2], v[3])?;
                let p = tape.sigmoid(logits)?;
                tape.bce(p, &[T::one(), T::zero()])
            }
        }
    }
}

/// Every layer primitive and loss, differentiated with respect to each input.
pub fn gradient_cases() -> Vec<Case> {
    let mut cases = Vec::new();
    let conv = vec![
        randn(&[2, 3, 7, 7], 1),
        randn(&[4, 3, 3, 3], 2),
        randn(&[4], 3),
    ];
    for (wrt, what) in ["input", "weight", "bias"].iter().enumerate() {
        cases.push(Case::new(
            &format!("conv2d s1p1 {what}"),
            Layer::Conv2d { stride: 1, pad: 1 },
            conv.clone(),
            wrt,
        ));
        cases.push(Case::new(
            &format!("conv2d s2p1 {what}"),
            Layer::Conv2d { stride: 2, pad: 1 },
            conv.clone(),
            wrt,
        ));
    }
    let convt = vec![
        randn(&[2, 4, 3, 3], 4),
        randn(&[4, 3, 4, 4], 5),
        randn(&[3], 6),
    ];
    for (wrt, what) in ["input", "weight", "bias"].iter().enumerate() {
        cases.push(Case::new(
            &format!("conv_transpose2d s2p1 {what}"),
            Layer::ConvTranspose2d { stride: 2, pad: 1 },
            convt.clone(),
            wrt,
        ));
        cases.push(Case::new(
            &format!("conv_transpose2d s1p0 {what}"),
            Layer::ConvTranspose2d { stride: 1, pad: 0 },
            convt.clone(),
            wrt,
        ));
    }
    let dense = vec![randn(&[3, 5], 7), randn(&[5, 4], 8), randn(&[4], 9)];
    for (wrt, what) in ["input", "weight", "bias"].iter().enumerate() {
        cases.push(Case::new(
            &format!("dense {what}"),
            Layer::Dense,
            dense.clone(),
            wrt,
        ));
    }
    let bn = vec![randn(&[3, 2, 3, 3], 10), randn(&[2], 11), randn(&[2], 12)];
    for (wrt, what) in ["input", "gamma", "beta"].iter().enumerate() {
        cases.push(Case::new(
            &format!("batchnorm2d {what}"),
            Layer::BatchNorm,
            bn.clone(),
            wrt,
        ));
    }
    let joint = vec![
        randn(&[2, 3, 4, 4], 30),
        randn(&[3, 3, 4, 4], 31),
        randn(&[3], 32),
        randn(&[3], 33),
    ];
    for (wrt, what) in ["first", "second"].iter().enumerate() {
        cases.push(Case::new(
            &format!("concat-batchnorm-slice {what}"),
            Layer::JointBatchNorm,
            joint.clone(),
            wrt,
        ));
    }
    for (name, kind) in [
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::LeakyRelu(0.2)),
        ("sigmoid", Activation::Sigmoid),
        ("tanh", Activation::Tanh),
    ] {
        cases.push(Case::new(
            name,
            Layer::Act(kind),
            vec![randn(&[2, 3, 4, 4], 13)],
            0,
        ));
    }
    cases.push(Case::new(
        "maxpool2d",
        Layer::MaxPool,
        vec![randn(&[2, 2, 6, 6], 14)],
        0,
    ));
    let labels = Tensor::new([6, 1], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    cases.push(Case::new(
        "bce_loss",
        Layer::Bce,
        vec![probs(6, 15), labels],
        0,
    ));
    let d = vec![probs(5, 16), probs(5, 17)];
    cases.push(Case::new("disc_loss d_real", Layer::DiscLoss, d.clone(), 0));
    cases.push(Case::new("disc_loss d_fake", Layer::DiscLoss, d, 1));
    cases.push(Case::new("gen_loss", Layer::GenLoss, vec![probs(5, 18)], 0));
    let mut composite = vec![
        randn(&[2, 1, 5, 5], 19),
        randn(&[2, 1, 3, 3], 20),
        randn(&[50, 1], 21),
        randn(&[1], 22),
    ];
    composite[2] = Tensor::new(
        [50, 1],
        composite[2].data().iter().map(|v| v * 0.2).collect(),
    )
    .unwrap();
    for (wrt, what) in ["conv weight", "dense weight", "dense bias"]
        .iter()
        .enumerate()
    {
        cases.push(Case::new(
            &format!("composite {what}"),
            Layer::Composite,
            composite.clone(),
            wrt + 1,
        ));
    }
    cases
}
