//! Reverse-mode tape. Every forward op appends a node holding its value and
//! whatever it needs for the backward rule; [`Tape::backward`] walks the nodes
//! once in reverse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeom};
use super::{element::matmul, Element, Tensor};
use crate::error::{Error, Result};
use crate::parallel;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    /// Parses `relu`, `sigmoid`, `tanh`, `leaky_relu` or `leaky_relu:<slope>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "leaky_relu" => Ok(Activation::LeakyRelu(0.2)),
            _ => match s.strip_prefix("leaky_relu:").map(str::parse::<f64>) {
                Some(Ok(slope)) if slope.is_finite() => Ok(Activation::LeakyRelu(slope)),
                _ => Err(Error::Config(format!("unknown activation `{s}`"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance carried by a batch-norm layer between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: T,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: T::from_f64(0.1),
        }
    }

    pub fn cast<U: Element>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            var: self.var.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            momentum: U::from_f64(self.momentum.as_f64()),
        }
    }
}

enum Op<T> {
    Leaf,
    Activation(Var, Activation),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
        rows: usize,
        n: usize,
        m: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    /// Elementwise multiply by a fixed (already scaled) mask.
    Mask(Var, Vec<T>),
    Reshape(Var),
    /// Inputs stacked along the leading axis.
    Concat(Vec<Var>),
    /// Flat range `offset..offset + len` of the input.
    Slice {
        input: Var,
        offset: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Bce {
        input: Var,
        targets: Vec<T>,
        clamped: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation for one training step.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Probability clamp used by every log-loss on the tape.
pub const PROB_EPS: f64 = 1e-7;

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a tensor as a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Records a leaf whose gradient is always tracked.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    /// Copies a recorded value out as a gradient-free tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are well-formed")
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let mut value = self.nodes[x.0].value.clone();
        let slope = match kind {
            Activation::LeakyRelu(s) => T::from_f64(s),
            _ => T::zero(),
        };
        match kind {
            Activation::Relu => parallel::map_inplace(&mut value, |v| *v = v.max(T::zero())),
            Activation::LeakyRelu(_) => parallel::map_inplace(&mut value, |v| {
                if *v < T::zero() {
                    *v *= slope
                }
            }),
            Activation::Sigmoid => parallel::map_inplace(&mut value, |v| *v = sigmoid(*v)),
            Activation::Tanh => parallel::map_inplace(&mut value, |v| *v = v.tanh()),
        }
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x]);
        Ok(self.push(shape, value, Op::Activation(x, kind), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    fn check_bias(&self, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.nodes[b.0].value.len() != channels {
                return Err(Error::Shape(format!(
                    "bias has {} entries, expected {channels}",
                    self.nodes[b.0].value.len()
                )));
            }
        }
        Ok(())
    }

    /// Cross-correlation of `(batch, in_c, h, w)` with `(out_c, in_c, k, k)`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.nodes[input.0].shape.clone();
        let ws = self.nodes[weight.0].shape.clone();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::Shape(format!(
                "conv2d expects NCHW input and square OIkk weight, got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::Shape(format!(
                "conv2d input has {} channels, weight expects {}",
                xs[1], ws[1]
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d stride must be positive".into()));
        }
        let k = ws[2];
        if xs[2] + 2 * padding < k || xs[3] + 2 * padding < k {
            return Err(Error::Shape(format!(
                "kernel {k} larger than padded input {xs:?}"
            )));
        }
        self.check_bias(bias, ws[0])?;
        let geom = ConvGeom {
            batch: xs[0],
            in_c: xs[1],
            h: xs[2],
            w: xs[3],
            out_c: ws[0],
            k,
            stride,
            pad: padding,
            out_h: (xs[2] + 2 * padding - k) / stride + 1,
            out_w: (xs[3] + 2 * padding - k) / stride + 1,
        };
        let value = kernels::conv2d_forward(
            &self.nodes[input.0].value,
            &self.nodes[weight.0].value,
            bias.map(|b| self.nodes[b.0].value.as_slice()),
            &geom,
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            vec![geom.batch, geom.out_c, geom.out_h, geom.out_w],
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Transposed convolution; `weight` is `(in_c, out_c, k, k)`.
    /// Output extent is `(h - 1) * stride - 2 * padding + k`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.nodes[input.0].shape.clone();
        let ws = self.nodes[weight.0].shape.clone();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::Shape(format!(
                "conv_transpose2d expects NCHW input and square IOkk weight, got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[0] {
            return Err(Error::Shape(format!(
                "conv_transpose2d input has {} channels, weight expects {}",
                xs[1], ws[0]
            )));
        }
        if stride == 0 {
            return Err(Error::Shape(
                "conv_transpose2d stride must be positive".into(),
            ));
        }
        let k = ws[2];
        let full_h = (xs[2] - 1) * stride + k;
        let full_w = (xs[3] - 1) * stride + k;
        if full_h <= 2 * padding || full_w <= 2 * padding {
            return Err(Error::Shape(format!(
                "padding {padding} consumes the whole output"
            )));
        }
        self.check_bias(bias, ws[1])?;
        // Adjoint conv: from the transposed output (h, w) back to the input extent.
        let geom = ConvGeom {
            batch: xs[0],
            in_c: ws[1],
            h: full_h - 2 * padding,
            w: full_w - 2 * padding,
            out_c: ws[0],
            k,
            stride,
            pad: padding,
            out_h: xs[2],
            out_w: xs[3],
        };
        let value = kernels::conv_transpose_forward(
            &self.nodes[input.0].value,
            &self.nodes[weight.0].value,
            bias.map(|b| self.nodes[b.0].value.as_slice()),
            &geom,
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            vec![geom.batch, geom.in_c, geom.h, geom.w],
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let xs = self.nodes[input.0].shape.clone();
        if xs.len() != 4 {
            return Err(Error::Shape(format!(
                "maxpool2d expects NCHW input, got {xs:?}"
            )));
        }
        if window == 0 || stride == 0 || window > xs[2] || window > xs[3] {
            return Err(Error::Shape(format!(
                "pool window {window} does not fit input {xs:?}"
            )));
        }
        let (value, argmax) = kernels::maxpool_forward(
            &self.nodes[input.0].value,
            xs[0] * xs[1],
            xs[2],
            xs[3],
            window,
            stride,
        );
        let shape = vec![
            xs[0],
            xs[1],
            (xs[2] - window) / stride + 1,
            (xs[3] - window) / stride + 1,
        ];
        let rg = self.rg(&[input]);
        Ok(self.push(shape, value, Op::MaxPool { input, argmax }, rg))
    }

    /// Affine map `(rows, n) x (n, m) + (m)`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.nodes[input.0].shape.clone();
        let ws = self.nodes[weight.0].shape.clone();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::Shape(format!(
                "dense cannot multiply {xs:?} by {ws:?}"
            )));
        }
        let (rows, n, m) = (xs[0], xs[1], ws[1]);
        if self.nodes[bias.0].value.len() != m {
            return Err(Error::Shape(format!("dense bias must have {m} entries")));
        }
        let mut value = Vec::with_capacity(rows * m);
        for _ in 0..rows {
            value.extend_from_slice(&self.nodes[bias.0].value);
        }
        matmul(
            false,
            false,
            rows,
            m,
            n,
            &self.nodes[input.0].value,
            &self.nodes[weight.0].value,
            T::one(),
            &mut value,
        );
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            vec![rows, m],
            value,
            Op::Dense {
                input,
                weight,
                bias,
                rows,
                n,
                m,
            },
            rg,
        ))
    }

    /// Per-channel batch normalization of an NCHW tensor. In train mode the
    /// batch statistics are used and `stats` is updated in place.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        stats: &mut RunningStats<T>,
        eps: f64,
    ) -> Result<Var> {
        let xs = self.nodes[input.0].shape.clone();
        if xs.len() != 4 {
            return Err(Error::Shape(format!(
                "batchnorm2d expects NCHW input, got {xs:?}"
            )));
        }
        let (batch, ch, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.nodes[gamma.0].value.len() != ch
            || self.nodes[beta.0].value.len() != ch
            || stats.mean.len() != ch
            || stats.var.len() != ch
        {
            return Err(Error::Shape(format!(
                "batchnorm2d parameters must have {ch} channels"
            )));
        }
        let x = &self.nodes[input.0].value;
        let count = batch * plane;
        let eps = T::from_f64(eps);
        let mut inv_std = vec![T::zero(); ch];
        let mut means = vec![T::zero(); ch];
        for c in 0..ch {
            let (mean, var) = if mode == Mode::Train {
                let mut s = T::zero();
                for n in 0..batch {
                    let off = (n * ch + c) * plane;
                    s += x[off..off + plane].iter().copied().sum::<T>();
                }
                let mean = s / T::from_f64(count as f64);
                let mut sq = T::zero();
                for n in 0..batch {
                    let off = (n * ch + c) * plane;
                    sq += x[off..off + plane]
                        .iter()
                        .map(|&v| (v - mean) * (v - mean))
                        .sum::<T>();
                }
                let var = sq / T::from_f64(count as f64);
                let unbiased = if count > 1 {
                    sq / T::from_f64((count - 1) as f64)
                } else {
                    var
                };
                let m = stats.momentum;
                stats.mean[c] = (T::one() - m) * stats.mean[c] + m * mean;
                stats.var[c] = (T::one() - m) * stats.var[c] + m * unbiased;
                (mean, var)
            } else {
                (stats.mean[c], stats.var[c])
            };
            means[c] = mean;
            inv_std[c] = T::one() / (var + eps).sqrt();
        }
        let mut xhat = vec![T::zero(); x.len()];
        let mut value = vec![T::zero(); x.len()];
        let g = &self.nodes[gamma.0].value;
        let b = &self.nodes[beta.0].value;
        for n in 0..batch {
            for c in 0..ch {
                let off = (n * ch + c) * plane;
                for i in off..off + plane {
                    let h = (x[i] - means[c]) * inv_std[c];
                    xhat[i] = h;
                    value[i] = g[c] * h + b[c];
                }
            }
        }
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            xs,
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout(&mut self, input: Var, rate: f64, mode: Mode, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.nodes[input.0].value.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    scale
                }
            })
            .collect();
        let value = self.nodes[input.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(&a, &m)| a * m)
            .collect();
        let shape = self.nodes[input.0].shape.clone();
        let rg = self.rg(&[input]);
        Ok(self.push(shape, value, Op::Mask(input, mask), rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let n = self.nodes[input.0].value.len();
        if shape.iter().product::<usize>() != n || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.nodes[input.0].shape
            )));
        }
        let value = self.nodes[input.0].value.clone();
        let rg = self.rg(&[input]);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(input), rg))
    }

    /// Collapses everything after the leading axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = &self.nodes[input.0].shape;
        let rows = s[0];
        let cols = s[1..].iter().product();
        self.reshape(input, &[rows, cols])
    }

    /// Stacks inputs along the leading axis; trailing axes must agree.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero inputs".into()))?;
        let tail = self.nodes[first.0].shape[1..].to_vec();
        let mut rows = 0;
        let mut value = Vec::new();
        for v in inputs {
            let s = &self.nodes[v.0].shape;
            if s[1..] != tail[..] {
                return Err(Error::Shape(format!(
                    "concat: {:?} vs {s:?}",
                    self.nodes[first.0].shape
                )));
            }
            rows += s[0];
            value.extend_from_slice(&self.nodes[v.0].value);
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = self.rg(inputs);
        Ok(self.push(shape, value, Op::Concat(inputs.to_vec()), rg))
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_outer(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let s = &self.nodes[input.0].shape;
        if start >= end || end > s[0] {
            return Err(Error::Shape(format!(
                "cannot take rows {start}..{end} of {s:?}"
            )));
        }
        let row: usize = s[1..].iter().product();
        let mut shape = s.clone();
        shape[0] = end - start;
        let value = self.nodes[input.0].value[start * row..end * row].to_vec();
        let rg = self.rg(&[input]);
        Ok(self.push(
            shape,
            value,
            Op::Slice {
                input,
                offset: start * row,
            },
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let f = T::from_f64(factor);
        let value = self.nodes[a.0].value.iter().map(|&x| x * f).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, value, Op::Scale(a, f), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().copied().sum::<T>();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![1], vec![s], Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.len();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets.
    /// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`; the gradient is
    /// evaluated at the clamped point.
    pub fn bce(&mut self, probs: Var, targets: &[T]) -> Result<Var> {
        let p = &self.nodes[probs.0].value;
        if p.len() != targets.len() {
            return Err(Error::Contract(format!(
                "{} predictions but {} targets",
                p.len(),
                targets.len()
            )));
        }
        let lo = T::from_f64(PROB_EPS);
        let hi = T::one() - lo;
        let clamped: Vec<T> = p.iter().map(|&v| v.max(lo).min(hi)).collect();
        let m = T::from_f64(p.len() as f64);
        let total = clamped
            .iter()
            .zip(targets)
            .map(|(&pc, &t)| t * pc.ln() + (T::one() - t) * (T::one() - pc).ln())
            .sum::<T>();
        let rg = self.rg(&[probs]);
        Ok(self.push(
            vec![1],
            vec![-total / m],
            Op::Bce {
                input: probs,
                targets: targets.to_vec(),
                clamped,
            },
            rg,
        ))
    }

    /// Runs reverse accumulation from the scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                if matches!(n.op, Op::Leaf) && n.requires_grad {
                    g
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Activation(x, kind) => {
                if !wants(*x) {
                    return;
                }
                let xv = &self.nodes[x.0].value;
                let y = &node.value;
                let d: Vec<T> = match kind {
                    Activation::Relu => g
                        .iter()
                        .zip(xv)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                    Activation::LeakyRelu(s) => {
                        let s = T::from_f64(*s);
                        g.iter()
                            .zip(xv)
                            .map(|(&g, &x)| if x > T::zero() { g } else { g * s })
                            .collect()
                    }
                    Activation::Sigmoid => g
                        .iter()
                        .zip(y)
                        .map(|(&g, &y)| g * y * (T::one() - y))
                        .collect(),
                    Activation::Tanh => g
                        .iter()
                        .zip(y)
                        .map(|(&g, &y)| g * (T::one() - y * y))
                        .collect(),
                };
                accumulate(grads, *x, d);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                if wants(*input) {
                    let d = kernels::conv2d_backward_input(g, &self.nodes[weight.0].value, geom);
                    accumulate(grads, *input, d);
                }
                if wants(*weight) {
                    let d = kernels::conv2d_backward_weight(&self.nodes[input.0].value, g, geom);
                    accumulate(grads, *weight, d);
                }
                if let Some(b) = bias.filter(|b| wants(*b)) {
                    let d = kernels::bias_grad(g, geom.batch, geom.out_c, geom.out_h * geom.out_w);
                    accumulate(grads, b, d);
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
            } => {
                if wants(*input) {
                    let d = kernels::conv_transpose_backward_input(
                        g,
                        &self.nodes[weight.0].value,
                        geom,
                    );
                    accumulate(grads, *input, d);
                }
                if wants(*weight) {
                    let d = kernels::conv_transpose_backward_weight(
                        &self.nodes[input.0].value,
                        g,
                        geom,
                    );
                    accumulate(grads, *weight, d);
                }
                if let Some(b) = bias.filter(|b| wants(*b)) {
                    let d = kernels::bias_grad(g, geom.batch, geom.in_c, geom.h * geom.w);
                    accumulate(grads, b, d);
                }
            }
            Op::MaxPool { input, argmax } => {
                if wants(*input) {
                    let mut d = vec![T::zero(); self.nodes[input.0].value.len()];
                    for (&i, &gv) in argmax.iter().zip(g) {
                        d[i] += gv;
                    }
                    accumulate(grads, *input, d);
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
                rows,
                n,
                m,
            } => {
                if wants(*input) {
                    let mut d = vec![T::zero(); rows * n];
                    matmul(
                        false,
                        true,
                        *rows,
                        *n,
                        *m,
                        g,
                        &self.nodes[weight.0].value,
                        T::zero(),
                        &mut d,
                    );
                    accumulate(grads, *input, d);
                }
                if wants(*weight) {
                    let mut d = vec![T::zero(); n * m];
                    matmul(
                        true,
                        false,
                        *n,
                        *m,
                        *rows,
                        &self.nodes[input.0].value,
                        g,
                        T::zero(),
                        &mut d,
                    );
                    accumulate(grads, *weight, d);
                }
                if wants(*bias) {
                    let mut d = vec![T::zero(); *m];
                    for row in g.chunks(*m) {
                        d.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    accumulate(grads, *bias, d);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = &self.nodes[input.0].shape;
                let (batch, ch, plane) = (shape[0], shape[1], shape[2] * shape[3]);
                let gam = &self.nodes[gamma.0].value;
                let mut dgamma = vec![T::zero(); ch];
                let mut dbeta = vec![T::zero(); ch];
                for n in 0..batch {
                    for c in 0..ch {
                        let off = (n * ch + c) * plane;
                        for i in off..off + plane {
                            dgamma[c] += g[i] * xhat[i];
                            dbeta[c] += g[i];
                        }
                    }
                }
                if wants(*input) {
                    let mut d = vec![T::zero(); g.len()];
                    let count = T::from_f64((batch * plane) as f64);
                    for n in 0..batch {
                        for c in 0..ch {
                            let off = (n * ch + c) * plane;
                            for i in off..off + plane {
                                d[i] = if *train {
                                    gam[c] * inv_std[c] / count
                                        * (count * g[i] - dbeta[c] - xhat[i] * dgamma[c])
                                } else {
                                    gam[c] * inv_std[c] * g[i]
                                };
                            }
                        }
                    }
                    accumulate(grads, *input, d);
                }
                if wants(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if wants(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::Mask(x, mask) => {
                if wants(*x) {
                    accumulate(
                        grads,
                        *x,
                        g.iter().zip(mask).map(|(&a, &m)| a * m).collect(),
                    );
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for v in parts {
                    let n = self.nodes[v.0].value.len();
                    if wants(*v) {
                        accumulate(grads, *v, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Slice { input, offset } => {
                if wants(*input) {
                    let mut d = vec![T::zero(); self.nodes[input.0].value.len()];
                    d[*offset..*offset + g.len()].copy_from_slice(g);
                    accumulate(grads, *input, d);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = &self.nodes[b.0].value;
                    accumulate(grads, *a, g.iter().zip(bv).map(|(&g, &v)| g * v).collect());
                }
                if wants(*b) {
                    let av = &self.nodes[a.0].value;
                    accumulate(grads, *b, g.iter().zip(av).map(|(&g, &v)| g * v).collect());
                }
            }
            Op::Scale(x, f) => {
                if wants(*x) {
                    accumulate(grads, *x, g.iter().map(|&v| v * *f).collect());
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    accumulate(grads, *x, vec![g[0]; self.nodes[x.0].value.len()]);
                }
            }
            Op::Bce {
                input,
                targets,
                clamped,
            } => {
                if wants(*input) {
                    let m = T::from_f64(targets.len() as f64);
                    let d = clamped
                        .iter()
                        .zip(targets)
                        .map(|(&p, &t)| -g[0] / m * (t / p - (T::one() - t) / (T::one() - p)))
                        .collect();
                    accumulate(grads, *input, d);
                }
            }
        }
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(d),
    }
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for a tracked leaf; `None` when the leaf was not reached.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (zeros if unreached) into `t.grad`.
    pub fn attach(&self, v: Var, t: &mut Tensor<T>) -> Result<()> {
        match self.get(v) {
            Some(g) => t.accumulate_grad(g),
            None => t.accumulate_grad(&vec![T::zero(); t.numel()]),
        }
    }
}
