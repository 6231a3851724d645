use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tape::{softmax_rows, ParamId, Tape, Var};
use super::tensor::{affine, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softmax,
}

impl Activation {
    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::Softmax => 3,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Identity,
            3 => Activation::Softmax,
            _ => return None,
        })
    }

    fn apply(self, x: Tensor) -> Tensor {
        match self {
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::Tanh => x.map(f64::tanh),
            Activation::Identity => x,
            Activation::Softmax => softmax_rows(&x),
        }
    }

    fn apply_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
            Activation::Softmax => tape.softmax(x),
        }
    }
}

/// One dense layer: `activation(x · weight + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `[inputs, outputs]`.
    pub weight: Tensor,
    /// Shape `[outputs]`.
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

/// Feed-forward network parameters. Dropout is applied to the output of
/// every hidden layer (never to the final layer).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub dropout_rate: f64,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, dropout_rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {dropout_rate} outside [0, 1]"
            )));
        }
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.shape().len() != 2 || layer.bias.len() != layer.outputs() {
                return Err(Error::Config(format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && layers[i - 1].outputs() != layer.inputs() {
                return Err(Error::Config(format!(
                    "layer {i} expects {} inputs but previous layer emits {}",
                    layer.inputs(),
                    layers[i - 1].outputs()
                )));
            }
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    /// Random initialization with standard deviation `gain / sqrt(fan_in)`
    /// (gain √2 for ReLU layers, 1 otherwise) and zero biases.
    ///
    /// `sizes` lists the widths from input to output.
    pub fn init(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let activation = if i + 2 == sizes.len() { output } else { hidden };
            let gain = if activation == Activation::Relu {
                2f64.sqrt()
            } else {
                1.0
            };
            let std = gain / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect::<Vec<f64>>();
            layers.push(Layer {
                weight: Tensor::new(vec![fan_in, fan_out], data)?,
                bias: Tensor::zeros(&[fan_out]),
                activation,
            });
        }
        Self::new(layers, dropout_rate)
    }

    /// Multiply the final layer's weights by `factor`.
    pub fn scale_output(mut self, factor: f64) -> Self {
        if let Some(last) = self.layers.last_mut() {
            for w in last.weight.data_mut() {
                *w *= factor;
            }
        }
        self
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameter identities of layer `layer` relative to `base`.
    pub fn weight_id(base: u32, layer: usize) -> ParamId {
        ParamId(base + 2 * layer as u32)
    }

    pub fn bias_id(base: u32, layer: usize) -> ParamId {
        ParamId(base + 2 * layer as u32 + 1)
    }

    pub fn visit(&self, base: u32, f: &mut dyn FnMut(ParamId, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            f(Self::weight_id(base, i), &l.weight);
            f(Self::bias_id(base, i), &l.bias);
        }
    }

    pub fn visit_mut(&mut self, base: u32, f: &mut dyn FnMut(ParamId, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(Self::weight_id(base, i), &mut l.weight);
            f(Self::bias_id(base, i), &mut l.bias);
        }
    }

    fn dropout_mask(&self, rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        let rate = self.dropout_rate;
        let keep_scale = if rate < 1.0 { 1.0 / (1.0 - rate) } else { 0.0 };
        let data = (0..rows * cols)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        Tensor::new(vec![rows, cols], data).expect("mask shape")
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.cols() != self.input_len() {
            return Err(Error::Config(format!(
                "input width {} does not match network input {}",
                input.cols(),
                self.input_len()
            )));
        }
        Ok(())
    }
}

/// Evaluate the network on every row of `input`. Dropout masks are drawn
/// from `rng` only when `train_mode` is set and the rate is positive.
pub fn forward_mlp(
    params: &MlpParams,
    input: &Tensor,
    train_mode: bool,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if !train_mode || params.dropout_rate == 0.0 {
        return forward_eval(params, input);
    }
    params.check_input(input)?;
    let last = params.layers.len() - 1;
    let mut x = input.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        x = layer
            .activation
            .apply(affine(&x, &layer.weight, Some(&layer.bias)));
        if i < last && train_mode && params.dropout_rate > 0.0 {
            let mask = params.dropout_mask(x.rows(), x.cols(), rng);
            x = x.zip(&mask, |a, m| a * m);
        }
    }
    Ok(x)
}

/// Evaluation-mode forward pass (no dropout, no randomness).
pub fn forward_eval(params: &MlpParams, input: &Tensor) -> Result<Tensor> {
    params.check_input(input)?;
    let mut layers = params.layers.iter();
    let first = layers.next().expect("validated non-empty");
    let mut x = first
        .activation
        .apply(affine(input, &first.weight, Some(&first.bias)));
    for layer in layers {
        x = layer
            .activation
            .apply(affine(&x, &layer.weight, Some(&layer.bias)));
    }
    Ok(x)
}

/// [`forward_mlp`] recorded on a tape, registering every weight and bias
/// as a parameter under `base`. With the same `rng` state the result is
/// bit-identical to [`forward_mlp`].
pub fn forward_mlp_tape(
    tape: &mut Tape,
    params: &MlpParams,
    base: u32,
    input: Var,
    train_mode: bool,
    rng: &mut impl Rng,
) -> Result<Var> {
    let dropout = train_mode && params.dropout_rate > 0.0;
    tape_pass(tape, params, base, input, dropout.then_some(rng))
}

/// Tape forward pass without dropout.
pub fn forward_eval_tape(tape: &mut Tape, params: &MlpParams, base: u32, input: Var) -> Result<Var> {
    tape_pass::<rand_chacha::ChaCha8Rng>(tape, params, base, input, None)
}

fn tape_pass<R: Rng>(
    tape: &mut Tape,
    params: &MlpParams,
    base: u32,
    input: Var,
    mut rng: Option<&mut R>,
) -> Result<Var> {
    params.check_input(tape.value(input))?;
    let last = params.layers.len() - 1;
    let mut x = input;
    for (i, layer) in params.layers.iter().enumerate() {
        let w = tape.param(MlpParams::weight_id(base, i), layer.weight.clone());
        let b = tape.param(MlpParams::bias_id(base, i), layer.bias.clone());
        let z = tape.affine(x, w, Some(b))?;
        x = layer.activation.apply_tape(tape, z);
        if i < last {
            if let Some(rng) = rng.as_deref_mut() {
                let v = tape.value(x);
                let mask = params.dropout_mask(v.rows(), v.cols(), rng);
                x = tape.mul_const(x, mask)?;
            }
        }
    }
    Ok(x)
}

/// Plain-value trainable object that exposes its tensors by identity.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(ParamId, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamId, &mut Tensor));

    /// Hash of the exact bit patterns of every parameter, in identity order.
    fn checksum(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.visit_params(&mut |id, t| {
            id.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        });
        h.finish()
    }
}

impl Parameterized for MlpParams {
    fn visit_params(&self, f: &mut dyn FnMut(ParamId, &Tensor)) {
        self.visit(0, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamId, &mut Tensor)) {
        self.visit_mut(0, f);
    }
}
