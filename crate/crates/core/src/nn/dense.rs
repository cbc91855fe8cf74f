use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
    Softmax,
}

impl Activation {
    /// Byte used in the weight file.
    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Softmax => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            3 => Some(Activation::Softmax),
            _ => None,
        }
    }

    /// Applies the activation in place.
    pub fn apply<T: Float>(self, z: &mut [T]) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(T::zero())),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Softmax => softmax_in_place(z),
        }
    }

    /// Derivative expressed through the activation's output `a`.
    /// Not used for softmax, whose gradient is fused with the cross-entropy loss.
    #[inline]
    pub(crate) fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            // ReLU'(0) is taken as 0.
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear | Activation::Softmax => 1.0,
        }
    }
}

pub fn softmax_in_place<T: Float>(z: &mut [T]) {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in z.iter_mut() {
        *v = *v / sum;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

/// One fully connected layer. `weights` is row-major `out_dim x in_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            spec,
            weights: vec![0.0; spec.in_dim * spec.out_dim],
            bias: vec![0.0; spec.out_dim],
        }
    }

    /// `out = act(W x + b)`, evaluated in precision `T`.
    #[inline]
    pub fn forward_into<T: Float>(&self, x: &[T], out: &mut [T]) {
        let n_in = self.spec.in_dim;
        for (o, (row, &b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(n_in).zip(&self.bias))
        {
            // Accumulate in f64 and round once, so the f32 result does not
            // depend on the order of the inputs.
            let mut acc = b;
            for (&w, &xi) in row.iter().zip(x) {
                acc += w * xi.to_f64().unwrap();
            }
            *o = T::from(acc).unwrap();
        }
        self.spec.activation.apply(out);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active (inverted scaling), draws from the rng.
    Train,
    /// Deterministic; never touches the rng.
    Infer,
}

/// Dense classifier: a chain of layers plus the train-time dropout rate
/// applied after every hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
    pub dropout_rate: f64,
}

impl DenseNet {
    pub fn zeros(specs: &[LayerSpec], dropout_rate: f64) -> Result<Self> {
        check_chain(specs)?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        Ok(Self {
            layers: specs.iter().map(|&s| DenseLayer::zeros(s)).collect(),
            dropout_rate,
        })
    }

    /// Glorot-uniform weights, zero biases, values rounded to `f32` so the
    /// network survives the weight file unchanged.
    pub fn glorot<R: Rng + ?Sized>(specs: &[LayerSpec], dropout_rate: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(specs, dropout_rate)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.spec.in_dim + layer.spec.out_dim) as f64).sqrt();
            for w in &mut layer.weights {
                *w = (rng.random_range(-limit..limit) as f32) as f64;
            }
        }
        Ok(net)
    }

    /// Builds a classifier with the given hidden widths and a softmax head.
    pub fn classifier<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[(usize, Activation)],
        classes: usize,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut specs = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &(w, act) in hidden {
            specs.push(LayerSpec::new(prev, w, act));
            prev = w;
        }
        specs.push(LayerSpec::new(prev, classes, Activation::Softmax));
        Self::glorot(&specs, dropout_rate, rng)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_dim)
    }

    pub fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.spec.in_dim.max(l.spec.out_dim))
            .max()
            .unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// Parameter bytes plus the ping-pong activation scratch, for the given
    /// scalar width.
    pub fn ram_bytes(&self, bytes_per_param: usize) -> usize {
        (self.param_count() + self.scratch_values()) * bytes_per_param
    }

    /// Activation values needed to evaluate the net inside one double-ended
    /// buffer: the largest `in + out` over layers.
    pub fn scratch_values(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.spec.in_dim + l.spec.out_dim)
            .max()
            .unwrap_or(0)
    }

    /// Class probabilities for one input, computed in `f64`.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], mode: Mode, rng: &mut R) -> Result<Vec<f64>> {
        match mode {
            Mode::Train => self.run(x, Some(rng)),
            Mode::Infer => self.run::<R>(x, None),
        }
    }

    /// Deterministic inference in `f64`.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.run::<dyn rand::RngCore>(x, None)
    }

    fn run<R: Rng + ?Sized>(&self, x: &[f64], mut dropout_rng: Option<&mut R>) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let mut cur = x.to_vec();
        let last = self.layers.len().saturating_sub(1);
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.spec.out_dim];
            layer.forward_into(&cur, &mut next);
            if let Some(rng) = dropout_rng.as_deref_mut() {
                if k < last && self.dropout_rate > 0.0 {
                    let keep = 1.0 - self.dropout_rate;
                    for v in &mut next {
                        if rng.random::<f64>() < self.dropout_rate {
                            *v = 0.0;
                        } else {
                            *v /= keep;
                        }
                    }
                }
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Deterministic inference in `f32`, the deployed precision.
    pub fn infer_f32(&self, x: &[f32]) -> Result<Vec<f32>> {
        self.check_input(x.len())?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0f32; layer.spec.out_dim];
            layer.forward_into(&cur, &mut next);
            cur = next;
        }
        Ok(cur)
    }

    pub(crate) fn check_input(&self, got: usize) -> Result<()> {
        if got != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got,
            });
        }
        Ok(())
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = (*v as f32) as f64;
            }
        }
    }
}

pub(crate) fn check_chain(specs: &[LayerSpec]) -> Result<()> {
    for (k, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::TopologyMismatch(format!("layer {k} has a zero dimension")));
        }
        if k > 0 && specs[k - 1].out_dim != s.in_dim {
            return Err(Error::TopologyMismatch(format!(
                "layer {} outputs {} but layer {k} expects {}",
                k - 1,
                specs[k - 1].out_dim,
                s.in_dim
            )));
        }
    }
    Ok(())
}
