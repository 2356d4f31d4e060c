//! Dense network: per hidden layer `dense -> [BN on the first layer] ->
//! dropout -> LeakyReLU`, then a linear output layer.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_slope() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_inputs: usize,
    pub n_outputs: usize,
    /// Width of each hidden layer.
    pub hidden: Vec<usize>,
    /// Dropout rate applied in every hidden layer; 0 disables dropout.
    #[serde(default)]
    pub dropout: f64,
    /// Batch normalisation after the first dense layer.
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
}

impl Architecture {
    pub fn new(n_inputs: usize, n_outputs: usize, hidden: Vec<usize>) -> Self {
        Self {
            n_inputs,
            n_outputs,
            hidden,
            dropout: 0.0,
            batch_norm: false,
            leaky_slope: default_slope(),
        }
    }

    /// Seven hidden layers of 128 units.
    pub fn spcam(n_levels: usize) -> Self {
        Self::new(2 * n_levels + 4, 4 * n_levels, vec![128; 7])
    }

    /// Five hidden layers of 128 units.
    pub fn sam(n_levels: usize) -> Self {
        Self::new(2 * n_levels + 4, 4 * n_levels, vec![128; 5])
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn with_batch_norm(mut self, on: bool) -> Self {
        self.batch_norm = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 || self.n_outputs == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("network needs positive widths and at least one hidden layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::Config("leaky slope must be finite".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.n_inputs];
        w.extend(&self.hidden);
        w.push(self.n_outputs);
        w
    }

    /// Trainable parameters: dense weights and biases plus BN scale and shift.
    pub fn param_count(&self) -> usize {
        let dense: usize = self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        dense + if self.batch_norm { 2 * self.hidden[0] } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    fn new(n: usize) -> Self {
        Self {
            gamma: Array1::ones(n),
            beta: Array1::zeros(n),
            running_mean: Array1::zeros(n),
            running_var: Array1::ones(n),
            momentum: 0.99,
            eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Scaled keep masks (`0` or `1 / (1 - rate)`), one per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Option<Array2<f64>>>);

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each dense layer.
    inputs: Vec<Array2<f64>>,
    /// Value entering each activation.
    pre_act: Vec<Array2<f64>>,
    masks: DropoutMasks,
    bn: Option<(Array2<f64>, Array1<f64>)>,
    pub output: Array2<f64>,
}

impl ForwardCache {
    /// Signs of every hidden pre-activation in the pass.
    pub fn activation_signs(&self) -> Vec<bool> {
        self.pre_act.iter().flat_map(|z| z.iter().map(|v| *v > 0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub layers: Vec<Dense>,
    pub bn: Option<BatchNorm>,
}

fn glorot<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (n_in + n_out) as f64).sqrt();
    Array2::from_shape_simple_fn((n_in, n_out), || rng.gen_range(-limit..limit))
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .widths()
            .windows(2)
            .map(|w| Dense {
                w: glorot(w[0], w[1], rng),
                b: Array1::zeros(w[1]),
            })
            .collect();
        let bn = arch.batch_norm.then(|| BatchNorm::new(arch.hidden[0]));
        Ok(Self { arch, layers, bn })
    }

    /// All weights and biases zero.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .widths()
            .windows(2)
            .map(|w| Dense {
                w: Array2::zeros((w[0], w[1])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        let bn = arch.batch_norm.then(|| BatchNorm::new(arch.hidden[0]));
        Ok(Self { arch, layers, bn })
    }

    pub fn n_hidden(&self) -> usize {
        self.arch.hidden.len()
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    pub fn sample_masks<R: Rng>(&self, batch: usize, rng: &mut R) -> DropoutMasks {
        let rate = self.arch.dropout;
        DropoutMasks(
            self.arch
                .hidden
                .iter()
                .map(|&w| {
                    (rate > 0.0).then(|| {
                        let keep = 1.0 / (1.0 - rate);
                        Array2::from_shape_simple_fn((batch, w), || if rng.gen::<f64>() < rate { 0.0 } else { keep })
                    })
                })
                .collect(),
        )
    }

    /// Masks that keep every unit.
    pub fn no_masks(&self) -> DropoutMasks {
        DropoutMasks(vec![None; self.n_hidden()])
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.arch.n_inputs {
            return Err(Error::Shape(format!("{} inputs, network expects {}", x.ncols(), self.arch.n_inputs)));
        }
        Ok(())
    }

    /// Forward pass. Train mode samples dropout masks from `rng` and uses
    /// batch statistics (without updating the running ones).
    pub fn forward<R: Rng>(&self, x: ArrayView2<f64>, mode: Mode, rng: Option<&mut R>) -> Result<Array2<f64>> {
        match mode {
            Mode::Eval => self.predict(x),
            Mode::Train => {
                let rng = rng.ok_or_else(|| Error::Contract("train-mode forward needs a random generator".into()))?;
                let masks = self.sample_masks(x.nrows(), rng);
                Ok(self.forward_train(x, &masks)?.output)
            }
        }
    }

    /// Deterministic inference: no dropout, running BN statistics.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let slope = self.arch.leaky_slope;
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w) + &layer.b;
            if l == last {
                return Ok(z);
            }
            if l == 0 {
                if let Some(bn) = &self.bn {
                    let scale = &bn.gamma / &bn.running_var.mapv(|v| (v + bn.eps).sqrt());
                    let shift = &bn.beta - &(&bn.running_mean * &scale);
                    z = z * &scale + &shift;
                }
            }
            z.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
            a = z;
        }
        unreachable!("network has an output layer")
    }

    /// Signs of every hidden pre-activation, used to detect kinks.
    pub fn activation_pattern(&self, x: ArrayView2<f64>) -> Result<Vec<bool>> {
        self.check_input(&x)?;
        let mut pattern = Vec::new();
        let mut a = x.to_owned();
        for (l, layer) in self.layers[..self.layers.len() - 1].iter().enumerate() {
            let mut z = a.dot(&layer.w) + &layer.b;
            if l == 0 {
                if let Some(bn) = &self.bn {
                    let scale = &bn.gamma / &bn.running_var.mapv(|v| (v + bn.eps).sqrt());
                    z = (z - &bn.running_mean) * &scale + &bn.beta;
                }
            }
            pattern.extend(z.iter().map(|v| *v > 0.0));
            z.mapv_inplace(|v| if v > 0.0 { v } else { self.arch.leaky_slope * v });
            a = z;
        }
        Ok(pattern)
    }

    /// Training-mode forward pass with explicit masks, keeping what the
    /// backward pass needs.
    pub fn forward_train(&self, x: ArrayView2<f64>, masks: &DropoutMasks) -> Result<ForwardCache> {
        self.check_input(&x)?;
        if masks.0.len() != self.n_hidden() {
            return Err(Error::Shape("one dropout mask per hidden layer".into()));
        }
        let slope = self.arch.leaky_slope;
        let n = x.nrows() as f64;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_act = Vec::with_capacity(self.n_hidden());
        let mut bn_cache = None;
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w) + &layer.b;
            inputs.push(a);
            if l == self.n_hidden() {
                return Ok(ForwardCache {
                    inputs,
                    pre_act,
                    masks: masks.clone(),
                    bn: bn_cache,
                    output: z,
                });
            }
            if l == 0 {
                if let Some(bn) = &self.bn {
                    let mean = z.sum_axis(Axis(0)) / n;
                    let centred = &z - &mean;
                    let var = centred.mapv(|v| v * v).sum_axis(Axis(0)) / n;
                    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                    let xhat = centred * &inv_std;
                    z = &xhat * &bn.gamma + &bn.beta;
                    bn_cache = Some((xhat, inv_std));
                }
            }
            if let Some(m) = &masks.0[l] {
                if m.dim() != z.dim() {
                    return Err(Error::Shape("dropout mask shape".into()));
                }
                z *= m;
            }
            pre_act.push(z.clone());
            z.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
            a = z;
        }
        unreachable!("network has an output layer")
    }

    /// Batch statistics of the first layer, for the running-average update.
    fn first_layer_moments(&self, x: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
        let z = x.dot(&self.layers[0].w) + &self.layers[0].b;
        let n = x.nrows() as f64;
        let mean = z.sum_axis(Axis(0)) / n;
        let var = (&z - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / n;
        (mean, var)
    }

    pub fn update_running_stats(&mut self, x: ArrayView2<f64>) {
        if self.bn.is_none() {
            return;
        }
        let (mean, var) = self.first_layer_moments(x);
        let bn = self.bn.as_mut().expect("checked above");
        let m = bn.momentum;
        Zip::from(&mut bn.running_mean).and(&mean).for_each(|r, &v| *r = m * *r + (1.0 - m) * v);
        Zip::from(&mut bn.running_var).and(&var).for_each(|r, &v| *r = m * *r + (1.0 - m) * v);
    }

    /// Gradients of the loss with respect to every trainable tensor, in
    /// [`Network::tensors`] order, given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        if d_out.dim() != cache.output.dim() {
            return Err(Error::Shape("output gradient shape".into()));
        }
        let slope = self.arch.leaky_slope;
        let nh = self.n_hidden();
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        let mut bn_grads = None;
        let mut delta = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            if l < nh {
                let d = &cache.pre_act[l];
                Zip::from(&mut delta).and(d).for_each(|g, &v| {
                    if v <= 0.0 {
                        *g *= slope
                    }
                });
                if let Some(m) = &cache.masks.0[l] {
                    delta *= m;
                }
                if l == 0 {
                    if let (Some(bn), Some((xhat, inv_std))) = (&self.bn, &cache.bn) {
                        let n = delta.nrows() as f64;
                        let g_gamma = (&delta * xhat).sum_axis(Axis(0));
                        let g_beta = delta.sum_axis(Axis(0));
                        let dxhat = &delta * &bn.gamma;
                        let sum_dx = dxhat.sum_axis(Axis(0));
                        let sum_dx_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                        delta = (dxhat * n - &sum_dx - xhat * &sum_dx_xhat) * &(inv_std / n);
                        bn_grads = Some((g_gamma, g_beta));
                    }
                }
            }
            let gw = cache.inputs[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.layers[l].w.t());
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut out = Vec::with_capacity(2 * grads.len() + 2);
        for (l, (gw, gb)) in grads.into_iter().enumerate() {
            out.push(gw.into_raw_vec());
            out.push(gb.into_raw_vec());
            if l == 0 {
                if let Some((gg, gbeta)) = bn_grads.take() {
                    out.push(gg.into_raw_vec());
                    out.push(gbeta.into_raw_vec());
                }
            }
        }
        Ok(out)
    }

    /// Trainable tensors: `W0, b0, [gamma, beta], W1, b1, ...`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (l, d) in self.layers.iter().enumerate() {
            out.push(d.w.as_slice().expect("standard layout"));
            out.push(d.b.as_slice().expect("standard layout"));
            if l == 0 {
                if let Some(bn) = &self.bn {
                    out.push(bn.gamma.as_slice().expect("standard layout"));
                    out.push(bn.beta.as_slice().expect("standard layout"));
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.collect_mut(false)
    }

    /// Trainable tensors followed by BN running statistics.
    pub fn state(&self) -> Vec<&[f64]> {
        let mut out = self.tensors();
        if let Some(bn) = &self.bn {
            out.push(bn.running_mean.as_slice().expect("standard layout"));
            out.push(bn.running_var.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut [f64]> {
        self.collect_mut(true)
    }

    fn collect_mut(&mut self, with_running: bool) -> Vec<&mut [f64]> {
        let Network { layers, bn, .. } = self;
        let mut bn_parts = bn.as_mut().map(|b| {
            let BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } = b;
            (
                gamma.as_slice_mut().expect("standard layout"),
                beta.as_slice_mut().expect("standard layout"),
                running_mean.as_slice_mut().expect("standard layout"),
                running_var.as_slice_mut().expect("standard layout"),
            )
        });
        let mut out = Vec::new();
        let mut running = Vec::new();
        for (l, d) in layers.iter_mut().enumerate() {
            out.push(d.w.as_slice_mut().expect("standard layout"));
            out.push(d.b.as_slice_mut().expect("standard layout"));
            if l == 0 {
                if let Some((g, b, m, v)) = bn_parts.take() {
                    out.push(g);
                    out.push(b);
                    running.push(m);
                    running.push(v);
                }
            }
        }
        if with_running {
            out.extend(running);
        }
        out
    }
}

/// Mean squared error over all entries and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Array2<f64>, target: &ArrayView2<f64>) -> (f64, Array2<f64>) {
    let diff = pred - target;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}
