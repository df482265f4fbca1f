use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::layers::{Aux, Layer, Mode, Param};
use crate::tensor::Tensor;

/// A feed-forward chain of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Activations saved by [`Network::forward`].
#[derive(Clone, Debug)]
pub struct Trace {
    /// `inputs[i]` is the input of layer `i`.
    inputs: Vec<Tensor>,
    aux: Vec<Aux>,
    output: Tensor,
    mode: Mode,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn into_output(self) -> Tensor {
        self.output
    }

    /// Output of layer `idx`.
    pub fn activation(&self, idx: usize) -> &Tensor {
        if idx + 1 < self.inputs.len() {
            &self.inputs[idx + 1]
        } else {
            &self.output
        }
    }
}

/// Gradient buffers aligned with [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub buffers: Vec<Vec<f32>>,
}

impl Grads {
    pub fn zero(&mut self) {
        for b in &mut self.buffers {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.buffers.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Weight initialization recipe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// N(0, 0.02) weights, BN gamma ~ N(1, 0.02), zero biases.
    Dcgan,
    /// Uniform(±1/sqrt(fan_in)) weights and biases.
    FanIn,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, a) = layer.forward(&cur, mode);
            inputs.push(cur);
            aux.push(a);
            cur = y;
        }
        Trace {
            inputs,
            aux,
            output: cur,
            mode,
        }
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, x: &Tensor, mode: Mode) -> Tensor {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, mode).0;
        }
        cur
    }

    pub fn backward(&self, trace: &Trace, grad_out: &Tensor, grads: Option<&mut Grads>) -> Tensor {
        self.backward_with(trace, grad_out, &[], grads)
    }

    /// Backward pass with extra gradients injected at the outputs of inner
    /// layers: each `(idx, g)` adds `g` to d(loss)/d(output of layer idx).
    pub fn backward_with(
        &self,
        trace: &Trace,
        grad_out: &Tensor,
        inject: &[(usize, &Tensor)],
        mut grads: Option<&mut Grads>,
    ) -> Tensor {
        assert_eq!(grad_out.shape(), trace.output.shape(), "grad_out shape mismatch");
        let offsets = self.param_offsets();
        let mut dy = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            for (idx, g) in inject {
                if *idx == i {
                    dy.add_assign(g);
                }
            }
            let slot = grads
                .as_deref_mut()
                .map(|g| &mut g.buffers[offsets[i]..offsets[i] + layer.params().len()]);
            dy = layer.backward(&trace.inputs[i], &trace.aux[i], &dy, trace.mode, slot);
        }
        dy
    }

    /// Updates normalization running statistics from a training-mode trace.
    pub fn commit_batch_stats(&mut self, trace: &Trace) {
        if trace.mode != Mode::Train {
            return;
        }
        for (layer, aux) in self.layers.iter_mut().zip(&trace.aux) {
            if let Layer::BatchNorm2d(bn) = layer {
                bn.update_running(aux);
            }
        }
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offs.push(acc);
            acc += l.params().len();
        }
        offs
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// `(name, param)` pairs named `"{layer}.{field}"`.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (name, p) in l.param_names().into_iter().zip(l.params()) {
                out.push((format!("{i}.{name}"), p));
            }
        }
        out
    }

    /// Non-trainable state (normalization running statistics).
    pub fn named_buffers(&self) -> Vec<(String, &[f32])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm2d(bn) = l {
                out.push((format!("{i}.running_mean"), bn.running_mean.as_slice()));
                out.push((format!("{i}.running_var"), bn.running_var.as_slice()));
            }
        }
        out
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Vec<f32>> {
        let (idx, field) = name.split_once('.')?;
        let idx: usize = idx.parse().ok()?;
        match (self.layers.get_mut(idx)?, field) {
            (Layer::BatchNorm2d(bn), "running_mean") => Some(&mut bn.running_mean),
            (Layer::BatchNorm2d(bn), "running_var") => Some(&mut bn.running_var),
            _ => None,
        }
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        let (idx, field) = name.split_once('.')?;
        let idx: usize = idx.parse().ok()?;
        let layer = self.layers.get_mut(idx)?;
        let pos = layer.param_names().iter().position(|n| *n == field)?;
        layer.params_mut().into_iter().nth(pos)
    }

    /// Indices of layers with a prunable weight.
    pub fn prunable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.prunable_weight().map(|_| i))
            .collect()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            buffers: self.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Option<[usize; 4]> {
        self.layers.iter().try_fold(input, |s, l| l.output_shape(s))
    }

    pub fn init<R: Rng + ?Sized>(&mut self, scheme: Init, rng: &mut R) {
        for layer in &mut self.layers {
            match layer {
                Layer::BatchNorm2d(bn) => {
                    if scheme == Init::Dcgan {
                        let d = Normal::new(1.0f32, 0.02).unwrap();
                        bn.gamma.value.iter_mut().for_each(|v| *v = d.sample(rng));
                    } else {
                        bn.gamma.value.iter_mut().for_each(|v| *v = 1.0);
                    }
                    bn.beta.value.iter_mut().for_each(|v| *v = 0.0);
                }
                Layer::Activation(_) => {}
                other => {
                    let w = other.prunable_weight().expect("weighted layer");
                    let fan_in = match other {
                        Layer::ConvTranspose2d(_) => w.shape[0] * w.shape[2] * w.shape[3],
                        _ => w.shape[1] * w.shape[2] * w.shape[3],
                    };
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    let mut params = other.params_mut();
                    match scheme {
                        Init::Dcgan => {
                            let d = Normal::new(0.0f32, 0.02).unwrap();
                            params[0].value.iter_mut().for_each(|v| *v = d.sample(rng));
                            if let Some(b) = params.get_mut(1) {
                                b.value.iter_mut().for_each(|v| *v = 0.0);
                            }
                        }
                        Init::FanIn => {
                            let d = Uniform::new_inclusive(-bound, bound).unwrap();
                            for p in params.iter_mut() {
                                p.value.iter_mut().for_each(|v| *v = d.sample(rng));
                            }
                        }
                    }
                }
            }
        }
    }
}
