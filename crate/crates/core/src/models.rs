//! Task registry and model construction.

use ganprune_nn::{Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Init, Layer, Linear, Network};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    LatentVector,
    SourceImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Ring2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Dcgan,
    FanIn,
}

impl From<InitScheme> for Init {
    fn from(s: InitScheme) -> Self {
        match s {
            InitScheme::Dcgan => Init::Dcgan,
            InitScheme::FanIn => Init::FanIn,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Deconv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Act {
        activation: Activation,
    },
}

impl LayerSpec {
    fn build(&self) -> Layer {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias,
            } => Layer::Conv2d(Conv2d::new(in_channels, out_channels, kernel, stride, padding, bias)),
            LayerSpec::Deconv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias,
            } => Layer::ConvTranspose2d(ConvTranspose2d::new(in_channels, out_channels, kernel, stride, padding, bias)),
            LayerSpec::Linear {
                in_features,
                out_features,
                bias,
            } => Layer::Linear(Linear::new(in_features, out_features, bias)),
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm2d(BatchNorm2d::new(channels)),
            LayerSpec::Act { activation } => Layer::Activation(activation),
        }
    }
}

/// Adam settings shared by generator and discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: String,
    pub input_kind: InputKind,
    /// (channels, height, width)
    pub image_shape: [usize; 3],
    pub latent_dim: usize,
    pub generator_width: usize,
    pub discriminator_width: usize,
    pub generator: Vec<LayerSpec>,
    pub discriminator: Vec<LayerSpec>,
    pub init: InitScheme,
    pub dataset: DatasetKind,
    pub batch_size: usize,
    pub baseline_steps: u64,
    pub optimizer: OptimizerSpec,
    /// Generator layer whose output the intermediate-distillation stand-in
    /// matches.
    pub distill_layer: usize,
}

pub const TASK_IDS: [&str; 3] = ["dcgan-mnist", "dcgan-mnist-28", "ring-2d"];

const DCGAN_ADAM: OptimizerSpec = OptimizerSpec {
    lr: 2e-4,
    beta1: 0.5,
    beta2: 0.999,
};

fn conv(i: usize, o: usize, k: usize, s: usize, p: usize) -> LayerSpec {
    LayerSpec::Conv {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
        bias: false,
    }
}

fn deconv(i: usize, o: usize, k: usize, s: usize, p: usize) -> LayerSpec {
    LayerSpec::Deconv {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
        bias: false,
    }
}

fn linear(i: usize, o: usize) -> LayerSpec {
    LayerSpec::Linear {
        in_features: i,
        out_features: o,
        bias: true,
    }
}

fn bn(c: usize) -> LayerSpec {
    LayerSpec::BatchNorm { channels: c }
}

fn act(a: Activation) -> LayerSpec {
    LayerSpec::Act { activation: a }
}

const RELU: Activation = Activation::Relu;
const LRELU: Activation = Activation::LeakyRelu(0.2);

fn dcgan64(nz: usize, ngf: usize, ndf: usize) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    let g = vec![
        deconv(nz, ngf * 8, 4, 1, 0),
        bn(ngf * 8),
        act(RELU),
        deconv(ngf * 8, ngf * 4, 4, 2, 1),
        bn(ngf * 4),
        act(RELU),
        deconv(ngf * 4, ngf * 2, 4, 2, 1),
        bn(ngf * 2),
        act(RELU),
        deconv(ngf * 2, ngf, 4, 2, 1),
        bn(ngf),
        act(RELU),
        deconv(ngf, 1, 4, 2, 1),
        act(Activation::Tanh),
    ];
    let d = vec![
        conv(1, ndf, 4, 2, 1),
        act(LRELU),
        conv(ndf, ndf * 2, 4, 2, 1),
        bn(ndf * 2),
        act(LRELU),
        conv(ndf * 2, ndf * 4, 4, 2, 1),
        bn(ndf * 4),
        act(LRELU),
        conv(ndf * 4, ndf * 8, 4, 2, 1),
        bn(ndf * 8),
        act(LRELU),
        conv(ndf * 8, 1, 4, 1, 0),
    ];
    (g, d)
}

fn dcgan28(nz: usize, ngf: usize, ndf: usize) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    let g = vec![
        deconv(nz, ngf * 2, 7, 1, 0),
        bn(ngf * 2),
        act(RELU),
        deconv(ngf * 2, ngf, 4, 2, 1),
        bn(ngf),
        act(RELU),
        deconv(ngf, 1, 4, 2, 1),
        act(Activation::Tanh),
    ];
    let d = vec![
        conv(1, ndf, 4, 2, 1),
        act(LRELU),
        conv(ndf, ndf * 2, 4, 2, 1),
        bn(ndf * 2),
        act(LRELU),
        conv(ndf * 2, 1, 7, 1, 0),
    ];
    (g, d)
}

fn ring_mlp(nz: usize, gw: usize, dw: usize) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    let g = vec![
        linear(nz, gw),
        act(RELU),
        linear(gw, gw),
        act(RELU),
        linear(gw, 2),
        act(Activation::Tanh),
    ];
    let d = vec![linear(2, dw), act(LRELU), linear(dw, dw), act(LRELU), linear(dw, 1)];
    (g, d)
}

/// Looks up a task with optional channel-width overrides.
pub fn task_spec(task_id: &str, generator_width: Option<usize>, discriminator_width: Option<usize>) -> Result<TaskSpec> {
    let (gw, dw) = match task_id {
        "dcgan-mnist" => (generator_width.unwrap_or(64), discriminator_width.unwrap_or(64)),
        "dcgan-mnist-28" => (generator_width.unwrap_or(32), discriminator_width.unwrap_or(32)),
        "ring-2d" => (generator_width.unwrap_or(64), discriminator_width.unwrap_or(64)),
        other => {
            return Err(Error::config(format!(
                "unknown task {other:?}; expected one of {}",
                TASK_IDS.join(", ")
            )))
        }
    };
    if gw == 0 || dw == 0 {
        return Err(Error::config("network widths must be at least 1"));
    }
    let spec = match task_id {
        "dcgan-mnist" => {
            let (g, d) = dcgan64(100, gw, dw);
            TaskSpec {
                task_id: task_id.into(),
                input_kind: InputKind::LatentVector,
                image_shape: [1, 64, 64],
                latent_dim: 100,
                generator_width: gw,
                discriminator_width: dw,
                generator: g,
                discriminator: d,
                init: InitScheme::Dcgan,
                dataset: DatasetKind::Mnist,
                batch_size: 64,
                baseline_steps: 9000,
                optimizer: DCGAN_ADAM,
                distill_layer: 5,
            }
        }
        "dcgan-mnist-28" => {
            let (g, d) = dcgan28(100, gw, dw);
            TaskSpec {
                task_id: task_id.into(),
                input_kind: InputKind::LatentVector,
                image_shape: [1, 28, 28],
                latent_dim: 100,
                generator_width: gw,
                discriminator_width: dw,
                generator: g,
                discriminator: d,
                init: InitScheme::Dcgan,
                dataset: DatasetKind::Mnist,
                batch_size: 64,
                baseline_steps: 3000,
                optimizer: DCGAN_ADAM,
                distill_layer: 2,
            }
        }
        _ => {
            let (g, d) = ring_mlp(8, gw, dw);
            TaskSpec {
                task_id: task_id.into(),
                input_kind: InputKind::LatentVector,
                image_shape: [2, 1, 1],
                latent_dim: 8,
                generator_width: gw,
                discriminator_width: dw,
                generator: g,
                discriminator: d,
                init: InitScheme::FanIn,
                dataset: DatasetKind::Ring2d,
                batch_size: 128,
                baseline_steps: 2000,
                optimizer: OptimizerSpec {
                    lr: 1e-3,
                    beta1: 0.5,
                    beta2: 0.999,
                },
                distill_layer: 1,
            }
        }
    };
    Ok(spec)
}

impl TaskSpec {
    /// Shape of one generator input batch.
    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        match self.input_kind {
            InputKind::LatentVector => [batch, self.latent_dim, 1, 1],
            InputKind::SourceImage => {
                let [c, h, w] = self.image_shape;
                [batch, c, h, w]
            }
        }
    }

    pub fn image_batch_shape(&self, batch: usize) -> [usize; 4] {
        let [c, h, w] = self.image_shape;
        [batch, c, h, w]
    }

    /// Checks both layer chains, naming the first layer that does not fit.
    pub fn validate(&self) -> Result<()> {
        let image = self.image_batch_shape(1);
        check_chain("generator", &self.generator, self.input_shape(1), image)?;
        check_chain("discriminator", &self.discriminator, image, [1, 1, 1, 1])?;
        if self.distill_layer >= self.generator.len() {
            return Err(Error::validation(format!(
                "distill_layer {} is outside the generator ({} layers)",
                self.distill_layer,
                self.generator.len()
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::validation("batch_size must be at least 2"));
        }
        Ok(())
    }

    /// Dense generator parameter count.
    pub fn generator_param_count(&self) -> usize {
        Network::new(self.generator.iter().map(LayerSpec::build).collect()).param_count()
    }
}

fn check_chain(which: &str, layers: &[LayerSpec], input: [usize; 4], expect: [usize; 4]) -> Result<()> {
    let mut shape = input;
    for (i, spec) in layers.iter().enumerate() {
        shape = spec.build().output_shape(shape).ok_or_else(|| {
            Error::validation(format!("{which} layer {i} ({spec:?}) cannot take input of shape {shape:?}"))
        })?;
    }
    if shape != expect {
        return Err(Error::validation(format!(
            "{which} produces shape {shape:?}, expected {expect:?}"
        )));
    }
    Ok(())
}

pub fn build_network(layers: &[LayerSpec], init: InitScheme, rng: &mut ChaCha8Rng) -> Network {
    let mut net = Network::new(layers.iter().map(LayerSpec::build).collect());
    net.init(init.into(), rng);
    net
}

/// Freshly initialized generator and discriminator for `seed`.
pub fn build_models(spec: &TaskSpec, seed: u64) -> Result<(Network, Network)> {
    spec.validate()?;
    let g = build_network(&spec.generator, spec.init, &mut seeding::rng(seed, Stream::GeneratorInit));
    let d = build_network(&spec.discriminator, spec.init, &mut seeding::rng(seed, Stream::DiscriminatorInit));
    Ok((g, d))
}

/// The generator width whose parameter count is closest to `ratio` of the
/// dense generator's.
pub fn scaled_generator_width(spec: &TaskSpec, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(format!("width ratio must lie in (0, 1], got {ratio}")));
    }
    let dense = spec.generator_param_count() as f64;
    let target = ratio * dense;
    let mut best = (f64::INFINITY, spec.generator_width);
    for w in 1..=spec.generator_width {
        let s = task_spec(&spec.task_id, Some(w), Some(spec.discriminator_width))?;
        let err = (s.generator_param_count() as f64 - target).abs();
        if err < best.0 {
            best = (err, w);
        }
    }
    Ok(best.1)
}
