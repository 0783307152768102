//! The sequential classifier: architecture config, the 16-layer builder,
//! end-to-end forward/backward, prediction, and checkpoints.

mod checkpoint;
mod config;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_into, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{softmax, Activation, Conv2d, ConvSpec, Dense, Dropout, Flatten, Layer, LayerKind, MaxPool2d, Mode};
use crate::rng::derive_seed;
use crate::tensor::{Real, Shape, Tensor};

/// Number of conv+pool blocks in the proposed architecture.
pub const PROPOSED_BLOCKS: usize = 5;

/// Softmax outputs and decisions for a batch.
#[derive(Debug, Clone)]
pub struct Prediction<T: Real = f32> {
    /// `[N, K]`; one probability per class (y₁ … y_K).
    pub probs: Tensor<T>,
    pub class_index: Vec<usize>,
    pub class_name: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SequentialModel<T: Real = f32> {
    config: ModelConfig,
    layers: Vec<Layer<T>>,
    names: Vec<String>,
    mode: Mode,
}

/// Builds the proposed classifier: five conv(3×3, same)+ReLU / 2×2 max-pool
/// blocks with 16, 32, 64, 128, 128 channels, flatten, two
/// dense+ReLU+dropout blocks of 256 and 128 units, and a softmax head.
pub fn build_proposed_model<T: Real>(
    input: (usize, usize, usize),
    num_classes: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<SequentialModel<T>> {
    let (channels, height, width) = input;
    let factor = 1usize << PROPOSED_BLOCKS;
    if height % factor != 0 || width % factor != 0 || height == 0 || width == 0 {
        return Err(Error::Config(format!(
            "input {height}x{width}: height and width must be positive multiples of {factor} \
             (five 2x2 max-pools)"
        )));
    }
    let config = ModelConfig {
        input_channels: channels,
        input_height: height,
        input_width: width,
        num_classes,
        dropout: dropout_rate,
        class_names: ModelConfig::default_class_names(num_classes),
        ..ModelConfig::default()
    };
    SequentialModel::new(config, seed)
}

impl<T: Real> SequentialModel<T> {
    /// Builds and initialises the architecture described by `config`:
    /// He-uniform for ReLU layers, Xavier-uniform for the head, zero
    /// biases, dropout generators derived from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut names = Vec::new();

        let mut in_ch = config.input_channels;
        for (i, &out_ch) in config.conv_channels.iter().enumerate() {
            let spec = ConvSpec::new(in_ch, out_ch, config.kernel, config.stride, config.padding)?;
            layers.push(Layer::Conv2d(Conv2d::init(spec, Activation::Relu, &mut rng)?));
            names.push(format!("conv{}", i + 1));
            layers.push(Layer::MaxPool2d(MaxPool2d::new(config.pool_window, config.pool_stride)?));
            names.push(format!("pool{}", i + 1));
            in_ch = out_ch;
        }
        layers.push(Layer::Flatten(Flatten::new()));
        names.push("flatten".into());

        let mut features = config.flatten_width()?;
        for (i, &units) in config.dense_units.iter().enumerate() {
            layers.push(Layer::Dense(Dense::init(features, units, Activation::Relu, &mut rng)?));
            names.push(format!("dense{}", i + 1));
            let stream = derive_seed(seed, 1 + i as u64);
            layers.push(Layer::Dropout(Dropout::new(config.dropout, stream)?));
            names.push(format!("dropout{}", i + 1));
            features = units;
        }
        layers.push(Layer::Dense(Dense::init(features, config.num_classes, Activation::Softmax, &mut rng)?));
        names.push(format!("dense{}", config.dense_units.len() + 1));

        let model = SequentialModel {
            config,
            layers,
            names,
            mode: Mode::Train,
        };
        model.shape_chain()?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn class_names(&self) -> &[String] {
        &self.config.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer_names(&self) -> &[String] {
        &self.names
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    /// Symbolic shape after every layer for a batch of one, starting with
    /// the input shape.
    pub fn shape_chain(&self) -> Result<Vec<Shape>> {
        let c = &self.config;
        let mut shape = Shape::new(vec![1, c.input_channels, c.input_height, c.input_width])?;
        let mut chain = vec![shape.clone()];
        for (layer, name) in self.layers.iter().zip(&self.names) {
            shape = layer.output_shape(&shape).map_err(|e| {
                Error::Config(format!("layer {name} rejects input {shape}: {e}"))
            })?;
            chain.push(shape.clone());
        }
        Ok(chain)
    }

    /// Parameters as `(layer.param, tensor)` in layer order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .zip(&self.names)
            .flat_map(|(l, name)| l.params().into_iter().map(move |(p, t)| (format!("{name}.{p}"), t)))
            .collect()
    }

    pub fn named_grads(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .zip(&self.names)
            .flat_map(|(l, name)| l.grads().into_iter().map(move |(p, t)| (format!("{name}.{p}"), t)))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut().into_iter().map(|(_, t)| t))
            .collect()
    }

    pub fn params_and_grads_mut(&mut self) -> Vec<(&mut Tensor<T>, &Tensor<T>)> {
        self.layers.iter_mut().flat_map(|l| l.params_and_grads_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grads);
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.shape().nchw()?;
        let cfg = &self.config;
        if (c, h, w) != (cfg.input_channels, cfg.input_height, cfg.input_width) {
            return Err(Error::Dimension(format!(
                "model expects [N, {}, {}, {}] input, got {}",
                cfg.input_channels,
                cfg.input_height,
                cfg.input_width,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Logits for `x`. In train mode every layer caches for `backward`.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.mode == Mode::Eval {
            return self.infer(x);
        }
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, Mode::Train)?;
        }
        Ok(h)
    }

    /// Eval-mode logits; never mutates the model.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Backpropagates `∂L/∂logits`; returns `∂L/∂input` and accumulates
    /// every parameter gradient.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Softmax probabilities and argmax decisions. Only valid in eval mode.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Prediction<T>> {
        if self.mode != Mode::Eval {
            return Err(Error::State(
                "predict requires eval mode; dropout would corrupt probabilities".into(),
            ));
        }
        let probs = softmax(&self.infer(x)?)?;
        let class_index = probs.argmax_rows()?;
        let class_name = class_index.iter().map(|&i| self.config.class_names[i].clone()).collect();
        Ok(Prediction {
            probs,
            class_index,
            class_name,
        })
    }

    /// Same architecture and parameters in another precision.
    pub fn cast<U: Real>(&self, seed: u64) -> Result<SequentialModel<U>> {
        let mut out = SequentialModel::<U>::new(self.config.clone(), seed)?;
        for (dst, (_, src)) in out.params_mut().into_iter().zip(self.named_params()) {
            *dst = src.cast();
        }
        out.mode = self.mode;
        Ok(out)
    }
}
