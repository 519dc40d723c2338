//! The ResEmoteNet network: CNN backbone, squeeze-and-excitation gating,
//! residual stages, adaptive average pooling and the classifier head.

mod checkpoint;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{BatchNorm2d, Conv2d, Linear};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Parameter, Scalar, TensorBase};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_size: (usize, usize),
    pub input_channels: usize,
    pub backbone_channels: Vec<usize>,
    pub se_reduction: usize,
    pub residual_channels: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: (64, 64),
            input_channels: 3,
            backbone_channels: vec![64, 128, 256],
            se_reduction: 16,
            residual_channels: vec![512, 1024, 2048],
            classifier_hidden: vec![1024, 512],
            num_classes: 7,
            seed: 0,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    /// A small configuration for desk-scale tests: 16x16 input, narrow stages.
    pub fn tiny(seed: u64) -> Self {
        Self {
            input_size: (16, 16),
            backbone_channels: vec![4, 8],
            se_reduction: 2,
            residual_channels: vec![8, 8],
            classifier_hidden: vec![16],
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        let pools = 1usize << self.backbone_channels.len();
        if h == 0 || w == 0 || h % pools != 0 || w % pools != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be divisible by 2^{} = {pools} (one max-pool per backbone stage)",
                self.backbone_channels.len()
            )));
        }
        if self.backbone_channels.is_empty() || self.residual_channels.is_empty() {
            return Err(Error::Config("backbone and residual stages must be nonempty".into()));
        }
        let last = *self.backbone_channels.last().unwrap();
        if self.se_reduction == 0 || last % self.se_reduction != 0 {
            return Err(Error::Config(format!(
                "se_reduction {} must divide the last backbone channel count {last}",
                self.se_reduction
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct BackboneStage<E: Scalar> {
    conv: Conv2d<E>,
    bn: BatchNorm2d<E>,
    relu_in: Option<TensorBase<E>>,
    pool: Option<ops::MaxPoolCache>,
}

/// Squeeze-and-excitation: GAP over the spatial dims, a bottleneck gating MLP
/// with sigmoid output, then per-channel rescaling of the feature map.
pub struct SeBlock<E: Scalar> {
    fc1: Linear<E>,
    fc2: Linear<E>,
    cache: Option<SeCache<E>>,
}

struct SeCache<E: Scalar> {
    features: TensorBase<E>,
    relu_in: TensorBase<E>,
    gate: TensorBase<E>,
    weights: TensorBase<E>,
}

impl<E: Scalar> SeBlock<E> {
    pub(crate) fn new(name: &str, channels: usize, reduction: usize, rng: &mut ChaCha8Rng) -> Self {
        let mid = channels / reduction;
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), channels, mid, rng),
            fc2: Linear::new(&format!("{name}.fc2"), mid, channels, rng),
            cache: None,
        }
    }

    /// Returns the gated feature map and the gate weights.
    pub fn forward(
        &mut self,
        features: &TensorBase<E>,
        train: bool,
    ) -> Result<(TensorBase<E>, TensorBase<E>)> {
        let (n, c, _, _) = features.dims4("se_block")?;
        let pooled = ops::global_average_pool_forward(features)?.reshape(vec![n, c])?;
        let relu_in = self.fc1.forward(&pooled, train)?;
        let hidden = ops::relu_forward(&relu_in);
        let gate = ops::sigmoid_forward(&self.fc2.forward(&hidden, train)?);
        let weights = gate.clone().reshape(vec![n, c, 1, 1])?;
        let gated = ops::channel_scale_forward(features, &weights)?;
        if train {
            self.cache = Some(SeCache {
                features: features.clone(),
                relu_in,
                gate,
                weights: weights.clone(),
            });
        }
        Ok((gated, weights))
    }

    pub(crate) fn backward(&mut self, grad_out: &TensorBase<E>) -> Result<TensorBase<E>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::MissingGradient("se_block: backward without forward".into()))?;
        let (n, c, _, _) = cache.features.dims4("se_block")?;
        let (mut gx, gw) =
            ops::channel_scale_backward(&cache.features, &cache.weights, grad_out)?;
        let gw = gw.reshape(vec![n, c])?;
        let g_gate = ops::sigmoid_backward(&cache.gate, &gw)?;
        let g_hidden = self.fc2.backward(&g_gate)?;
        let g_relu = ops::relu_backward(&cache.relu_in, &g_hidden)?;
        let g_pooled = self.fc1.backward(&g_relu)?.reshape(vec![n, c, 1, 1])?;
        let g_from_pool = ops::global_average_pool_backward(cache.features.shape(), &g_pooled)?;
        for (a, &b) in gx.data_mut().iter_mut().zip(g_from_pool.data()) {
            *a = *a + b;
        }
        Ok(gx)
    }
}

/// Two conv+BN weight layers with a skip connection; the skip is the identity
/// when shapes match and a 1x1 stride-matched projection otherwise.
pub struct ResidualBlock<E: Scalar> {
    conv1: Conv2d<E>,
    bn1: BatchNorm2d<E>,
    conv2: Conv2d<E>,
    bn2: BatchNorm2d<E>,
    projection: Option<(Conv2d<E>, BatchNorm2d<E>)>,
    cache: Option<ResCache<E>>,
}

struct ResCache<E: Scalar> {
    relu1_in: TensorBase<E>,
    relu2_in: TensorBase<E>,
    identity_skip: bool,
}

impl<E: Scalar> ResidualBlock<E> {
    pub(crate) fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        eps: f64,
        momentum: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let projection = if c_in != c_out || stride != 1 {
            Some((
                Conv2d::new(&format!("{name}.proj.conv"), c_in, c_out, 1, stride, 0, rng),
                BatchNorm2d::new(&format!("{name}.proj.bn"), c_out, eps, momentum),
            ))
        } else {
            None
        };
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), c_in, c_out, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), c_out, eps, momentum),
            conv2: Conv2d::new(&format!("{name}.conv2"), c_out, c_out, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), c_out, eps, momentum),
            projection,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &TensorBase<E>, train: bool) -> Result<TensorBase<E>> {
        let relu1_in = self.bn1.forward(&self.conv1.forward(input, train)?, train)?;
        let h = ops::relu_forward(&relu1_in);
        let stacked = self.bn2.forward(&self.conv2.forward(&h, train)?, train)?;
        let skip = match &mut self.projection {
            Some((conv, bn)) => bn.forward(&conv.forward(input, train)?, train)?,
            None => input.clone(),
        };
        let relu2_in = ops::add(&stacked, &skip)?;
        let out = ops::relu_forward(&relu2_in);
        if train {
            self.cache = Some(ResCache {
                relu1_in,
                relu2_in,
                identity_skip: self.projection.is_none(),
            });
        }
        Ok(out)
    }

    pub(crate) fn backward(&mut self, grad_out: &TensorBase<E>) -> Result<TensorBase<E>> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::MissingGradient("residual_block: backward without forward".into())
        })?;
        // add backward: the same gradient flows to the stacked path and the skip
        let g_sum = ops::relu_backward(&cache.relu2_in, grad_out)?;
        let g_stacked = self.bn2.backward(&g_sum)?;
        let g_h = self.conv2.backward(&g_stacked)?;
        let g_relu1 = ops::relu_backward(&cache.relu1_in, &g_h)?;
        let g_main = self.conv1.backward(&self.bn1.backward(&g_relu1)?)?;
        let g_skip = match &mut self.projection {
            Some((conv, bn)) => conv.backward(&bn.backward(&g_sum)?)?,
            None => {
                debug_assert!(cache.identity_skip);
                g_sum
            }
        };
        ops::add(&g_main, &g_skip)
    }
}

/// The assembled network. `E` is `f32` in production; the gradient checker
/// instantiates the same structure at `f64`.
pub struct ResEmoteNetBase<E: Scalar> {
    pub config: ModelConfig,
    backbone: Vec<BackboneStage<E>>,
    se: SeBlock<E>,
    residual: Vec<ResidualBlock<E>>,
    hidden: Vec<Linear<E>>,
    hidden_relu_in: Vec<TensorBase<E>>,
    head: Linear<E>,
    last_pool_shape: Vec<usize>,
    mode: Mode,
}

pub type ResEmoteNet = ResEmoteNetBase<f32>;

impl<E: Scalar> std::fmt::Debug for ResEmoteNetBase<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResEmoteNet")
            .field("config", &self.config)
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

impl<E: Scalar> ResEmoteNetBase<E> {
    /// Deterministic construction from the config seed.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut backbone = Vec::new();
        let mut c_in = config.input_channels;
        for (i, &c_out) in config.backbone_channels.iter().enumerate() {
            backbone.push(BackboneStage {
                conv: Conv2d::new(&format!("backbone.{i}.conv"), c_in, c_out, 3, 1, 1, &mut rng),
                bn: BatchNorm2d::new(
                    &format!("backbone.{i}.bn"),
                    c_out,
                    config.bn_eps,
                    config.bn_momentum,
                ),
                relu_in: None,
                pool: None,
            });
            c_in = c_out;
        }

        let se = SeBlock::new("se", c_in, config.se_reduction, &mut rng);

        // Residual stages use stride 2 while the spatial extent still halves
        // cleanly, stride 1 once it reaches 1x1 (small test configs).
        let mut spatial = (
            config.input_size.0 >> config.backbone_channels.len(),
            config.input_size.1 >> config.backbone_channels.len(),
        );
        let mut residual = Vec::new();
        for (i, &c_out) in config.residual_channels.iter().enumerate() {
            let stride = if spatial.0 % 2 == 0 && spatial.1 % 2 == 0 && spatial.0 >= 2 {
                2
            } else {
                1
            };
            residual.push(ResidualBlock::new(
                &format!("residual.{i}"),
                c_in,
                c_out,
                stride,
                config.bn_eps,
                config.bn_momentum,
                &mut rng,
            ));
            spatial = (spatial.0 / stride, spatial.1 / stride);
            c_in = c_out;
        }

        let mut hidden = Vec::new();
        let mut d_in = c_in;
        for (i, &d_out) in config.classifier_hidden.iter().enumerate() {
            hidden.push(Linear::new(&format!("classifier.{i}"), d_in, d_out, &mut rng));
            d_in = d_out;
        }
        let head = Linear::new("classifier.head", d_in, config.num_classes, &mut rng);

        Ok(Self {
            config,
            backbone,
            se,
            residual,
            hidden,
            hidden_relu_in: Vec::new(),
            head,
            last_pool_shape: Vec::new(),
            mode: Mode::Train,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Full forward pass, raw logits out. The softmax lives in the loss.
    pub fn forward(&mut self, batch: &TensorBase<E>) -> Result<TensorBase<E>> {
        let (n, c, h, w) = batch.dims4("model_forward")?;
        let (eh, ew) = self.config.input_size;
        if c != self.config.input_channels || h != eh || w != ew {
            return Err(Error::shape(
                "model_forward",
                format!(
                    "batch {:?}, model expects [N,{},{eh},{ew}]",
                    batch.shape(),
                    self.config.input_channels
                ),
            ));
        }
        let train = self.mode == Mode::Train;

        let mut x = batch.clone();
        for stage in &mut self.backbone {
            let relu_in = stage.bn.forward(&stage.conv.forward(&x, train)?, train)?;
            let activated = ops::relu_forward(&relu_in);
            let (pooled, pool_cache) = ops::max_pool2d_forward(&activated)?;
            if train {
                stage.relu_in = Some(relu_in);
                stage.pool = Some(pool_cache);
            }
            x = pooled;
        }

        let (gated, _) = self.se.forward(&x, train)?;
        x = gated;
        for block in &mut self.residual {
            x = block.forward(&x, train)?;
        }

        let (_, ch, _, _) = x.dims4("model_forward")?;
        let mut flat = ops::adaptive_average_pool_forward(&x, 1, 1)?.reshape(vec![n, ch])?;
        self.last_pool_shape = x.shape().to_vec();
        self.hidden_relu_in.clear();
        for layer in &mut self.hidden {
            let relu_in = layer.forward(&flat, train)?;
            flat = ops::relu_forward(&relu_in);
            if train {
                self.hidden_relu_in.push(relu_in);
            }
        }
        let logits = self.head.forward(&flat, train)?;
        debug_assert_eq!(logits.shape(), [n, self.config.num_classes]);
        Ok(logits)
    }

    /// Backward from the logit gradient; accumulates into parameter grads and
    /// returns the gradient with respect to the input batch.
    pub fn backward(&mut self, grad_logits: &TensorBase<E>) -> Result<TensorBase<E>> {
        let mut g = self.head.backward(grad_logits)?;
        for (layer, relu_in) in self
            .hidden
            .iter_mut()
            .zip(self.hidden_relu_in.drain(..))
            .rev()
        {
            g = layer.backward(&ops::relu_backward(&relu_in, &g)?)?;
        }
        let (n, ch) = g.dims2("model_backward")?;
        let g_pool = g.reshape(vec![n, ch, 1, 1])?;
        let mut g = ops::global_average_pool_backward(&self.last_pool_shape, &g_pool)?;

        for block in self.residual.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        g = self.se.backward(&g)?;
        for stage in self.backbone.iter_mut().rev() {
            let pool = stage.pool.take().ok_or_else(|| {
                Error::MissingGradient("backbone: backward without forward".into())
            })?;
            let relu_in = stage.relu_in.take().unwrap();
            let g_act = ops::max_pool2d_backward(&pool, &g)?;
            let g_bn = ops::relu_backward(&relu_in, &g_act)?;
            g = stage.conv.backward(&stage.bn.backward(&g_bn)?)?;
        }
        Ok(g)
    }

    /// Visit every trainable parameter in a stable order.
    pub fn visit_parameters(&mut self, mut f: impl FnMut(&mut Parameter<E>)) {
        for stage in &mut self.backbone {
            f(&mut stage.conv.weight);
            f(&mut stage.conv.bias);
            f(&mut stage.bn.gamma);
            f(&mut stage.bn.beta);
        }
        f(&mut self.se.fc1.weight);
        f(&mut self.se.fc1.bias);
        f(&mut self.se.fc2.weight);
        f(&mut self.se.fc2.bias);
        for block in &mut self.residual {
            f(&mut block.conv1.weight);
            f(&mut block.conv1.bias);
            f(&mut block.bn1.gamma);
            f(&mut block.bn1.beta);
            f(&mut block.conv2.weight);
            f(&mut block.conv2.bias);
            f(&mut block.bn2.gamma);
            f(&mut block.bn2.beta);
            if let Some((conv, bn)) = &mut block.projection {
                f(&mut conv.weight);
                f(&mut conv.bias);
                f(&mut bn.gamma);
                f(&mut bn.beta);
            }
        }
        for layer in &mut self.hidden {
            f(&mut layer.weight);
            f(&mut layer.bias);
        }
        f(&mut self.head.weight);
        f(&mut self.head.bias);
    }

    /// Visit batch-norm running statistics as (prefix, mean, var).
    pub fn visit_running_stats(
        &mut self,
        mut f: impl FnMut(String, &mut Vec<E>, &mut Vec<E>),
    ) {
        for (i, stage) in self.backbone.iter_mut().enumerate() {
            f(
                format!("backbone.{i}.bn"),
                &mut stage.bn.running_mean,
                &mut stage.bn.running_var,
            );
        }
        for (i, block) in self.residual.iter_mut().enumerate() {
            f(
                format!("residual.{i}.bn1"),
                &mut block.bn1.running_mean,
                &mut block.bn1.running_var,
            );
            f(
                format!("residual.{i}.bn2"),
                &mut block.bn2.running_mean,
                &mut block.bn2.running_var,
            );
            if let Some((_, bn)) = &mut block.projection {
                f(
                    format!("residual.{i}.proj.bn"),
                    &mut bn.running_mean,
                    &mut bn.running_var,
                );
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_parameters(|p| p.zero_grad());
    }

    pub fn num_parameters(&mut self) -> usize {
        let mut total = 0;
        self.visit_parameters(|p| total += p.value.numel());
        total
    }

    /// Standalone SE forward, exposed for inspection and tests.
    pub fn se_block(&mut self) -> &mut SeBlock<E> {
        &mut self.se
    }
}
