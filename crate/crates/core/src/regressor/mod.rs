//! Multi-view fusion regression: concatenate per-view feature grids on the
//! channel axis and map them to a scalar pod count.
//!
//! The head is three convolution blocks (the first two with batch
//! normalization and 2x2 max pooling, the last plain), a flatten, and three
//! fully connected layers ending in a single linear output. ReLU follows
//! every convolution and the first two fully connected layers. Training is
//! mini-batch SGD with momentum on mean-squared error over counts normalized
//! by the training-set mean; all randomness (weight init, epoch shuffles)
//! comes from seeded streams, so a seed fixes the entire run bit for bit.

mod checkpoint;
mod layers;
mod tensor;

pub use checkpoint::{load_model, save_model};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureGrid;
use crate::rng::SplitMix64;
use layers::{relu_backward, relu_forward, BatchNorm2d, BnCache, Conv2d, Linear, MaxPool2};

/// One convolution block of the head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    pub out_channels: usize,
    pub kernel: usize,
    pub has_pool: bool,
    pub has_batchnorm: bool,
}

/// Architecture and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of fused views (views per side x sides).
    pub views: usize,
    /// Per-view grid shape (channels, height, width).
    pub input_grid: (usize, usize, usize),
    pub conv_blocks: Vec<ConvBlockConfig>,
    /// Three widths, the last of which must be 1.
    pub fc_sizes: Vec<usize>,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl NetworkConfig {
    /// Default head: conv channels 16/32/64 with 3x3 kernels, fully
    /// connected widths 64/16/1.
    pub fn with_defaults(views: usize, input_grid: (usize, usize, usize), seed: u64) -> Self {
        Self {
            views,
            input_grid,
            conv_blocks: vec![
                ConvBlockConfig {
                    out_channels: 16,
                    kernel: 3,
                    has_pool: true,
                    has_batchnorm: true,
                },
                ConvBlockConfig {
                    out_channels: 32,
                    kernel: 3,
                    has_pool: true,
                    has_batchnorm: true,
                },
                ConvBlockConfig {
                    out_channels: 64,
                    kernel: 3,
                    has_pool: false,
                    has_batchnorm: false,
                },
            ],
            fc_sizes: vec![64, 16, 1],
            seed,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 200,
            batch_size: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.views == 0 {
            return fail("views must be >= 1".into());
        }
        let (c, h, w) = self.input_grid;
        if c == 0 || h == 0 || w == 0 {
            return fail(format!("input grid {c}x{h}x{w} must be positive"));
        }
        if self.conv_blocks.len() != 3 {
            return fail(format!(
                "expected exactly 3 conv blocks, got {}",
                self.conv_blocks.len()
            ));
        }
        for (i, block) in self.conv_blocks.iter().enumerate() {
            let wants = i < 2;
            if block.has_pool != wants || block.has_batchnorm != wants {
                return fail(format!(
                    "block {} must have pool/batchnorm == {wants}",
                    i + 1
                ));
            }
            if block.out_channels == 0 {
                return fail(format!("block {} has zero channels", i + 1));
            }
            if block.kernel == 0 || block.kernel % 2 == 0 {
                return fail(format!(
                    "block {} kernel {} must be odd",
                    i + 1,
                    block.kernel
                ));
            }
        }
        if self.fc_sizes.len() != 3 {
            return fail(format!(
                "expected exactly 3 fully connected layers, got {}",
                self.fc_sizes.len()
            ));
        }
        if *self.fc_sizes.last().unwrap() != 1 {
            return fail("last fully connected width must be 1".into());
        }
        if self.fc_sizes.iter().any(|&s| s == 0) {
            return fail("fully connected widths must be >= 1".into());
        }
        if h / 4 == 0 || w / 4 == 0 {
            return fail(format!("grid {h}x{w} too small for two pooling stages"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_size == 0 {
            return fail("batch size must be >= 1".into());
        }
        Ok(())
    }

    fn fused_channels(&self) -> usize {
        self.views * self.input_grid.0
    }
}

/// Concatenate per-view grids on the channel axis, view order preserved.
pub fn fuse_views(grids: &[FeatureGrid]) -> Result<Tensor> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidValue("no views to fuse".into()))?;
    let (c, h, w) = first.shape();
    let mut data = Vec::with_capacity(grids.len() * c * h * w);
    for g in grids {
        if g.shape() != (c, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "view grid {:?} does not match first view {:?}",
                g.shape(),
                (c, h, w)
            )));
        }
        data.extend(g.data().iter().map(|&v| f64::from(v)));
    }
    Ok(Tensor::from_parts(vec![grids.len() * c, h, w], data))
}

/// Whether a forward pass trains batch statistics or uses the running ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
struct BlockCache {
    cols: Vec<f64>,
    in_h: usize,
    in_w: usize,
    bn: Option<BnCache>,
    relu_out: Vec<f64>,
    pool_argmax: Option<Vec<usize>>,
}

/// Activations retained by a train-mode forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    blocks: Vec<BlockCache>,
    fc_inputs: Vec<Vec<f64>>,
}

/// Per-parameter-block gradients, in the network's canonical block order.
#[derive(Debug, Clone)]
pub struct Gradients {
    blocks: Vec<Vec<f64>>,
}

impl Gradients {
    /// Concatenate all blocks into one flat vector (canonical order).
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }
}

/// Report of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub seed: u64,
}

/// One regression sample: the per-view grids plus the manual pod count.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub grids: Vec<FeatureGrid>,
    pub count: f64,
}

/// The fusion regression network.
#[derive(Debug, Clone)]
pub struct Network {
    pub(crate) config: NetworkConfig,
    pub(crate) conv: Vec<Conv2d>,
    pub(crate) bn: Vec<Option<BatchNorm2d>>,
    pub(crate) fc: Vec<Linear>,
    /// Spatial dims entering each conv block, plus the final dims.
    dims: Vec<(usize, usize)>,
    pub(crate) count_scale: f64,
}

impl Network {
    /// Initialize from a seeded stream (Glorot-uniform weights, zero biases).
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::derive(config.seed, "init");
        let (_, h0, w0) = config.input_grid;
        let mut conv = Vec::with_capacity(3);
        let mut bn = Vec::with_capacity(3);
        let mut dims = vec![(h0, w0)];
        let mut channels = config.fused_channels();
        let (mut h, mut w) = (h0, w0);
        for block in &config.conv_blocks {
            conv.push(Conv2d::init(channels, block.out_channels, block.kernel, &mut rng));
            bn.push(block.has_batchnorm.then(|| BatchNorm2d::init(block.out_channels)));
            channels = block.out_channels;
            if block.has_pool {
                let (nh, nw) = MaxPool2::out_dims(h, w);
                h = nh;
                w = nw;
            }
            dims.push((h, w));
        }
        let mut fc = Vec::with_capacity(3);
        let mut in_features = channels * h * w;
        for &width in &config.fc_sizes {
            fc.push(Linear::init(in_features, width, &mut rng));
            in_features = width;
        }
        Ok(Self {
            config,
            conv,
            bn,
            fc,
            dims,
            count_scale: 1.0,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Normalization factor applied to predictions (the training-set mean
    /// count); 1.0 before training.
    pub fn count_scale(&self) -> f64 {
        self.count_scale
    }

    fn check_input_shape(&self, x: &Tensor) -> Result<usize> {
        let (_, h, w) = self.config.input_grid;
        let expect = [self.config.fused_channels(), h, w];
        match x.shape() {
            [n, ec, eh, ew] if [*ec, *eh, *ew] == expect && *n >= 1 => Ok(*n),
            other => Err(Error::ShapeMismatch(format!(
                "input shape {other:?}, expected [N, {}, {}, {}]",
                expect[0], expect[1], expect[2]
            ))),
        }
    }

    fn ensure_finite(values: &[f64], site: &'static str) -> Result<()> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteActivation(site))
        }
    }

    /// Batched forward in train mode; updates batch-norm running statistics
    /// and returns the cache backpropagation needs.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Vec<f64>, ForwardCache)> {
        let n = self.check_input_shape(x)?;
        let mut blocks = Vec::with_capacity(3);
        let mut act = x.data().to_vec();
        let (mut h, mut w) = self.dims[0];
        for i in 0..self.conv.len() {
            let (mut z, cols) = self.conv[i].forward(&act, n, h, w);
            Self::ensure_finite(&z, "convolution")?;
            let bn_cache = match self.bn[i].as_mut() {
                Some(bn) => {
                    let (zz, cache) = bn.forward_train(&z, n, h * w);
                    z = zz;
                    Some(cache)
                }
                None => None,
            };
            relu_forward(&mut z);
            let relu_out = z.clone();
            let pool_argmax = if self.config.conv_blocks[i].has_pool {
                let c = self.config.conv_blocks[i].out_channels;
                let (pooled, arg) = MaxPool2::forward(&z, n, c, h, w);
                z = pooled;
                let (nh, nw) = MaxPool2::out_dims(h, w);
                h = nh;
                w = nw;
                Some(arg)
            } else {
                None
            };
            blocks.push(BlockCache {
                cols,
                in_h: self.dims[i].0,
                in_w: self.dims[i].1,
                bn: bn_cache,
                relu_out,
                pool_argmax,
            });
            act = z;
        }
        let mut fc_inputs = Vec::with_capacity(3);
        for (i, layer) in self.fc.iter().enumerate() {
            fc_inputs.push(act.clone());
            let mut z = layer.forward(&act, n);
            Self::ensure_finite(&z, "fully connected")?;
            if i + 1 < self.fc.len() {
                relu_forward(&mut z);
            }
            act = z;
        }
        Ok((
            act,
            ForwardCache {
                batch: n,
                blocks,
                fc_inputs,
            },
        ))
    }

    /// Batched forward in inference mode (running batch-norm statistics,
    /// no mutation, no cache).
    pub fn forward_infer(&self, x: &Tensor) -> Result<Vec<f64>> {
        let n = self.check_input_shape(x)?;
        let mut act = x.data().to_vec();
        let (mut h, mut w) = self.dims[0];
        for i in 0..self.conv.len() {
            let (mut z, _) = self.conv[i].forward(&act, n, h, w);
            if let Some(bn) = self.bn[i].as_ref() {
                z = bn.forward_infer(&z, n, h * w);
            }
            relu_forward(&mut z);
            if self.config.conv_blocks[i].has_pool {
                let c = self.config.conv_blocks[i].out_channels;
                let (pooled, _) = MaxPool2::forward(&z, n, c, h, w);
                z = pooled;
                let (nh, nw) = MaxPool2::out_dims(h, w);
                h = nh;
                w = nw;
            }
            Self::ensure_finite(&z, "convolution")?;
            act = z;
        }
        for (i, layer) in self.fc.iter().enumerate() {
            let mut z = layer.forward(&act, n);
            Self::ensure_finite(&z, "fully connected")?;
            if i + 1 < self.fc.len() {
                relu_forward(&mut z);
            }
            act = z;
        }
        Ok(act)
    }

    /// Single-input forward. In train mode the returned cache enables
    /// [`Network::backward`]; in infer mode the cache is `None`.
    pub fn forward(&mut self, input: &Tensor, mode: ForwardMode) -> Result<(f64, Option<ForwardCache>)> {
        let mut shape = vec![1];
        shape.extend_from_slice(input.shape());
        let batched = Tensor::new(shape, input.data().to_vec())?;
        match mode {
            ForwardMode::Train => {
                let (y, cache) = self.forward_train(&batched)?;
                Ok((y[0], Some(cache)))
            }
            ForwardMode::Infer => Ok((self.forward_infer(&batched)?[0], None)),
        }
    }

    /// Backpropagate `d(loss)/d(output)` per sample through the cached
    /// activations, producing parameter gradients in canonical block order.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &[f64]) -> Result<Gradients> {
        if loss_grad.len() != cache.batch || cache.blocks.len() != self.conv.len() {
            return Err(Error::StaleCache);
        }
        let n = cache.batch;
        let mut dy: Vec<f64> = loss_grad.to_vec();

        let mut fc_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(3);
        for i in (0..self.fc.len()).rev() {
            let (dx, dw, db) = self.fc[i].backward(&cache.fc_inputs[i], &dy, n);
            fc_grads.push((dw, db));
            dy = dx;
            if i > 0 {
                relu_backward(&cache.fc_inputs[i], &mut dy);
            }
        }
        fc_grads.reverse();

        let mut conv_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(3);
        let mut bn_grads: Vec<Option<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(3);
        for i in (0..self.conv.len()).rev() {
            let block = &cache.blocks[i];
            let (h, w) = (block.in_h, block.in_w);
            if let Some(arg) = &block.pool_argmax {
                dy = MaxPool2::backward(&dy, arg, block.relu_out.len());
            }
            relu_backward(&block.relu_out, &mut dy);
            let bng = match (self.bn[i].as_ref(), block.bn.as_ref()) {
                (Some(bn), Some(bn_cache)) => {
                    let (dx, dgamma, dbeta) = bn.backward(bn_cache, &dy, n, h * w);
                    dy = dx;
                    Some((dgamma, dbeta))
                }
                (None, None) => None,
                _ => return Err(Error::StaleCache),
            };
            bn_grads.push(bng);
            let (dx, dw, db) = self.conv[i].backward(&block.cols, &dy, n, h, w);
            conv_grads.push((dw, db));
            dy = dx;
        }
        conv_grads.reverse();
        bn_grads.reverse();

        let mut blocks = Vec::new();
        for i in 0..3 {
            let (dw, db) = &conv_grads[i];
            blocks.push(dw.clone());
            blocks.push(db.clone());
            if let Some((dgamma, dbeta)) = &bn_grads[i] {
                blocks.push(dgamma.clone());
                blocks.push(dbeta.clone());
            }
        }
        for (dw, db) in &fc_grads {
            blocks.push(dw.clone());
            blocks.push(db.clone());
        }
        Ok(Gradients { blocks })
    }

    /// Canonical parameter blocks: per conv block weight, bias, then gamma
    /// and beta when present, then the fully connected weights and biases.
    pub(crate) fn param_blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for i in 0..3 {
            out.push((format!("conv{}.weight", i + 1), &self.conv[i].weight));
            out.push((format!("conv{}.bias", i + 1), &self.conv[i].bias));
            if let Some(bn) = self.bn[i].as_ref() {
                out.push((format!("bn{}.gamma", i + 1), &bn.gamma));
                out.push((format!("bn{}.beta", i + 1), &bn.beta));
            }
        }
        for (i, layer) in self.fc.iter().enumerate() {
            out.push((format!("fc{}.weight", i + 1), &layer.weight));
            out.push((format!("fc{}.bias", i + 1), &layer.bias));
        }
        out
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let Network { conv, bn, fc, .. } = self;
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for (conv_i, bn_i) in conv.iter_mut().zip(bn.iter_mut()) {
            out.push(&mut conv_i.weight);
            out.push(&mut conv_i.bias);
            if let Some(b) = bn_i.as_mut() {
                out.push(&mut b.gamma);
                out.push(&mut b.beta);
            }
        }
        for layer in fc.iter_mut() {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out
    }

    /// All trainable parameters as one flat vector (canonical order).
    pub fn flatten_params(&self) -> Vec<f64> {
        self.param_blocks()
            .iter()
            .flat_map(|(_, b)| b.iter().copied())
            .collect()
    }

    /// Overwrite all trainable parameters from a flat vector.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.param_blocks().iter().map(|(_, b)| b.len()).sum();
        if flat.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector has {} values, network needs {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for block in self.param_blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn fuse_for(&self, grids: &[FeatureGrid]) -> Result<Tensor> {
        if grids.len() != self.config.views {
            return Err(Error::WrongViewCount {
                expected: self.config.views,
                got: grids.len(),
            });
        }
        let fused = fuse_views(grids)?;
        let (c, h, w) = self.config.input_grid;
        if fused.shape() != [self.config.views * c, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "fused shape {:?}, expected [{}, {h}, {w}]",
                fused.shape(),
                self.config.views * c
            )));
        }
        Ok(fused)
    }

    fn stack(&self, fused: &[Tensor]) -> Tensor {
        let per = fused[0].numel();
        let mut data = Vec::with_capacity(fused.len() * per);
        for t in fused {
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![fused.len()];
        shape.extend_from_slice(fused[0].shape());
        Tensor::from_parts(shape, data)
    }

    /// Train on (view grids, count) samples with the config's optimizer
    /// settings. Counts are normalized by their mean before the MSE loss;
    /// the factor is retained for prediction.
    pub fn train(&mut self, samples: &[TrainSample]) -> Result<TrainReport> {
        if samples.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        for s in samples {
            if !(s.count.is_finite() && s.count >= 0.0) {
                return Err(Error::InvalidValue(format!("bad count {}", s.count)));
            }
        }
        let fused: Vec<Tensor> = samples
            .iter()
            .map(|s| self.fuse_for(&s.grids))
            .collect::<Result<_>>()?;
        let mean_count = samples.iter().map(|s| s.count).sum::<f64>() / samples.len() as f64;
        self.count_scale = if mean_count > 0.0 { mean_count } else { 1.0 };
        let targets: Vec<f64> = samples.iter().map(|s| s.count / self.count_scale).collect();

        let n_samples = samples.len();
        let mut shuffle_rng = SplitMix64::derive(self.config.seed, "shuffle");
        let n_params = self.flatten_params().len();
        let mut velocity = vec![0.0; n_params];
        let mut epoch_losses = Vec::with_capacity(self.config.epochs);

        for epoch in 0..self.config.epochs {
            let mut order: Vec<usize> = (0..n_samples).collect();
            shuffle_rng.shuffle(&mut order);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<Tensor> = chunk.iter().map(|&i| fused[i].clone()).collect();
                let x = self.stack(&batch);
                let (preds, cache) = self.forward_train(&x)?;
                let b = chunk.len() as f64;
                let mut grad = vec![0.0; chunk.len()];
                let mut batch_loss = 0.0;
                for (j, &i) in chunk.iter().enumerate() {
                    let err = preds[j] - targets[i];
                    batch_loss += err * err;
                    grad[j] = 2.0 * err / b;
                }
                batch_loss /= b;
                if !batch_loss.is_finite() {
                    return Err(Error::DivergedTraining {
                        epoch,
                        loss: batch_loss,
                    });
                }
                loss_sum += batch_loss * b;
                let grads = self.backward(&cache, &grad)?;
                let flat = grads.flatten();
                let mut params = self.flatten_params();
                for i in 0..n_params {
                    velocity[i] = self.config.momentum * velocity[i]
                        - self.config.learning_rate * flat[i];
                    params[i] += velocity[i];
                }
                self.set_params(&params)?;
            }
            let epoch_loss = loss_sum / n_samples as f64;
            if !epoch_loss.is_finite() {
                return Err(Error::DivergedTraining {
                    epoch,
                    loss: epoch_loss,
                });
            }
            epoch_losses.push(epoch_loss);
        }

        let x = self.stack(&fused);
        let preds = self.forward_infer(&x)?;
        let final_loss = preds
            .iter()
            .zip(targets.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n_samples as f64;
        Ok(TrainReport {
            epoch_losses,
            final_loss,
            seed: self.config.seed,
        })
    }

    /// Predict pod counts for fused inputs (inference mode, scaled back to
    /// count units). Counts are continuous; no rounding is applied.
    pub fn predict(&self, inputs: &[Tensor]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.stack(inputs);
        Ok(self
            .forward_infer(&x)?
            .into_iter()
            .map(|v| v * self.count_scale)
            .collect())
    }

    /// Predict from per-sample view grids.
    pub fn predict_grids(&self, view_grids: &[Vec<FeatureGrid>]) -> Result<Vec<f64>> {
        let fused: Vec<Tensor> = view_grids
            .iter()
            .map(|g| self.fuse_for(g))
            .collect::<Result<_>>()?;
        self.predict(&fused)
    }
}
