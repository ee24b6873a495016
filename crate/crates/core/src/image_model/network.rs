use serde::{Deserialize, Serialize};

use super::layers::{maxpool_forward, ActShape, Conv2d, Dense, FeatureNorm};
use super::Image;
use crate::numerics::{adam_step, cross_entropy, softmax, AdamState, OptimizerConfig, SeededRng, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    Maxpool,
    GlobalAveragePool,
    FeatureNorm(FeatureNorm),
    Dense(Dense),
    SoftmaxHead,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::Maxpool => "maxpool",
            Layer::GlobalAveragePool => "global_average_pool",
            Layer::FeatureNorm(_) => "feature_norm",
            Layer::Dense(_) => "dense",
            Layer::SoftmaxHead => "softmax_head",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::FeatureNorm(_) | Layer::Dense(_))
    }

    fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.weights.len() + c.bias.len(),
            Layer::FeatureNorm(n) => 2 * n.features(),
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            _ => 0,
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Layer::Conv(c) => [c.weights.as_slice(), &c.bias].concat(),
            Layer::FeatureNorm(n) => [n.scale.as_slice(), &n.shift].concat(),
            Layer::Dense(d) => [d.weights.as_slice(), &d.bias].concat(),
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weights, &mut c.bias],
            Layer::FeatureNorm(n) => vec![&mut n.scale, &mut n.shift],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub layer: Layer,
    pub trainable: bool,
    #[serde(default)]
    pub explanation_target: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Feature norms use batch statistics.
    Train,
    /// Feature norms use running statistics.
    Eval,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Pool(Vec<u32>),
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
}

/// Activations recorded by one forward pass. Owned by the caller, so a
/// shared model can serve concurrent forward passes.
#[derive(Debug, Clone)]
pub struct Forward {
    generation: u64,
    mode: Mode,
    start: usize,
    batch: usize,
    /// `acts[j]` is the batch entering layer `start + j`; the last entry is
    /// the network output.
    acts: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

impl Forward {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn rows(&self, data: &[f64]) -> Vec<Vec<f64>> {
        let n = data.len() / self.batch;
        data.chunks_exact(n).map(<[f64]>::to_vec).collect()
    }

    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.rows(self.acts.last().expect("nonempty"))
    }

    /// Inputs to the softmax head.
    pub fn logits(&self) -> Vec<Vec<f64>> {
        self.rows(&self.acts[self.acts.len() - 2])
    }

    /// Activation batch entering layer `index` (`layers.len()` for the output).
    pub fn activation(&self, model: &CnnModel, index: usize) -> Option<Tensor> {
        let j = index.checked_sub(self.start)?;
        let data = self.acts.get(j)?.clone();
        let mut shape = vec![self.batch];
        shape.extend(model.shapes[index].dims());
        Tensor::new(shape, data).ok()
    }
}

/// Per-layer parameter gradients, `None` for layers that are frozen or have
/// no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub per_layer: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn layer(&self, index: usize) -> Option<&[f64]> {
        self.per_layer.get(index)?.as_deref()
    }
}

/// One Adam state per parameterized layer.
#[derive(Debug, Clone, Default)]
pub struct OptimizerStates {
    states: Vec<Option<AdamState>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    input: ActShape,
    layers: Vec<LayerSlot>,
}

const MODEL_FORMAT: &str = "triage-cnn";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    input: ActShape,
    layers: Vec<LayerSlot>,
    /// `shapes[i]` is the activation entering layer `i`; one extra for the output.
    shapes: Vec<ActShape>,
    generation: u64,
}

fn infer_shape(layer: &Layer, input: ActShape) -> Result<ActShape> {
    let bad = |why: String| Err(Error::DimensionMismatch(format!("{}: {why}", layer.kind())));
    match (layer, input) {
        (
            Layer::Conv(c),
            ActShape::Spatial {
                channels,
                height,
                width,
            },
        ) => {
            if c.in_channels != channels {
                return bad(format!("expects {} channels, got {channels}", c.in_channels));
            }
            if c.weights.len() != c.out_channels * c.in_channels * c.kernel * c.kernel || c.bias.len() != c.out_channels
            {
                return bad("parameter lengths disagree with extents".into());
            }
            match c.output_extent(height, width) {
                Some((h, w)) => Ok(ActShape::Spatial {
                    channels: c.out_channels,
                    height: h,
                    width: w,
                }),
                None => bad(format!("kernel larger than {height}x{width} input")),
            }
        }
        (Layer::Relu, s) => Ok(s),
        (
            Layer::Maxpool,
            ActShape::Spatial {
                channels,
                height,
                width,
            },
        ) => {
            if height < 2 || width < 2 {
                return bad(format!("input {height}x{width} too small"));
            }
            Ok(ActShape::Spatial {
                channels,
                height: height / 2,
                width: width / 2,
            })
        }
        (Layer::GlobalAveragePool, ActShape::Spatial { channels, .. }) => Ok(ActShape::Flat(channels)),
        (Layer::FeatureNorm(n), ActShape::Flat(f)) => {
            let lens = [n.shift.len(), n.running_mean.len(), n.running_var.len()];
            if n.features() != f || lens.iter().any(|&l| l != f) {
                return bad(format!("expects {} features, got {f}", n.features()));
            }
            Ok(ActShape::Flat(f))
        }
        (Layer::Dense(d), ActShape::Flat(f)) => {
            if d.inputs != f || d.weights.len() != d.inputs * d.outputs || d.bias.len() != d.outputs {
                return bad(format!("expects {} inputs, got {f}", d.inputs));
            }
            Ok(ActShape::Flat(d.outputs))
        }
        (Layer::SoftmaxHead, ActShape::Flat(f)) => Ok(ActShape::Flat(f)),
        (_, s) => bad(format!("incompatible input {s:?}")),
    }
}

impl CnnModel {
    /// Validates the layer chain. The last conv becomes the explanation target.
    pub fn from_layers(input: ActShape, mut layers: Vec<LayerSlot>) -> Result<Self> {
        if !matches!(input, ActShape::Spatial { .. }) {
            return Err(Error::DimensionMismatch("model input must be spatial".into()));
        }
        let mut shapes = vec![input];
        for slot in &layers {
            let next = infer_shape(&slot.layer, *shapes.last().expect("nonempty"))?;
            shapes.push(next);
        }
        match layers.last() {
            Some(s) if matches!(s.layer, Layer::SoftmaxHead) => {}
            _ => {
                return Err(Error::DimensionMismatch(
                    "the final layer must be a softmax head".into(),
                ))
            }
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|s| matches!(s.layer, Layer::SoftmaxHead))
        {
            return Err(Error::DimensionMismatch("softmax head must be the final layer".into()));
        }
        let last_conv = layers.iter().rposition(|s| matches!(s.layer, Layer::Conv(_)));
        for (i, slot) in layers.iter_mut().enumerate() {
            slot.explanation_target = Some(i) == last_conv;
            if !slot.layer.is_parameterized() {
                slot.trainable = false;
            }
        }
        Ok(Self {
            input,
            layers,
            shapes,
            generation: 0,
        })
    }

    /// conv3×3×8 → relu → pool → conv3×3×16 → relu → pool → conv3×3×32 →
    /// relu → gap → feature_norm → dense(16) → relu → dense(2) → softmax.
    pub fn default_architecture(channels: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        CnnBuilder::new(channels, height, width, seed)
            .conv(8, 3)
            .relu()
            .maxpool()
            .conv(16, 3)
            .relu()
            .maxpool()
            .conv(32, 3)
            .relu()
            .global_average_pool()
            .feature_norm()
            .dense(16)
            .relu()
            .dense(2)
            .softmax()
            .build()
    }

    pub fn input_shape(&self) -> ActShape {
        self.input
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut Layer {
        self.generation += 1;
        &mut self.layers[index].layer
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().expect("nonempty").len()
    }

    /// Bumped whenever parameters change; forward caches from older
    /// generations are rejected by backward passes.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn parameterized_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].layer.is_parameterized())
            .collect()
    }

    pub fn trainable_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].trainable).collect()
    }

    pub fn set_trainable(&mut self, index: usize, trainable: bool) {
        let slot = &mut self.layers[index];
        slot.trainable = trainable && slot.layer.is_parameterized();
    }

    /// Trainable exactly for the last `k` parameterized layers.
    pub fn freeze_all_but_last(&mut self, k: usize) -> Result<()> {
        let param_layers = self.parameterized_layers();
        if k > param_layers.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot unfreeze {k} layers, the model has {} parameterized layers",
                param_layers.len()
            )));
        }
        let first_trainable = param_layers.len() - k;
        for (rank, &i) in param_layers.iter().enumerate() {
            self.layers[i].trainable = rank >= first_trainable;
        }
        Ok(())
    }

    pub fn explanation_target(&self) -> Option<usize> {
        self.layers.iter().position(|s| s.explanation_target)
    }

    /// Activation index Grad-CAM reads: the output of the target conv block,
    /// after its ReLU when one follows directly.
    pub fn explanation_activation_index(&self) -> Option<usize> {
        let t = self.explanation_target()?;
        match self.layers.get(t + 1) {
            Some(s) if matches!(s.layer, Layer::Relu) => Some(t + 2),
            _ => Some(t + 1),
        }
    }

    pub fn activation_shape(&self, index: usize) -> ActShape {
        self.shapes[index]
    }

    pub fn layer_params(&self, index: usize) -> Vec<f64> {
        self.layers[index].layer.params()
    }

    pub fn set_layer_params(&mut self, index: usize, values: &[f64]) -> Result<()> {
        let layer = &mut self.layers[index].layer;
        let expected = layer.param_count();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                what: "layer parameters",
                expected,
                actual: values.len(),
            });
        }
        let mut offset = 0;
        for block in layer.params_mut() {
            let n = block.len();
            block.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        self.generation += 1;
        Ok(())
    }

    /// Planar `[N, C, H, W]` batch built from images.
    pub fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor> {
        let ActShape::Spatial {
            channels,
            height,
            width,
        } = self.input
        else {
            unreachable!("validated at construction")
        };
        if images.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut data = Vec::with_capacity(images.len() * self.input.len());
        for img in images {
            if (img.channels(), img.height(), img.width()) != (channels, height, width) {
                return Err(Error::DimensionMismatch(format!(
                    "model expects {width}x{height}x{channels}, got {}x{}x{}",
                    img.width(),
                    img.height(),
                    img.channels()
                )));
            }
            data.extend(img.to_planar());
        }
        Tensor::new(vec![images.len(), channels, height, width], data)
    }

    pub fn forward(&self, images: &[&Image], mode: Mode) -> Result<Forward> {
        let batch = self.batch_tensor(images)?;
        self.forward_tensor(&batch, mode)
    }

    pub fn forward_tensor(&self, input: &Tensor, mode: Mode) -> Result<Forward> {
        self.forward_from(0, input, mode)
    }

    /// Runs layers `start..` on an activation batch shaped like the input of
    /// layer `start` (leading batch dimension included).
    pub fn forward_from(&self, start: usize, input: &Tensor, mode: Mode) -> Result<Forward> {
        if start >= self.layers.len() {
            return Err(Error::IndexOutOfRange {
                index: start,
                len: self.layers.len(),
            });
        }
        let per = self.shapes[start].len();
        let mut expected = vec![input.shape().first().copied().unwrap_or(0)];
        expected.extend(self.shapes[start].dims());
        if input.shape() != expected.as_slice() || !input.len().is_multiple_of(per) {
            return Err(Error::DimensionMismatch(format!(
                "layer {start} expects {:?} per sample, got {:?}",
                self.shapes[start].dims(),
                input.shape()
            )));
        }
        let batch = input.shape()[0];
        let mut acts = vec![input.data().to_vec()];
        let mut aux = Vec::new();
        for i in start..self.layers.len() {
            let (out, a) = self.layer_forward(i, acts.last().expect("nonempty"), batch, mode)?;
            acts.push(out);
            aux.push(a);
        }
        Ok(Forward {
            generation: self.generation,
            mode,
            start,
            batch,
            acts,
            aux,
        })
    }

    fn layer_forward(&self, i: usize, x: &[f64], batch: usize, mode: Mode) -> Result<(Vec<f64>, Aux)> {
        let in_shape = self.shapes[i];
        let out_shape = self.shapes[i + 1];
        let (n_in, n_out) = (in_shape.len(), out_shape.len());
        let mut out = vec![0.0; batch * n_out];
        let aux = match &self.layers[i].layer {
            Layer::Conv(conv) => {
                let ActShape::Spatial { height, width, .. } = in_shape else {
                    unreachable!()
                };
                for (src, dst) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
                    conv.forward(src, height, width, dst);
                }
                Aux::None
            }
            Layer::Relu => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v.max(0.0);
                }
                Aux::None
            }
            Layer::Maxpool => {
                let ActShape::Spatial {
                    channels,
                    height,
                    width,
                } = in_shape
                else {
                    unreachable!()
                };
                let mut arg = vec![0u32; batch * n_out];
                for ((src, dst), a) in x
                    .chunks_exact(n_in)
                    .zip(out.chunks_exact_mut(n_out))
                    .zip(arg.chunks_exact_mut(n_out))
                {
                    maxpool_forward(src, channels, height, width, dst, a);
                }
                Aux::Pool(arg)
            }
            Layer::GlobalAveragePool => {
                let plane = n_in / n_out;
                for (src, dst) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
                    for (c, d) in dst.iter_mut().enumerate() {
                        *d = src[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
                    }
                }
                Aux::None
            }
            Layer::FeatureNorm(norm) => {
                let f = n_in;
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mut mean = vec![0.0; f];
                        for row in x.chunks_exact(f) {
                            for (m, &v) in mean.iter_mut().zip(row) {
                                *m += v;
                            }
                        }
                        mean.iter_mut().for_each(|m| *m /= batch as f64);
                        let mut var = vec![0.0; f];
                        for row in x.chunks_exact(f) {
                            for j in 0..f {
                                let d = row[j] - mean[j];
                                var[j] += d * d;
                            }
                        }
                        var.iter_mut().for_each(|v| *v /= batch as f64);
                        (mean, var)
                    }
                    Mode::Eval => (norm.running_mean.clone(), norm.running_var.clone()),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + norm.epsilon).sqrt()).collect();
                let mut xhat = vec![0.0; batch * f];
                for ((row, hrow), orow) in x
                    .chunks_exact(f)
                    .zip(xhat.chunks_exact_mut(f))
                    .zip(out.chunks_exact_mut(f))
                {
                    for j in 0..f {
                        hrow[j] = (row[j] - mean[j]) * inv_std[j];
                        orow[j] = norm.scale[j] * hrow[j] + norm.shift[j];
                    }
                }
                Aux::Norm {
                    xhat,
                    inv_std,
                    mean,
                    var,
                }
            }
            Layer::Dense(dense) => {
                for (src, dst) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
                    dense.forward(src, dst);
                }
                Aux::None
            }
            Layer::SoftmaxHead => {
                for (src, dst) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
                    dst.copy_from_slice(&softmax(src)?);
                }
                Aux::None
            }
        };
        Ok((out, aux))
    }

    fn check_fresh(&self, fwd: &Forward) -> Result<()> {
        if fwd.generation != self.generation {
            return Err(Error::StaleCache(format!(
                "cache from model generation {}, model is at {}",
                fwd.generation, self.generation
            )));
        }
        if fwd.acts.len() != self.layers.len() - fwd.start + 1 {
            return Err(Error::StaleCache("cache does not cover this model's layers".into()));
        }
        Ok(())
    }

    /// Mean cross-entropy of a forward pass against gold class indices.
    pub fn loss(&self, fwd: &Forward, labels: &[usize]) -> Result<f64> {
        if labels.len() != fwd.batch {
            return Err(Error::LengthMismatch {
                what: "labels",
                expected: fwd.batch,
                actual: labels.len(),
            });
        }
        let probs = fwd.probabilities();
        let mut total = 0.0;
        for (p, &y) in probs.iter().zip(labels) {
            total += cross_entropy(p, y)?;
        }
        Ok(total / labels.len() as f64)
    }

    /// Gradients of the mean batch loss for every trainable layer.
    pub fn backward(&self, fwd: &Forward, labels: &[usize]) -> Result<(f64, Gradients)> {
        self.check_fresh(fwd)?;
        if fwd.start != 0 {
            return Err(Error::StaleCache("backward needs a full forward pass".into()));
        }
        let loss = self.loss(fwd, labels)?;
        let classes = self.num_classes();
        let probs = fwd.acts.last().expect("nonempty");
        let n = labels.len() as f64;
        let mut grad = vec![0.0; probs.len()];
        for (b, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::IndexOutOfRange { index: y, len: classes });
            }
            for c in 0..classes {
                let onehot = if c == y { 1.0 } else { 0.0 };
                grad[b * classes + c] = (probs[b * classes + c] - onehot) / n;
            }
        }
        let head = self.layers.len() - 1;
        let Some(lowest) = self.trainable_layers().first().copied() else {
            return Ok((
                loss,
                Gradients {
                    per_layer: vec![None; self.layers.len()],
                },
            ));
        };
        let (grads, _) = self.backprop(fwd, head, grad, lowest, true, false)?;
        Ok((loss, Gradients { per_layer: grads }))
    }

    /// Gradient of the target-class logit with respect to activation
    /// `act_index`, batch-wise.
    pub fn logit_gradient(&self, fwd: &Forward, act_index: usize, target_class: usize) -> Result<Tensor> {
        self.check_fresh(fwd)?;
        let classes = self.num_classes();
        if target_class >= classes {
            return Err(Error::IndexOutOfRange {
                index: target_class,
                len: classes,
            });
        }
        let head = self.layers.len() - 1;
        if act_index < fwd.start || act_index > head {
            return Err(Error::IndexOutOfRange {
                index: act_index,
                len: head + 1,
            });
        }
        let mut grad = vec![0.0; fwd.batch * classes];
        for b in 0..fwd.batch {
            grad[b * classes + target_class] = 1.0;
        }
        let (_, g) = if act_index == head {
            (Vec::new(), grad)
        } else {
            self.backprop(fwd, head, grad, act_index, false, true)?
        };
        let mut shape = vec![fwd.batch];
        shape.extend(self.shapes[act_index].dims());
        Tensor::new(shape, g)
    }

    /// Propagates `grad` (w.r.t. the input of layer `top`) down through
    /// layers `top-1 ..= stop`.
    fn backprop(
        &self,
        fwd: &Forward,
        top: usize,
        mut grad: Vec<f64>,
        stop: usize,
        want_params: bool,
        want_input_at_stop: bool,
    ) -> Result<(Vec<Option<Vec<f64>>>, Vec<f64>)> {
        let batch = fwd.batch;
        let mut per_layer: Vec<Option<Vec<f64>>> = vec![None; self.layers.len()];
        for i in (stop..top).rev() {
            let x = &fwd.acts[i - fwd.start];
            let y = &fwd.acts[i + 1 - fwd.start];
            let (n_in, n_out) = (self.shapes[i].len(), self.shapes[i + 1].len());
            let need_input = i > stop || want_input_at_stop;
            let slot = &self.layers[i];
            let mut gp = (want_params && slot.trainable).then(|| vec![0.0; slot.layer.param_count()]);
            let mut gin = if need_input {
                vec![0.0; batch * n_in]
            } else {
                Vec::new()
            };
            match &slot.layer {
                Layer::Conv(conv) => {
                    let ActShape::Spatial { height, width, .. } = self.shapes[i] else {
                        unreachable!()
                    };
                    for b in 0..batch {
                        conv.backward(
                            &x[b * n_in..(b + 1) * n_in],
                            height,
                            width,
                            &grad[b * n_out..(b + 1) * n_out],
                            gp.as_deref_mut(),
                            need_input.then(|| &mut gin[b * n_in..(b + 1) * n_in]),
                        );
                    }
                }
                Layer::Relu => {
                    if need_input {
                        for ((g, &go), &xv) in gin.iter_mut().zip(&grad).zip(x) {
                            *g = if xv > 0.0 { go } else { 0.0 };
                        }
                    }
                }
                Layer::Maxpool => {
                    let Aux::Pool(arg) = &fwd.aux[i - fwd.start] else {
                        unreachable!()
                    };
                    if need_input {
                        for b in 0..batch {
                            let gi = &mut gin[b * n_in..(b + 1) * n_in];
                            for o in 0..n_out {
                                gi[arg[b * n_out + o] as usize] += grad[b * n_out + o];
                            }
                        }
                    }
                }
                Layer::GlobalAveragePool => {
                    if need_input {
                        let plane = n_in / n_out;
                        for b in 0..batch {
                            for c in 0..n_out {
                                let g = grad[b * n_out + c] / plane as f64;
                                gin[b * n_in + c * plane..b * n_in + (c + 1) * plane].fill(g);
                            }
                        }
                    }
                }
                Layer::FeatureNorm(norm) => {
                    let Aux::Norm { xhat, inv_std, .. } = &fwd.aux[i - fwd.start] else {
                        unreachable!()
                    };
                    let f = n_in;
                    if let Some(gp) = gp.as_deref_mut() {
                        let (gs, gb) = gp.split_at_mut(f);
                        for b in 0..batch {
                            for j in 0..f {
                                gs[j] += grad[b * f + j] * xhat[b * f + j];
                                gb[j] += grad[b * f + j];
                            }
                        }
                    }
                    if need_input {
                        match fwd.mode {
                            Mode::Eval => {
                                for b in 0..batch {
                                    for j in 0..f {
                                        gin[b * f + j] = grad[b * f + j] * norm.scale[j] * inv_std[j];
                                    }
                                }
                            }
                            Mode::Train => {
                                let nb = batch as f64;
                                for j in 0..f {
                                    let mut sum_g = 0.0;
                                    let mut sum_gx = 0.0;
                                    for b in 0..batch {
                                        let gh = grad[b * f + j] * norm.scale[j];
                                        sum_g += gh;
                                        sum_gx += gh * xhat[b * f + j];
                                    }
                                    for b in 0..batch {
                                        let gh = grad[b * f + j] * norm.scale[j];
                                        gin[b * f + j] = inv_std[j] / nb * (nb * gh - sum_g - xhat[b * f + j] * sum_gx);
                                    }
                                }
                            }
                        }
                    }
                }
                Layer::Dense(dense) => {
                    for b in 0..batch {
                        let xb = &x[b * n_in..(b + 1) * n_in];
                        let gb = &grad[b * n_out..(b + 1) * n_out];
                        if let Some(gp) = gp.as_deref_mut() {
                            let (gw, gbias) = gp.split_at_mut(dense.weights.len());
                            for o in 0..n_out {
                                let row = &mut gw[o * n_in..(o + 1) * n_in];
                                for (r, &v) in row.iter_mut().zip(xb) {
                                    *r += gb[o] * v;
                                }
                                gbias[o] += gb[o];
                            }
                        }
                        if need_input {
                            let gi = &mut gin[b * n_in..(b + 1) * n_in];
                            for o in 0..n_out {
                                let row = &dense.weights[o * n_in..(o + 1) * n_in];
                                for (g, &w) in gi.iter_mut().zip(row) {
                                    *g += w * gb[o];
                                }
                            }
                        }
                    }
                }
                Layer::SoftmaxHead => {
                    // only reached when backpropagating a probability gradient
                    if need_input {
                        for b in 0..batch {
                            let p = &y[b * n_out..(b + 1) * n_out];
                            let g = &grad[b * n_out..(b + 1) * n_out];
                            let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                            for j in 0..n_out {
                                gin[b * n_in + j] = p[j] * (g[j] - dot);
                            }
                        }
                    }
                }
            }
            per_layer[i] = gp;
            grad = gin;
        }
        Ok((per_layer, grad))
    }

    /// Folds a training forward pass's batch statistics into the running
    /// statistics of every feature norm.
    pub fn absorb_batch_statistics(&mut self, fwd: &Forward) {
        if fwd.mode != Mode::Train {
            return;
        }
        for (j, aux) in fwd.aux.iter().enumerate() {
            if let (Aux::Norm { mean, var, .. }, Layer::FeatureNorm(norm)) =
                (aux, &mut self.layers[fwd.start + j].layer)
            {
                norm.absorb(mean, var);
            }
        }
    }

    pub fn new_optimizer_states(&self) -> OptimizerStates {
        OptimizerStates {
            states: self
                .layers
                .iter()
                .map(|s| {
                    s.layer
                        .is_parameterized()
                        .then(|| AdamState::new(s.layer.param_count()))
                })
                .collect(),
        }
    }

    /// Adam step on every trainable layer that has a gradient.
    pub fn apply_gradients(
        &mut self,
        grads: &Gradients,
        states: &mut OptimizerStates,
        config: &OptimizerConfig,
    ) -> Result<()> {
        if states.states.len() != self.layers.len() {
            *states = self.new_optimizer_states();
        }
        for i in 0..self.layers.len() {
            if !self.layers[i].trainable {
                continue;
            }
            let Some(g) = grads.layer(i) else { continue };
            let mut params = self.layers[i].layer.params();
            let state = states.states[i].get_or_insert_with(|| AdamState::new(params.len()));
            adam_step(&mut params, g, state, config)?;
            self.set_layer_params(i, &params)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            input: self.input,
            layers: self.layers.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        let trainable: Vec<bool> = file.layers.iter().map(|s| s.trainable).collect();
        let mut model = Self::from_layers(file.input, file.layers)?;
        for (slot, t) in model.layers.iter_mut().zip(trainable) {
            slot.trainable = t && slot.layer.is_parameterized();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Fluent construction of small networks with seeded initialization.
pub struct CnnBuilder {
    input: ActShape,
    current: ActShape,
    layers: Vec<LayerSlot>,
    rng: SeededRng,
    error: Option<Error>,
}

impl CnnBuilder {
    pub fn new(channels: usize, height: usize, width: usize, seed: u64) -> Self {
        let input = ActShape::Spatial {
            channels,
            height,
            width,
        };
        Self {
            input,
            current: input,
            layers: Vec::new(),
            rng: SeededRng::new(seed),
            error: None,
        }
    }

    fn push(mut self, layer: Layer) -> Self {
        if self.error.is_some() {
            return self;
        }
        match infer_shape(&layer, self.current) {
            Ok(s) => {
                self.current = s;
                let trainable = layer.is_parameterized();
                self.layers.push(LayerSlot {
                    layer,
                    trainable,
                    explanation_target: false,
                });
            }
            Err(e) => self.error = Some(e),
        }
        self
    }

    pub fn conv(mut self, out_channels: usize, kernel: usize) -> Self {
        let in_channels = match self.current {
            ActShape::Spatial { channels, .. } => channels,
            ActShape::Flat(_) => 0,
        };
        let conv = Conv2d::new(in_channels, out_channels, kernel, &mut self.rng);
        self.push(Layer::Conv(conv))
    }

    pub fn relu(self) -> Self {
        self.push(Layer::Relu)
    }

    pub fn maxpool(self) -> Self {
        self.push(Layer::Maxpool)
    }

    pub fn global_average_pool(self) -> Self {
        self.push(Layer::GlobalAveragePool)
    }

    pub fn feature_norm(self) -> Self {
        let n = self.current.len();
        self.push(Layer::FeatureNorm(FeatureNorm::new(n)))
    }

    pub fn dense(mut self, outputs: usize) -> Self {
        let inputs = self.current.len();
        let dense = Dense::new(inputs, outputs, &mut self.rng);
        self.push(Layer::Dense(dense))
    }

    pub fn softmax(self) -> Self {
        self.push(Layer::SoftmaxHead)
    }

    pub fn build(self) -> Result<CnnModel> {
        if let Some(e) = self.error {
            return Err(e);
        }
        CnnModel::from_layers(self.input, self.layers)
    }
}
