//! CNN architecture, initialization, forward evaluation, and datasets.
//!
//! A [`Network`] is a validated stack of layers ending in a two-class
//! linear head. One convolutional layer is designated the *concept layer*
//! (its channels are the explainable concepts) and one layer the
//! *embedding layer* (its flattened output is the instance embedding used
//! for similarity search).

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{conv2d, linear, maxpool2d, relu, Tensor};

/// Number of classes every network in this crate discriminates.
pub const CLASS_COUNT: usize = 2;

/// Hyperparameter description of a single layer (no parameters yet).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        units: usize,
    },
}

fn conv_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || kernel > padded {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

impl LayerSpec {
    /// Output shape given an input shape, or an architecture error when the
    /// layer cannot be applied there.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |details: String| Err(Error::Architecture(details));
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 {
                    return bad(format!("conv needs a (C,H,W) input, got {input:?}"));
                }
                if out_channels == 0 {
                    return bad("conv with 0 output channels".into());
                }
                let oh = conv_extent(input[1], kernel, stride, padding);
                let ow = conv_extent(input[2], kernel, stride, padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![out_channels, oh, ow]),
                    _ => bad(format!(
                        "conv kernel {kernel} (stride {stride}, padding {padding}) \
                         does not fit input {input:?}"
                    )),
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool { window, stride } => {
                if input.len() != 3 {
                    return bad(format!("maxpool needs a (C,H,W) input, got {input:?}"));
                }
                if window == 0 || stride == 0 || window > input[1] || window > input[2] {
                    return bad(format!(
                        "maxpool window {window} (stride {stride}) does not fit input {input:?}"
                    ));
                }
                Ok(vec![
                    input[0],
                    (input[1] - window) / stride + 1,
                    (input[2] - window) / stride + 1,
                ])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Linear { units } => {
                if input.len() != 1 {
                    return bad(format!("linear needs a flat input, got {input:?}"));
                }
                if units == 0 {
                    return bad("linear with 0 units".into());
                }
                Ok(vec![units])
            }
        }
    }
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        /// `(C_out, C_in, kH, kW)`
        kernels: Tensor,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        /// `(units, inputs)`
        weights: Tensor,
        bias: Vec<f64>,
    },
}

impl Layer {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv {
                kernels,
                bias,
                stride,
                padding,
            } => {
                let ks = kernels.shape();
                if ks.len() != 4 {
                    return Err(Error::Architecture(format!(
                        "conv kernels must be rank 4, got {ks:?}"
                    )));
                }
                if input.len() != 3 || ks[1] != input[0] {
                    return Err(Error::Architecture(format!(
                        "conv kernels {ks:?} incompatible with input {input:?}"
                    )));
                }
                if bias.len() != ks[0] {
                    return Err(Error::Architecture(format!(
                        "conv bias length {} != {} output channels",
                        bias.len(),
                        ks[0]
                    )));
                }
                let oh = conv_extent(input[1], ks[2], *stride, *padding);
                let ow = conv_extent(input[2], ks[3], *stride, *padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![ks[0], oh, ow]),
                    _ => Err(Error::Architecture(format!(
                        "conv kernel {}x{} does not fit input {input:?}",
                        ks[2], ks[3]
                    ))),
                }
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool { window, stride } => LayerSpec::MaxPool {
                window: *window,
                stride: *stride,
            }
            .output_shape(input),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Linear { weights, bias } => {
                let ws = weights.shape();
                if ws.len() != 2 {
                    return Err(Error::Architecture(format!(
                        "linear weights must be rank 2, got {ws:?}"
                    )));
                }
                if input.len() != 1 || ws[1] != input[0] {
                    return Err(Error::Architecture(format!(
                        "linear weights {ws:?} incompatible with input {input:?}"
                    )));
                }
                if bias.len() != ws[0] {
                    return Err(Error::Architecture(format!(
                        "linear bias length {} != {} units",
                        bias.len(),
                        ws[0]
                    )));
                }
                Ok(vec![ws[0]])
            }
        }
    }

    /// Number of trainable parameters in this layer.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv { kernels, bias, .. } => kernels.len() + bias.len(),
            Layer::Linear { weights, bias } => weights.len() + bias.len(),
            _ => 0,
        }
    }
}

/// Architecture: input shape plus layer specs and the two designated layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Index of the convolutional layer whose channels are the concepts.
    pub concept_layer: usize,
    /// Index of the layer whose flattened output is the instance embedding.
    pub embedding_layer: usize,
}

impl Architecture {
    /// The default compact architecture: two conv/relu/maxpool blocks on a
    /// 1x32x32 input, then a two-class linear head. The second conv layer
    /// (16 channels) is the concept layer; the second maxpool output is the
    /// embedding.
    pub fn default_toy() -> Self {
        Architecture {
            input_shape: vec![1, 32, 32],
            layers: vec![
                LayerSpec::Conv {
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                },
                LayerSpec::Conv {
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                },
                LayerSpec::Flatten,
                LayerSpec::Linear { units: CLASS_COUNT },
            ],
            concept_layer: 3,
            embedding_layer: 5,
        }
    }

    /// Checks all structural invariants and returns the per-layer output
    /// shapes on success.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        validate_structure(
            &self.input_shape,
            self.layers.len(),
            |i, input| self.layers[i].output_shape(input),
            |i| {
                matches!(
                    self.layers[i],
                    LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. }
                )
            },
            |i| matches!(self.layers[i], LayerSpec::Flatten),
            |i| match self.layers[i] {
                LayerSpec::Linear { units } => Some(units),
                _ => None,
            },
            |i| matches!(self.layers[i], LayerSpec::Conv { .. }),
            self.concept_layer,
            self.embedding_layer,
        )
    }

    /// Instantiates the architecture with seeded Glorot-uniform weights
    /// (`±sqrt(6/(fan_in+fan_out))`) and zero biases.
    pub fn build(&self, seed: u64) -> Result<Network> {
        let shapes = self.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let in_shape: &[usize] = if i == 0 {
                &self.input_shape
            } else {
                &shapes[i - 1]
            };
            layers.push(match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let c_in = in_shape[0];
                    let fan_in = (c_in * kernel * kernel) as f64;
                    let fan_out = (out_channels * kernel * kernel) as f64;
                    let limit = (6.0 / (fan_in + fan_out)).sqrt();
                    let n = out_channels * c_in * kernel * kernel;
                    let data: Vec<f64> = (0..n).map(|_| rng.uniform(-limit, limit)).collect();
                    Layer::Conv {
                        kernels: Tensor::new(vec![out_channels, c_in, kernel, kernel], data)?,
                        bias: vec![0.0; out_channels],
                        stride,
                        padding,
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { window, stride } => Layer::MaxPool { window, stride },
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Linear { units } => {
                    let n_in = in_shape[0];
                    let limit = (6.0 / (n_in + units) as f64).sqrt();
                    let data: Vec<f64> =
                        (0..units * n_in).map(|_| rng.uniform(-limit, limit)).collect();
                    Layer::Linear {
                        weights: Tensor::new(vec![units, n_in], data)?,
                        bias: vec![0.0; units],
                    }
                }
            });
        }
        Network::new(
            self.input_shape.clone(),
            layers,
            self.concept_layer,
            self.embedding_layer,
        )
    }
}

/// Shared structural validation for spec-level and parameter-level layers.
#[allow(clippy::too_many_arguments)]
fn validate_structure(
    input_shape: &[usize],
    len: usize,
    shape_of: impl Fn(usize, &[usize]) -> Result<Vec<usize>>,
    is_spatial: impl Fn(usize) -> bool,
    is_flatten: impl Fn(usize) -> bool,
    linear_units: impl Fn(usize) -> Option<usize>,
    is_conv: impl Fn(usize) -> bool,
    concept_layer: usize,
    embedding_layer: usize,
) -> Result<Vec<Vec<usize>>> {
    let bad = |details: String| Err(Error::Architecture(details));
    if input_shape.len() != 3 || input_shape.contains(&0) {
        return bad(format!(
            "input shape must be (C,H,W) with nonzero dims, got {input_shape:?}"
        ));
    }
    if len == 0 {
        return bad("network has no layers".into());
    }

    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(len);
    let mut flatten_seen = false;
    let mut flatten_count = 0usize;
    for i in 0..len {
        if is_flatten(i) {
            flatten_count += 1;
            flatten_seen = true;
        }
        if is_spatial(i) && flatten_seen && !is_flatten(i) {
            return bad(format!("spatial layer at index {i} after flatten"));
        }
        if linear_units(i).is_some() && !flatten_seen {
            return bad(format!("linear layer at index {i} before flatten"));
        }
        let input: &[usize] = if i == 0 { input_shape } else { &shapes[i - 1] };
        shapes.push(shape_of(i, input)?);
    }
    if flatten_count != 1 {
        return bad(format!("expected exactly one flatten layer, found {flatten_count}"));
    }
    match linear_units(len - 1) {
        Some(units) if units == CLASS_COUNT => {}
        Some(units) => {
            return bad(format!(
                "final linear layer must have {CLASS_COUNT} units, found {units}"
            ))
        }
        None => return bad("final layer must be linear".into()),
    }
    if concept_layer > embedding_layer || embedding_layer >= len {
        return bad(format!(
            "need concept_layer <= embedding_layer < {len}, \
             got concept_layer={concept_layer}, embedding_layer={embedding_layer}"
        ));
    }
    if !is_conv(concept_layer) {
        return bad(format!("concept layer {concept_layer} is not a conv layer"));
    }
    Ok(shapes)
}

/// A validated network with parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
    concept_layer: usize,
    embedding_layer: usize,
}

impl Network {
    /// Builds a network from concrete layers, checking every structural
    /// invariant (shape chain, single flatten, conv concept layer, two-class
    /// linear head).
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        concept_layer: usize,
        embedding_layer: usize,
    ) -> Result<Self> {
        let shapes = validate_structure(
            &input_shape,
            layers.len(),
            |i, input| layers[i].output_shape(input),
            |i| matches!(layers[i], Layer::Conv { .. } | Layer::MaxPool { .. }),
            |i| matches!(layers[i], Layer::Flatten),
            |i| match &layers[i] {
                Layer::Linear { weights, .. } => Some(weights.shape()[0]),
                _ => None,
            },
            |i| matches!(layers[i], Layer::Conv { .. }),
            concept_layer,
            embedding_layer,
        )?;
        Ok(Network {
            input_shape,
            layers,
            shapes,
            concept_layer,
            embedding_layer,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Output shape of each layer, in order.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn concept_layer(&self) -> usize {
        self.concept_layer
    }

    pub fn embedding_layer(&self) -> usize {
        self.embedding_layer
    }

    /// Channel count of the concept layer = maximum possible explanation
    /// length is twice this (present + absent concepts).
    pub fn concept_channels(&self) -> usize {
        self.shapes[self.concept_layer][0]
    }

    pub fn class_count(&self) -> usize {
        CLASS_COUNT
    }

    /// Length of the flattened embedding vector.
    pub fn embedding_len(&self) -> usize {
        self.shapes[self.embedding_layer].iter().product()
    }

    /// Runs the image through every layer, recording all activations and
    /// maxpool argmax routes.
    pub fn forward(&self, image: &Tensor) -> Result<ActivationTrace> {
        if image.shape() != self.input_shape.as_slice() {
            return Err(Error::Dimension {
                op: "forward",
                details: format!(
                    "image shape {:?} != network input shape {:?}",
                    image.shape(),
                    self.input_shape
                ),
            });
        }
        let n = self.layers.len();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(n);
        let mut pool_argmax: Vec<Option<Vec<usize>>> = vec![None; n];
        for i in 0..n {
            let prev: &Tensor = if i == 0 { image } else { &outputs[i - 1] };
            let out = match &self.layers[i] {
                Layer::Conv {
                    kernels,
                    bias,
                    stride,
                    padding,
                } => conv2d(prev, kernels, bias, *stride, *padding)?,
                Layer::Relu => relu(prev),
                Layer::MaxPool { window, stride } => {
                    let (out, argmax) = maxpool2d(prev, *window, *stride)?;
                    pool_argmax[i] = Some(argmax);
                    out
                }
                Layer::Flatten => prev.reshape(vec![prev.len()])?,
                Layer::Linear { weights, bias } => linear(prev, weights, bias)?,
            };
            outputs.push(out);
        }
        Ok(ActivationTrace {
            input: image.clone(),
            outputs,
            pool_argmax,
        })
    }

    /// Flattened activation of the embedding layer.
    pub fn embedding(&self, image: &Tensor) -> Result<Vec<f64>> {
        Ok(self.embedding_from_trace(&self.forward(image)?))
    }

    pub fn embedding_from_trace(&self, trace: &ActivationTrace) -> Vec<f64> {
        trace.outputs[self.embedding_layer].data().to_vec()
    }
}

/// Everything the forward pass computed: input, per-layer outputs, and the
/// argmax routing of each maxpool layer (flat indices into that layer's
/// input buffer).
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub input: Tensor,
    pub outputs: Vec<Tensor>,
    pub pool_argmax: Vec<Option<Vec<usize>>>,
}

impl ActivationTrace {
    /// Pre-softmax class scores (output of the final linear layer).
    pub fn logits(&self) -> &[f64] {
        self.outputs
            .last()
            .expect("trace of a validated network is never empty")
            .data()
    }

    /// Argmax over logits; ties resolve to the lower class index.
    pub fn predicted_class(&self) -> usize {
        let logits = self.logits();
        let mut best = 0usize;
        for (k, &v) in logits.iter().enumerate().skip(1) {
            if v > logits[best] {
                best = k;
            }
        }
        best
    }
}

/// Which half of the data an instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One labelled image.
#[derive(Debug, Clone)]
pub struct Instance {
    pub image: Tensor,
    /// Class index, 0 or 1.
    pub label: usize,
    /// Unique identifier, e.g. `"teapot/te0007"`.
    pub id: String,
}

/// A validated set of instances: nonempty, binary labels, one image shape.
#[derive(Debug, Clone)]
pub struct Dataset {
    instances: Vec<Instance>,
    split: Split,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, split: Split) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyDataset(format!("{split:?} split")));
        }
        let shape = instances[0].image.shape().to_vec();
        for inst in &instances {
            if inst.label >= CLASS_COUNT {
                return Err(Error::InvalidLabel {
                    id: inst.id.clone(),
                    label: inst.label,
                });
            }
            if inst.image.shape() != shape.as_slice() {
                return Err(Error::InconsistentShapes(format!(
                    "instance {:?} has shape {:?}, expected {:?}",
                    inst.id,
                    inst.image.shape(),
                    shape
                )));
            }
        }
        Ok(Dataset { instances, split })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        self.instances[0].image.shape()
    }

    /// Looks an instance up by id.
    pub fn get(&self, id: &str) -> Result<&Instance> {
        self.instances
            .iter()
            .find(|inst| inst.id == id)
            .ok_or_else(|| Error::UnknownInstance(id.to_string()))
    }
}
