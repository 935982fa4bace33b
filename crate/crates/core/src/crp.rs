//! Concept relevance propagation: an epsilon-rule relevance backward pass
//! with per-channel masking at a designated convolutional layer.
//!
//! Relevance starts at the output as the raw logit of the explained class
//! (one-hot) and flows backwards:
//!
//! * linear / conv: `R_j = sum_k (z_jk / (z_k + eps*sign(z_k))) * R_k`,
//!   where `z_jk` is input j's contribution to output k and `z_k` the full
//!   pre-activation including bias; `sign(0)` is taken as `+1`,
//! * maxpool: winner-take-all — all relevance routes to the argmax input,
//! * relu: pass-through,
//! * flatten: reshape.
//!
//! The channels of the concept layer partition its relevance exactly, so a
//! concept's score is simply its channel sum there; masked continuation
//! below the concept layer is only needed for per-concept heatmaps.
//! With zero biases the pass conserves relevance up to the epsilon
//! absorbed by the stabilized denominators.

use crate::error::{Error, Result};
use crate::network::{ActivationTrace, Layer, Network};
use crate::tensor::Tensor;

/// Per-channel concept relevance scores for one instance and class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptAttribution {
    pub instance_id: String,
    pub class_index: usize,
    /// One signed score per concept-layer channel.
    pub scores: Vec<f64>,
    /// Sum of `scores` (the concept layer's total relevance).
    pub total: f64,
}

/// Relevance at every layer output, plus the input image relevance.
#[derive(Debug, Clone)]
pub struct RelevanceTrace {
    /// `relevances[i]` is the relevance tensor at the output of layer `i`;
    /// the last entry is the one-hot logit initialization.
    pub relevances: Vec<Tensor>,
    /// Relevance distributed over the input image.
    pub input_relevance: Tensor,
    pub class_index: usize,
    pub epsilon: f64,
}

/// `z + eps*sign(z)` with `sign(0) = +1`.
#[inline]
fn stabilize(z: f64, epsilon: f64) -> f64 {
    if z >= 0.0 {
        z + epsilon
    } else {
        z - epsilon
    }
}

/// Epsilon-rule propagation through one layer: relevance at the layer's
/// output becomes relevance at its input.
pub(crate) fn propagate_layer(
    layer: &Layer,
    input: &Tensor,
    output: &Tensor,
    argmax: Option<&[usize]>,
    rel_out: &Tensor,
    epsilon: f64,
) -> Tensor {
    match layer {
        Layer::Conv {
            kernels,
            stride,
            padding,
            ..
        } => {
            let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let (c_out, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
            let (oh, ow) = (output.shape()[1], output.shape()[2]);
            let mut rel_in = Tensor::zeros(input.shape().to_vec());
            for o in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let r = rel_out.data()[rel_out.idx3(o, oy, ox)];
                        if r == 0.0 {
                            continue;
                        }
                        let z = output.data()[output.idx3(o, oy, ox)];
                        let factor = r / stabilize(z, epsilon);
                        for i in 0..c_in {
                            for ky in 0..kh {
                                let iy = oy * stride + ky;
                                if iy < *padding || iy >= h + padding {
                                    continue;
                                }
                                let iy = iy - padding;
                                for kx in 0..kw {
                                    let ix = ox * stride + kx;
                                    if ix < *padding || ix >= w + padding {
                                        continue;
                                    }
                                    let ix = ix - padding;
                                    let xidx = input.idx3(i, iy, ix);
                                    let kidx = ((o * c_in + i) * kh + ky) * kw + kx;
                                    rel_in.data_mut()[xidx] +=
                                        input.data()[xidx] * kernels.data()[kidx] * factor;
                                }
                            }
                        }
                    }
                }
            }
            rel_in
        }
        Layer::Relu => rel_out.clone(),
        Layer::MaxPool { .. } => {
            let routes = argmax.expect("maxpool trace must carry argmax indices");
            let mut rel_in = Tensor::zeros(input.shape().to_vec());
            for (k, &src) in routes.iter().enumerate() {
                rel_in.data_mut()[src] += rel_out.data()[k];
            }
            rel_in
        }
        Layer::Flatten => rel_out
            .reshape(input.shape().to_vec())
            .expect("flatten preserves element count"),
        Layer::Linear { weights, .. } => {
            let (m, n) = (weights.shape()[0], weights.shape()[1]);
            let mut rel_in = vec![0.0; n];
            for k in 0..m {
                let r = rel_out.data()[k];
                if r == 0.0 {
                    continue;
                }
                let factor = r / stabilize(output.data()[k], epsilon);
                for (j, slot) in rel_in.iter_mut().enumerate() {
                    *slot += weights.data()[k * n + j] * input.data()[j] * factor;
                }
            }
            Tensor::new(vec![n], rel_in).expect("shape matches by construction")
        }
    }
}

fn check_trace(net: &Network, trace: &ActivationTrace) -> Result<()> {
    let mismatch = |details: String| Err(Error::TraceMismatch(details));
    if trace.outputs.len() != net.layers().len() {
        return mismatch(format!(
            "trace has {} layer outputs, network has {} layers",
            trace.outputs.len(),
            net.layers().len()
        ));
    }
    if trace.input.shape() != net.input_shape() {
        return mismatch(format!(
            "trace input shape {:?} != network input shape {:?}",
            trace.input.shape(),
            net.input_shape()
        ));
    }
    for (i, (out, want)) in trace.outputs.iter().zip(net.layer_shapes()).enumerate() {
        if out.shape() != want.as_slice() {
            return mismatch(format!(
                "layer {i} output shape {:?} != expected {:?}",
                out.shape(),
                want
            ));
        }
    }
    for (i, layer) in net.layers().iter().enumerate() {
        if matches!(layer, Layer::MaxPool { .. }) {
            match &trace.pool_argmax[i] {
                Some(routes) if routes.len() == trace.outputs[i].len() => {}
                _ => return mismatch(format!("layer {i}: missing or wrong-size argmax routes")),
            }
        }
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain {
            op: "relevance propagation",
            details: format!("rule_epsilon must be positive and finite, got {epsilon}"),
        });
    }
    Ok(())
}

/// Full relevance backward pass from the chosen logit down to the input.
pub fn lrp_backward(
    net: &Network,
    trace: &ActivationTrace,
    class_index: usize,
    rule_epsilon: f64,
) -> Result<RelevanceTrace> {
    check_epsilon(rule_epsilon)?;
    check_trace(net, trace)?;
    let logits = trace.logits();
    if class_index >= logits.len() {
        return Err(Error::Dimension {
            op: "lrp_backward",
            details: format!(
                "class index {class_index} out of range ({} classes)",
                logits.len()
            ),
        });
    }

    let n = net.layers().len();
    let mut init = Tensor::zeros(trace.outputs[n - 1].shape().to_vec());
    init.data_mut()[class_index] = logits[class_index];

    let mut rels_rev: Vec<Tensor> = vec![init];
    for i in (0..n).rev() {
        let input: &Tensor = if i == 0 {
            &trace.input
        } else {
            &trace.outputs[i - 1]
        };
        let rel_in = propagate_layer(
            &net.layers()[i],
            input,
            &trace.outputs[i],
            trace.pool_argmax[i].as_deref(),
            rels_rev.last().expect("nonempty by construction"),
            rule_epsilon,
        );
        rels_rev.push(rel_in);
    }
    let input_relevance = rels_rev.pop().expect("input relevance pushed last");
    rels_rev.reverse();
    Ok(RelevanceTrace {
        relevances: rels_rev,
        input_relevance,
        class_index,
        epsilon: rule_epsilon,
    })
}

/// Sums a rank-3 relevance tensor per channel.
fn channel_sums(rel: &Tensor) -> Vec<f64> {
    let (c, h, w) = (rel.shape()[0], rel.shape()[1], rel.shape()[2]);
    (0..c)
        .map(|ch| rel.data()[ch * h * w..(ch + 1) * h * w].iter().sum())
        .collect()
}

/// Per-channel concept relevance from an existing forward trace.
pub fn concept_scores_from_trace(
    net: &Network,
    trace: &ActivationTrace,
    instance_id: &str,
    class_index: usize,
    rule_epsilon: f64,
) -> Result<ConceptAttribution> {
    let rel_trace = lrp_backward(net, trace, class_index, rule_epsilon)?;
    let scores = channel_sums(&rel_trace.relevances[net.concept_layer()]);
    let total = scores.iter().sum();
    Ok(ConceptAttribution {
        instance_id: instance_id.to_string(),
        class_index,
        scores,
        total,
    })
}

/// Per-channel concept relevance scores for `image` and `class_index`.
///
/// The channel masks partition the concept layer, so each score is the
/// channel's relevance sum there and the scores add up to the layer total.
pub fn concept_scores(
    net: &Network,
    image: &Tensor,
    instance_id: &str,
    class_index: usize,
    rule_epsilon: f64,
) -> Result<ConceptAttribution> {
    let trace = net.forward(image)?;
    concept_scores_from_trace(net, &trace, instance_id, class_index, rule_epsilon)
}

/// Input-space relevance heatmap for a single concept channel: the backward
/// pass is masked to that channel at the concept layer and continued down
/// to the input.
pub fn heatmap(
    net: &Network,
    image: &Tensor,
    class_index: usize,
    channel: usize,
    rule_epsilon: f64,
) -> Result<Tensor> {
    let count = net.concept_channels();
    if channel >= count {
        return Err(Error::ChannelOutOfRange { channel, count });
    }
    let trace = net.forward(image)?;
    let rel_trace = lrp_backward(net, &trace, class_index, rule_epsilon)?;

    let cl = net.concept_layer();
    let concept_rel = &rel_trace.relevances[cl];
    let (h, w) = (concept_rel.shape()[1], concept_rel.shape()[2]);
    let mut masked = Tensor::zeros(concept_rel.shape().to_vec());
    let span = channel * h * w..(channel + 1) * h * w;
    masked.data_mut()[span.clone()].copy_from_slice(&concept_rel.data()[span]);

    let mut rel = masked;
    for i in (0..=cl).rev() {
        let input: &Tensor = if i == 0 {
            &trace.input
        } else {
            &trace.outputs[i - 1]
        };
        rel = propagate_layer(
            &net.layers()[i],
            input,
            &trace.outputs[i],
            trace.pool_argmax[i].as_deref(),
            &rel,
            rule_epsilon,
        );
    }
    Ok(rel)
}
