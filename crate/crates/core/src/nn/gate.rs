use crate::error::Result;
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormParams};
use crate::nn::conv::{conv2d_backward_opt, conv2d_forward, ConvParams};
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Forward artifacts of one gated block: `out = b * sigmoid(b)` where
/// `b = batchnorm(conv(x))`.
#[derive(Debug, Clone)]
pub struct GatedBlockForward<T> {
    /// Gated output, what the next stage consumes.
    pub output: Tensor<T>,
    /// The batchnorm output `b`, retained for gradient work and inspection.
    pub pre_gate: Tensor<T>,
    /// Running statistics after this call (unchanged copies in infer mode).
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    sig: Vec<T>,
    bn_cache: Option<BatchNormCache<T>>,
}

pub fn gated_block_forward<T: Scalar>(
    input: &Tensor<T>,
    conv: &ConvParams<T>,
    bn: &BatchNormParams<T>,
    mode: Mode,
) -> Result<GatedBlockForward<T>> {
    let conv_out = conv2d_forward(input, conv)?;
    let bn_out = batchnorm_forward(&conv_out, bn, mode)?;
    drop(conv_out); // backward needs xhat, not the raw conv output
    let b = bn_out.output;
    let mut sig = vec![T::zero(); b.len()];
    let mut output = Tensor::zeros(b.dims());
    for (i, &v) in b.values().iter().enumerate() {
        let s = T::one() / (T::one() + (-v).exp());
        sig[i] = s;
        output.values_mut()[i] = v * s;
    }
    Ok(GatedBlockForward {
        output,
        pre_gate: b,
        running_mean: bn_out.running_mean,
        running_var: bn_out.running_var,
        sig,
        bn_cache: bn_out.cache,
    })
}

#[derive(Debug, Clone)]
pub struct GatedBlockGrads<T> {
    /// `None` when the caller opted out (first layer of a network).
    pub input: Option<Tensor<T>>,
    pub conv_weights: Tensor<T>,
    pub conv_bias: Vec<T>,
    pub bn_scale: Vec<T>,
    pub bn_shift: Vec<T>,
}

/// Backward through gate, batchnorm and convolution. Requires a train-mode
/// forward (the batchnorm cache), like every training-path backward here.
pub fn gated_block_backward<T: Scalar>(
    input: &Tensor<T>,
    conv: &ConvParams<T>,
    bn: &BatchNormParams<T>,
    fwd: &GatedBlockForward<T>,
    upstream: &Tensor<T>,
    need_input_grad: bool,
) -> Result<GatedBlockGrads<T>> {
    let cache = fwd.bn_cache.as_ref().ok_or_else(|| {
        crate::Error::Numeric("gated block backward needs a train-mode forward".into())
    })?;
    // d(b*s)/db = s + b*s*(1-s)
    let mut d_pre = Tensor::zeros(upstream.dims());
    for (i, dv) in d_pre.values_mut().iter_mut().enumerate() {
        let s = fwd.sig[i];
        let b = fwd.pre_gate.values()[i];
        *dv = upstream.values()[i] * (s + b * s * (T::one() - s));
    }
    let bn_grads = batchnorm_backward(bn, cache, &d_pre)?;
    drop(d_pre);
    let conv_grads = conv2d_backward_opt(input, conv, &bn_grads.input, need_input_grad)?;
    Ok(GatedBlockGrads {
        input: conv_grads.input,
        conv_weights: conv_grads.weights,
        conv_bias: conv_grads.bias,
        bn_scale: bn_grads.scale,
        bn_shift: bn_grads.shift,
    })
}
