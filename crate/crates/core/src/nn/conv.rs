use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;

/// 2D convolution parameters. Only the two kernel sizes the networks use are
/// supported: 1x1 (stride 1, no padding) and 3x3 (stride 1, zero padding 1,
/// so spatial dims are preserved in both cases).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `(out_channels, in_channels, kernel, kernel)`.
    pub weights: Tensor<T>,
    /// One bias per output channel.
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// He-initialized weights (normal, std `sqrt(2 / fan_in)`), zero bias.
    pub fn he_init<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        check_kernel(kernel)?;
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        Ok(ConvParams {
            weights: Tensor::randn([out_channels, in_channels, kernel, kernel], std, rng),
            bias: vec![T::zero(); out_channels],
        })
    }

    pub fn from_parts(weights: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        let [out_c, _, kh, kw] = weights.dims();
        if kh != kw {
            return Err(Error::Shape(format!("conv kernel must be square, got {kh}x{kw}")));
        }
        check_kernel(kh)?;
        if bias.len() != out_c {
            return Err(Error::Shape(format!(
                "conv bias length {} does not match {} output channels",
                bias.len(),
                out_c
            )));
        }
        Ok(ConvParams { weights, bias })
    }

    pub fn kernel(&self) -> usize {
        self.weights.dims()[2]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims()[0]
    }
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel == 1 || kernel == 3 {
        Ok(())
    } else {
        Err(Error::Shape(format!("unsupported conv kernel {kernel}, expected 1 or 3")))
    }
}

fn check_forward_shapes<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<()> {
    let [_, c, h, w] = input.dims();
    if c != params.in_channels() {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {c}",
            params.in_channels()
        )));
    }
    let k = params.kernel();
    if h < k || w < k {
        return Err(Error::Shape(format!("conv kernel {k} exceeds input spatial dims {h}x{w}")));
    }
    Ok(())
}

/// Stride-1 convolution; 3x3 kernels use zero padding 1 so the output keeps
/// the input's spatial dimensions.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    check_forward_shapes(input, params)?;
    input.ensure_finite("conv input")?;
    let [b, c_in, h, w] = input.dims();
    let c_out = params.out_channels();
    let mut out = Tensor::zeros([b, c_out, h, w]);

    match params.kernel() {
        1 => {
            let plane = h * w;
            for bi in 0..b {
                for o in 0..c_out {
                    let start = out.offset(bi, o, 0, 0);
                    out.values_mut()[start..start + plane].fill(params.bias[o]);
                    for i in 0..c_in {
                        let wv = params.weights.at(o, i, 0, 0);
                        let in_start = input.offset(bi, i, 0, 0);
                        let src = &input.values()[in_start..in_start + plane];
                        let dst = &mut out.values_mut()[start..start + plane];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = *d + wv * *s;
                        }
                    }
                }
            }
        }
        3 => {
            for bi in 0..b {
                for o in 0..c_out {
                    for y in 0..h {
                        for x in 0..w {
                            let mut acc = params.bias[o];
                            for i in 0..c_in {
                                for dy in 0..3usize {
                                    let sy = y + dy;
                                    if sy < 1 || sy > h {
                                        continue;
                                    }
                                    for dx in 0..3usize {
                                        let sx = x + dx;
                                        if sx < 1 || sx > w {
                                            continue;
                                        }
                                        acc = acc
                                            + params.weights.at(o, i, dy, dx) * input.at(bi, i, sy - 1, sx - 1);
                                    }
                                }
                            }
                            *out.at_mut(bi, o, y, x) = acc;
                        }
                    }
                }
            }
        }
        _ => unreachable!("kernel validated at construction"),
    }
    Ok(out)
}

/// Gradients produced by [`conv2d_backward`]. `input` is `None` only when the
/// caller explicitly opted out (first layer of a network).
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// Backward pass for [`conv2d_forward`].
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_opt(input, params, upstream, true)
}

/// Same as [`conv2d_backward`] but can skip the input gradient, which is
/// wasted work on a network's first layer.
pub fn conv2d_backward_opt<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    upstream: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    check_forward_shapes(input, params)?;
    let [b, c_in, h, w] = input.dims();
    let c_out = params.out_channels();
    if upstream.dims() != [b, c_out, h, w] {
        return Err(Error::Shape(format!(
            "conv upstream gradient {:?} does not match output shape {:?}",
            upstream.dims(),
            [b, c_out, h, w]
        )));
    }
    upstream.ensure_finite("conv upstream gradient")?;

    let k = params.kernel();
    let mut d_weights = Tensor::zeros(params.weights.dims());
    let mut d_bias = vec![T::zero(); c_out];
    let mut d_input = need_input_grad.then(|| Tensor::zeros(input.dims()));
    let plane = h * w;

    for o in 0..c_out {
        let mut acc = 0.0f64;
        for bi in 0..b {
            let s = upstream.offset(bi, o, 0, 0);
            for v in &upstream.values()[s..s + plane] {
                acc += v.widen();
            }
        }
        d_bias[o] = T::real(acc);
    }

    match k {
        1 => {
            for bi in 0..b {
                for o in 0..c_out {
                    let up_start = upstream.offset(bi, o, 0, 0);
                    let up = &upstream.values()[up_start..up_start + plane];
                    for i in 0..c_in {
                        let in_start = input.offset(bi, i, 0, 0);
                        let src = &input.values()[in_start..in_start + plane];
                        let mut dot = T::zero();
                        for (u, s) in up.iter().zip(src) {
                            dot = dot + *u * *s;
                        }
                        let cur = d_weights.at(o, i, 0, 0);
                        *d_weights.at_mut(o, i, 0, 0) = cur + dot;
                    }
                }
            }
            if let Some(di) = d_input.as_mut() {
                for bi in 0..b {
                    for o in 0..c_out {
                        let up_start = upstream.offset(bi, o, 0, 0);
                        for i in 0..c_in {
                            let wv = params.weights.at(o, i, 0, 0);
                            let di_start = di.offset(bi, i, 0, 0);
                            let dst = &mut di.values_mut()[di_start..di_start + plane];
                            let up = &upstream.values()[up_start..up_start + plane];
                            for (d, u) in dst.iter_mut().zip(up) {
                                *d = *d + wv * *u;
                            }
                        }
                    }
                }
            }
        }
        3 => {
            for bi in 0..b {
                for o in 0..c_out {
                    for y in 0..h {
                        for x in 0..w {
                            let u = upstream.at(bi, o, y, x);
                            for i in 0..c_in {
                                for dy in 0..3usize {
                                    let sy = y + dy;
                                    if sy < 1 || sy > h {
                                        continue;
                                    }
                                    for dx in 0..3usize {
                                        let sx = x + dx;
                                        if sx < 1 || sx > w {
                                            continue;
                                        }
                                        let xv = input.at(bi, i, sy - 1, sx - 1);
                                        let cur_w = d_weights.at(o, i, dy, dx);
                                        *d_weights.at_mut(o, i, dy, dx) = cur_w + u * xv;
                                        if let Some(di) = d_input.as_mut() {
                                            let cur_x = di.at(bi, i, sy - 1, sx - 1);
                                            *di.at_mut(bi, i, sy - 1, sx - 1) =
                                                cur_x + u * params.weights.at(o, i, dy, dx);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        _ => unreachable!("kernel validated at construction"),
    }

    Ok(ConvGrads { input: d_input, weights: d_weights, bias: d_bias })
}
