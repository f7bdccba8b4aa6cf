use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel batch normalization parameters and running statistics.
///
/// `momentum` is the weight of the fresh batch statistic in the running
/// update: `running <- (1 - momentum) * running + momentum * batch`.
/// Population (biased) variance is used both for normalization and for the
/// running variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNormParams<T> {
    /// Identity transform start: scale 1, shift 0, running stats (0, 1).
    pub fn identity(channels: usize, epsilon: T, momentum: T) -> Result<Self> {
        let p = BatchNormParams {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon,
            momentum,
        };
        p.validate(channels)?;
        Ok(p)
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (name, v) in [
            ("scale", &self.scale),
            ("shift", &self.shift),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if v.len() != channels {
                return Err(Error::Shape(format!(
                    "batchnorm {name} has {} entries, expected {channels}",
                    v.len()
                )));
            }
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::Numeric("batchnorm epsilon must be positive".into()));
        }
        if !(self.momentum > T::zero() && self.momentum < T::one()) {
            return Err(Error::Numeric("batchnorm momentum must lie in (0, 1)".into()));
        }
        if self.running_var.iter().any(|v| *v < T::zero() || !v.is_finite()) {
            return Err(Error::Numeric("batchnorm running variance must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Forward cache needed by the train-mode backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    /// Normalized pre-affine activations, same layout as the input.
    pub xhat: Vec<T>,
    /// Per-channel `1 / sqrt(var + epsilon)`.
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormOutput<T> {
    pub output: Tensor<T>,
    /// Running statistics after this call. In infer mode these are copies of
    /// the input statistics: inference never mutates state.
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Present only in train mode.
    pub cache: Option<BatchNormCache<T>>,
}

/// Normalizes per channel over `(batch, height, width)`.
///
/// Train mode computes fresh batch statistics (and errors when a channel has
/// a single element, where variance is undefined); infer mode applies the
/// stored running statistics and works for any batch size.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &BatchNormParams<T>,
    mode: Mode,
) -> Result<BatchNormOutput<T>> {
    let [b, c, h, w] = input.dims();
    params.validate(c)?;
    input.ensure_finite("batchnorm input")?;
    let n = b * h * w;
    let plane = h * w;
    let mut output = Tensor::zeros(input.dims());

    match mode {
        Mode::Train => {
            if n <= 1 {
                return Err(Error::Numeric(format!(
                    "batchnorm train mode needs more than one value per channel, got {n}"
                )));
            }
            let mut xhat = vec![T::zero(); input.len()];
            let mut inv_std = vec![T::zero(); c];
            let mut new_mean = params.running_mean.clone();
            let mut new_var = params.running_var.clone();
            for ci in 0..c {
                // Two-pass mean/variance, accumulated at 64-bit.
                let mut sum = 0.0f64;
                for bi in 0..b {
                    let s = input.offset(bi, ci, 0, 0);
                    for v in &input.values()[s..s + plane] {
                        sum += v.widen();
                    }
                }
                let mean = sum / n as f64;
                let mut sq = 0.0f64;
                for bi in 0..b {
                    let s = input.offset(bi, ci, 0, 0);
                    for v in &input.values()[s..s + plane] {
                        let d = v.widen() - mean;
                        sq += d * d;
                    }
                }
                let var = sq / n as f64;
                let istd = 1.0 / (var + params.epsilon.widen()).sqrt();
                inv_std[ci] = T::real(istd);
                let mean_t = T::real(mean);
                let istd_t = T::real(istd);
                let gamma = params.scale[ci];
                let beta = params.shift[ci];
                for bi in 0..b {
                    let s = input.offset(bi, ci, 0, 0);
                    for (i, v) in input.values()[s..s + plane].iter().enumerate() {
                        let xh = (*v - mean_t) * istd_t;
                        xhat[s + i] = xh;
                        output.values_mut()[s + i] = gamma * xh + beta;
                    }
                }
                let m = params.momentum.widen();
                new_mean[ci] = T::real((1.0 - m) * params.running_mean[ci].widen() + m * mean);
                new_var[ci] = T::real((1.0 - m) * params.running_var[ci].widen() + m * var);
            }
            Ok(BatchNormOutput {
                output,
                running_mean: new_mean,
                running_var: new_var,
                cache: Some(BatchNormCache { xhat, inv_std }),
            })
        }
        Mode::Infer => {
            for ci in 0..c {
                let istd = 1.0 / (params.running_var[ci].widen() + params.epsilon.widen()).sqrt();
                // out = a*x + b with a, b folded per channel
                let a = T::real(params.scale[ci].widen() * istd);
                let off = T::real(
                    params.shift[ci].widen() - params.scale[ci].widen() * istd * params.running_mean[ci].widen(),
                );
                for bi in 0..b {
                    let s = input.offset(bi, ci, 0, 0);
                    for i in 0..plane {
                        output.values_mut()[s + i] = a * input.values()[s + i] + off;
                    }
                }
            }
            Ok(BatchNormOutput {
                output,
                running_mean: params.running_mean.clone(),
                running_var: params.running_var.clone(),
                cache: None,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

/// Train-mode backward pass. Differentiates through the batch statistics,
/// so it needs the cache produced by a train-mode forward call.
pub fn batchnorm_backward<T: Scalar>(
    params: &BatchNormParams<T>,
    cache: &BatchNormCache<T>,
    upstream: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let [b, c, h, w] = upstream.dims();
    params.validate(c)?;
    if cache.xhat.len() != upstream.len() || cache.inv_std.len() != c {
        return Err(Error::Shape("batchnorm cache does not match upstream gradient shape".into()));
    }
    upstream.ensure_finite("batchnorm upstream gradient")?;
    let n = b * h * w;
    let plane = h * w;
    let mut d_input = Tensor::zeros(upstream.dims());
    let mut d_scale = vec![T::zero(); c];
    let mut d_shift = vec![T::zero(); c];

    for ci in 0..c {
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for bi in 0..b {
            let s = upstream.offset(bi, ci, 0, 0);
            for i in 0..plane {
                let dy = upstream.values()[s + i].widen();
                sum_dy += dy;
                sum_dy_xhat += dy * cache.xhat[s + i].widen();
            }
        }
        d_shift[ci] = T::real(sum_dy);
        d_scale[ci] = T::real(sum_dy_xhat);
        // dx = (gamma * inv_std / N) * (N*dy - sum(dy) - xhat * sum(dy*xhat))
        let k = params.scale[ci].widen() * cache.inv_std[ci].widen() / n as f64;
        let k_t = T::real(k);
        let sum_dy_t = T::real(sum_dy);
        let sum_dy_xhat_t = T::real(sum_dy_xhat);
        let n_t = T::real(n as f64);
        for bi in 0..b {
            let s = upstream.offset(bi, ci, 0, 0);
            for i in 0..plane {
                let dy = upstream.values()[s + i];
                let xh = cache.xhat[s + i];
                d_input.values_mut()[s + i] = k_t * (n_t * dy - sum_dy_t - xh * sum_dy_xhat_t);
            }
        }
    }
    Ok(BatchNormGrads { input: d_input, scale: d_scale, shift: d_shift })
}
