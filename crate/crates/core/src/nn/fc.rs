use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;

/// Fully-connected layer. Weights are row-major `(out_features, in_features)`.
///
/// Inputs of any rank-4 shape are accepted as long as one sample flattens to
/// `in_features` values; the flattening order is the tensor's native
/// `(channel, height, width)` row-major order, which is also the order the
/// checkpoint format stores.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub in_features: usize,
    pub out_features: usize,
}

impl<T: Scalar> FcParams<T> {
    /// He-initialized weights (normal, std `sqrt(2 / in_features)`), zero bias.
    pub fn he_init<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Shape("fully-connected layer needs nonzero feature counts".into()));
        }
        let std = (2.0 / in_features as f64).sqrt();
        let weights = Tensor::<T>::randn([out_features, in_features, 1, 1], std, rng).into_values();
        Ok(FcParams { weights, bias: vec![T::zero(); out_features], in_features, out_features })
    }

    pub fn from_parts(weights: Vec<T>, bias: Vec<T>, in_features: usize, out_features: usize) -> Result<Self> {
        if weights.len() != in_features * out_features {
            return Err(Error::Shape(format!(
                "fc weights length {} does not match {out_features}x{in_features}",
                weights.len()
            )));
        }
        if bias.len() != out_features {
            return Err(Error::Shape(format!(
                "fc bias length {} does not match {out_features} outputs",
                bias.len()
            )));
        }
        Ok(FcParams { weights, bias, in_features, out_features })
    }
}

fn check_input<T: Scalar>(input: &Tensor<T>, params: &FcParams<T>) -> Result<usize> {
    let [b, c, h, w] = input.dims();
    let per_sample = c * h * w;
    if per_sample != params.in_features {
        return Err(Error::Shape(format!(
            "fc expects {} features per sample, got {per_sample} (input {:?})",
            params.in_features,
            input.dims()
        )));
    }
    Ok(b)
}

/// `y = W x + b` per sample; output shape `(batch, out_features, 1, 1)`.
pub fn fc_forward<T: Scalar>(input: &Tensor<T>, params: &FcParams<T>) -> Result<Tensor<T>> {
    let b = check_input(input, params)?;
    input.ensure_finite("fc input")?;
    let mut out = Tensor::zeros([b, params.out_features, 1, 1]);
    for bi in 0..b {
        let x = input.sample(bi);
        for o in 0..params.out_features {
            let row = &params.weights[o * params.in_features..(o + 1) * params.in_features];
            let mut acc = params.bias[o];
            for (wv, xv) in row.iter().zip(x) {
                acc = acc + *wv * *xv;
            }
            *out.at_mut(bi, o, 0, 0) = acc;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    /// Same shape as the forward input.
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

pub fn fc_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &FcParams<T>,
    upstream: &Tensor<T>,
) -> Result<FcGrads<T>> {
    let b = check_input(input, params)?;
    if upstream.dims() != [b, params.out_features, 1, 1] {
        return Err(Error::Shape(format!(
            "fc upstream gradient {:?} does not match output shape {:?}",
            upstream.dims(),
            [b, params.out_features, 1, 1]
        )));
    }
    upstream.ensure_finite("fc upstream gradient")?;
    let mut d_input = Tensor::zeros(input.dims());
    let mut d_weights = vec![T::zero(); params.weights.len()];
    let mut d_bias = vec![T::zero(); params.out_features];

    for bi in 0..b {
        let x = input.sample(bi);
        for o in 0..params.out_features {
            let u = upstream.at(bi, o, 0, 0);
            d_bias[o] = d_bias[o] + u;
            let row = &params.weights[o * params.in_features..(o + 1) * params.in_features];
            let drow = &mut d_weights[o * params.in_features..(o + 1) * params.in_features];
            let dx = d_input.sample_mut(bi);
            for i in 0..params.in_features {
                drow[i] = drow[i] + u * x[i];
                dx[i] = dx[i] + u * row[i];
            }
        }
    }
    Ok(FcGrads { input: d_input, weights: d_weights, bias: d_bias })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_hand_computation() {
        // 3 -> 2: W = [[1,0,-1],[2,1,0]], b = [0.5, -1]
        let params =
            FcParams::from_parts(vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.0], vec![0.5, -1.0], 3, 2).unwrap();
        let input = Tensor::from_vec([2, 3, 1, 1], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let out = fc_forward(&input, &params).unwrap();
        assert_eq!(out.dims(), [2, 2, 1, 1]);
        assert_eq!(out.at(0, 0, 0, 0), 1.0 - 3.0 + 0.5);
        assert_eq!(out.at(0, 1, 0, 0), 2.0 + 2.0 - 1.0);
        assert_eq!(out.at(1, 0, 0, 0), -1.0 - 1.0 + 0.5);
        assert_eq!(out.at(1, 1, 0, 0), -2.0 + 0.0 - 1.0);
    }

    #[test]
    fn accepts_spatial_inputs_in_row_major_order() {
        // (1, 2, 1, 2) flattens to [c0w0, c0w1, c1w0, c1w1]
        let params = FcParams::from_parts(vec![1.0, 10.0, 100.0, 1000.0], vec![0.0], 4, 1).unwrap();
        let input = Tensor::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = fc_forward(&input, &params).unwrap();
        assert_eq!(out.at(0, 0, 0, 0), 1.0 + 20.0 + 300.0 + 4000.0);
    }

    #[test]
    fn backward_matches_hand_computation() {
        let params = FcParams::from_parts(vec![1.0, 2.0, -1.0, 0.5], vec![0.0, 0.0], 2, 2).unwrap();
        let input = Tensor::from_vec([1, 2, 1, 1], vec![3.0, -2.0]).unwrap();
        let upstream = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let g = fc_backward(&input, &params, &upstream).unwrap();
        assert_eq!(g.weights, vec![3.0, -2.0, 6.0, -4.0]);
        assert_eq!(g.bias, vec![1.0, 2.0]);
        // dX = W^T u
        assert_eq!(g.input.values(), &[1.0 - 2.0, 2.0 + 1.0]);
    }

    #[test]
    fn rejects_feature_count_mismatch() {
        let params = FcParams::<f32>::from_parts(vec![1.0, 2.0], vec![0.0], 2, 1).unwrap();
        let input = Tensor::<f32>::zeros([1, 3, 1, 1]);
        assert!(fc_forward(&input, &params).is_err());
    }
}
