use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Max pooling result plus what the backward pass needs: for every output
/// element, the flat input index of the maximum that produced it.
#[derive(Debug, Clone)]
pub struct PoolForward<T> {
    pub output: Tensor<T>,
    input_dims: [usize; 4],
    argmax: Vec<usize>,
}

/// Non-overlapping max pooling: `kernel == stride`, no padding. Output
/// spatial dims are `(in - kernel) / kernel + 1`; trailing rows/columns that
/// do not fill a window are discarded. Ties resolve to the first maximum in
/// row-major window order.
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>, kernel: usize, stride: usize) -> Result<PoolForward<T>> {
    if kernel == 0 {
        return Err(Error::Shape("pool kernel must be positive".into()));
    }
    if kernel != stride {
        return Err(Error::Shape(format!(
            "only non-overlapping pooling is supported: kernel {kernel} != stride {stride}"
        )));
    }
    let [b, c, h, w] = input.dims();
    if h < kernel || w < kernel {
        return Err(Error::Shape(format!("pool kernel {kernel} exceeds input spatial dims {h}x{w}")));
    }
    input.ensure_finite("pool input")?;
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut output = Tensor::zeros([b, c, oh, ow]);
    let mut argmax = vec![0usize; output.len()];

    for bi in 0..b {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let y0 = oy * stride;
                    let x0 = ox * stride;
                    let mut best = input.at(bi, ci, y0, x0);
                    let mut best_idx = input.offset(bi, ci, y0, x0);
                    for dy in 0..kernel {
                        for dx in 0..kernel {
                            let v = input.at(bi, ci, y0 + dy, x0 + dx);
                            if v > best {
                                best = v;
                                best_idx = input.offset(bi, ci, y0 + dy, x0 + dx);
                            }
                        }
                    }
                    let o = output.offset(bi, ci, oy, ox);
                    output.values_mut()[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    Ok(PoolForward { output, input_dims: input.dims(), argmax })
}

/// Routes each upstream gradient entirely to the input position that won its
/// window; all other positions receive zero.
pub fn maxpool_backward<T: Scalar>(fwd: &PoolForward<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.dims() != fwd.output.dims() {
        return Err(Error::Shape(format!(
            "pool upstream gradient {:?} does not match output shape {:?}",
            upstream.dims(),
            fwd.output.dims()
        )));
    }
    upstream.ensure_finite("pool upstream gradient")?;
    let mut d_input = Tensor::zeros(fwd.input_dims);
    for (i, &src) in fwd.argmax.iter().enumerate() {
        d_input.values_mut()[src] = d_input.values()[src] + upstream.values()[i];
    }
    Ok(d_input)
}
