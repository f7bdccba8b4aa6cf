//! Shared helpers for the integration suites: a central finite-difference
//! harness and an independent metrics oracle. Everything here recomputes
//! quantities from first principles so the library is checked against code
//! that does not share its implementation.
#![allow(dead_code)]

use aescore::model::{build_with_shape, Network, NetworkShape};
use aescore::nn::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, fc_backward,
    fc_forward, gated_block_backward, gated_block_forward, maxpool_backward, maxpool_forward,
    softmax_cross_entropy_batch, BatchNormParams, ConvParams, FcParams, Mode,
};
use aescore::rng::rng_from_seed;
use aescore::scalar::Scalar;
use aescore::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-aggregated relative error between an analytic and a numeric
/// gradient: `|a - n| / max(|a|, |n|, 1e-12)` over the whole block, which
/// keeps individual near-zero components from blowing up the ratio.
pub fn rel_err_norm(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / l2(analytic).max(l2(numeric)).max(1e-12)
}

/// Like [`rel_err_norm`] but aware of structurally zero gradients: a conv
/// bias feeding a train-mode batchnorm has an exactly zero derivative
/// (the batch statistics absorb per-channel shifts), so both sides are
/// nothing but rounding noise and their ratio is meaningless. When both
/// norms sit below `zero_floor` the block counts as a verified zero.
/// A real gradient on one side with zero on the other still reports ~1.
pub fn grad_error(analytic: &[f64], numeric: &[f64], zero_floor: f64) -> f64 {
    if l2(analytic) < zero_floor && l2(numeric) < zero_floor {
        return 0.0;
    }
    rel_err_norm(analytic, numeric)
}

/// Fixed random projection weights so a tensor-valued op reduces to a
/// scalar loss `L = sum(w_i * out_i)`; the upstream gradient for the op's
/// backward pass is then exactly `w`.
pub fn projection<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn weighted_sum<T: Scalar>(out: &[T], w: &[f64]) -> f64 {
    out.iter().zip(w).map(|(v, wi)| v.widen() * wi).sum()
}

pub fn upstream_tensor<T: Scalar>(dims: [usize; 4], w: &[f64]) -> Tensor<T> {
    let values = w.iter().map(|&v| T::real(v)).collect();
    Tensor::from_vec(dims, values).expect("projection length matches dims")
}

/// Central finite differences over a parameter slice: perturbs one entry at
/// a time and re-evaluates the scalar loss through `f`.
pub fn fd_grad<T: Scalar, F: FnMut(&[T]) -> f64>(values: &mut [T], h: f64, mut f: F) -> Vec<f64> {
    let mut grad = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + T::real(h);
        let plus = f(values);
        values[i] = orig - T::real(h);
        let minus = f(values);
        values[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// A small network with the published topology (two 1x1 gated blocks, a
/// third block with the requested kernel, the 8/4 pool chain, two fc
/// layers) at a width where finite differences over every parameter stay
/// cheap. 96 is the smallest input the 8-then-4 pool chain maps to a 3x3
/// plane, the minimum a 3x3 third block accepts.
pub fn reduced_shape(cb3_kernel: usize) -> NetworkShape {
    NetworkShape {
        input_resolution: 96,
        input_channels: 3,
        cb_channels: [4, 4, 4],
        cb3_kernel,
        pools: [8, 4],
        fc_hidden: 6,
        class_count: 8,
    }
}

/// Train-mode cross-entropy loss of a network on a fixed batch, the scalar
/// function the full-network gradient check differentiates.
pub fn net_loss<T: Scalar>(net: &Network<T>, batch: &Tensor<T>, labels: &[usize]) -> f64 {
    let trace = net.forward_trace(batch, Mode::Train).expect("forward");
    softmax_cross_entropy_batch(&trace.logits, labels).expect("loss").mean_loss
}

/// Checks every trainable block of a network against central finite
/// differences of the train-mode loss. Returns the worst per-block
/// norm-aggregated relative error; see [`grad_error`] for `zero_floor`.
pub fn check_network_gradients<T: Scalar>(shape: NetworkShape, seed: u64, h: f64, zero_floor: f64) -> f64 {
    let mut net = build_with_shape::<T>(shape, seed).expect("build");
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let r = net.shape().input_resolution;
    let batch = Tensor::<T>::randn([2, 3, r, r], 1.0, &mut rng);
    let labels = vec![rng.gen_range(0..8), rng.gen_range(0..8)];

    let trace = net.forward_trace(&batch, Mode::Train).expect("forward");
    let loss = softmax_cross_entropy_batch(&trace.logits, &labels).expect("loss");
    let (grads, _) = net.backward(&batch, &trace, &loss.logit_grad, false).expect("backward");
    let analytic: Vec<(&str, Vec<f64>)> = grads
        .blocks
        .iter()
        .map(|(name, g)| (*name, g.iter().map(|v| v.widen()).collect()))
        .collect();

    let block_count = net.trainable_blocks().len();
    let mut worst = 0.0f64;
    for bi in 0..block_count {
        let (name, values) = {
            let blocks = net.trainable_blocks();
            (blocks[bi].0, blocks[bi].1.to_vec())
        };
        let mut numeric = Vec::with_capacity(values.len());
        for j in 0..values.len() {
            let orig = values[j];
            net.trainable_blocks_mut()[bi].1[j] = orig + T::real(h);
            let plus = net_loss(&net, &batch, &labels);
            net.trainable_blocks_mut()[bi].1[j] = orig - T::real(h);
            let minus = net_loss(&net, &batch, &labels);
            net.trainable_blocks_mut()[bi].1[j] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
        let err = grad_error(&analytic[bi].1, &numeric, zero_floor);
        assert!(
            err.is_finite(),
            "non-finite gradient error in block {name} (seed {seed})"
        );
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// 32-bit analytic gradients against finite differences of the identical
/// network cast to f64 (same parameter values, widened). The difference
/// quotient is then numerically clean and the comparison measures the f32
/// pipeline's gradient error directly.
pub fn check_network_gradients_f32(shape: NetworkShape, seed: u64, h: f64, zero_floor: f64) -> f64 {
    let net32 = build_with_shape::<f32>(shape, seed).expect("build");
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let r = net32.shape().input_resolution;
    let batch32 = Tensor::<f32>::randn([2, 3, r, r], 1.0, &mut rng);
    let labels = vec![rng.gen_range(0..8), rng.gen_range(0..8)];

    let trace = net32.forward_trace(&batch32, Mode::Train).expect("forward");
    let loss = softmax_cross_entropy_batch(&trace.logits, &labels).expect("loss");
    let (grads, _) = net32.backward(&batch32, &trace, &loss.logit_grad, false).expect("backward");
    let analytic: Vec<Vec<f64>> = grads
        .blocks
        .iter()
        .map(|(_, g)| g.iter().map(|v| v.widen()).collect())
        .collect();

    let mut net64 = net32.cast::<f64>();
    let batch64 = batch32.cast::<f64>();
    let block_count = net64.trainable_blocks().len();
    let mut worst = 0.0f64;
    for bi in 0..block_count {
        let values = net64.trainable_blocks()[bi].1.to_vec();
        let mut numeric = Vec::with_capacity(values.len());
        for j in 0..values.len() {
            let orig = values[j];
            net64.trainable_blocks_mut()[bi].1[j] = orig + h;
            let plus = net_loss(&net64, &batch64, &labels);
            net64.trainable_blocks_mut()[bi].1[j] = orig - h;
            let minus = net_loss(&net64, &batch64, &labels);
            net64.trainable_blocks_mut()[bi].1[j] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
        worst = worst.max(grad_error(&analytic[bi], &numeric, zero_floor));
    }
    worst
}

/// Metrics oracle written independently of `aescore::metrics`: naive
/// per-class counting, no confusion matrix. Classes are the declared label
/// set; absent classes contribute zeros to the macro averages.
pub struct OracleReport {
    pub accuracy: f64,
    pub per_class: Vec<(f64, f64, f64)>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub fn oracle_metrics<L: PartialEq + Copy>(truth: &[L], predicted: &[L], classes: &[L]) -> OracleReport {
    assert_eq!(truth.len(), predicted.len());
    let hits = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
    let accuracy = hits as f64 / truth.len() as f64;
    let mut per_class = Vec::with_capacity(classes.len());
    for &c in classes {
        let tp = truth.iter().zip(predicted).filter(|&(&t, &p)| t == c && p == c).count() as f64;
        let fp = truth.iter().zip(predicted).filter(|&(&t, &p)| t != c && p == c).count() as f64;
        let fn_ = truth.iter().zip(predicted).filter(|&(&t, &p)| t == c && p != c).count() as f64;
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push((precision, recall, f1));
    }
    let k = classes.len() as f64;
    OracleReport {
        accuracy,
        macro_precision: per_class.iter().map(|x| x.0).sum::<f64>() / k,
        macro_recall: per_class.iter().map(|x| x.1).sum::<f64>() / k,
        macro_f1: per_class.iter().map(|x| x.2).sum::<f64>() / k,
        per_class,
    }
}

pub fn widen_slice<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.widen()).collect()
}

/// Shuffled, well-separated values (gap apart, centered near zero) so max
/// pooling has no near-ties and stays linear under the FD perturbation.
pub fn separated_tensor<T: Scalar>(dims: [usize; 4], gap: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = dims.iter().product::<usize>();
    let mut values: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * gap).collect();
    values.shuffle(rng);
    Tensor::from_vec(dims, values.into_iter().map(T::real).collect()).unwrap()
}

pub fn conv_worst_err<T: Scalar>(kernel: usize, seed: u64, h: f64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let input = Tensor::<T>::randn([2, 3, 6, 6], 1.0, &mut rng);
    let params = ConvParams::<T>::he_init(3, 4, kernel, &mut rng).unwrap();
    let out = conv2d_forward(&input, &params).unwrap();
    let w = projection(out.len(), &mut rng);
    let upstream = upstream_tensor::<T>(out.dims(), &w);
    let grads = conv2d_backward(&input, &params, &upstream).unwrap();

    let wdims = params.weights.dims();
    let mut wv = params.weights.values().to_vec();
    let fd_w = fd_grad(&mut wv, h, |vals| {
        let p = ConvParams::from_parts(
            Tensor::from_vec(wdims, vals.to_vec()).unwrap(),
            params.bias.clone(),
        )
        .unwrap();
        weighted_sum(conv2d_forward(&input, &p).unwrap().values(), &w)
    });
    let mut bv = params.bias.clone();
    let fd_b = fd_grad(&mut bv, h, |vals| {
        let p = ConvParams::from_parts(params.weights.clone(), vals.to_vec()).unwrap();
        weighted_sum(conv2d_forward(&input, &p).unwrap().values(), &w)
    });
    let mut iv = input.values().to_vec();
    let fd_i = fd_grad(&mut iv, h, |vals| {
        let x = Tensor::from_vec(input.dims(), vals.to_vec()).unwrap();
        weighted_sum(conv2d_forward(&x, &params).unwrap().values(), &w)
    });

    rel_err_norm(&widen_slice(grads.weights.values()), &fd_w)
        .max(rel_err_norm(&widen_slice(&grads.bias), &fd_b))
        .max(rel_err_norm(&widen_slice(grads.input.as_ref().unwrap().values()), &fd_i))
}

pub fn randomized_bn<T: Scalar>(channels: usize, rng: &mut impl Rng) -> BatchNormParams<T> {
    let mut bn = BatchNormParams::<T>::identity(channels, T::real(1e-5), T::real(0.1)).unwrap();
    for v in bn.scale.iter_mut() {
        *v = T::real(1.0 + 0.3 * rng.gen_range(-1.0..1.0));
    }
    for v in bn.shift.iter_mut() {
        *v = T::real(0.3 * rng.gen_range(-1.0..1.0));
    }
    bn
}

pub fn batchnorm_worst_err<T: Scalar>(seed: u64, h: f64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let input = Tensor::<T>::randn([3, 2, 4, 4], 1.5, &mut rng);
    let bn = randomized_bn::<T>(2, &mut rng);
    let fwd = batchnorm_forward(&input, &bn, Mode::Train).unwrap();
    let w = projection(fwd.output.len(), &mut rng);
    let upstream = upstream_tensor::<T>(fwd.output.dims(), &w);
    let grads = batchnorm_backward(&bn, fwd.cache.as_ref().unwrap(), &upstream).unwrap();

    // The loss re-runs the train-mode forward, so input perturbations flow
    // through the batch statistics exactly as the backward pass assumes.
    let mut iv = input.values().to_vec();
    let fd_i = fd_grad(&mut iv, h, |vals| {
        let x = Tensor::from_vec(input.dims(), vals.to_vec()).unwrap();
        weighted_sum(batchnorm_forward(&x, &bn, Mode::Train).unwrap().output.values(), &w)
    });
    let mut sv = bn.scale.clone();
    let fd_s = fd_grad(&mut sv, h, |vals| {
        let mut p = bn.clone();
        p.scale = vals.to_vec();
        weighted_sum(batchnorm_forward(&input, &p, Mode::Train).unwrap().output.values(), &w)
    });
    let mut tv = bn.shift.clone();
    let fd_t = fd_grad(&mut tv, h, |vals| {
        let mut p = bn.clone();
        p.shift = vals.to_vec();
        weighted_sum(batchnorm_forward(&input, &p, Mode::Train).unwrap().output.values(), &w)
    });

    rel_err_norm(&widen_slice(grads.input.values()), &fd_i)
        .max(rel_err_norm(&widen_slice(&grads.scale), &fd_s))
        .max(rel_err_norm(&widen_slice(&grads.shift), &fd_t))
}

pub fn gated_block_worst_err<T: Scalar>(kernel: usize, seed: u64, h: f64, zero_floor: f64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let input = Tensor::<T>::randn([2, 3, 5, 5], 1.0, &mut rng);
    let conv = ConvParams::<T>::he_init(3, 4, kernel, &mut rng).unwrap();
    let bn = randomized_bn::<T>(4, &mut rng);
    let fwd = gated_block_forward(&input, &conv, &bn, Mode::Train).unwrap();
    let w = projection(fwd.output.len(), &mut rng);
    let upstream = upstream_tensor::<T>(fwd.output.dims(), &w);
    let grads = gated_block_backward(&input, &conv, &bn, &fwd, &upstream, true).unwrap();

    let loss = |x: &Tensor<T>, c: &ConvParams<T>, b: &BatchNormParams<T>| {
        weighted_sum(gated_block_forward(x, c, b, Mode::Train).unwrap().output.values(), &w)
    };

    let wdims = conv.weights.dims();
    let mut wv = conv.weights.values().to_vec();
    let fd_w = fd_grad(&mut wv, h, |vals| {
        let c = ConvParams::from_parts(Tensor::from_vec(wdims, vals.to_vec()).unwrap(), conv.bias.clone()).unwrap();
        loss(&input, &c, &bn)
    });
    let mut bv = conv.bias.clone();
    let fd_b = fd_grad(&mut bv, h, |vals| {
        let c = ConvParams::from_parts(conv.weights.clone(), vals.to_vec()).unwrap();
        loss(&input, &c, &bn)
    });
    let mut sv = bn.scale.clone();
    let fd_s = fd_grad(&mut sv, h, |vals| {
        let mut p = bn.clone();
        p.scale = vals.to_vec();
        loss(&input, &conv, &p)
    });
    let mut tv = bn.shift.clone();
    let fd_t = fd_grad(&mut tv, h, |vals| {
        let mut p = bn.clone();
        p.shift = vals.to_vec();
        loss(&input, &conv, &p)
    });
    let mut iv = input.values().to_vec();
    let fd_i = fd_grad(&mut iv, h, |vals| {
        let x = Tensor::from_vec(input.dims(), vals.to_vec()).unwrap();
        loss(&x, &conv, &bn)
    });

    grad_error(&widen_slice(grads.conv_weights.values()), &fd_w, zero_floor)
        .max(grad_error(&widen_slice(&grads.conv_bias), &fd_b, zero_floor))
        .max(grad_error(&widen_slice(&grads.bn_scale), &fd_s, zero_floor))
        .max(grad_error(&widen_slice(&grads.bn_shift), &fd_t, zero_floor))
        .max(grad_error(&widen_slice(grads.input.as_ref().unwrap().values()), &fd_i, zero_floor))
}

pub fn maxpool_worst_err<T: Scalar>(kernel: usize, seed: u64, h: f64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let input = separated_tensor::<T>([2, 3, 8, 8], 0.05, &mut rng);
    let fwd = maxpool_forward(&input, kernel, kernel).unwrap();
    let w = projection(fwd.output.len(), &mut rng);
    let upstream = upstream_tensor::<T>(fwd.output.dims(), &w);
    let grad = maxpool_backward(&fwd, &upstream).unwrap();

    let mut iv = input.values().to_vec();
    let fd = fd_grad(&mut iv, h, |vals| {
        let x = Tensor::from_vec(input.dims(), vals.to_vec()).unwrap();
        weighted_sum(maxpool_forward(&x, kernel, kernel).unwrap().output.values(), &w)
    });
    rel_err_norm(&widen_slice(grad.values()), &fd)
}

pub fn fc_worst_err<T: Scalar>(seed: u64, h: f64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let input = Tensor::<T>::randn([2, 4, 3, 3], 1.0, &mut rng);
    let params = FcParams::<T>::he_init(36, 5, &mut rng).unwrap();
    let out = fc_forward(&input, &params).unwrap();
    let w = projection(out.len(), &mut rng);
    let upstream = upstream_tensor::<T>(out.dims(), &w);
    let grads = fc_backward(&input, &params, &upstream).unwrap();

    let mut wv = params.weights.clone();
    let fd_w = fd_grad(&mut wv, h, |vals| {
        let p = FcParams::from_parts(vals.to_vec(), params.bias.clone(), 36, 5).unwrap();
        weighted_sum(fc_forward(&input, &p).unwrap().values(), &w)
    });
    let mut bv = params.bias.clone();
    let fd_b = fd_grad(&mut bv, h, |vals| {
        let p = FcParams::from_parts(params.weights.clone(), vals.to_vec(), 36, 5).unwrap();
        weighted_sum(fc_forward(&input, &p).unwrap().values(), &w)
    });
    let mut iv = input.values().to_vec();
    let fd_i = fd_grad(&mut iv, h, |vals| {
        let x = Tensor::from_vec(input.dims(), vals.to_vec()).unwrap();
        weighted_sum(fc_forward(&x, &params).unwrap().values(), &w)
    });

    rel_err_norm(&widen_slice(&grads.weights), &fd_w)
        .max(rel_err_norm(&widen_slice(&grads.bias), &fd_b))
        .max(rel_err_norm(&widen_slice(grads.input.values()), &fd_i))
}

pub fn cross_entropy_worst_err<T: Scalar>(seed: u64, h: f64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let logits = Tensor::<T>::randn([3, 8, 1, 1], 2.0, &mut rng);
    let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..8)).collect();
    let batch = softmax_cross_entropy_batch(&logits, &labels).unwrap();

    let mut lv = logits.values().to_vec();
    let fd = fd_grad(&mut lv, h, |vals| {
        let x = Tensor::from_vec(logits.dims(), vals.to_vec()).unwrap();
        softmax_cross_entropy_batch(&x, &labels).unwrap().mean_loss
    });
    rel_err_norm(&widen_slice(batch.logit_grad.values()), &fd)
}
