use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One momentum-SGD update on a flat parameter block:
///
/// ```text
/// velocity <- momentum * velocity + grad
/// param    <- param - learning_rate * velocity
/// ```
pub fn sgd_step_slice<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    learning_rate: T,
    momentum: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "sgd buffers disagree: {} params, {} grads, {} velocity",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if !(learning_rate > T::zero()) {
        return Err(Error::Numeric("sgd learning rate must be positive".into()));
    }
    if momentum < T::zero() || momentum >= T::one() {
        return Err(Error::Numeric("sgd momentum must lie in [0, 1)".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient in sgd step".into()));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + *g;
        *p = *p - learning_rate * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_steps_match_the_hand_recursion() {
        // lr 0.1, momentum 0.9, constant grad 0.5 from p=1, v=0:
        //   v1 = 0.5,  p1 = 1 - 0.05        = 0.95
        //   v2 = 0.95, p2 = 0.95 - 0.095    = 0.855
        let mut p = vec![1.0f64];
        let mut v = vec![0.0f64];
        sgd_step_slice(&mut p, &[0.5], &mut v, 0.1, 0.9).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
        assert!((v[0] - 0.5).abs() < 1e-15);
        sgd_step_slice(&mut p, &[0.5], &mut v, 0.1, 0.9).unwrap();
        assert!((v[0] - 0.95).abs() < 1e-15);
        assert!((p[0] - 0.855).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut p = vec![2.0f32, -1.0];
        let mut v = vec![0.0f32; 2];
        sgd_step_slice(&mut p, &[1.0, -2.0], &mut v, 0.5, 0.0).unwrap();
        assert_eq!(p, vec![1.5, 0.0]);
    }

    #[test]
    fn rejects_mismatched_lengths_and_bad_hyperparameters() {
        let mut p = vec![0.0f32; 2];
        let mut v = vec![0.0f32; 2];
        assert!(sgd_step_slice(&mut p, &[0.0; 3], &mut v, 0.1, 0.9).is_err());
        assert!(sgd_step_slice(&mut p, &[0.0; 2], &mut v, 0.0, 0.9).is_err());
        assert!(sgd_step_slice(&mut p, &[0.0; 2], &mut v, 0.1, 1.0).is_err());
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = vec![0.0f32];
        let mut v = vec![0.0f32];
        assert!(sgd_step_slice(&mut p, &[f32::INFINITY], &mut v, 0.1, 0.9).is_err());
    }
}
