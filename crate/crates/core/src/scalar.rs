use std::fmt::{Debug, Display};

/// Scalar element type for all numeric code in this crate.
///
/// Implemented for `f32` (working precision: training, checkpoints) and
/// `f64` (verification precision: gradient checks, fusion arithmetic).
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + num_traits::NumCast + Debug + Display + Send + Sync + 'static
{
    /// Convert a 64-bit constant into this precision.
    fn real(v: f64) -> Self;
    /// Widen to 64 bits for reporting and accumulation. Named to avoid
    /// colliding with `ToPrimitive::to_f64`, which returns an `Option`.
    fn widen(self) -> f64;
}

impl Scalar for f32 {
    fn real(v: f64) -> Self {
        v as f32
    }
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn real(v: f64) -> Self {
        v
    }
    fn widen(self) -> f64 {
        self
    }
}
