use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use std::fmt::{Debug, Display};

/// Floating-point element type of a policy network.
pub trait Scalar: Float + LinalgScalar + ScalarOperand + Debug + Display + Default + Send + Sync + 'static {
    /// Name recorded in checkpoint headers.
    const NAME: &'static str;

    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn parse(s: &str) -> Option<Self>;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn lit(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn lit(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn parse(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}
