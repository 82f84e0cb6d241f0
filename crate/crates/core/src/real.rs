use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the engine computes with.
pub trait Real: Float + FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static {
    /// Name of the numeric profile, `"f32"` or `"f64"`.
    const PROFILE: &'static str;

    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Real converts to f64")
    }

    fn of_usize(v: usize) -> Self {
        Self::of(v as f64)
    }
}

impl Real for f32 {
    const PROFILE: &'static str = "f32";
}

impl Real for f64 {
    const PROFILE: &'static str = "f64";
}
