//! Scalar abstraction shared by the generic numerical kernels.
//!
//! The closed-form and root-finding layers are generic over [`Real`], which
//! is implemented for `f32` and `f64`. Curve tracing, quadrature and graph
//! assembly work in `f64` only, because their tolerances are below `f32`
//! resolution.

use num_complex::Complex;
use num_traits::{Float, FloatConst};
use std::fmt::Debug;

/// Real floating-point type accepted by the generic kernels.
pub trait Real: Float + FloatConst + Debug + Default + Send + Sync + 'static {
    /// Converts an `f64` literal into this type.
    fn lit(x: f64) -> Self {
        Self::from(x).expect("f64 literal representable in target float")
    }

    /// Converts this value to `f64`.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    /// Square root of machine epsilon, used as a default relative step.
    fn sqrt_eps() -> Self {
        Self::epsilon().sqrt()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`] scalar.
pub type Cx<T> = Complex<T>;

/// Builds a complex value from `f64` parts.
pub fn cx<T: Real>(re: f64, im: f64) -> Cx<T> {
    Complex::new(T::lit(re), T::lit(im))
}

/// The imaginary unit.
pub fn i_unit<T: Real>() -> Cx<T> {
    Complex::new(T::zero(), T::one())
}

/// Converts a complex value between scalar types.
pub fn convert<S: Real, T: Real>(z: Cx<S>) -> Cx<T> {
    Complex::new(T::lit(z.re.to_f64_lossy()), T::lit(z.im.to_f64_lossy()))
}

/// Square root on the branch closest to `reference`.
pub fn sqrt_near<T: Real>(z: Cx<T>, reference: Cx<T>) -> Cx<T> {
    let s = z.sqrt();
    if (s - reference).norm() <= (-s - reference).norm() {
        s
    } else {
        -s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_conversion_round_trips() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.25), 0.25f32);
        let z: Cx<f32> = convert(Complex::new(1.5f64, -2.0));
        assert_eq!(z, Complex::new(1.5f32, -2.0));
    }

    #[test]
    fn sqrt_near_picks_continuous_branch() {
        let z = Complex::new(-1.0f64, -1e-12);
        let s = sqrt_near(z, Complex::new(0.0, 1.0));
        assert!((s - Complex::new(0.0, 1.0)).norm() < 1e-6);
    }
}
